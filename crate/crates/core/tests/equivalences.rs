//! Degenerate-configuration equivalences: with one relation and
//! identity tying factors the relation model collapses onto the
//! context baseline, and zeroing the context matrix collapses that
//! onto the plain language model.

use drlm_core::corpus::EncodedDocument;
use drlm_core::inference::marginal_log_likelihood;
use drlm_core::model::{
    document_joint_log_prob, token_log_probs, DrlmParams, ModelDims, ModelVariant, ParamNodes,
};
use drlm_core::tape::Tape;
use drlm_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 11;
const K: usize = 4;
const H: usize = 5;

fn random_params(variant: ModelVariant, seed: u64) -> DrlmParams {
    let dims = ModelDims::new(V, K, H, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DrlmParams::zeros(dims, variant).unwrap();
    for t in params.tensors_mut() {
        let (r, c) = t.shape();
        *t = Tensor::uniform(r, c, -0.8, 0.8, &mut rng);
    }
    params
}

/// Relation model with Z = 1 and identity tying carrying the context
/// baseline's weights.
fn collapsed_relation_model(dclm: &DrlmParams) -> DrlmParams {
    let dims = ModelDims::new(V, K, H, 1).unwrap();
    let mut drlm = DrlmParams::zeros(dims, ModelVariant::Drlm).unwrap();
    drlm.x = dclm.x.clone();
    drlm.lstm_wx = dclm.lstm_wx.clone();
    drlm.lstm_wh = dclm.lstm_wh.clone();
    drlm.lstm_b = dclm.lstm_b.clone();
    drlm.w_o = dclm.w_o.clone();
    drlm.w_c = dclm.w_c.clone();
    drlm.v_z[0] = Tensor::identity(H);
    drlm.m_z[0] = Tensor::identity(H);
    drlm.b_o[0] = dclm.b_o[0].clone();
    // prior weights are irrelevant: the softmax over one relation is
    // the constant 1
    drlm.u = Some(Tensor::from_vec(1, H, vec![0.37; H]).unwrap());
    drlm.b = Some(Tensor::vector(vec![-2.5]));
    drlm.c0 = dclm.c0.clone();
    drlm
}

fn docs(seed: u64, count: usize) -> Vec<EncodedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..4);
            let sentences: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let len = rng.gen_range(1..6);
                    (0..len).map(|_| rng.gen_range(0..V)).collect()
                })
                .collect();
            EncodedDocument {
                relations: vec![0; n],
                labeled: vec![false; n],
                sentences,
            }
        })
        .collect()
}

#[test]
fn identity_tying_single_relation_equals_context_baseline() {
    let dclm = random_params(ModelVariant::Dclm, 3);
    let drlm = collapsed_relation_model(&dclm);
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // per-token distributions on 100 random hidden/context pairs
    for _ in 0..100 {
        let h = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let c = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let mut tape_a = Tape::new();
        let nodes_a = ParamNodes::bind(&mut tape_a, &dclm);
        let ha = tape_a.input(h.clone());
        let ca = tape_a.input(c.clone());
        let lp_a = token_log_probs(&mut tape_a, &nodes_a, ha, Some(ca), 0).unwrap();
        let mut tape_b = Tape::new();
        let nodes_b = ParamNodes::bind(&mut tape_b, &drlm);
        let hb = tape_b.input(h.clone());
        let cb = tape_b.input(c.clone());
        let lp_b = token_log_probs(&mut tape_b, &nodes_b, hb, Some(cb), 0).unwrap();
        for (a, b) in tape_a
            .value(lp_a)
            .data()
            .iter()
            .zip(tape_b.value(lp_b).data())
        {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    // whole-document likelihoods, joint and marginal
    for doc in docs(5, 10) {
        let a = document_joint_log_prob(&dclm, &doc).unwrap();
        let b = document_joint_log_prob(&drlm, &doc).unwrap();
        assert!((a - b).abs() <= 1e-10, "joint {a} vs {b}");
        let am = marginal_log_likelihood(&dclm, &doc).unwrap();
        let bm = marginal_log_likelihood(&drlm, &doc).unwrap();
        assert!((am - bm).abs() <= 1e-10, "marginal {am} vs {bm}");
        // one relation: the joint and the marginal coincide
        assert!((bm - b).abs() <= 1e-12);
    }
}

#[test]
fn zero_context_matrix_equals_plain_language_model() {
    let mut dclm = random_params(ModelVariant::Dclm, 6);
    dclm.w_c = Some(Tensor::zeros(V, H));

    let dims = ModelDims::new(V, K, H, 1).unwrap();
    let mut rnnlm = DrlmParams::zeros(dims, ModelVariant::Rnnlm).unwrap();
    rnnlm.x = dclm.x.clone();
    rnnlm.lstm_wx = dclm.lstm_wx.clone();
    rnnlm.lstm_wh = dclm.lstm_wh.clone();
    rnnlm.lstm_b = dclm.lstm_b.clone();
    rnnlm.w_o = dclm.w_o.clone();
    rnnlm.b_o[0] = dclm.b_o[0].clone();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let h = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let c = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let mut tape_a = Tape::new();
        let nodes_a = ParamNodes::bind(&mut tape_a, &dclm);
        let ha = tape_a.input(h.clone());
        let ca = tape_a.input(c);
        let lp_a = token_log_probs(&mut tape_a, &nodes_a, ha, Some(ca), 0).unwrap();
        let mut tape_b = Tape::new();
        let nodes_b = ParamNodes::bind(&mut tape_b, &rnnlm);
        let hb = tape_b.input(h);
        let lp_b = token_log_probs(&mut tape_b, &nodes_b, hb, None, 0).unwrap();
        for (a, b) in tape_a
            .value(lp_a)
            .data()
            .iter()
            .zip(tape_b.value(lp_b).data())
        {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    for doc in docs(8, 10) {
        let a = document_joint_log_prob(&dclm, &doc).unwrap();
        let b = document_joint_log_prob(&rnnlm, &doc).unwrap();
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn full_ladder_collapses_to_plain_model() {
    // relation model with identity tying, zero context matrix and one
    // relation scores exactly like the plain language model
    let mut dclm = random_params(ModelVariant::Dclm, 9);
    dclm.w_c = Some(Tensor::zeros(V, H));
    let drlm = collapsed_relation_model(&dclm);
    let dims = ModelDims::new(V, K, H, 1).unwrap();
    let mut rnnlm = DrlmParams::zeros(dims, ModelVariant::Rnnlm).unwrap();
    rnnlm.x = dclm.x.clone();
    rnnlm.lstm_wx = dclm.lstm_wx.clone();
    rnnlm.lstm_wh = dclm.lstm_wh.clone();
    rnnlm.lstm_b = dclm.lstm_b.clone();
    rnnlm.w_o = dclm.w_o.clone();
    rnnlm.b_o[0] = dclm.b_o[0].clone();
    for doc in docs(10, 10) {
        let a = document_joint_log_prob(&drlm, &doc).unwrap();
        let b = document_joint_log_prob(&rnnlm, &doc).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }
}
