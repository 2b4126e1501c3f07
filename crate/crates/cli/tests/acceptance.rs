//! Acceptance gate for the whole toolkit. Each test checks one numbered
//! criterion at full stated strength and prints a single verdict line;
//! run with `--nocapture --test-threads=1` to see the lines in order.
//!
//! 1. gradient suite (both objectives, both relation models)
//! 2. degenerate-configuration equivalences
//! 3. inference identities
//! 4. sequential Monte Carlo against exact enumeration
//! 5. synthetic tagging end to end
//! 6. synthetic language modeling end to end
//! 7. objective ordering for tagging
//! 8. metrics identities
//! 9. byte-identical reruns

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use drlm_core::corpus::EncodedDocument;
use drlm_core::inference::{
    document_slot_values, enumerate_exact_model2, marginal_log_likelihood, relation_posterior,
    relation_posteriors,
};
use drlm_core::metrics::{binomial_tail, macro_f1, perplexity};
use drlm_core::model::{
    document_joint_log_prob, token_log_probs, DrlmParams, ModelDims, ModelVariant, ParamNodes,
};
use drlm_core::smc::{smc_sample, SmcConfig};
use drlm_core::tape::Tape;
use drlm_core::tensor::Tensor;
use drlm_core::training::{clip_gradients, conditional_loss, AdagradState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: usize, name: &str, ok: bool, detail: String) {
    println!(
        "criterion {criterion} ({name}): {} | {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

// ── shared random fixtures ──

fn random_params(
    dims: ModelDims,
    variant: ModelVariant,
    range: f64,
    rng: &mut ChaCha8Rng,
) -> DrlmParams {
    let mut params = DrlmParams::zeros(dims, variant).unwrap();
    for t in params.tensors_mut() {
        let (r, c) = t.shape();
        *t = Tensor::uniform(r, c, -range, range, rng);
    }
    params
}

fn random_doc(
    rng: &mut ChaCha8Rng,
    sentences: usize,
    vocab: usize,
    relations: usize,
) -> EncodedDocument {
    EncodedDocument {
        sentences: (0..sentences)
            .map(|_| {
                let len = rng.gen_range(2..=6);
                let mut s: Vec<usize> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
                s.push(drlm_core::corpus::EOS_ID);
                s
            })
            .collect(),
        relations: (0..sentences)
            .map(|_| rng.gen_range(0..relations))
            .collect(),
        labeled: vec![true; sentences],
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

// ── binary harness ──

struct Run {
    status: i32,
    stdout: String,
    stderr: String,
}

fn drlm(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_drlm"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        status: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn field(stdout: &str, key: &str) -> String {
    stdout
        .split_whitespace()
        .filter_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .next_back()
        .unwrap_or_else(|| panic!("no {key}= field in:\n{stdout}"))
        .to_string()
}

fn float_field(stdout: &str, key: &str) -> f64 {
    field(stdout, key).parse().unwrap()
}

/// Config for the standard synthetic experiment: 3 relations over
/// disjoint 100-word blocks (300 content types), 400/50/50 documents
/// of 6 sentences, K = H = 16.
fn experiment_config(root: &Path, seed: u64) -> String {
    let root = root.display();
    let conf = format!(
        "paths.train = {root}/train.jsonl\n\
         paths.dev = {root}/dev.jsonl\n\
         paths.test = {root}/test.jsonl\n\
         paths.labels = {root}/labels.txt\n\
         paths.manifest = {root}/manifest.json\n\
         paths.vocab = {root}/data.vocab\n\
         paths.checkpoint = {root}/model.bin\n\
         paths.predictions = {root}/preds.tsv\n\
         model.embed = 16\n\
         model.hidden = 16\n\
         synth.seed = 1\n\
         train.seed = {seed}\n"
    );
    let path = format!("{root}/run.conf");
    fs::write(&path, conf).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Run {
    let run = drlm(args);
    assert_eq!(
        run.status, 0,
        "command {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        run.stdout, run.stderr
    );
    run
}

// ── criteria ──

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    // defaults are exactly the reference configuration: 12 word types,
    // embed and hidden 6, 3 relations, 3 sentences
    let check = run_ok(&["gradcheck", "--seed", "11"]);
    let worst = float_field(&check.stdout, "max_rel_error");
    let pass = field(&check.stdout, "verdict") == "pass";
    let combos = ["drlm", "drlm-model2"]
        .iter()
        .flat_map(|v| {
            ["joint", "conditional"]
                .iter()
                .map(move |o| format!("gradcheck variant={v} objective={o} worst_tensor="))
        })
        .all(|prefix| check.stdout.lines().any(|l| l.starts_with(&prefix)));
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient suite",
        pass && combos && worst < 1e-4 && elapsed < 60.0,
        format!(
            "max_rel_error={worst:.3e} threshold=1e-4 combos=4 elapsed={elapsed:.1}s budget=60s"
        ),
    );
}

#[test]
fn criterion_2_degenerate_equivalences() {
    let start = Instant::now();
    const V: usize = 11;
    const K: usize = 4;
    const H: usize = 5;
    let dims = ModelDims::new(V, K, H, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dclm = random_params(dims, ModelVariant::Dclm, 0.8, &mut rng);

    // relation model with one relation and identity tying factors,
    // carrying the context baseline's weights
    let mut collapsed = DrlmParams::zeros(dims, ModelVariant::Drlm).unwrap();
    collapsed.x = dclm.x.clone();
    collapsed.lstm_wx = dclm.lstm_wx.clone();
    collapsed.lstm_wh = dclm.lstm_wh.clone();
    collapsed.lstm_b = dclm.lstm_b.clone();
    collapsed.w_o = dclm.w_o.clone();
    collapsed.w_c = dclm.w_c.clone();
    collapsed.v_z[0] = Tensor::identity(H);
    collapsed.m_z[0] = Tensor::identity(H);
    collapsed.b_o[0] = dclm.b_o[0].clone();
    collapsed.u = Some(Tensor::from_vec(1, H, vec![0.37; H]).unwrap());
    collapsed.b = Some(Tensor::vector(vec![-2.5]));
    collapsed.c0 = dclm.c0.clone();

    // plain model sharing the recurrent weights
    let mut plain = DrlmParams::zeros(dims, ModelVariant::Rnnlm).unwrap();
    plain.x = dclm.x.clone();
    plain.lstm_wx = dclm.lstm_wx.clone();
    plain.lstm_wh = dclm.lstm_wh.clone();
    plain.lstm_b = dclm.lstm_b.clone();
    plain.w_o = dclm.w_o.clone();
    plain.b_o[0] = dclm.b_o[0].clone();

    let mut zeroed = dclm.clone();
    zeroed.w_c = Some(Tensor::zeros(V, H));

    let token_lp = |params: &DrlmParams, h: &Tensor, c: Option<&Tensor>| -> Vec<f64> {
        let mut tape = Tape::new();
        let nodes = ParamNodes::bind(&mut tape, params);
        let hn = tape.input(h.clone());
        let cn = c.map(|c| tape.input(c.clone()));
        let lp = token_log_probs(&mut tape, &nodes, hn, cn, 0).unwrap();
        tape.value(lp).data().to_vec()
    };

    let mut worst_tying = 0.0f64;
    let mut worst_zeroing = 0.0f64;
    for _ in 0..100 {
        let h = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let c = Tensor::uniform(H, 1, -1.5, 1.5, &mut rng);
        let base = token_lp(&dclm, &h, Some(&c));
        let tied = token_lp(&collapsed, &h, Some(&c));
        for (a, b) in base.iter().zip(&tied) {
            worst_tying = worst_tying.max((a - b).abs());
        }
        let cut = token_lp(&zeroed, &h, Some(&c));
        let bare = token_lp(&plain, &h, None);
        for (a, b) in cut.iter().zip(&bare) {
            worst_zeroing = worst_zeroing.max((a - b).abs());
        }
    }

    let mut worst_doc = 0.0f64;
    for _ in 0..10 {
        let doc = random_doc(&mut rng, 3, V, 1);
        let a = document_joint_log_prob(&dclm, &doc).unwrap();
        let b = document_joint_log_prob(&collapsed, &doc).unwrap();
        worst_doc = worst_doc.max((a - b).abs());
    }

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        2,
        "degenerate equivalences",
        worst_tying <= 1e-10 && worst_zeroing <= 1e-10 && worst_doc <= 1e-10 && elapsed < 10.0,
        format!(
            "identity_tying_gap={worst_tying:.2e} zero_context_gap={worst_zeroing:.2e} \
             document_gap={worst_doc:.2e} tolerance=1e-10 inputs=100 elapsed={elapsed:.1}s budget=10s"
        ),
    );
}

#[test]
fn criterion_3_inference_identities() {
    let start = Instant::now();

    // (a) posterior normalization on 1000 random cases
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_norm = 0.0f64;
    for case in 0..1000 {
        let vocab = rng.gen_range(8..16);
        let dims = ModelDims::new(
            vocab,
            rng.gen_range(3..8),
            rng.gen_range(3..8),
            rng.gen_range(2..5),
        )
        .unwrap();
        let variant = if case % 3 == 0 {
            ModelVariant::DrlmModel2
        } else {
            ModelVariant::Drlm
        };
        let params = random_params(dims, variant, 0.5, &mut rng);
        let len = rng.gen_range(2..=6);
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
        tokens.push(drlm_core::corpus::EOS_ID);
        let c_prev = Tensor::uniform(dims.hidden, 1, -1.0, 1.0, &mut rng);
        let post = relation_posterior(&params, &tokens, &c_prev).unwrap();
        worst_norm = worst_norm.max((post.iter().sum::<f64>() - 1.0).abs());
    }

    // (b) marginal equals the exhaustive logsumexp over all labelings
    let dims = ModelDims::new(11, 4, 5, 2).unwrap();
    let mut worst_marginal = 0.0f64;
    for variant in [ModelVariant::Drlm, ModelVariant::DrlmModel2] {
        for _ in 0..10 {
            let params = random_params(dims, variant, 0.5, &mut rng);
            let doc = random_doc(&mut rng, 3, 11, 2);
            let mut joints = Vec::new();
            for code in 0..(2usize.pow(3)) {
                let mut pinned = doc.clone();
                for (slot, rel) in pinned.relations.iter_mut().enumerate() {
                    *rel = (code >> slot) & 1;
                }
                joints.push(document_joint_log_prob(&params, &pinned).unwrap());
            }
            let brute = log_sum_exp(&joints);
            let marginal = marginal_log_likelihood(&params, &doc).unwrap();
            worst_marginal = worst_marginal.max((marginal - brute).abs());
            if variant.has_transitions() {
                let exact = enumerate_exact_model2(&params, &doc, 4096).unwrap();
                worst_marginal = worst_marginal.max((exact.log_marginal - brute).abs());
            }
        }
    }

    // (c) conditional objective equals summed log posteriors
    let dims3 = ModelDims::new(12, 5, 6, 3).unwrap();
    let conditional_objective = |params: &DrlmParams, doc: &EncodedDocument| -> f64 {
        let mut tape = Tape::new();
        let nodes = ParamNodes::bind(&mut tape, params);
        let loss = conditional_loss(&mut tape, &nodes, doc, None, true, 4096)
            .unwrap()
            .unwrap();
        -tape.value(loss).item()
    };
    let mut worst_conditional = 0.0f64;
    for _ in 0..10 {
        let params = random_params(dims3, ModelVariant::Drlm, 0.5, &mut rng);
        let doc = random_doc(&mut rng, 4, 12, 3);
        let objective = conditional_objective(&params, &doc);
        let summed: f64 = relation_posteriors(&params, &doc)
            .unwrap()
            .iter()
            .zip(&doc.relations)
            .map(|(post, &gold)| post[gold].ln())
            .sum();
        worst_conditional = worst_conditional.max((objective - summed).abs());
    }

    // (d) complete-data score = conditional + marginal
    let mut worst_split = 0.0f64;
    for variant in [ModelVariant::Drlm, ModelVariant::DrlmModel2] {
        for _ in 0..10 {
            let params = random_params(dims, variant, 0.5, &mut rng);
            let doc = random_doc(&mut rng, 3, 11, 2);
            let joint = document_joint_log_prob(&params, &doc).unwrap();
            let conditional = conditional_objective(&params, &doc);
            let marginal = marginal_log_likelihood(&params, &doc).unwrap();
            worst_split = worst_split.max((joint - (conditional + marginal)).abs());
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        3,
        "inference identities",
        worst_norm <= 1e-9
            && worst_marginal <= 1e-9
            && worst_conditional <= 1e-10
            && worst_split <= 1e-10
            && elapsed < 30.0,
        format!(
            "normalization={worst_norm:.2e} (1000 cases, tol 1e-9) \
             marginal_vs_exhaustive={worst_marginal:.2e} (tol 1e-9) \
             conditional_vs_posteriors={worst_conditional:.2e} (tol 1e-10) \
             joint_split={worst_split:.2e} (tol 1e-10) elapsed={elapsed:.1}s budget=30s"
        ),
    );
}

#[test]
fn criterion_4_sequential_monte_carlo() {
    let start = Instant::now();

    // recurrence relation model: mean of 50 seeded log-marginal
    // estimates at 2000 particles vs exact enumeration
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dims2 = ModelDims::new(12, 6, 6, 2).unwrap();
    let params2 = random_params(dims2, ModelVariant::DrlmModel2, 0.5, &mut rng);
    let doc2 = random_doc(&mut rng, 3, 12, 2);
    let exact = enumerate_exact_model2(&params2, &doc2, 4096)
        .unwrap()
        .log_marginal;
    let mut total = 0.0;
    for seed in 0..50 {
        let config = SmcConfig::new(2000, seed);
        total += smc_sample(&params2, &doc2, &config).unwrap().log_marginal;
    }
    let mean = total / 50.0;
    let marginal_gap = (mean - exact).abs();

    // output relation model: slot posteriors from particle weights at
    // 5000 particles vs the factorized exact posterior
    let dims3 = ModelDims::new(12, 6, 6, 3).unwrap();
    let params3 = random_params(dims3, ModelVariant::Drlm, 0.5, &mut rng);
    let doc3 = random_doc(&mut rng, 3, 12, 3);
    let exact_posts: Vec<Vec<f64>> = document_slot_values(&params3, &doc3)
        .unwrap()
        .iter()
        .map(|s| s.log_posterior().iter().map(|l| l.exp()).collect())
        .collect();
    let run = smc_sample(&params3, &doc3, &SmcConfig::new(5000, 7)).unwrap();
    let mut posterior_gap = 0.0f64;
    for (slot, exact_post) in exact_posts.iter().enumerate() {
        for (z, &p) in exact_post.iter().enumerate() {
            posterior_gap = posterior_gap.max((run.slot_posteriors[slot][z] - p).abs());
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        4,
        "sequential Monte Carlo",
        marginal_gap < 0.05 && posterior_gap < 0.02 && elapsed < 180.0,
        format!(
            "log_marginal_gap={marginal_gap:.4} nats (50 seeds x 2000 particles, tol 0.05) \
             slot_posterior_gap={posterior_gap:.4} (5000 particles, tol 0.02) \
             elapsed={elapsed:.1}s budget=180s"
        ),
    );
}

#[test]
fn criterion_5_synthetic_tagging() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let conf = experiment_config(dir.path(), 1);
    run_ok(&["synth", "--config", &conf]);
    run_ok(&["train", "--config", &conf, "--objective", "conditional"]);
    let tag = run_ok(&["tag", "--config", &conf]);
    let accuracy = float_field(&tag.stdout, "accuracy");
    let slots = field(&tag.stdout, "scored_slots");
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        5,
        "synthetic tagging",
        accuracy >= 0.90 && elapsed < 300.0,
        format!(
            "test_accuracy={accuracy:.4} floor=0.90 majority_class=0.33 \
             scored_slots={slots} elapsed={elapsed:.1}s budget=300s"
        ),
    );
}

#[test]
fn criterion_6_synthetic_language_modeling() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let conf = experiment_config(dir.path(), 1);
    run_ok(&["synth", "--config", &conf]);

    let ppl = |variant: &str| -> f64 {
        let ckpt = format!("{}/{variant}.bin", dir.path().display());
        run_ok(&[
            "train",
            "--config",
            &conf,
            "--objective",
            "joint",
            "--variant",
            variant,
            "--checkpoint",
            &ckpt,
        ]);
        let eval = run_ok(&["eval-lm", "--config", &conf, "--checkpoint", &ckpt]);
        float_field(&eval.stdout, "perplexity")
    };
    let drlm_ppl = ppl("drlm");
    let dclm_ppl = ppl("dclm");
    let rnnlm_ppl = ppl("rnnlm");

    let relative_gain = (rnnlm_ppl - drlm_ppl) / rnnlm_ppl;
    let ordered = drlm_ppl < dclm_ppl && dclm_ppl < rnnlm_ppl;
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        6,
        "synthetic language modeling",
        relative_gain >= 0.02 && ordered && elapsed < 600.0,
        format!(
            "marginalized_perplexity: relation_model={drlm_ppl:.2} context_model={dclm_ppl:.2} \
             plain_model={rnnlm_ppl:.2} relative_gain={:.1}% floor=2% elapsed={elapsed:.1}s budget=600s",
            relative_gain * 100.0
        ),
    );
}

#[test]
fn criterion_7_objective_ordering() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let conf = experiment_config(dir.path(), 1);
    run_ok(&["synth", "--config", &conf]);

    let accuracy_for = |objective: &str, seed: u64| -> f64 {
        let seed = seed.to_string();
        run_ok(&[
            "train",
            "--config",
            &conf,
            "--objective",
            objective,
            "--seed",
            &seed,
        ]);
        let tag = run_ok(&["tag", "--config", &conf]);
        float_field(&tag.stdout, "accuracy")
    };
    let seeds = [1u64, 2, 3];
    let conditional: f64 = seeds
        .iter()
        .map(|&s| accuracy_for("conditional", s))
        .sum::<f64>()
        / 3.0;
    let joint: f64 = seeds.iter().map(|&s| accuracy_for("joint", s)).sum::<f64>() / 3.0;

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        7,
        "objective ordering",
        conditional >= joint,
        format!(
            "mean_test_accuracy over seeds {seeds:?}: conditional={conditional:.4} \
             joint={joint:.4} (non-strict ordering required) elapsed={elapsed:.1}s"
        ),
    );
}

#[test]
fn criterion_8_metric_identities() {
    let start = Instant::now();

    // uniform model: perplexity equals the vocabulary size
    let v = 273.0f64;
    let tokens = 1000usize;
    let uniform = perplexity(-(tokens as f64) * v.ln(), tokens).unwrap();
    let perplexity_ok = (uniform - v).abs() <= 1e-9;

    // class 0 predicted perfectly, classes 1 and 2 swapped: F1 1, 0, 0
    let pairs = [(0, 0), (0, 0), (1, 2), (1, 2), (2, 1), (2, 1)];
    let f1 = macro_f1(&pairs, 3).unwrap();
    let f1_ok = (f1 - 1.0 / 3.0).abs() <= 1e-12;

    let tail = binomial_tail(60, 100).unwrap();
    let tail_ok = (tail - 0.0284).abs() <= 1e-4;

    // clipping: norm bounded by the threshold, direction unchanged
    let mut grads = vec![
        Tensor::from_vec(2, 2, vec![3.0, -4.0, 1.0, 2.0]).unwrap(),
        Tensor::vector(vec![5.0, -2.0]),
    ];
    let originals = grads.clone();
    let threshold = 5.0;
    let pre_norm = clip_gradients(&mut grads, threshold);
    let post_norm: f64 = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    let mut direction_ok = true;
    for (g, o) in grads.iter().zip(&originals) {
        for (a, b) in g.data().iter().zip(o.data()) {
            direction_ok &= (a * pre_norm / threshold - b).abs() <= 1e-12;
        }
    }
    let clip_ok = pre_norm > threshold && post_norm <= threshold + 1e-12 && direction_ok;

    // first update: every entry moves by exactly lr * sign(g) * |g| / (|g| + eps)
    let dims = ModelDims::new(6, 2, 2, 1).unwrap();
    let mut params = DrlmParams::zeros(dims, ModelVariant::Rnnlm).unwrap();
    let before: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let grads: Vec<Tensor> = before
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let v: Vec<f64> = (0..t.rows() * t.cols())
                .map(|j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.01)
                .collect();
            Tensor::from_vec(t.rows(), t.cols(), v).unwrap()
        })
        .collect();
    let lr = 0.1;
    let mut opt = AdagradState::new(&params);
    opt.step(&mut params, &grads, lr).unwrap();
    let mut adagrad_ok = true;
    for ((after, before), grad) in params.tensors().iter().zip(&before).zip(&grads) {
        for ((&a, &b), &g) in after.data().iter().zip(before.data()).zip(grad.data()) {
            let expected = b - lr * g / (g.abs() + 1e-8);
            adagrad_ok &= (a - expected).abs() <= 1e-15;
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        8,
        "metric identities",
        perplexity_ok && f1_ok && tail_ok && clip_ok && adagrad_ok && elapsed < 5.0,
        format!(
            "uniform_perplexity={uniform:.9} (=273) macro_f1={f1:.9} (=1/3) \
             binomial_tail={tail:.6} (0.0284 +/- 1e-4) clipped_norm={post_norm:.12} (<= 5) \
             adagrad_first_step={} elapsed={elapsed:.2}s budget=5s",
            if adagrad_ok { "exact" } else { "off" }
        ),
    );
}

#[test]
fn criterion_9_byte_identical_reruns() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().display();
    let conf_path: PathBuf = dir.path().join("run.conf");
    fs::write(
        &conf_path,
        format!(
            "paths.train = {root}/train.jsonl\n\
             paths.dev = {root}/dev.jsonl\n\
             paths.test = {root}/test.jsonl\n\
             paths.labels = {root}/labels.txt\n\
             paths.manifest = {root}/manifest.json\n\
             paths.vocab = {root}/data.vocab\n\
             paths.checkpoint = {root}/model.bin\n\
             paths.predictions = {root}/preds.tsv\n\
             synth.block_size = 30\n\
             synth.train_docs = 40\n\
             synth.dev_docs = 10\n\
             synth.test_docs = 10\n\
             synth.sentences_per_doc = 5\n\
             synth.min_len = 4\n\
             synth.max_len = 7\n\
             model.embed = 8\n\
             model.hidden = 8\n\
             train.max_epochs = 2\n\
             train.seed = 5\n"
        ),
    )
    .unwrap();
    let conf = conf_path.display().to_string();

    let artifacts = [
        "train.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "manifest.json",
        "data.vocab",
        "model.bin",
        "preds.tsv",
    ];
    let mut pass_output = String::new();
    let snapshot = |pass_output: &mut String| -> Vec<Vec<u8>> {
        run_ok(&["synth", "--config", &conf]);
        run_ok(&["train", "--config", &conf]);
        let tag = run_ok(&["tag", "--config", &conf]);
        let eval = run_ok(&["eval-lm", "--config", &conf]);
        *pass_output = tag.stdout + &eval.stdout;
        artifacts
            .iter()
            .map(|name| fs::read(dir.path().join(name)).unwrap())
            .collect()
    };
    let first = snapshot(&mut pass_output);
    let first_output = pass_output.clone();
    let second = snapshot(&mut pass_output);

    let mut identical = true;
    for (i, name) in artifacts.iter().enumerate() {
        if first[i] != second[i] {
            identical = false;
            println!("criterion 9: {name} differs between identical reruns");
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        9,
        "byte-identical reruns",
        identical && first_output == pass_output,
        format!(
            "checkpoint, predictions, corpus, vocabulary and report lines \
             identical across reruns ({} files) elapsed={elapsed:.1}s",
            artifacts.len()
        ),
    );
}
