//! Posterior inference over relation sequences.
//!
//! For the output-layer relation model the posterior factors per slot:
//! the context chain is a deterministic function of the observed
//! sentences, so each slot's posterior is softmax(log prior + per
//! relation sentence log likelihood). `document_slot_values` extracts
//! those quantities once per document.
//!
//! Model II threads the relation through the recurrence, so the chain
//! couples and the marginal needs a sum over Z^T relation sequences.
//! Two structural facts keep that sum cheap enough to serve as an
//! oracle: a sentence starts from the zero state, so its likelihood
//! and final hidden state under relation z depend only on (t, z) and
//! are computed once into tables; the prior at slot t depends only on
//! the previous slot's final hidden state, hence only on (t-1,
//! z_{t-1}). Enumeration then reduces to table lookups per chain.

use crate::corpus::{EncodedCorpus, EncodedDocument};
use crate::error::{Error, Result};
use crate::model::{
    consumed_input, context_logit_term, document_forward, relation_prior_log,
    sentence_ll_from_states, DrlmParams, ParamNodes,
};
use crate::rnn::{run_sentence, zero_state};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Largest relation-sequence count `enumerate_exact_model2` accepts.
pub const DEFAULT_ENUM_CAP: usize = 1_000_000;

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_softmax_vec(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| x - lse).collect()
}

/// Value-level per-slot quantities for the factorizing variants. The
/// relation-free baselines yield one entry per slot with a log prior of
/// zero, so the same downstream formulas apply.
#[derive(Debug, Clone)]
pub struct SlotValues {
    pub log_prior: Vec<f64>,
    pub sent_ll: Vec<f64>,
    pub n_predictions: usize,
}

impl SlotValues {
    /// log p(z, sentence | context) per relation.
    pub fn log_joint(&self) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.sent_ll)
            .map(|(p, l)| p + l)
            .collect()
    }

    /// log p(z | sentence, context).
    pub fn log_posterior(&self) -> Vec<f64> {
        log_softmax_vec(&self.log_joint())
    }

    /// log p(sentence | context), relations summed out.
    pub fn log_marginal(&self) -> f64 {
        log_sum_exp(&self.log_joint())
    }
}

/// One forward pass per document; errors for Model II, whose posterior
/// does not factor per slot.
pub fn document_slot_values(params: &DrlmParams, doc: &EncodedDocument) -> Result<Vec<SlotValues>> {
    if params.variant.has_transitions() {
        return Err(Error::InvalidConfig {
            msg: "Model II slots do not factor; use enumerate_exact_model2 or the sampler".into(),
        });
    }
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    let fwd = document_forward(&mut tape, &nodes, doc, None)?;
    Ok(fwd
        .slots
        .iter()
        .map(|slot| SlotValues {
            log_prior: match slot.log_prior {
                Some(id) => tape.value(id).data().to_vec(),
                None => vec![0.0],
            },
            sent_ll: slot
                .sent_ll
                .iter()
                .map(|&id| tape.value(id).item())
                .collect(),
            n_predictions: slot.n_predictions,
        })
        .collect())
}

/// Posterior over relations for a single slot given an explicit
/// context vector.
#[allow(clippy::needless_range_loop)] // z indexes the graph, not just log_prior
pub fn relation_posterior(
    params: &DrlmParams,
    tokens: &[usize],
    c_prev: &Tensor,
) -> Result<Vec<f64>> {
    if !params.variant.has_prior() {
        return Err(Error::InvalidConfig {
            msg: format!("variant {} has no relations", params.variant.name()),
        });
    }
    let z_count = params.dims.relations;
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    let c = tape.input(c_prev.clone());
    let log_prior_node = relation_prior_log(&mut tape, &nodes, c)?;
    let log_prior = tape.value(log_prior_node).data().to_vec();
    let consumed = consumed_input(tokens)?;
    let mut joint = Vec::with_capacity(z_count);
    if params.variant.has_transitions() {
        for z in 0..z_count {
            let init = zero_state(&mut tape, params.dims.hidden);
            let run = run_sentence(
                &mut tape,
                &nodes.lstm,
                nodes.x,
                &consumed,
                init,
                None,
                Some(nodes.w_trans[z]),
            )?;
            let ll =
                sentence_ll_from_states(&mut tape, &nodes, &run.output_states, tokens, None, 0)?;
            joint.push(log_prior[z] + tape.value(ll).item());
        }
    } else {
        let init = zero_state(&mut tape, params.dims.hidden);
        let run = run_sentence(&mut tape, &nodes.lstm, nodes.x, &consumed, init, None, None)?;
        for z in 0..z_count {
            let ctx_term = context_logit_term(&mut tape, &nodes, Some(c), z)?;
            let ll = sentence_ll_from_states(
                &mut tape,
                &nodes,
                &run.output_states,
                tokens,
                ctx_term,
                z,
            )?;
            joint.push(log_prior[z] + tape.value(ll).item());
        }
    }
    Ok(log_softmax_vec(&joint).iter().map(|l| l.exp()).collect())
}

/// Per-slot posterior probabilities over relations. Factorized for the
/// output-layer model; exact enumeration for Model II (capped).
pub fn relation_posteriors(params: &DrlmParams, doc: &EncodedDocument) -> Result<Vec<Vec<f64>>> {
    if params.variant.has_transitions() {
        let exact = enumerate_exact_model2(params, doc, DEFAULT_ENUM_CAP)?;
        return Ok(exact.slot_posteriors);
    }
    Ok(document_slot_values(params, doc)?
        .iter()
        .map(|s| s.log_posterior().iter().map(|l| l.exp()).collect())
        .collect())
}

/// Most probable relation per slot (ties broken toward the lower id).
pub fn tag_document(params: &DrlmParams, doc: &EncodedDocument) -> Result<Vec<usize>> {
    Ok(relation_posteriors(params, doc)?
        .iter()
        .map(|post| {
            post.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

/// log p(sentences), relations summed out. Exact for every variant;
/// Model II goes through capped enumeration.
pub fn marginal_log_likelihood(params: &DrlmParams, doc: &EncodedDocument) -> Result<f64> {
    if params.variant.has_transitions() {
        return Ok(enumerate_exact_model2(params, doc, DEFAULT_ENUM_CAP)?.log_marginal);
    }
    Ok(document_slot_values(params, doc)?
        .iter()
        .map(SlotValues::log_marginal)
        .sum())
}

/// Corpus-level marginal log likelihood plus the scored token count
/// (terminators included), the perplexity inputs.
pub fn corpus_marginal_log_likelihood(
    params: &DrlmParams,
    corpus: &EncodedCorpus,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for doc in &corpus.documents {
        total += marginal_log_likelihood(params, doc)?;
        tokens += doc.token_count();
    }
    Ok((total, tokens))
}

// ── Model II exact machinery ──

/// Sentence log likelihood and final hidden state under one relation,
/// evaluated on a throwaway tape.
pub(crate) fn model2_sentence_eval(
    params: &DrlmParams,
    tokens: &[usize],
    z: usize,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    let consumed = consumed_input(tokens)?;
    let init = zero_state(&mut tape, params.dims.hidden);
    let run = run_sentence(
        &mut tape,
        &nodes.lstm,
        nodes.x,
        &consumed,
        init,
        None,
        Some(nodes.w_trans[z]),
    )?;
    let ll = sentence_ll_from_states(&mut tape, &nodes, &run.output_states, tokens, None, 0)?;
    Ok((tape.value(ll).item(), tape.value(run.final_state.h).clone()))
}

/// log prior over relations given an explicit context vector.
pub(crate) fn log_prior_given(params: &DrlmParams, c: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    let cn = tape.input(c.clone());
    let lp = relation_prior_log(&mut tape, &nodes, cn)?;
    Ok(tape.value(lp).data().to_vec())
}

/// Slot-local Model II quantities: sentence log likelihood per (slot,
/// relation), valid across chains because sentences start from the
/// zero state, and relation log priors keyed by the previous slot's
/// relation (the prior sees only that sentence's final hidden state).
/// Size O(T Z^2); both exact enumeration and the sampler read from it.
pub(crate) struct Model2Lattice {
    /// ll[t][z] = log p(sentence_t | z)
    pub ll: Vec<Vec<f64>>,
    /// prior_first[z] = log p(z_0) given the default context
    pub prior_first: Vec<f64>,
    /// prior_step[t][z_prev][z] = log p(z_t | z_{t-1} = z_prev), t >= 1
    pub prior_step: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn model2_lattice(params: &DrlmParams, doc: &EncodedDocument) -> Result<Model2Lattice> {
    let z_count = params.dims.relations;
    let t_len = doc.sentences.len();
    let mut ll = Vec::with_capacity(t_len);
    let mut h: Vec<Vec<Tensor>> = Vec::with_capacity(t_len);
    for sentence in &doc.sentences {
        let mut row_ll = Vec::with_capacity(z_count);
        let mut row_h = Vec::with_capacity(z_count);
        for z in 0..z_count {
            let (l, hid) = model2_sentence_eval(params, sentence, z)?;
            row_ll.push(l);
            row_h.push(hid);
        }
        ll.push(row_ll);
        h.push(row_h);
    }
    let c0 = params.c0.as_ref().expect("Model II stores c_0");
    let prior_first = log_prior_given(params, c0)?;
    let mut prior_step: Vec<Vec<Vec<f64>>> = Vec::with_capacity(t_len);
    prior_step.push(Vec::new());
    for t in 1..t_len {
        let row: Result<Vec<Vec<f64>>> = (0..z_count)
            .map(|zp| log_prior_given(params, &h[t - 1][zp]))
            .collect();
        prior_step.push(row?);
    }
    Ok(Model2Lattice {
        ll,
        prior_first,
        prior_step,
    })
}

#[derive(Debug, Clone)]
pub struct ExactMarginal {
    pub log_marginal: f64,
    /// Posterior probability of each relation at each slot.
    pub slot_posteriors: Vec<Vec<f64>>,
}

/// Exact Model II marginal by summation over all Z^T relation
/// sequences. Errors when the sequence count exceeds `cap`.
pub fn enumerate_exact_model2(
    params: &DrlmParams,
    doc: &EncodedDocument,
    cap: usize,
) -> Result<ExactMarginal> {
    if !params.variant.has_transitions() {
        return Err(Error::InvalidConfig {
            msg: format!("variant {} is not Model II", params.variant.name()),
        });
    }
    let z_count = params.dims.relations;
    let t_len = doc.sentences.len();
    let states = (z_count as f64).powi(t_len as i32);
    if states > cap as f64 {
        return Err(Error::EnumerationTooLarge {
            states,
            limit: cap as f64,
        });
    }
    if t_len == 0 {
        return Ok(ExactMarginal {
            log_marginal: 0.0,
            slot_posteriors: Vec::new(),
        });
    }
    let lattice = model2_lattice(params, doc)?;
    let total = (z_count as u64).pow(t_len as u32) as usize;
    let mut log_joints = Vec::with_capacity(total);
    let mut digits = vec![0usize; t_len];
    for _ in 0..total {
        let mut lj = lattice.prior_first[digits[0]] + lattice.ll[0][digits[0]];
        for t in 1..t_len {
            lj += lattice.prior_step[t][digits[t - 1]][digits[t]] + lattice.ll[t][digits[t]];
        }
        log_joints.push(lj);
        // odometer increment, least significant digit last
        for t in (0..t_len).rev() {
            digits[t] += 1;
            if digits[t] < z_count {
                break;
            }
            digits[t] = 0;
        }
    }

    let max = log_joints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NonFinite {
            context: "every relation sequence has zero probability",
        });
    }
    let mut bins = vec![vec![0.0f64; z_count]; t_len];
    let mut total_mass = 0.0;
    for (idx, lj) in log_joints.iter().enumerate() {
        let w = (lj - max).exp();
        total_mass += w;
        let mut rest = idx;
        for t in (0..t_len).rev() {
            bins[t][rest % z_count] += w;
            rest /= z_count;
        }
    }
    let slot_posteriors = bins
        .into_iter()
        .map(|row| row.into_iter().map(|b| b / total_mass).collect())
        .collect();
    Ok(ExactMarginal {
        log_marginal: max + total_mass.ln(),
        slot_posteriors,
    })
}
