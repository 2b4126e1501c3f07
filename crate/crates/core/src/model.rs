//! The relation-conditioned sentence language model.
//!
//! A document is sentences y_1..y_T with one latent relation z_t per
//! sentence. With c_{t-1} the final hidden state of the previous
//! sentence (a trainable default context before the first):
//!
//! * relation prior: p(z_t | y_{t-1}) = softmax(U c_{t-1} + b)
//! * token output:   softmax(W_o V_z h + W_c M_z c_{t-1} + b_o^z)
//!
//! The per-relation output and context matrices are low-rank tied
//! products; they are never materialized in the hot path (V_z h first,
//! then W_o (V_z h)). Degenerate variants: `Dclm` drops the relations
//! (softmax(W_o h + W_c c + b_o)), `Rnnlm` additionally drops the
//! context. `DrlmModel2` moves the relation from the output layer into
//! the recurrence: every LSTM step inside sentence t transforms the
//! incoming hidden state by a per-relation matrix, the output layer is
//! the shared softmax(W_o h + b_o), and the context vector feeds the
//! relation prior only. Relations then influence inference at every
//! later sentence through the context chain, so the Model II posterior
//! does not factor over slots.
//!
//! Hidden and cell state reset to zeros at every sentence boundary. A
//! sentence [w_1..w_n, EOS] is scored by consuming [BOS, w_1..w_n] and
//! predicting each target from the state one position earlier.

use crate::corpus::{EncodedDocument, BOS_ID};
use crate::error::{Error, Result};
use crate::rnn::{run_sentence, zero_state, LstmNodes, SentenceMasks};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Rnnlm,
    Dclm,
    Drlm,
    DrlmModel2,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Rnnlm => "rnnlm",
            ModelVariant::Dclm => "dclm",
            ModelVariant::Drlm => "drlm",
            ModelVariant::DrlmModel2 => "drlm-model2",
        }
    }

    pub fn from_name(name: &str) -> Result<ModelVariant> {
        match name {
            "rnnlm" => Ok(ModelVariant::Rnnlm),
            "dclm" => Ok(ModelVariant::Dclm),
            "drlm" => Ok(ModelVariant::Drlm),
            "drlm-model2" => Ok(ModelVariant::DrlmModel2),
            _ => Err(Error::InvalidConfig {
                msg: format!("unknown variant {name:?}, expected rnnlm|dclm|drlm|drlm-model2"),
            }),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ModelVariant::Rnnlm => 0,
            ModelVariant::Dclm => 1,
            ModelVariant::Drlm => 2,
            ModelVariant::DrlmModel2 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<ModelVariant> {
        match tag {
            0 => Ok(ModelVariant::Rnnlm),
            1 => Ok(ModelVariant::Dclm),
            2 => Ok(ModelVariant::Drlm),
            3 => Ok(ModelVariant::DrlmModel2),
            _ => Err(Error::InvalidConfig {
                msg: format!("unknown variant tag {tag}"),
            }),
        }
    }

    /// Latent relations with a softmax prior.
    pub fn has_prior(self) -> bool {
        matches!(self, ModelVariant::Drlm | ModelVariant::DrlmModel2)
    }

    /// Context term in the output logits.
    pub fn context_in_output(self) -> bool {
        matches!(self, ModelVariant::Dclm | ModelVariant::Drlm)
    }

    /// Tracks a context vector at all (output term or prior).
    pub fn uses_context(self) -> bool {
        !matches!(self, ModelVariant::Rnnlm)
    }

    /// Per-relation tied output factors V_z / M_z.
    pub fn has_tying(self) -> bool {
        matches!(self, ModelVariant::Drlm)
    }

    /// Per-relation hidden-transition matrices.
    pub fn has_transitions(self) -> bool {
        matches!(self, ModelVariant::DrlmModel2)
    }

    /// Number of output heads (per-relation biases/factors).
    pub fn output_heads(self, relations: usize) -> usize {
        if self.has_tying() {
            relations
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Vocabulary size V, reserved tokens included.
    pub vocab: usize,
    /// Embedding size K.
    pub embed: usize,
    /// Hidden size H.
    pub hidden: usize,
    /// Relation count Z (the dummy relation included).
    pub relations: usize,
}

impl ModelDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize, relations: usize) -> Result<ModelDims> {
        if vocab == 0 || embed == 0 || hidden == 0 || relations == 0 {
            return Err(Error::InvalidConfig {
                msg: "model dimensions must be positive".into(),
            });
        }
        Ok(ModelDims {
            vocab,
            embed,
            hidden,
            relations,
        })
    }
}

/// How a tensor is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// Uniform in +-sqrt(6 / (d1 + d2)).
    Uniform {
        d1: usize,
        d2: usize,
    },
    /// Uniform in +-1e-5 (the relation-prior weights).
    Tiny,
    Zero,
}

/// All trainable tensors of one model. Which fields are populated
/// depends on the variant; the `tensor_names`/`tensors` accessors walk
/// them in one fixed order shared by checkpoints, gradients and the
/// optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct DrlmParams {
    pub dims: ModelDims,
    pub variant: ModelVariant,
    /// K x V embeddings.
    pub x: Tensor,
    /// 4H x K.
    pub lstm_wx: Tensor,
    /// 4H x H.
    pub lstm_wh: Tensor,
    /// 4H x 1.
    pub lstm_b: Tensor,
    /// V x H shared output matrix.
    pub w_o: Tensor,
    /// V x H shared context matrix.
    pub w_c: Option<Tensor>,
    /// Z tied output factors, H x H.
    pub v_z: Vec<Tensor>,
    /// Z tied context factors, H x H.
    pub m_z: Vec<Tensor>,
    /// Output biases, V x 1: one per relation when tied, one shared
    /// otherwise.
    pub b_o: Vec<Tensor>,
    /// Z x H relation-prior weights.
    pub u: Option<Tensor>,
    /// Z x 1 relation-prior bias.
    pub b: Option<Tensor>,
    /// H x 1 default context for the first sentence.
    pub c0: Option<Tensor>,
    /// Z hidden-transition matrices, H x H (Model II).
    pub w_trans: Vec<Tensor>,
}

impl DrlmParams {
    pub fn zeros(dims: ModelDims, variant: ModelVariant) -> Result<DrlmParams> {
        if !variant.has_prior() && dims.relations != 1 {
            return Err(Error::InvalidConfig {
                msg: format!(
                    "variant {} has no relations, requires relations = 1, got {}",
                    variant.name(),
                    dims.relations
                ),
            });
        }
        let (v, k, h, z) = (dims.vocab, dims.embed, dims.hidden, dims.relations);
        let heads = variant.output_heads(z);
        Ok(DrlmParams {
            dims,
            variant,
            x: Tensor::zeros(k, v),
            lstm_wx: Tensor::zeros(4 * h, k),
            lstm_wh: Tensor::zeros(4 * h, h),
            lstm_b: Tensor::zeros(4 * h, 1),
            w_o: Tensor::zeros(v, h),
            w_c: variant.context_in_output().then(|| Tensor::zeros(v, h)),
            v_z: (0..if variant.has_tying() { z } else { 0 })
                .map(|_| Tensor::zeros(h, h))
                .collect(),
            m_z: (0..if variant.has_tying() { z } else { 0 })
                .map(|_| Tensor::zeros(h, h))
                .collect(),
            b_o: (0..heads).map(|_| Tensor::zeros(v, 1)).collect(),
            u: variant.has_prior().then(|| Tensor::zeros(z, h)),
            b: variant.has_prior().then(|| Tensor::zeros(z, 1)),
            c0: variant.uses_context().then(|| Tensor::zeros(h, 1)),
            w_trans: (0..if variant.has_transitions() { z } else { 0 })
                .map(|_| Tensor::zeros(h, h))
                .collect(),
        })
    }

    /// Tensor names in the fixed walk order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec![
            "X".to_string(),
            "lstm.Wx".to_string(),
            "lstm.Wh".to_string(),
            "lstm.b".to_string(),
            "W_o".to_string(),
        ];
        if self.w_c.is_some() {
            names.push("W_c".to_string());
        }
        for i in 0..self.v_z.len() {
            names.push(format!("V_z.{i}"));
        }
        for i in 0..self.m_z.len() {
            names.push(format!("M_z.{i}"));
        }
        for i in 0..self.b_o.len() {
            names.push(format!("b_o.{i}"));
        }
        if self.u.is_some() {
            names.push("U".to_string());
        }
        if self.b.is_some() {
            names.push("b".to_string());
        }
        if self.c0.is_some() {
            names.push("c_0".to_string());
        }
        for i in 0..self.w_trans.len() {
            names.push(format!("Wtrans.{i}"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![
            &self.x,
            &self.lstm_wx,
            &self.lstm_wh,
            &self.lstm_b,
            &self.w_o,
        ];
        if let Some(t) = &self.w_c {
            out.push(t);
        }
        out.extend(self.v_z.iter());
        out.extend(self.m_z.iter());
        out.extend(self.b_o.iter());
        if let Some(t) = &self.u {
            out.push(t);
        }
        if let Some(t) = &self.b {
            out.push(t);
        }
        if let Some(t) = &self.c0 {
            out.push(t);
        }
        out.extend(self.w_trans.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.x,
            &mut self.lstm_wx,
            &mut self.lstm_wh,
            &mut self.lstm_b,
            &mut self.w_o,
        ];
        if let Some(t) = &mut self.w_c {
            out.push(t);
        }
        out.extend(self.v_z.iter_mut());
        out.extend(self.m_z.iter_mut());
        out.extend(self.b_o.iter_mut());
        if let Some(t) = &mut self.u {
            out.push(t);
        }
        if let Some(t) = &mut self.b {
            out.push(t);
        }
        if let Some(t) = &mut self.c0 {
            out.push(t);
        }
        out.extend(self.w_trans.iter_mut());
        out
    }

    /// Rebuilds a parameter set from tensors in walk order, validating
    /// shapes against a zero-allocated template.
    pub fn from_tensors(
        dims: ModelDims,
        variant: ModelVariant,
        tensors: Vec<Tensor>,
    ) -> Result<DrlmParams> {
        let mut params = DrlmParams::zeros(dims, variant)?;
        let names = params.tensor_names();
        if tensors.len() != names.len() {
            return Err(Error::DimensionMismatch {
                field: "tensor count".into(),
                expected: names.len().to_string(),
                found: tensors.len().to_string(),
            });
        }
        {
            let slots = params.tensors_mut();
            for ((slot, tensor), name) in slots.into_iter().zip(tensors).zip(names) {
                if slot.shape() != tensor.shape() {
                    return Err(Error::DimensionMismatch {
                        field: name,
                        expected: format!("{:?}", slot.shape()),
                        found: format!("{:?}", tensor.shape()),
                    });
                }
                *slot = tensor;
            }
        }
        Ok(params)
    }

    /// Initialization rule per tensor, aligned with `tensor_names`.
    /// Matrices draw uniform with d1/d2 the input/output dimensions,
    /// bias vectors use d1 = 1, the relation-prior weights start near
    /// zero and its bias plus the default context start at zero.
    pub fn init_plan(&self) -> Vec<InitKind> {
        let d = self.dims;
        let (v, k, h) = (d.vocab, d.embed, d.hidden);
        let mut plan = vec![
            InitKind::Uniform { d1: v, d2: k },     // X
            InitKind::Uniform { d1: k, d2: 4 * h }, // lstm.Wx
            InitKind::Uniform { d1: h, d2: 4 * h }, // lstm.Wh
            InitKind::Uniform { d1: 1, d2: 4 * h }, // lstm.b
            InitKind::Uniform { d1: h, d2: v },     // W_o
        ];
        if self.w_c.is_some() {
            plan.push(InitKind::Uniform { d1: h, d2: v });
        }
        for _ in 0..self.v_z.len() + self.m_z.len() {
            plan.push(InitKind::Uniform { d1: h, d2: h });
        }
        for _ in 0..self.b_o.len() {
            plan.push(InitKind::Uniform { d1: 1, d2: v });
        }
        if self.u.is_some() {
            plan.push(InitKind::Tiny);
        }
        if self.b.is_some() {
            plan.push(InitKind::Zero);
        }
        if self.c0.is_some() {
            plan.push(InitKind::Zero);
        }
        for _ in 0..self.w_trans.len() {
            plan.push(InitKind::Uniform { d1: h, d2: h });
        }
        plan
    }

    /// Parameters in everything downstream of the recurrence: output
    /// layer, tying factors, biases, relation prior and default context.
    pub fn output_layer_param_count(&self) -> usize {
        let mut n = self.w_o.len();
        if let Some(t) = &self.w_c {
            n += t.len();
        }
        n += self.v_z.iter().map(Tensor::len).sum::<usize>();
        n += self.m_z.iter().map(Tensor::len).sum::<usize>();
        n += self.b_o.iter().map(Tensor::len).sum::<usize>();
        if let Some(t) = &self.u {
            n += t.len();
        }
        if let Some(t) = &self.b {
            n += t.len();
        }
        if let Some(t) = &self.c0 {
            n += t.len();
        }
        n
    }

    /// The same layer with per-relation output and context matrices
    /// stored directly instead of tied products.
    pub fn untied_output_param_count(&self) -> usize {
        let (v, h, z) = (self.dims.vocab, self.dims.hidden, self.dims.relations);
        2 * z * v * h
            + z * v
            + self.u.as_ref().map_or(0, Tensor::len)
            + self.b.as_ref().map_or(0, Tensor::len)
            + self.c0.as_ref().map_or(0, Tensor::len)
    }
}

/// Tape leaves for one parameter set, in walk order plus structured
/// views.
pub struct ParamNodes {
    pub dims: ModelDims,
    pub variant: ModelVariant,
    pub ordered: Vec<NodeId>,
    pub x: NodeId,
    pub lstm: LstmNodes,
    pub w_o: NodeId,
    pub w_c: Option<NodeId>,
    pub v_z: Vec<NodeId>,
    pub m_z: Vec<NodeId>,
    pub b_o: Vec<NodeId>,
    pub u: Option<NodeId>,
    pub b: Option<NodeId>,
    pub c0: Option<NodeId>,
    pub w_trans: Vec<NodeId>,
}

impl ParamNodes {
    /// Registers every tensor as a trainable leaf on the tape.
    pub fn bind(tape: &mut Tape, params: &DrlmParams) -> ParamNodes {
        let ids: Vec<NodeId> = params
            .tensors()
            .into_iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        Self::from_ordered(params.dims, params.variant, ids)
            .expect("walk order matches tensor_names")
    }

    /// Maps pre-registered leaves (walk order) onto the structured view;
    /// used by the finite-difference harness, which owns the leaves.
    pub fn from_ordered(
        dims: ModelDims,
        variant: ModelVariant,
        ids: Vec<NodeId>,
    ) -> Result<ParamNodes> {
        let z = dims.relations;
        let heads = variant.output_heads(z);
        let expected = 5
            + variant.context_in_output() as usize
            + if variant.has_tying() { 2 * z } else { 0 }
            + heads
            + if variant.has_prior() { 2 } else { 0 }
            + variant.uses_context() as usize
            + if variant.has_transitions() { z } else { 0 };
        if ids.len() != expected {
            return Err(Error::DimensionMismatch {
                field: "parameter leaves".into(),
                expected: expected.to_string(),
                found: ids.len().to_string(),
            });
        }
        let mut it = ids.iter().copied();
        let mut take = || it.next().expect("length checked");
        let x = take();
        let lstm = LstmNodes {
            wx: take(),
            wh: take(),
            b: take(),
        };
        let w_o = take();
        let w_c = variant.context_in_output().then(&mut take);
        let v_z: Vec<NodeId> = (0..if variant.has_tying() { z } else { 0 })
            .map(|_| take())
            .collect();
        let m_z: Vec<NodeId> = (0..if variant.has_tying() { z } else { 0 })
            .map(|_| take())
            .collect();
        let b_o: Vec<NodeId> = (0..heads).map(|_| take()).collect();
        let u = variant.has_prior().then(&mut take);
        let b = variant.has_prior().then(&mut take);
        let c0 = variant.uses_context().then(&mut take);
        let w_trans: Vec<NodeId> = (0..if variant.has_transitions() { z } else { 0 })
            .map(|_| take())
            .collect();
        Ok(ParamNodes {
            dims,
            variant,
            ordered: ids,
            x,
            lstm,
            w_o,
            w_c,
            v_z,
            m_z,
            b_o,
            u,
            b,
            c0,
            w_trans,
        })
    }
}

// ── dropout ──

/// Pre-sampled inverted-dropout masks for one document: per-position
/// masks on the embedded input and on the output-visible hidden state,
/// plus one mask per slot for the context vector. Recurrent connections
/// are never masked.
#[derive(Debug, Clone)]
pub struct DocumentDropout {
    pub sentences: Vec<SentenceMasks>,
    pub context: Vec<Tensor>,
}

fn sample_mask<R: Rng>(len: usize, keep: f64, rng: &mut R) -> Tensor {
    let data = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::vector(data)
}

impl DocumentDropout {
    /// None when the rate is zero. Masks are sampled per position; the
    /// training loop resamples per document per epoch.
    pub fn sample<R: Rng>(
        doc: &EncodedDocument,
        dims: ModelDims,
        rate: f64,
        rng: &mut R,
    ) -> Option<DocumentDropout> {
        if rate == 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        let sentences = doc
            .sentences
            .iter()
            .map(|s| SentenceMasks {
                x: (0..s.len())
                    .map(|_| sample_mask(dims.embed, keep, rng))
                    .collect(),
                h: (0..s.len())
                    .map(|_| sample_mask(dims.hidden, keep, rng))
                    .collect(),
            })
            .collect();
        let context = (0..doc.sentences.len())
            .map(|_| sample_mask(dims.hidden, keep, rng))
            .collect();
        Some(DocumentDropout { sentences, context })
    }
}

// ── forward building blocks ──

/// LSTM input sequence for a terminated sentence: BOS plus everything
/// but the final token.
pub(crate) fn consumed_input(sentence: &[usize]) -> Result<Vec<usize>> {
    if sentence.is_empty() {
        return Err(Error::EmptySentence);
    }
    let mut v = Vec::with_capacity(sentence.len());
    v.push(BOS_ID);
    v.extend_from_slice(&sentence[..sentence.len() - 1]);
    Ok(v)
}

/// log softmax(U c + b); errors for variants without a relation prior.
pub fn relation_prior_log(tape: &mut Tape, nodes: &ParamNodes, c: NodeId) -> Result<NodeId> {
    let (u, b) = match (nodes.u, nodes.b) {
        (Some(u), Some(b)) => (u, b),
        _ => {
            return Err(Error::InvalidConfig {
                msg: format!("variant {} has no relation prior", nodes.variant.name()),
            })
        }
    };
    let logits = tape.matmul(u, c)?;
    let logits = tape.add(logits, b)?;
    tape.log_softmax(logits)
}

/// Relation prior as a probability vector given an explicit context.
pub fn relation_prior(params: &DrlmParams, c_prev: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    let c = tape.input(c_prev.clone());
    let log_prior = relation_prior_log(&mut tape, &nodes, c)?;
    let prior = tape.softmax(log_prior)?;
    Ok(tape.value(prior).data().to_vec())
}

/// Materialized tied product W_o V_z (tests and diagnostics; the hot
/// path multiplies V_z h first).
pub fn tied_output_matrix(tape: &mut Tape, nodes: &ParamNodes, z: usize) -> Result<NodeId> {
    let vz = *nodes.v_z.get(z).ok_or(Error::RelationOutOfRange {
        id: z,
        count: nodes.v_z.len(),
    })?;
    tape.matmul(nodes.w_o, vz)
}

/// Materialized tied product W_c M_z.
pub fn tied_context_matrix(tape: &mut Tape, nodes: &ParamNodes, z: usize) -> Result<NodeId> {
    let wc = nodes.w_c.ok_or(Error::InvalidConfig {
        msg: format!("variant {} has no context matrix", nodes.variant.name()),
    })?;
    let mz = *nodes.m_z.get(z).ok_or(Error::RelationOutOfRange {
        id: z,
        count: nodes.m_z.len(),
    })?;
    tape.matmul(wc, mz)
}

fn check_relation(nodes: &ParamNodes, z: usize) -> Result<()> {
    if z >= nodes.dims.relations {
        return Err(Error::RelationOutOfRange {
            id: z,
            count: nodes.dims.relations,
        });
    }
    Ok(())
}

/// Context contribution to the logits for relation z, hoisted out of the
/// per-token loop because it is constant across a sentence. None for
/// variants whose output layer ignores the context.
pub(crate) fn context_logit_term(
    tape: &mut Tape,
    nodes: &ParamNodes,
    c: Option<NodeId>,
    z: usize,
) -> Result<Option<NodeId>> {
    if !nodes.variant.context_in_output() {
        return Ok(None);
    }
    let c = c.ok_or(Error::InvalidConfig {
        msg: format!("variant {} needs a context vector", nodes.variant.name()),
    })?;
    let wc = nodes.w_c.expect("context_in_output implies W_c");
    let term = if nodes.variant.has_tying() {
        let mc = tape.matmul(nodes.m_z[z], c)?;
        tape.matmul(wc, mc)?
    } else {
        tape.matmul(wc, c)?
    };
    Ok(Some(term))
}

fn output_logits(
    tape: &mut Tape,
    nodes: &ParamNodes,
    h: NodeId,
    ctx_term: Option<NodeId>,
    z: usize,
) -> Result<NodeId> {
    let projected = if nodes.variant.has_tying() {
        let vh = tape.matmul(nodes.v_z[z], h)?;
        tape.matmul(nodes.w_o, vh)?
    } else {
        tape.matmul(nodes.w_o, h)?
    };
    let with_ctx = match ctx_term {
        Some(t) => tape.add(projected, t)?,
        None => projected,
    };
    let head = if nodes.variant.has_tying() { z } else { 0 };
    tape.add(with_ctx, nodes.b_o[head])
}

/// Per-token log distribution over the vocabulary for relation z given
/// a hidden state and (for context-aware variants) the previous
/// sentence's context vector.
pub fn token_log_probs(
    tape: &mut Tape,
    nodes: &ParamNodes,
    h: NodeId,
    c: Option<NodeId>,
    z: usize,
) -> Result<NodeId> {
    check_relation(nodes, z)?;
    let ctx_term = context_logit_term(tape, nodes, c, z)?;
    let logits = output_logits(tape, nodes, h, ctx_term, z)?;
    tape.log_softmax(logits)
}

pub(crate) fn sentence_ll_from_states(
    tape: &mut Tape,
    nodes: &ParamNodes,
    states: &[NodeId],
    targets: &[usize],
    ctx_term: Option<NodeId>,
    z: usize,
) -> Result<NodeId> {
    debug_assert_eq!(states.len(), targets.len());
    let mut picks = Vec::with_capacity(targets.len());
    for (&state, &target) in states.iter().zip(targets) {
        if target >= nodes.dims.vocab {
            return Err(Error::TokenOutOfRange {
                id: target,
                vocab: nodes.dims.vocab,
            });
        }
        let logits = output_logits(tape, nodes, state, ctx_term, z)?;
        let log_probs = tape.log_softmax(logits)?;
        picks.push(tape.pick(log_probs, target)?);
    }
    tape.scalar_sum(&picks)
}

/// Log probability of one terminated sentence under relation z, with an
/// explicit context vector (required by context-aware variants). Value
/// level, own tape.
pub fn sentence_log_prob(
    params: &DrlmParams,
    tokens: &[usize],
    c_prev: Option<&Tensor>,
    z: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    check_relation(&nodes, z)?;
    let c = c_prev.map(|t| tape.input(t.clone()));
    let consumed = consumed_input(tokens)?;
    let init = zero_state(&mut tape, params.dims.hidden);
    let trans = nodes.variant.has_transitions().then(|| nodes.w_trans[z]);
    let run = run_sentence(
        &mut tape,
        &nodes.lstm,
        nodes.x,
        &consumed,
        init,
        None,
        trans,
    )?;
    let ctx_term = context_logit_term(&mut tape, &nodes, c, z)?;
    let ll = sentence_ll_from_states(&mut tape, &nodes, &run.output_states, tokens, ctx_term, z)?;
    Ok(tape.value(ll).item())
}

/// Per-slot graph nodes from one pass over a document.
pub struct SlotForward {
    /// Z-vector of log prior probabilities; None for variants without
    /// relations.
    pub log_prior: Option<NodeId>,
    /// Scalar log p(sentence | z) per output head (length Z for the
    /// relation model, 1 for the baselines).
    pub sent_ll: Vec<NodeId>,
    pub n_predictions: usize,
}

pub struct DocForward {
    pub slots: Vec<SlotForward>,
}

fn document_forward_impl(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &EncodedDocument,
    dropout: Option<&DocumentDropout>,
    head_per_slot: Option<&[usize]>,
) -> Result<DocForward> {
    if nodes.variant.has_transitions() {
        return Err(Error::InvalidConfig {
            msg: "Model II documents go through the model2_* entry points".into(),
        });
    }
    if let Some(dp) = dropout {
        if dp.sentences.len() != doc.sentences.len() || dp.context.len() != doc.sentences.len() {
            return Err(Error::InvalidConfig {
                msg: "dropout plan does not match document".into(),
            });
        }
    }
    if let Some(sel) = head_per_slot {
        if sel.len() != doc.sentences.len() {
            return Err(Error::InvalidConfig {
                msg: "one output head per sentence required".into(),
            });
        }
    }
    let all_heads = nodes.variant.output_heads(nodes.dims.relations);
    let mut c: Option<NodeId> = if nodes.variant.uses_context() {
        Some(nodes.c0.expect("uses_context implies c0"))
    } else {
        None
    };
    let mut slots = Vec::with_capacity(doc.sentences.len());
    for (t, sentence) in doc.sentences.iter().enumerate() {
        let c_used = match (c, dropout) {
            (Some(cn), Some(dp)) => {
                let mask = tape.input(dp.context[t].clone());
                Some(tape.dropout_mask_mul(cn, mask)?)
            }
            (Some(cn), None) => Some(cn),
            (None, _) => None,
        };
        let log_prior = if nodes.variant.has_prior() {
            Some(relation_prior_log(
                tape,
                nodes,
                c_used.expect("prior needs context"),
            )?)
        } else {
            None
        };
        let consumed = consumed_input(sentence)?;
        let init = zero_state(tape, nodes.dims.hidden);
        let masks = dropout.map(|dp| &dp.sentences[t]);
        let run = run_sentence(tape, &nodes.lstm, nodes.x, &consumed, init, masks, None)?;
        let heads: Vec<usize> = match head_per_slot {
            // single-head variants ignore the label; the tied model
            // scores the selected relation's head only
            Some(sel) if nodes.variant.has_tying() => {
                check_relation(nodes, sel[t])?;
                vec![sel[t]]
            }
            Some(_) => vec![0],
            None => (0..all_heads).collect(),
        };
        let mut sent_ll = Vec::with_capacity(heads.len());
        for &z in &heads {
            let ctx_term = context_logit_term(tape, nodes, c_used, z)?;
            sent_ll.push(sentence_ll_from_states(
                tape,
                nodes,
                &run.output_states,
                sentence,
                ctx_term,
                z,
            )?);
        }
        slots.push(SlotForward {
            log_prior,
            sent_ll,
            n_predictions: sentence.len(),
        });
        if nodes.variant.uses_context() {
            c = Some(run.final_state.h);
        }
    }
    Ok(DocForward { slots })
}

/// Builds the shared-recurrence forward pass with every output head
/// per slot (all variants except Model II, whose recurrence depends on
/// the relations).
pub fn document_forward(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &EncodedDocument,
    dropout: Option<&DocumentDropout>,
) -> Result<DocForward> {
    document_forward_impl(tape, nodes, doc, dropout, None)
}

/// Same pass computing only one output head per slot (each slot's
/// `sent_ll` has a single entry). The complete-data objective only
/// touches the observed relation's head, which saves a factor of Z.
pub fn document_forward_restricted(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &EncodedDocument,
    dropout: Option<&DocumentDropout>,
    labels: &[usize],
) -> Result<DocForward> {
    document_forward_impl(tape, nodes, doc, dropout, Some(labels))
}

// ── Model II ──

pub struct Model2Slot {
    /// Z-vector of log prior probabilities given this chain's context.
    pub log_prior: NodeId,
    /// Scalar log p(sentence | z_t) for the chain's relation.
    pub sent_ll: NodeId,
}

/// Single-chain Model II forward for an observed relation sequence.
/// Returns per-slot nodes and the scalar complete-data log joint.
pub fn model2_chain(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &EncodedDocument,
    labels: &[usize],
    dropout: Option<&DocumentDropout>,
) -> Result<(Vec<Model2Slot>, NodeId)> {
    if !nodes.variant.has_transitions() {
        return Err(Error::InvalidConfig {
            msg: format!("variant {} is not Model II", nodes.variant.name()),
        });
    }
    if labels.len() != doc.sentences.len() {
        return Err(Error::InvalidConfig {
            msg: format!(
                "{} labels for {} sentences",
                labels.len(),
                doc.sentences.len()
            ),
        });
    }
    let mut c = nodes.c0.expect("Model II tracks context");
    let mut slots = Vec::with_capacity(labels.len());
    let mut terms = Vec::with_capacity(2 * labels.len());
    for (t, (sentence, &z)) in doc.sentences.iter().zip(labels).enumerate() {
        check_relation(nodes, z)?;
        let c_used = match dropout {
            Some(dp) => {
                let mask = tape.input(dp.context[t].clone());
                tape.dropout_mask_mul(c, mask)?
            }
            None => c,
        };
        let log_prior = relation_prior_log(tape, nodes, c_used)?;
        let prior_pick = tape.pick(log_prior, z)?;
        let consumed = consumed_input(sentence)?;
        let init = zero_state(tape, nodes.dims.hidden);
        let masks = dropout.map(|dp| &dp.sentences[t]);
        let run = run_sentence(
            tape,
            &nodes.lstm,
            nodes.x,
            &consumed,
            init,
            masks,
            Some(nodes.w_trans[z]),
        )?;
        let sent_ll = sentence_ll_from_states(tape, nodes, &run.output_states, sentence, None, 0)?;
        terms.push(prior_pick);
        terms.push(sent_ll);
        slots.push(Model2Slot { log_prior, sent_ll });
        c = run.final_state.h;
    }
    let joint = tape.scalar_sum(&terms)?;
    Ok((slots, joint))
}

pub struct Model2ChainNode {
    pub labels: Vec<usize>,
    /// Scalar log p(y, z-sequence).
    pub joint: NodeId,
}

/// Enumerates Model II chains over per-slot candidate relations on one
/// tape, sharing every common prefix. `cap` bounds the chain count.
pub fn model2_enumerate_on_tape(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &EncodedDocument,
    candidates: &[Vec<usize>],
    dropout: Option<&DocumentDropout>,
    cap: usize,
) -> Result<Vec<Model2ChainNode>> {
    if !nodes.variant.has_transitions() {
        return Err(Error::InvalidConfig {
            msg: format!("variant {} is not Model II", nodes.variant.name()),
        });
    }
    if candidates.len() != doc.sentences.len() {
        return Err(Error::InvalidConfig {
            msg: "one candidate set per sentence required".into(),
        });
    }
    let mut total = 1f64;
    for cand in candidates {
        if cand.is_empty() {
            return Err(Error::InvalidConfig {
                msg: "empty candidate set".into(),
            });
        }
        total *= cand.len() as f64;
    }
    if total > cap as f64 {
        return Err(Error::EnumerationTooLarge {
            states: total,
            limit: cap as f64,
        });
    }

    struct Walk<'a> {
        doc: &'a EncodedDocument,
        candidates: &'a [Vec<usize>],
        dropout: Option<&'a DocumentDropout>,
        chains: Vec<Model2ChainNode>,
    }

    fn recurse(
        w: &mut Walk,
        tape: &mut Tape,
        nodes: &ParamNodes,
        t: usize,
        c: NodeId,
        labels: &mut Vec<usize>,
        terms: &mut Vec<NodeId>,
    ) -> Result<()> {
        if t == w.doc.sentences.len() {
            let joint = tape.scalar_sum(terms)?;
            w.chains.push(Model2ChainNode {
                labels: labels.clone(),
                joint,
            });
            return Ok(());
        }
        let sentence = &w.doc.sentences[t];
        let c_used = match w.dropout {
            Some(dp) => {
                let mask = tape.input(dp.context[t].clone());
                tape.dropout_mask_mul(c, mask)?
            }
            None => c,
        };
        let log_prior = relation_prior_log(tape, nodes, c_used)?;
        let consumed = consumed_input(sentence)?;
        let masks = w.dropout.map(|dp| &dp.sentences[t]);
        for &z in &w.candidates[t] {
            check_relation(nodes, z)?;
            let prior_pick = tape.pick(log_prior, z)?;
            let init = zero_state(tape, nodes.dims.hidden);
            let run = run_sentence(
                tape,
                &nodes.lstm,
                nodes.x,
                &consumed,
                init,
                masks,
                Some(nodes.w_trans[z]),
            )?;
            let sent_ll =
                sentence_ll_from_states(tape, nodes, &run.output_states, sentence, None, 0)?;
            labels.push(z);
            terms.push(prior_pick);
            terms.push(sent_ll);
            recurse(w, tape, nodes, t + 1, run.final_state.h, labels, terms)?;
            labels.pop();
            terms.pop();
            terms.pop();
        }
        Ok(())
    }

    let mut walk = Walk {
        doc,
        candidates,
        dropout,
        chains: Vec::new(),
    };
    let c0 = nodes.c0.expect("Model II tracks context");
    recurse(
        &mut walk,
        tape,
        nodes,
        0,
        c0,
        &mut Vec::new(),
        &mut Vec::new(),
    )?;
    Ok(walk.chains)
}

/// Complete-data log joint log p(y, z) for the document's observed
/// labels (dummy-filled slots count as observed). Relation labels are
/// ignored by the relation-free baselines.
pub fn document_joint_log_prob(params: &DrlmParams, doc: &EncodedDocument) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::bind(&mut tape, params);
    if params.variant.has_transitions() {
        let (_, joint) = model2_chain(&mut tape, &nodes, doc, &doc.relations, None)?;
        return Ok(tape.value(joint).item());
    }
    let fwd = document_forward_restricted(&mut tape, &nodes, doc, None, &doc.relations)?;
    let mut total = 0.0;
    for (slot, &rel) in fwd.slots.iter().zip(&doc.relations) {
        if params.variant.has_prior() {
            check_relation(&nodes, rel)?;
            let prior = tape.value(slot.log_prior.expect("prior present"));
            total += prior.data()[rel];
        }
        total += tape.value(slot.sent_ll[0]).item();
    }
    Ok(total)
}
