//! Training: the two objectives, initialization, gradient clipping,
//! AdaGrad and the document-level fit loop.
//!
//! The joint objective maximizes the complete-data log likelihood
//! log p(y, z) with the stored (gold or dummy-filled) relations. The
//! conditional objective maximizes the log posterior of the stored
//! relations given the text; for the output-layer model that is a sum
//! of per-slot log posteriors, and for Model II it is the log ratio of
//! a label-pinned chain sum to the full chain sum, both enumerated on
//! the tape.

use crate::corpus::EncodedCorpus;
use crate::error::{Error, Result};
use crate::inference::{corpus_marginal_log_likelihood, tag_document};
use crate::metrics::{accuracy, perplexity};
use crate::model::{
    document_forward, document_forward_restricted, model2_chain, model2_enumerate_on_tape,
    DocumentDropout, DrlmParams, InitKind, ModelDims, ModelVariant, ParamNodes,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Joint,
    Conditional,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Joint => "joint",
            Objective::Conditional => "conditional",
        }
    }

    pub fn from_name(name: &str) -> Result<Objective> {
        match name {
            "joint" => Ok(Objective::Joint),
            "conditional" => Ok(Objective::Conditional),
            _ => Err(Error::InvalidConfig {
                msg: format!("unknown objective {name:?}, expected joint|conditional"),
            }),
        }
    }

    /// What the fit loop tracks on dev: marginal perplexity for the
    /// joint objective, tagging accuracy for the conditional one.
    pub fn dev_metric_name(self) -> &'static str {
        match self {
            Objective::Joint => "dev_perplexity",
            Objective::Conditional => "dev_accuracy",
        }
    }

    /// Direction of the dev metric: accuracy rises, perplexity falls.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Objective::Conditional)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    /// Global L2 clip applied to the full gradient before each update;
    /// 0 disables.
    pub clip_threshold: f64,
    /// Dropout rate on embedded inputs, output-visible hidden states
    /// and context vectors; recurrent connections stay undropped.
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Score dummy-filled slots in the conditional objective and in
    /// dev accuracy. Off, only gold-labeled slots count.
    pub include_dummy: bool,
    /// Chain cap for Model II conditional enumeration.
    pub model2_enum_cap: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            learning_rate: 0.1,
            clip_threshold: 5.0,
            dropout: 0.5,
            max_epochs: 5,
            seed,
            include_dummy: true,
            model2_enum_cap: 4096,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig {
                msg: format!("learning rate {} must be positive", self.learning_rate),
            });
        }
        if self.clip_threshold < 0.0 || !self.clip_threshold.is_finite() {
            return Err(Error::InvalidConfig {
                msg: format!("clip threshold {} must be nonnegative", self.clip_threshold),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig {
                msg: format!("dropout {} outside [0, 1)", self.dropout),
            });
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig {
                msg: "at least one epoch required".into(),
            });
        }
        if self.model2_enum_cap == 0 {
            return Err(Error::InvalidConfig {
                msg: "enumeration cap must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Draws fresh parameters: matrices uniform in +-sqrt(6/(d1+d2)) with
/// d1/d2 the fan dimensions (biases use d1 = 1), the relation-prior
/// weights uniform in +-1e-5, its bias and the default context zero.
pub fn init_params<R: Rng>(
    dims: ModelDims,
    variant: ModelVariant,
    rng: &mut R,
) -> Result<DrlmParams> {
    let mut params = DrlmParams::zeros(dims, variant)?;
    let plan = params.init_plan();
    for (tensor, kind) in params.tensors_mut().into_iter().zip(plan) {
        let (rows, cols) = tensor.shape();
        match kind {
            InitKind::Uniform { d1, d2 } => {
                let bound = (6.0 / (d1 + d2) as f64).sqrt();
                *tensor = Tensor::uniform(rows, cols, -bound, bound, rng);
            }
            InitKind::Tiny => {
                *tensor = Tensor::uniform(rows, cols, -1e-5, 1e-5, rng);
            }
            InitKind::Zero => {}
        }
    }
    Ok(params)
}

/// Negated complete-data log joint for one document.
pub fn joint_loss(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &crate::corpus::EncodedDocument,
    dropout: Option<&DocumentDropout>,
) -> Result<NodeId> {
    let mut terms: Vec<NodeId>;
    if nodes.variant.has_transitions() {
        let (_, joint) = model2_chain(tape, nodes, doc, &doc.relations, dropout)?;
        terms = vec![joint];
    } else {
        let fwd = document_forward_restricted(tape, nodes, doc, dropout, &doc.relations)?;
        terms = Vec::with_capacity(2 * fwd.slots.len());
        for (slot, &rel) in fwd.slots.iter().zip(&doc.relations) {
            if let Some(prior) = slot.log_prior {
                terms.push(tape.pick(prior, rel)?);
            }
            terms.push(slot.sent_ll[0]);
        }
    }
    let total = tape.scalar_sum(&terms)?;
    tape.neg_scalar(total)
}

/// Negated log posterior of the stored relations; None when no slot is
/// scored (unlabeled document with `include_dummy` off). Errors for
/// variants without relations, where the posterior is vacuous.
pub fn conditional_loss(
    tape: &mut Tape,
    nodes: &ParamNodes,
    doc: &crate::corpus::EncodedDocument,
    dropout: Option<&DocumentDropout>,
    include_dummy: bool,
    enum_cap: usize,
) -> Result<Option<NodeId>> {
    if !nodes.variant.has_prior() {
        return Err(Error::InvalidConfig {
            msg: format!(
                "the conditional objective needs relations; variant {} has none",
                nodes.variant.name()
            ),
        });
    }
    let scored: Vec<bool> = doc.labeled.iter().map(|&l| l || include_dummy).collect();
    if scored.iter().all(|&s| !s) {
        return Ok(None);
    }

    if nodes.variant.has_transitions() {
        // log p(z_scored = gold | y) = log sum over chains pinned at
        // the scored slots minus log sum over all chains
        let z = nodes.dims.relations;
        let all: Vec<usize> = (0..z).collect();
        let pinned: Vec<Vec<usize>> = doc
            .relations
            .iter()
            .zip(&scored)
            .map(|(&rel, &s)| if s { vec![rel] } else { all.clone() })
            .collect();
        let free: Vec<Vec<usize>> = vec![all.clone(); doc.sentences.len()];
        let num_chains = model2_enumerate_on_tape(tape, nodes, doc, &pinned, dropout, enum_cap)?;
        let num = log_sum_exp_scalars(
            tape,
            &num_chains.iter().map(|c| c.joint).collect::<Vec<_>>(),
        )?;
        let den_chains = model2_enumerate_on_tape(tape, nodes, doc, &free, dropout, enum_cap)?;
        let den = log_sum_exp_scalars(
            tape,
            &den_chains.iter().map(|c| c.joint).collect::<Vec<_>>(),
        )?;
        let neg_num = tape.neg_scalar(num)?;
        return Ok(Some(tape.add(den, neg_num)?));
    }

    let fwd = document_forward(tape, nodes, doc, dropout)?;
    let mut picks = Vec::new();
    for ((slot, &rel), &s) in fwd.slots.iter().zip(&doc.relations).zip(&scored) {
        if !s {
            continue;
        }
        let prior = slot.log_prior.expect("relation variants carry a prior");
        let lik_vec = tape.concat(&slot.sent_ll)?;
        let joint_vec = tape.add(prior, lik_vec)?;
        let log_post = tape.log_softmax(joint_vec)?;
        picks.push(tape.pick(log_post, rel)?);
    }
    let total = tape.scalar_sum(&picks)?;
    Ok(Some(tape.neg_scalar(total)?))
}

fn log_sum_exp_scalars(tape: &mut Tape, scalars: &[NodeId]) -> Result<NodeId> {
    if scalars.len() == 1 {
        return Ok(scalars[0]);
    }
    let stacked = tape.concat(scalars)?;
    tape.logsumexp(stacked)
}

/// Scales the whole gradient to L2 norm `threshold` when it exceeds
/// it; returns the pre-clip norm. `threshold` 0 disables clipping.
pub fn clip_gradients(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if threshold > 0.0 && norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Per-parameter accumulated squared gradients.
pub struct AdagradState {
    accum: Vec<Tensor>,
}

impl AdagradState {
    pub fn new(params: &DrlmParams) -> AdagradState {
        AdagradState {
            accum: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    /// accum += g^2; p -= lr * g / (sqrt(accum) + eps)
    pub fn step(
        &mut self,
        params: &mut DrlmParams,
        grads: &[Tensor],
        learning_rate: f64,
    ) -> Result<()> {
        let mut slots = params.tensors_mut();
        if slots.len() != grads.len() || slots.len() != self.accum.len() {
            return Err(Error::DimensionMismatch {
                field: "gradient count".into(),
                expected: slots.len().to_string(),
                found: grads.len().to_string(),
            });
        }
        for ((slot, grad), acc) in slots.iter_mut().zip(grads).zip(&mut self.accum) {
            if slot.shape() != grad.shape() {
                return Err(Error::DimensionMismatch {
                    field: "gradient shape".into(),
                    expected: format!("{:?}", slot.shape()),
                    found: format!("{:?}", grad.shape()),
                });
            }
            let acc_data = acc.data_mut();
            let slot_data = slot.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                acc_data[i] += g * g;
                slot_data[i] -= learning_rate * g / (acc_data[i].sqrt() + ADAGRAD_EPS);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Dev perplexity (joint) or dev accuracy (conditional).
    pub dev_value: f64,
}

pub struct FitResult {
    pub params: DrlmParams,
    pub best_epoch: usize,
    pub dev_value: f64,
    pub history: Vec<EpochStats>,
}

fn dev_evaluate(
    params: &DrlmParams,
    dev: &EncodedCorpus,
    objective: Objective,
    include_dummy: bool,
) -> Result<f64> {
    match objective {
        Objective::Joint => {
            let (ll, tokens) = corpus_marginal_log_likelihood(params, dev)?;
            perplexity(ll, tokens)
        }
        Objective::Conditional => {
            let mut pairs = Vec::new();
            for doc in &dev.documents {
                let tags = tag_document(params, doc)?;
                for ((&gold, &pred), &labeled) in doc.relations.iter().zip(&tags).zip(&doc.labeled)
                {
                    if labeled || include_dummy {
                        pairs.push((gold, pred));
                    }
                }
            }
            accuracy(&pairs, params.dims.relations)
        }
    }
}

/// Trains one model: fresh initialization, per-epoch document shuffle,
/// per-document dropout resampling, one AdaGrad update per document
/// with global-norm clipping, dev evaluation after each epoch. Returns
/// the parameters from the best dev epoch. Fully determined by
/// `config.seed`.
pub fn fit(
    variant: ModelVariant,
    dims: ModelDims,
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    config: &TrainConfig,
    mut epoch_log: Option<&mut dyn Write>,
) -> Result<FitResult> {
    config.validate()?;
    if train.documents.is_empty() || dev.documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.objective == Objective::Conditional && !variant.has_prior() {
        return Err(Error::InvalidConfig {
            msg: format!(
                "the conditional objective needs relations; variant {} has none",
                variant.name()
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(dims, variant, &mut rng)?;
    let mut opt = AdagradState::new(&params);
    let mut order: Vec<usize> = (0..train.documents.len()).collect();
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, DrlmParams)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &idx in &order {
            let doc = &train.documents[idx];
            let plan = DocumentDropout::sample(doc, dims, config.dropout, &mut rng);
            if doc.sentences.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let nodes = ParamNodes::bind(&mut tape, &params);
            let loss = match config.objective {
                Objective::Joint => Some(joint_loss(&mut tape, &nodes, doc, plan.as_ref())?),
                Objective::Conditional => conditional_loss(
                    &mut tape,
                    &nodes,
                    doc,
                    plan.as_ref(),
                    config.include_dummy,
                    config.model2_enum_cap,
                )?,
            };
            let Some(loss) = loss else { continue };
            train_loss += tape.value(loss).item();
            tape.backward(loss)?;
            let mut grads: Vec<Tensor> = nodes.ordered.iter().map(|&id| tape.grad(id)).collect();
            clip_gradients(&mut grads, config.clip_threshold);
            opt.step(&mut params, &grads, config.learning_rate)?;
        }

        let dev_value = dev_evaluate(&params, dev, config.objective, config.include_dummy)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            dev_value,
        });
        let improves = match &best {
            None => true,
            Some((_, best_value, _)) => {
                if config.objective.higher_is_better() {
                    dev_value > *best_value
                } else {
                    dev_value < *best_value
                }
            }
        };
        if improves {
            best = Some((epoch, dev_value, params.clone()));
        }
        if let Some(log) = epoch_log.as_deref_mut() {
            writeln!(
                log,
                "epoch={epoch} objective={} train_loss={train_loss:.6} {}={dev_value:.6}{}",
                config.objective.name(),
                config.objective.dev_metric_name(),
                if improves { " best=true" } else { "" }
            )?;
        }
    }

    let (best_epoch, dev_value, params) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params,
        best_epoch,
        dev_value,
        history,
    })
}
