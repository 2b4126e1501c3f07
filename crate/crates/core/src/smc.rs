//! Sequential Monte Carlo over relation sequences.
//!
//! Particles carry a relation chain left to right. At each slot a
//! relation is drawn from the proposal, the incremental importance
//! weight is prior * likelihood / proposal, and the marginal
//! likelihood estimate accrues one factor per slot:
//!
//! ```text
//! log p(y_1..y_t) - log p(y_1..y_{t-1})  ~=  log sum_n w_n u_n
//! ```
//!
//! with w_n the normalized weights entering the slot and u_n the
//! incremental weights. With uniform incoming weights the factor is
//! the plain average (1/N) sum u_n; tracking the weighted form keeps
//! the estimator unbiased across adaptive resampling. Systematic
//! resampling fires when the effective sample size drops below a
//! configured fraction of N. Slot posteriors are recorded from the
//! normalized weights right after each reweighting, before resampling.

use crate::corpus::EncodedDocument;
use crate::error::{Error, Result};
use crate::inference::{document_slot_values, log_sum_exp, model2_lattice};
use crate::model::DrlmParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    /// Draw from the model's relation prior given the particle's own
    /// context; incremental weight reduces to the likelihood.
    Prior,
    /// Draw uniformly over relations.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct SmcConfig {
    pub n_particles: usize,
    pub proposal: Proposal,
    /// Resample when ESS < threshold * N; 0 disables.
    pub resample_threshold: f64,
    pub seed: u64,
}

impl SmcConfig {
    pub fn new(n_particles: usize, seed: u64) -> SmcConfig {
        SmcConfig {
            n_particles,
            proposal: Proposal::Prior,
            resample_threshold: 0.5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidConfig {
                msg: "particle count must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::InvalidConfig {
                msg: format!(
                    "resample threshold {} outside [0, 1]",
                    self.resample_threshold
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SmcRun {
    /// Estimate of log p(sentences).
    pub log_marginal: f64,
    /// Weighted relation distribution per slot.
    pub slot_posteriors: Vec<Vec<f64>>,
    /// Effective sample size after each slot's reweighting.
    pub ess_history: Vec<f64>,
    /// Whether resampling fired at each slot.
    pub resampled: Vec<bool>,
    /// Weighted mean of the particles' complete-data log joints; lies
    /// below the marginal on average (a diagnostic, not an estimator
    /// of it).
    pub averaged_complete_log_likelihood: f64,
}

/// log prior vector per particle context at one slot. For the
/// output-layer model the context is a deterministic function of the
/// observed sentences, so one vector serves every particle; for
/// Model II it is keyed by the particle's previous relation.
enum SlotPriors<'a> {
    Shared(&'a [f64]),
    ByPrevRelation(&'a [Vec<f64>]),
}

impl SlotPriors<'_> {
    fn for_particle(&self, z_prev: usize) -> &[f64] {
        match self {
            SlotPriors::Shared(v) => v,
            SlotPriors::ByPrevRelation(rows) => &rows[z_prev],
        }
    }
}

/// Normalizes log weights in place, returning their log-sum. Errors
/// when every particle has zero probability.
fn normalize_log_weights(log_w: &mut [f64], step: usize) -> Result<f64> {
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY || !lse.is_finite() {
        return Err(Error::AllParticlesImpossible { step });
    }
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    Ok(lse)
}

fn sample_categorical<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        cum += lp.exp();
        if r < cum {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Systematic resampling: one uniform offset, N evenly spaced points
/// through the cumulative weights.
fn systematic_ancestors<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let offset: f64 = rng.gen();
    let mut ancestors = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let point = (offset + i as f64) / n as f64;
        while point >= cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        ancestors.push(j);
    }
    ancestors
}

pub fn smc_sample(
    params: &DrlmParams,
    doc: &EncodedDocument,
    config: &SmcConfig,
) -> Result<SmcRun> {
    config.validate()?;
    if !params.variant.has_prior() {
        return Err(Error::InvalidConfig {
            msg: format!(
                "variant {} has no relations to sample",
                params.variant.name()
            ),
        });
    }
    let z_count = params.dims.relations;
    let t_len = doc.sentences.len();
    let n = config.n_particles;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // slot-local model quantities, shared across particles
    let factored;
    let lattice;
    if params.variant.has_transitions() {
        lattice = Some(model2_lattice(params, doc)?);
        factored = None;
    } else {
        factored = Some(document_slot_values(params, doc)?);
        lattice = None;
    }
    let slot_ll = |t: usize| -> &Vec<f64> {
        match (&factored, &lattice) {
            (Some(slots), _) => &slots[t].sent_ll,
            (_, Some(lat)) => &lat.ll[t],
            _ => unreachable!(),
        }
    };
    let slot_priors = |t: usize| -> SlotPriors<'_> {
        match (&factored, &lattice) {
            (Some(slots), _) => SlotPriors::Shared(&slots[t].log_prior),
            (_, Some(lat)) => {
                if t == 0 {
                    SlotPriors::Shared(&lat.prior_first)
                } else {
                    SlotPriors::ByPrevRelation(&lat.prior_step[t])
                }
            }
            _ => unreachable!(),
        }
    };

    let uniform_log_q = -(z_count as f64).ln();
    let mut z_prev = vec![0usize; n];
    let mut log_w = vec![-(n as f64).ln(); n];
    let mut complete_joint = vec![0.0f64; n];
    let mut log_marginal = 0.0;
    let mut slot_posteriors = Vec::with_capacity(t_len);
    let mut ess_history = Vec::with_capacity(t_len);
    let mut resampled = Vec::with_capacity(t_len);
    let mut drawn = vec![0usize; n];
    let mut log_u = vec![0.0f64; n];

    for t in 0..t_len {
        let priors = slot_priors(t);
        let ll = slot_ll(t);
        for i in 0..n {
            let prior = priors.for_particle(z_prev[i]);
            let (z, log_q) = match config.proposal {
                Proposal::Prior => {
                    let z = sample_categorical(prior, &mut rng);
                    (z, prior[z])
                }
                Proposal::Uniform => (rng.gen_range(0..z_count), uniform_log_q),
            };
            drawn[i] = z;
            log_u[i] = prior[z] + ll[z] - log_q;
            complete_joint[i] += prior[z] + ll[z];
        }
        // marginal factor: log sum_n w_n u_n over the incoming weights
        let combined: Vec<f64> = log_w.iter().zip(&log_u).map(|(w, u)| w + u).collect();
        let step_factor = log_sum_exp(&combined);
        if !step_factor.is_finite() {
            return Err(Error::AllParticlesImpossible { step: t });
        }
        log_marginal += step_factor;

        log_w = combined;
        normalize_log_weights(&mut log_w, t)?;
        let weights: Vec<f64> = log_w.iter().map(|w| w.exp()).collect();

        let mut posterior = vec![0.0f64; z_count];
        for i in 0..n {
            posterior[drawn[i]] += weights[i];
        }
        slot_posteriors.push(posterior);
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        ess_history.push(ess);

        z_prev.copy_from_slice(&drawn);
        let fire = ess < config.resample_threshold * n as f64;
        resampled.push(fire);
        if fire {
            let ancestors = systematic_ancestors(&weights, &mut rng);
            let prev_z = z_prev.clone();
            let prev_joint = complete_joint.clone();
            for (i, &a) in ancestors.iter().enumerate() {
                z_prev[i] = prev_z[a];
                complete_joint[i] = prev_joint[a];
            }
            log_w.fill(-(n as f64).ln());
        }
    }

    let final_weights: Vec<f64> = log_w.iter().map(|w| w.exp()).collect();
    let averaged_complete_log_likelihood = final_weights
        .iter()
        .zip(&complete_joint)
        .map(|(w, j)| w * j)
        .sum();
    Ok(SmcRun {
        log_marginal,
        slot_posteriors,
        ess_history,
        resampled,
        averaged_complete_log_likelihood,
    })
}

/// Marginal likelihood estimate alone.
pub fn smc_log_marginal(
    params: &DrlmParams,
    doc: &EncodedDocument,
    config: &SmcConfig,
) -> Result<f64> {
    Ok(smc_sample(params, doc, config)?.log_marginal)
}
