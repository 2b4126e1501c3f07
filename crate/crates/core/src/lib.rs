//! A discourse-aware recurrent language model toolkit.
//!
//! A document is a sequence of sentences; between adjacent sentences sits
//! a latent discourse relation. The relation is drawn from a softmax
//! prior over the previous sentence's final hidden state, and it selects
//! the output-layer parametrization used to generate the next sentence.
//! The crate provides:
//!
//! * a reverse-mode autodiff tape sized for desk-scale experiments
//!   ([`tape`]),
//! * word embeddings and a single-layer LSTM ([`rnn`]),
//! * the relation-conditioned model plus its RNNLM / DCLM degenerate
//!   baselines and a hidden-transition variant ([`model`]),
//! * exact posterior / marginal inference and a sequential Monte Carlo
//!   sampler ([`inference`], [`smc`]),
//! * AdaGrad training with the joint and conditional objectives
//!   ([`training`]),
//! * corpus ingestion, a synthetic corpus generator and evaluation
//!   metrics ([`corpus`], [`synth`], [`metrics`]).

pub mod corpus;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod rnn;
pub mod smc;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub mod checkpoint;

pub use error::{Error, Result};
pub use tensor::Tensor;
