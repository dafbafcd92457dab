//! Exact, desk-scale experiments on language-model domain adaptation.
//!
//! Small Markov sources are enumerated over the whole sequence space, so
//! entropies, divergences and expected losses are computed exactly rather
//! than estimated. Tiny autoregressive models with analytic gradients are
//! trained on samples, and the data-selection weights (importance sampling,
//! intelligent selection, influence) are compared against those exact values.

pub mod analysis;
pub mod error;
pub mod fixture;
pub mod influence;
pub mod model;
pub mod objective;
pub mod selection;
pub mod sources;
pub mod training;

pub use error::{Error, Result};
pub use model::{ArchSpec, Family, GradVector, ModelParams};
pub use objective::HessianOptions;
pub use selection::{SelectionWeights, WeightMethod};
pub use sources::{Dataset, DistributionTable, MarkovSource, Sequence, Token, Vocab};
pub use training::{StepRecord, TauSchedule, TrainConfig, TrainTrace};
