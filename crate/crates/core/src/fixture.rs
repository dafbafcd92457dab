//! The standard fixture: `V = 4`, `n = 5`, a sticky generic chain and a
//! perturbed target chain.

use crate::error::Result;
use crate::model::ArchSpec;
use crate::sources::{MarkovSource, Vocab};
use crate::training::TrainConfig;

pub const VOCAB: usize = 4;
pub const SEQ_LEN: usize = 5;
pub const STAY: f64 = 0.7;
pub const PERTURBATION: f64 = 0.5;
pub const PERTURBATION_SEED: u64 = 0;
pub const SIZE_D: usize = 10_000;
pub const SIZE_T: usize = 100;
pub const CONTEXT_LEN: usize = 1;
pub const LEARNING_RATE: f64 = 1.5;
pub const STEPS: usize = 300;

#[derive(Debug, Clone)]
pub struct StandardFixture {
    pub generic: MarkovSource,
    pub target: MarkovSource,
    pub arch: ArchSpec,
    pub size_d: usize,
    pub size_t: usize,
    pub train: TrainConfig,
}

pub fn standard() -> Result<StandardFixture> {
    let vocab = Vocab::new(VOCAB)?;
    let generic = MarkovSource::sticky(vocab, SEQ_LEN, STAY)?;
    let target = generic.perturbed(PERTURBATION, PERTURBATION_SEED)?;
    Ok(StandardFixture {
        generic,
        target,
        arch: ArchSpec::tabular(CONTEXT_LEN, vocab, SEQ_LEN)?,
        size_d: SIZE_D,
        size_t: SIZE_T,
        train: TrainConfig::full_batch(LEARNING_RATE, STEPS),
    })
}
