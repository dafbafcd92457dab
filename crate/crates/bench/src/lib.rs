//! Inputs shared by the criterion benches.

use adaptlab_core::fixture;
use adaptlab_core::sources::sample;
use adaptlab_core::{ArchSpec, Dataset, MarkovSource, ModelParams, Result};

pub struct Workload {
    pub source: MarkovSource,
    pub arch: ArchSpec,
    pub params: ModelParams,
    pub data: Dataset,
}

/// The standard fixture source with `size` samples and a random model of `arch`.
pub fn workload(arch: ArchSpec, size: usize, seed: u64) -> Result<Workload> {
    let source = fixture::standard()?.generic;
    let data = sample(&source, size, seed)?;
    Ok(Workload {
        params: ModelParams::gaussian(arch, 0.1, seed),
        source,
        arch,
        data,
    })
}

/// Tabular order-1 and loglinear order-2 models over the fixture alphabet.
pub fn archs() -> Result<Vec<(&'static str, ArchSpec)>> {
    let f = fixture::standard()?;
    let (v, n) = (f.arch.vocab(), f.arch.seq_len());
    Ok(vec![
        ("tabular1", ArchSpec::tabular(1, v, n)?),
        ("loglinear2", ArchSpec::loglinear(2, v, n)?),
    ])
}
