//! Theory-level experiments: the loss decomposition, the KL bound on the loss
//! of a model trained out of domain, and the in-domain/out-of-domain crossover.
//!
//! ```text
//! L(θ_D; D) = H(D) + [min_θ L(θ; D) - H(D)] + [L(θ_D; D) - min_θ L(θ; D)]
//!           = l_H  + l_app                   + l_est
//! L(θ_D; T) ≤ H(T) + KL(T, D) + ε          for |D| large enough
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{expected_loss, ArchSpec, ModelParams, WeightedBatch};
use crate::objective::{norm, Objective};
use crate::sources::{
    derive_seed, entropy, enumerate_distribution, kl_divergence, sample, DistributionTable,
    MarkovSource,
};
use crate::training::{train, TrainConfig};

/// Tolerance attached to every quantity that depends on the oracle minimum.
pub const DEFAULT_OPTIMIZER_TOLERANCE: f64 = 1e-6;

/// `m` above this makes the bound vacuous in practice.
pub const VACUOUS_M: f64 = 1e6;

const BOOKKEEPING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub grad_tolerance: f64,
    pub max_steps: usize,
    pub initial_step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            grad_tolerance: 1e-8,
            max_steps: 100_000,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub params: ModelParams,
    pub loss: f64,
    /// Gradient norm at `params`; the achieved tolerance.
    pub grad_norm: f64,
    pub steps: usize,
    pub converged: bool,
}

/// `min_θ L(θ; table)` with default options.
pub fn oracle_min_loss(table: &DistributionTable, arch: ArchSpec) -> Result<OracleFit> {
    oracle_min_loss_with(table, arch, OracleOptions::default())
}

/// Full-batch gradient descent on the exact expected loss with a backtracking
/// step size. Once function values stop resolving the Armijo decrease, a step
/// is still accepted if the loss does not rise beyond rounding and the
/// gradient norm shrinks.
pub fn oracle_min_loss_with(
    table: &DistributionTable,
    arch: ArchSpec,
    options: OracleOptions,
) -> Result<OracleFit> {
    crate::model::check_arch_table(&arch, table)?;
    let batch = WeightedBatch::from_table(table);
    let objective = batch.objective(&arch);
    let dim = arch.param_count();
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut next_grad = vec![0.0; dim];
    let mut loss = objective.value_and_gradient(&theta, &mut grad);
    let mut grad_norm = norm(&grad);
    let mut step = options.initial_step;
    let mut steps = 0;
    'outer: while steps < options.max_steps && grad_norm >= options.grad_tolerance {
        let mut halvings = 0;
        loop {
            for ((n, t), g) in next.iter_mut().zip(&theta).zip(&grad) {
                *n = t - step * g;
            }
            let next_loss = objective.value_and_gradient(&next, &mut next_grad);
            let next_norm = norm(&next_grad);
            let armijo = next_loss <= loss - 0.5 * step * grad_norm * grad_norm;
            let flat = next_loss <= loss + 4.0 * f64::EPSILON * loss.abs() && next_norm < grad_norm;
            if next_loss.is_finite() && (armijo || flat) {
                std::mem::swap(&mut theta, &mut next);
                std::mem::swap(&mut grad, &mut next_grad);
                loss = next_loss;
                grad_norm = next_norm;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            halvings += 1;
            if halvings > 60 {
                break 'outer;
            }
        }
        steps += 1;
    }
    Ok(OracleFit {
        params: ModelParams::new(arch, theta)?,
        loss,
        grad_norm,
        steps,
        converged: grad_norm < options.grad_tolerance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub l_h: f64,
    pub l_app: f64,
    pub l_est: f64,
    pub total: f64,
    /// `L(θ_trained; source)` computed directly.
    pub direct: f64,
    pub arch: ArchSpec,
    pub optimizer_tolerance: f64,
    pub oracle_grad_norm: f64,
}

impl DecompositionReport {
    pub fn l_app_negative(&self) -> bool {
        self.l_app < -self.optimizer_tolerance
    }

    pub fn l_est_negative(&self) -> bool {
        self.l_est < -self.optimizer_tolerance
    }
}

/// Splits the loss of a model trained on `data` from zero init into entropy,
/// approximation and estimation terms.
pub fn decompose_loss(
    source: &MarkovSource,
    arch: ArchSpec,
    data: &crate::sources::Dataset,
    cfg: &TrainConfig,
) -> Result<DecompositionReport> {
    let table = enumerate_distribution(source)?;
    let oracle = oracle_min_loss(&table, arch)?;
    decompose_with_oracle(&table, &oracle, data, cfg)
}

/// [`decompose_loss`] reusing an oracle fit for `table`.
pub fn decompose_with_oracle(
    table: &DistributionTable,
    oracle: &OracleFit,
    data: &crate::sources::Dataset,
    cfg: &TrainConfig,
) -> Result<DecompositionReport> {
    let arch = *oracle.params.arch();
    let (trained, _) = train(&ModelParams::zeros(arch), data, cfg, None)?;
    let direct = expected_loss(&trained, table)?;
    let l_h = entropy(table);
    let l_app = oracle.loss - l_h;
    let l_est = direct - oracle.loss;
    let total = l_h + l_app + l_est;
    if (total - direct).abs() > BOOKKEEPING_TOL {
        return Err(Error::InvalidArgument(format!(
            "decomposition total {total} differs from direct loss {direct}"
        )));
    }
    Ok(DecompositionReport {
        l_h,
        l_app,
        l_est,
        total,
        direct,
        arch,
        optimizer_tolerance: DEFAULT_OPTIMIZER_TOLERANCE,
        oracle_grad_norm: oracle.grad_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub sample_size: usize,
    pub seed: u64,
    pub h_t: f64,
    pub kl_td: f64,
    pub epsilon: f64,
    pub bound: f64,
    pub observed: f64,
    pub margin: f64,
    pub m: f64,
    pub vacuous: bool,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.margin >= 0.0
    }
}

/// Trains `θ_D` on `D ~ source_d` for every `(size, seed)` cell and compares
/// `L(θ_D; T)` with `H(T) + KL(T, D) + ε`. Rows come back in `sizes × seeds`
/// order. Data for a cell is drawn with `derive_seed(seed, [size])`.
pub fn theorem1_check(
    source_t: &MarkovSource,
    source_d: &MarkovSource,
    arch: ArchSpec,
    sample_sizes: &[usize],
    seeds: &[u64],
    cfg: &TrainConfig,
    epsilon: f64,
) -> Result<Vec<Theorem1Report>> {
    let table_t = enumerate_distribution(source_t)?;
    let table_d = enumerate_distribution(source_d)?;
    let min_d = table_d.min_prob();
    if min_d <= 0.0 {
        let index = table_d.probs().iter().position(|&p| p <= 0.0).unwrap_or(0);
        return Err(Error::AbsoluteContinuity { index });
    }
    let h_t = entropy(&table_t);
    let kl_td = kl_divergence(&table_t, &table_d)?;
    let m = 1.0 / min_d;
    let cells: Vec<(usize, u64)> = sample_sizes
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(size, seed)| {
            let data = sample(source_d, size, derive_seed(seed, &[size as u64]))?;
            let (theta_d, _) = train(&ModelParams::zeros(arch), &data, cfg, None)?;
            let observed = expected_loss(&theta_d, &table_t)?;
            let bound = h_t + kl_td + epsilon;
            Ok(Theorem1Report {
                sample_size: size,
                seed,
                h_t,
                kl_td,
                epsilon,
                bound,
                observed,
                margin: bound - observed,
                m,
                vacuous: m > VACUOUS_M,
            })
        })
        .collect()
}

/// Fraction of reports at `sample_size` whose margin is non-negative.
pub fn pass_fraction(reports: &[Theorem1Report], sample_size: usize) -> f64 {
    let cell: Vec<_> = reports.iter().filter(|r| r.sample_size == sample_size).collect();
    if cell.is_empty() {
        return 0.0;
    }
    cell.iter().filter(|r| r.holds()).count() as f64 / cell.len() as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverRow {
    pub size_t: usize,
    /// Median `L(θ_T; T)` over seeds; `None` when `|T| = 0`.
    pub median_loss_t: Option<f64>,
    pub median_loss_d: f64,
    pub t_wins: Option<bool>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverTable {
    pub size_d: usize,
    pub rows: Vec<CrossoverRow>,
    /// Smallest `|T|` in the sweep whose median loss beats training on `D`.
    pub crossover: Option<usize>,
}

/// Training on `T ~ source_t` versus training on `D ~ source_d`, both scored
/// by the exact loss on `T`. `D` for seed `s` uses `derive_seed(s, [0, size_d])`,
/// `T` uses `derive_seed(s, [1, size_t])`.
pub fn crossover_experiment(
    source_t: &MarkovSource,
    source_d: &MarkovSource,
    arch: ArchSpec,
    sizes_t: &[usize],
    size_d: usize,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<CrossoverTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("crossover needs at least one seed".into()));
    }
    let table_t = enumerate_distribution(source_t)?;
    let fit = |source: &MarkovSource, size: usize, seed: u64| -> Result<f64> {
        let data = sample(source, size, seed)?;
        let (theta, _) = train(&ModelParams::zeros(arch), &data, cfg, None)?;
        expected_loss(&theta, &table_t)
    };
    let losses_d = seeds
        .par_iter()
        .map(|&s| fit(source_d, size_d, derive_seed(s, &[0, size_d as u64])))
        .collect::<Result<Vec<_>>>()?;
    let median_loss_d = median(&losses_d).unwrap_or(f64::NAN);
    let rows = sizes_t
        .par_iter()
        .map(|&size_t| {
            if size_t == 0 {
                return Ok(CrossoverRow {
                    size_t,
                    median_loss_t: None,
                    median_loss_d,
                    t_wins: None,
                    flagged: true,
                });
            }
            let losses = seeds
                .iter()
                .map(|&s| fit(source_t, size_t, derive_seed(s, &[1, size_t as u64])))
                .collect::<Result<Vec<_>>>()?;
            let m = median(&losses).unwrap_or(f64::NAN);
            Ok(CrossoverRow {
                size_t,
                median_loss_t: Some(m),
                median_loss_d,
                t_wins: Some(m < median_loss_d),
                flagged: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crossover = rows
        .iter()
        .filter(|r| r.t_wins == Some(true))
        .map(|r| r.size_t)
        .min();
    Ok(CrossoverTable {
        size_d,
        rows,
        crossover,
    })
}
