//! Tiny autoregressive language models with exact log-probabilities.
//!
//! Each position predicts its token through a softmax over `V` logits. The
//! logits are a sum of parameter blocks of width `V` selected by the context:
//!
//! * **tabular**: one block per distinct (padded) context of up to `k`
//!   preceding tokens, so any conditional table of order `k` is representable;
//! * **loglinear**: a shared bias block plus one block per (lag, token) pair
//!   for the `k` preceding tokens.
//!
//! Positions before the start of the sequence are filled with a start symbol
//! that is never predicted. In the tabular family a context with `j < k` real
//! tokens is its own table row; in the loglinear family the start symbol
//! contributes no block.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::objective::{finite_difference_hessian, HessianMatrix, HessianOptions, Objective};
use crate::selection::SelectionWeights;
use crate::sources::{
    space_size, Dataset, DistributionTable, Sequence, Token, Vocab,
    DEFAULT_ENUMERATION_CAP,
};

pub use io::{read_params, write_params};

/// Upper bound on parameter count accepted by [`ArchSpec::new`].
const MAX_PARAMS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Tabular,
    Loglinear,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Tabular => "tabular",
            Family::Loglinear => "loglinear",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(Family::Tabular),
            "loglinear" => Ok(Family::Loglinear),
            other => Err(Error::Parse(format!(
                "unknown model family {other:?} (expected tabular or loglinear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    family: Family,
    context_len: usize,
    vocab: Vocab,
    seq_len: usize,
    param_count: usize,
}

impl ArchSpec {
    pub fn new(family: Family, context_len: usize, vocab: Vocab, seq_len: usize) -> Result<Self> {
        if context_len == 0 {
            return Err(Error::InvalidArgument("context length must be at least 1".into()));
        }
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        let v = vocab.size();
        let too_big = || Error::InvalidArgument("architecture has too many parameters".into());
        let param_count = match family {
            Family::Tabular => {
                // Σ_{j=0..k} V^j contexts, each with V logits.
                let mut contexts = 0usize;
                let mut power = 1usize;
                for _ in 0..=context_len {
                    contexts = contexts.checked_add(power).ok_or_else(too_big)?;
                    power = power.saturating_mul(v);
                }
                contexts.checked_mul(v).ok_or_else(too_big)?
            }
            Family::Loglinear => context_len
                .checked_mul(v)
                .and_then(|x| x.checked_add(1))
                .and_then(|x| x.checked_mul(v))
                .ok_or_else(too_big)?,
        };
        if param_count > MAX_PARAMS {
            return Err(too_big());
        }
        Ok(Self {
            family,
            context_len,
            vocab,
            seq_len,
            param_count,
        })
    }

    pub fn tabular(context_len: usize, vocab: Vocab, seq_len: usize) -> Result<Self> {
        Self::new(Family::Tabular, context_len, vocab, seq_len)
    }

    pub fn loglinear(context_len: usize, vocab: Vocab, seq_len: usize) -> Result<Self> {
        Self::new(Family::Loglinear, context_len, vocab, seq_len)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn check_sequence(&self, y: &[Token]) -> Result<()> {
        if y.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                found: y.len(),
            });
        }
        y.iter().try_for_each(|&t| self.vocab.check(t))
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.vocab() != self.vocab || data.seq_len() != self.seq_len {
            return Err(Error::SpaceMismatch {
                left_vocab: self.vocab.size(),
                left_len: self.seq_len,
                right_vocab: data.vocab().size(),
                right_len: data.seq_len(),
            });
        }
        Ok(())
    }

    /// Offsets of the parameter blocks whose sum gives the logits at `pos`.
    fn blocks(&self, y: &[Token], pos: usize, out: &mut Vec<usize>) {
        out.clear();
        let v = self.vocab.size();
        match self.family {
            Family::Tabular => {
                let real = pos.min(self.context_len);
                // Contexts with fewer real tokens come first.
                let mut offset = 0usize;
                let mut power = 1usize;
                for _ in 0..real {
                    offset += power;
                    power *= v;
                }
                let code = y[pos - real..pos].iter().fold(0, |c, &t| c * v + t);
                out.push((offset + code) * v);
            }
            Family::Loglinear => {
                out.push(self.context_len * v * v);
                for lag in 1..=self.context_len.min(pos) {
                    out.push((lag - 1) * v * v + y[pos - lag] * v);
                }
            }
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(k={}, V={}, n={})",
            self.family,
            self.context_len,
            self.vocab.size(),
            self.seq_len
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: ArchSpec, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(Self { arch, theta })
    }

    /// All-zero logits: the uniform model.
    pub fn zeros(arch: ArchSpec) -> Self {
        Self {
            theta: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// Independent `N(0, sigma²)` entries drawn from `seed`.
    pub fn gaussian(arch: ArchSpec, sigma: f64, seed: u64) -> Self {
        let normal = Normal::new(0.0, sigma).expect("finite standard deviation");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            theta: (0..arch.param_count())
                .map(|_| normal.sample(&mut rng))
                .collect(),
            arch,
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    pub(crate) fn from_parts_unchecked(arch: ArchSpec, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), arch.param_count());
        Self { arch, theta }
    }
}

/// Gradient with respect to a [`ModelParams`] vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    arch: ArchSpec,
    values: Vec<f64>,
}

impl GradVector {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        crate::objective::dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        crate::objective::norm(&self.values)
    }
}

/// Scratch buffers reused across positions.
struct Workspace {
    logits: Vec<f64>,
    blocks: Vec<usize>,
}

impl Workspace {
    fn new(arch: &ArchSpec) -> Self {
        Self {
            logits: vec![0.0; arch.vocab.size()],
            blocks: Vec::with_capacity(arch.context_len + 1),
        }
    }
}

/// Log-probability of `y`; when `grad` is given, adds `scale * ∂ log P / ∂θ`
/// into it.
fn sequence_log_prob(
    arch: &ArchSpec,
    theta: &[f64],
    y: &[Token],
    mut grad: Option<(&mut [f64], f64)>,
    ws: &mut Workspace,
) -> f64 {
    let v = arch.vocab.size();
    let mut total = 0.0;
    for pos in 0..y.len() {
        arch.blocks(y, pos, &mut ws.blocks);
        ws.logits.iter_mut().for_each(|l| *l = 0.0);
        for &b in &ws.blocks {
            for (l, t) in ws.logits.iter_mut().zip(&theta[b..b + v]) {
                *l += t;
            }
        }
        let max = ws.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = ws.logits.iter().map(|l| (l - max).exp()).sum();
        let log_norm = max + sum.ln();
        let target = y[pos];
        total += ws.logits[target] - log_norm;
        if let Some((g, scale)) = grad.as_mut() {
            for &b in &ws.blocks {
                for (c, l) in ws.logits.iter().enumerate() {
                    let indicator = if c == target { 1.0 } else { 0.0 };
                    g[b + c] += *scale * (indicator - (l - log_norm).exp());
                }
            }
        }
    }
    total
}

pub fn log_prob(params: &ModelParams, y: &[Token]) -> Result<f64> {
    params.arch.check_sequence(y)?;
    let mut ws = Workspace::new(&params.arch);
    Ok(sequence_log_prob(&params.arch, &params.theta, y, None, &mut ws))
}

/// `∂/∂θ log P(y | θ)`: per position, one-hot of the target minus the softmax
/// probabilities, routed to each active block.
pub fn grad_log_prob(params: &ModelParams, y: &[Token]) -> Result<GradVector> {
    params.arch.check_sequence(y)?;
    let mut ws = Workspace::new(&params.arch);
    let mut values = vec![0.0; params.arch.param_count()];
    sequence_log_prob(
        &params.arch,
        &params.theta,
        y,
        Some((&mut values, 1.0)),
        &mut ws,
    );
    Ok(GradVector {
        arch: params.arch,
        values,
    })
}

pub fn model_distribution(params: &ModelParams) -> Result<DistributionTable> {
    model_distribution_with_cap(params, DEFAULT_ENUMERATION_CAP)
}

pub fn model_distribution_with_cap(params: &ModelParams, cap: usize) -> Result<DistributionTable> {
    let arch = &params.arch;
    let size = space_size(arch.vocab, arch.seq_len, cap)?;
    let mut ws = Workspace::new(arch);
    let probs = (0..size)
        .map(|code| {
            let y = crate::sources::decode(arch.vocab, arch.seq_len, code);
            sequence_log_prob(arch, &params.theta, &y, None, &mut ws).exp()
        })
        .collect();
    DistributionTable::new(arch.vocab, arch.seq_len, probs)
}

/// Weighted negative log-likelihood `Σ w(y) (-log P(y|θ)) / denom` over
/// distinct sequences. Duplicate sequences are merged by summing their weights
/// in input order; evaluation then runs in lexicographic sequence order so the
/// result does not depend on how the batch was assembled.
#[derive(Debug, Clone)]
pub struct WeightedBatch {
    entries: Vec<(Sequence, f64)>,
    denom: f64,
}

impl WeightedBatch {
    /// Rows `indices` of `data` (all rows if `None`), each weighted by
    /// `weights[i]` (1 if `None`), normalized by the number of rows.
    pub(crate) fn from_dataset(
        data: &Dataset,
        indices: Option<&[usize]>,
        weights: Option<&[f64]>,
    ) -> Self {
        let mut merged: BTreeMap<&[Token], f64> = BTreeMap::new();
        let mut add = |i: usize| {
            let w = weights.map_or(1.0, |w| w[i]);
            *merged.entry(data.sequences()[i].as_slice()).or_insert(0.0) += w;
        };
        let count = match indices {
            Some(idx) => {
                idx.iter().for_each(|&i| add(i));
                idx.len()
            }
            None => {
                (0..data.len()).for_each(&mut add);
                data.len()
            }
        };
        Self {
            entries: merged.into_iter().map(|(y, w)| (y.to_vec(), w)).collect(),
            denom: count as f64,
        }
    }

    /// The exact expectation under `table` (zero-probability rows dropped).
    pub(crate) fn from_table(table: &DistributionTable) -> Self {
        Self {
            entries: table.iter().filter(|(_, p)| *p > 0.0).collect(),
            denom: 1.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn objective<'a>(&'a self, arch: &'a ArchSpec) -> BatchObjective<'a> {
        BatchObjective { arch, batch: self }
    }
}

/// A [`WeightedBatch`] bound to an architecture.
pub struct BatchObjective<'a> {
    arch: &'a ArchSpec,
    batch: &'a WeightedBatch,
}

impl Objective for BatchObjective<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let mut ws = Workspace::new(self.arch);
        let total: f64 = self
            .batch
            .entries
            .iter()
            .map(|(y, w)| -w * sequence_log_prob(self.arch, theta, y, None, &mut ws))
            .sum();
        total / self.batch.denom
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ws = Workspace::new(self.arch);
        let scale = 1.0 / self.batch.denom;
        let mut total = 0.0;
        for (y, w) in &self.batch.entries {
            let lp = sequence_log_prob(self.arch, theta, y, Some((grad, -w * scale)), &mut ws);
            total -= w * lp;
        }
        total / self.batch.denom
    }
}

pub(crate) fn check_weights(data: &Dataset, weights: &SelectionWeights) -> Result<()> {
    if weights.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    if let Some((index, &value)) = weights
        .values()
        .iter()
        .enumerate()
        .find(|(_, w)| !(**w >= 0.0))
    {
        return Err(Error::NegativeWeight { index, value });
    }
    Ok(())
}

/// `(1/|D|) Σ w(y) (-log P(y|θ))`, with `w = 1` when no weights are given.
pub fn empirical_loss(
    params: &ModelParams,
    data: &Dataset,
    weights: Option<&SelectionWeights>,
) -> Result<f64> {
    params.arch.check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(w) = weights {
        check_weights(data, w)?;
    }
    let batch = WeightedBatch::from_dataset(data, None, weights.map(SelectionWeights::values));
    Ok(batch.objective(&params.arch).value(&params.theta))
}

/// Gradient of [`empirical_loss`] with respect to θ.
pub fn empirical_loss_gradient(
    params: &ModelParams,
    data: &Dataset,
    weights: Option<&SelectionWeights>,
) -> Result<GradVector> {
    params.arch.check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(w) = weights {
        check_weights(data, w)?;
    }
    let batch = WeightedBatch::from_dataset(data, None, weights.map(SelectionWeights::values));
    Ok(GradVector {
        arch: params.arch,
        values: batch.objective(&params.arch).gradient(&params.theta),
    })
}

/// Exact cross-entropy `-Σ_y P(y) log P(y|θ)` under `table`.
pub fn expected_loss(params: &ModelParams, table: &DistributionTable) -> Result<f64> {
    check_arch_table(&params.arch, table)?;
    let batch = WeightedBatch::from_table(table);
    Ok(batch.objective(&params.arch).value(&params.theta))
}

pub fn expected_loss_gradient(params: &ModelParams, table: &DistributionTable) -> Result<GradVector> {
    check_arch_table(&params.arch, table)?;
    let batch = WeightedBatch::from_table(table);
    Ok(GradVector {
        arch: params.arch,
        values: batch.objective(&params.arch).gradient(&params.theta),
    })
}

pub(crate) fn check_arch_table(arch: &ArchSpec, table: &DistributionTable) -> Result<()> {
    if table.vocab() != arch.vocab || table.seq_len() != arch.seq_len {
        return Err(Error::SpaceMismatch {
            left_vocab: arch.vocab.size(),
            left_len: arch.seq_len,
            right_vocab: table.vocab().size(),
            right_len: table.seq_len(),
        });
    }
    Ok(())
}

/// `exp(mean NLL / n)`, the per-token perplexity.
pub fn perplexity(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let loss = empirical_loss(params, data, None)?;
    Ok((loss / params.arch.seq_len as f64).exp())
}

/// Hessian of the unweighted empirical loss by central differences of its
/// analytic gradient.
pub fn hessian(params: &ModelParams, data: &Dataset, options: HessianOptions) -> Result<HessianMatrix> {
    weighted_hessian(params, data, None, options)
}

pub fn weighted_hessian(
    params: &ModelParams,
    data: &Dataset,
    weights: Option<&SelectionWeights>,
    options: HessianOptions,
) -> Result<HessianMatrix> {
    params.arch.check_dataset(data)?;
    if params.arch.param_count() > options.cap {
        return Err(Error::HessianTooLarge {
            params: params.arch.param_count(),
            cap: options.cap,
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(w) = weights {
        check_weights(data, w)?;
    }
    let batch = WeightedBatch::from_dataset(data, None, weights.map(SelectionWeights::values));
    finite_difference_hessian(&batch.objective(&params.arch), &params.theta, options)
}

/// Parameters whose model equals `table` exactly, for a tabular family with
/// `k >= n - 1`: each logit is the log conditional probability (zero-mass
/// contexts stay uniform, zero-probability continuations get a large negative
/// logit).
pub fn realize_table(arch: ArchSpec, table: &DistributionTable) -> Result<ModelParams> {
    check_arch_table(&arch, table)?;
    if arch.family != Family::Tabular || arch.context_len + 1 < arch.seq_len {
        return Err(Error::InvalidArgument(
            "exact realization needs a tabular family with k >= n - 1".into(),
        ));
    }
    let v = arch.vocab.size();
    // Prefix masses for every (context, next token) pair.
    let mut mass = vec![0.0; arch.param_count()];
    let mut blocks = Vec::new();
    for (y, p) in table.iter() {
        for pos in 0..y.len() {
            arch.blocks(&y, pos, &mut blocks);
            mass[blocks[0] + y[pos]] += p;
        }
    }
    let theta = mass
        .chunks(v)
        .flat_map(|row| {
            let total: f64 = row.iter().sum();
            row.iter()
                .map(move |&m| {
                    if total <= 0.0 {
                        0.0
                    } else if m <= 0.0 {
                        -1e3
                    } else {
                        (m / total).ln()
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ModelParams::new(arch, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{enumerate_distribution, entropy, kl_divergence, sample, MarkovSource};
    use proptest::prelude::*;

    fn v(n: usize) -> Vocab {
        Vocab::new(n).unwrap()
    }

    fn data(vocab: usize, seqs: &[&[Token]]) -> Dataset {
        let n = seqs[0].len();
        Dataset::new(v(vocab), n, seqs.iter().map(|s| s.to_vec()).collect(), 0).unwrap()
    }

    /// Central finite differences of `log_prob`, independent of the analytic path.
    fn fd_grad(params: &ModelParams, y: &[Token], h: f64) -> Vec<f64> {
        (0..params.theta.len())
            .map(|j| {
                let mut plus = params.clone();
                plus.theta[j] += h;
                let mut minus = params.clone();
                minus.theta[j] -= h;
                (log_prob(&plus, y).unwrap() - log_prob(&minus, y).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ArchSpec::loglinear(2, v(3), 4).unwrap().param_count(), (2 * 3 + 1) * 3);
        // contexts: start, 1 real token (V), 2 real tokens (V^2)
        assert_eq!(ArchSpec::tabular(2, v(3), 4).unwrap().param_count(), (1 + 3 + 9) * 3);
        assert_eq!(ArchSpec::tabular(1, v(4), 5).unwrap().param_count(), 20);
        assert!(ArchSpec::tabular(0, v(4), 5).is_err());
    }

    #[test]
    fn tabular_blocks_are_distinct_per_context() {
        let arch = ArchSpec::tabular(2, v(3), 4).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut blocks = Vec::new();
        for code in 0..81 {
            let y = crate::sources::decode(v(3), 4, code);
            for pos in 0..4 {
                arch.blocks(&y, pos, &mut blocks);
                assert_eq!(blocks.len(), 1);
                assert!(blocks[0] + 3 <= arch.param_count());
                let ctx: Vec<_> = y[pos.saturating_sub(2)..pos].to_vec();
                seen.insert((ctx, blocks[0]));
            }
        }
        // every context maps to exactly one block and vice versa
        let ctxs: std::collections::BTreeSet<_> = seen.iter().map(|(c, _)| c.clone()).collect();
        let offs: std::collections::BTreeSet<_> = seen.iter().map(|(_, b)| *b).collect();
        assert_eq!(ctxs.len(), seen.len());
        assert_eq!(offs.len(), seen.len());
        assert_eq!(seen.len(), 13);
    }

    #[test]
    fn uniform_log_probs() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(2), 3).unwrap());
        assert!((log_prob(&p, &[0, 1, 1]).unwrap() - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        let p = ModelParams::zeros(ArchSpec::loglinear(1, v(4), 2).unwrap());
        assert!((log_prob(&p, &[3, 0]).unwrap() + 2.772_589).abs() < 1e-6);
    }

    #[test]
    fn softmax_hand_evaluation() {
        let arch = ArchSpec::tabular(1, v(2), 1).unwrap();
        let theta = (0..arch.param_count())
            .map(|i| if i % 2 == 0 { 3f64.ln() } else { 0.0 })
            .collect();
        let p = ModelParams::new(arch, theta).unwrap();
        assert!((log_prob(&p, &[0]).unwrap() - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tokens_and_lengths() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(2), 3).unwrap());
        assert!(matches!(log_prob(&p, &[0, 2, 1]), Err(Error::TokenOutOfRange { token: 2, .. })));
        assert!(matches!(log_prob(&p, &[0, 1]), Err(Error::LengthMismatch { .. })));
        assert!(grad_log_prob(&p, &[5, 0, 0]).is_err());
    }

    #[test]
    fn uniform_tabular_gradient() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(2), 1).unwrap());
        let g = grad_log_prob(&p, &[0]).unwrap();
        // start context is block 0
        assert_eq!(&g.values()[..2], &[0.5, -0.5]);
        assert!(g.values()[2..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, arch) in [
            ArchSpec::tabular(2, v(3), 4).unwrap(),
            ArchSpec::loglinear(2, v(3), 4).unwrap(),
            ArchSpec::loglinear(1, v(4), 5).unwrap(),
        ]
        .into_iter()
        .enumerate()
        {
            let p = ModelParams::gaussian(arch, 0.5, seed as u64);
            let y = crate::sources::decode(arch.vocab(), arch.seq_len(), 17 + seed);
            let g = grad_log_prob(&p, &y).unwrap();
            let fd = fd_grad(&p, &y, 1e-5);
            for (a, b) in g.values().iter().zip(&fd) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                assert!(rel < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn expected_score_is_zero() {
        let p = ModelParams::gaussian(ArchSpec::loglinear(1, v(3), 3).unwrap(), 0.3, 4);
        let table = model_distribution(&p).unwrap();
        let mut acc = vec![0.0; p.theta.len()];
        for (y, prob) in table.iter() {
            for (a, g) in acc.iter_mut().zip(grad_log_prob(&p, &y).unwrap().values()) {
                *a += prob * g;
            }
        }
        assert!(acc.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn model_distribution_matches_log_prob() {
        let p = ModelParams::gaussian(ArchSpec::tabular(2, v(2), 3).unwrap(), 1.0, 9);
        let t = model_distribution(&p).unwrap();
        let total: f64 = t.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-8);
        for (y, prob) in t.iter() {
            assert!((prob - log_prob(&p, &y).unwrap().exp()).abs() < 1e-12);
        }
        let u = model_distribution(&ModelParams::zeros(ArchSpec::tabular(1, v(2), 3).unwrap()))
            .unwrap();
        assert!(u.probs().iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn empirical_loss_examples() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(2), 3).unwrap());
        let d = data(2, &[&[0, 1, 1], &[1, 1, 1], &[0, 0, 0]]);
        assert!((empirical_loss(&p, &d, None).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-15);

        let q = ModelParams::gaussian(*p.arch(), 0.7, 2);
        let plain = empirical_loss(&q, &d, None).unwrap();
        let zero = SelectionWeights::new(vec![0.0; 3], crate::selection::WeightMethod::TrueImportance).unwrap();
        assert_eq!(empirical_loss(&q, &d, Some(&zero)).unwrap(), 0.0);
        let two = SelectionWeights::new(vec![2.0; 3], crate::selection::WeightMethod::TrueImportance).unwrap();
        assert_eq!(empirical_loss(&q, &d, Some(&two)).unwrap(), 2.0 * plain);

        let short = SelectionWeights::new(vec![1.0; 2], crate::selection::WeightMethod::TrueImportance).unwrap();
        assert!(matches!(
            empirical_loss(&q, &d, Some(&short)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn negative_weights_rejected() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(2), 1).unwrap());
        let d = data(2, &[&[0], &[1]]);
        let w = SelectionWeights::from_raw(vec![1.0, -0.5], crate::selection::WeightMethod::TrueImportance);
        assert!(matches!(
            empirical_loss(&p, &d, Some(&w)),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn expected_loss_examples() {
        let source = MarkovSource::new(
            v(3),
            vec![0.2, 0.5, 0.3],
            vec![vec![0.6, 0.3, 0.1], vec![0.25, 0.25, 0.5], vec![0.0, 0.1, 0.9]],
            3,
        )
        .unwrap();
        let table = enumerate_distribution(&source).unwrap();
        let arch = ArchSpec::tabular(2, v(3), 3).unwrap();
        let exact = realize_table(arch, &table).unwrap();
        assert!((expected_loss(&exact, &table).unwrap() - entropy(&table)).abs() < 1e-8);
        let zero = ModelParams::zeros(arch);
        assert!((expected_loss(&zero, &table).unwrap() - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn expected_loss_agrees_with_monte_carlo() {
        let source = MarkovSource::sticky(v(3), 4, 0.6).unwrap();
        let table = enumerate_distribution(&source).unwrap();
        let p = ModelParams::gaussian(ArchSpec::loglinear(1, v(3), 4).unwrap(), 0.5, 1);
        let d = sample(&source, 100_000, 5).unwrap();
        let losses: Vec<f64> = d.iter().map(|y| -log_prob(&p, y).unwrap()).collect();
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let exact = expected_loss(&p, &table).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn perplexity_examples() {
        let d2 = data(2, &[&[0, 1], &[1, 1]]);
        let u2 = ModelParams::zeros(ArchSpec::tabular(1, v(2), 2).unwrap());
        assert!((perplexity(&u2, &d2).unwrap() - 2.0).abs() < 1e-12);
        let d4 = data(4, &[&[0, 3], &[2, 1]]);
        let u4 = ModelParams::zeros(ArchSpec::loglinear(1, v(4), 2).unwrap());
        assert!((perplexity(&u4, &d4).unwrap() - 4.0).abs() < 1e-12);

        // deterministic data, exact model
        let det = MarkovSource::new(v(2), vec![1.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]], 3)
            .unwrap();
        let table = enumerate_distribution(&det).unwrap();
        let exact = realize_table(ArchSpec::tabular(2, v(2), 3).unwrap(), &table).unwrap();
        let d = sample(&det, 4, 0).unwrap();
        assert!((perplexity(&exact, &d).unwrap() - 1.0).abs() < 1e-12);
    }

    /// One-parameter slice of the loss along a coordinate: second differences
    /// of the loss itself, independent of the gradient-based Hessian.
    #[test]
    fn hessian_diagonal_matches_second_difference() {
        let p = ModelParams::gaussian(ArchSpec::loglinear(1, v(2), 3).unwrap(), 0.4, 3);
        let d = data(2, &[&[0, 1, 1], &[1, 1, 0], &[0, 0, 0], &[1, 0, 1]]);
        let h = hessian(&p, &d, HessianOptions::default()).unwrap();
        let eps = 1e-4;
        for j in 0..p.theta.len() {
            let at = |delta: f64| {
                let mut q = p.clone();
                q.theta[j] += delta;
                empirical_loss(&q, &d, None).unwrap()
            };
            let second = (at(eps) - 2.0 * at(0.0) + at(-eps)) / (eps * eps);
            assert!((h.matrix[(j, j)] - second).abs() < 1e-4, "coordinate {j}");
        }
    }

    #[test]
    fn hessian_taylor_residual_is_cubic() {
        let p = ModelParams::gaussian(ArchSpec::loglinear(1, v(3), 3).unwrap(), 0.4, 8);
        let d = sample(&MarkovSource::sticky(v(3), 3, 0.5).unwrap(), 40, 2).unwrap();
        let h = hessian(&p, &d, HessianOptions::default()).unwrap();
        let g = empirical_loss_gradient(&p, &d, None).unwrap();
        let base = empirical_loss(&p, &d, None).unwrap();
        let dir = ModelParams::gaussian(*p.arch(), 1.0, 99).into_theta();
        let residual = |scale: f64| {
            let delta: Vec<f64> = dir.iter().map(|x| x * scale).collect();
            let mut q = p.clone();
            q.theta.iter_mut().zip(&delta).for_each(|(t, d)| *t += d);
            let dv = nalgebra::DVector::from_column_slice(&delta);
            let quad = 0.5 * dv.dot(&(&h.matrix * &dv));
            empirical_loss(&q, &d, None).unwrap()
                - base
                - crate::objective::dot(g.values(), &delta)
                - quad
        };
        let r1 = residual(1e-2).abs();
        let r2 = residual(5e-3).abs();
        let ratio = r1 / r2;
        assert!((6.0..10.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn hessian_cap_enforced() {
        let p = ModelParams::zeros(ArchSpec::tabular(1, v(4), 5).unwrap());
        let d = data(4, &[&[0, 1, 2, 3, 0]]);
        let opts = HessianOptions {
            cap: 10,
            ..Default::default()
        };
        assert!(matches!(hessian(&p, &d, opts), Err(Error::HessianTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn gibbs_and_kl_identity(seed in 0u64..5_000, loglinear in any::<bool>()) {
            let vocab = v(3);
            let arch = if loglinear {
                ArchSpec::loglinear(1, vocab, 3).unwrap()
            } else {
                ArchSpec::tabular(1, vocab, 3).unwrap()
            };
            let p = ModelParams::gaussian(arch, 0.8, seed);
            let source = MarkovSource::sticky(vocab, 3, 0.5).unwrap().perturbed(0.6, seed).unwrap();
            let truth = enumerate_distribution(&source).unwrap();
            let model = model_distribution(&p).unwrap();
            let total: f64 = model.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-8);
            let loss = expected_loss(&p, &truth).unwrap();
            let h = entropy(&truth);
            prop_assert!(loss >= h - 1e-10);
            prop_assert!((loss - h - kl_divergence(&truth, &model).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn hessian_is_nearly_symmetric(seed in 0u64..1_000) {
            let arch = ArchSpec::loglinear(1, v(3), 3).unwrap();
            let p = ModelParams::gaussian(arch, 0.5, seed);
            let d = sample(&MarkovSource::uniform(v(3), 3).unwrap(), 20, seed).unwrap();
            let h = hessian(&p, &d, HessianOptions::default()).unwrap();
            prop_assert!(h.asymmetry < 1e-6);
        }
    }
}
