//! Data-selection weights: importance sampling, contrastive (intelligent)
//! selection and the effective sample size of a weighting.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::oracle_min_loss;
use crate::error::{Error, Result};
use crate::model::{expected_loss, log_prob, ArchSpec, ModelParams};
use crate::sources::{Dataset, DistributionTable, Sequence, Token};
use crate::training::{fine_tune, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMethod {
    TrueImportance,
    EstimatedImportance,
    IntselBinary,
    InfluenceDerived,
}

impl WeightMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMethod::TrueImportance => "true_importance",
            WeightMethod::EstimatedImportance => "estimated_importance",
            WeightMethod::IntselBinary => "intsel_binary",
            WeightMethod::InfluenceDerived => "influence_derived",
        }
    }
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_importance" => Ok(WeightMethod::TrueImportance),
            "estimated_importance" => Ok(WeightMethod::EstimatedImportance),
            "intsel_binary" => Ok(WeightMethod::IntselBinary),
            "influence_derived" => Ok(WeightMethod::InfluenceDerived),
            other => Err(Error::Parse(format!("unknown weight method {other:?}"))),
        }
    }
}

/// Per-example weights, attached to a dataset by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    values: Vec<f64>,
    method: WeightMethod,
    tau: Option<f64>,
    n_ft: Option<usize>,
    learning_rate: Option<f64>,
}

impl SelectionWeights {
    pub fn new(values: Vec<f64>, method: WeightMethod) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::NegativeWeight { index, value });
        }
        if method == WeightMethod::IntselBinary {
            if let Some(bad) = values.iter().find(|w| **w != 0.0 && **w != 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "binary weights must be 0 or 1, found {bad}"
                )));
            }
        }
        Ok(Self::from_raw(values, method))
    }

    pub(crate) fn from_raw(values: Vec<f64>, method: WeightMethod) -> Self {
        Self {
            values,
            method,
            tau: None,
            n_ft: None,
            learning_rate: None,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_fine_tune(mut self, n_ft: usize, learning_rate: f64) -> Self {
        self.n_ft = Some(n_ft);
        self.learning_rate = Some(learning_rate);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn method(&self) -> WeightMethod {
        self.method
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn n_ft(&self) -> Option<usize> {
        self.n_ft
    }

    pub fn learning_rate(&self) -> Option<f64> {
        self.learning_rate
    }

    /// `ln w`, with `ln 0 = -inf`.
    pub fn log_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|w| w.ln())
    }

    /// Indices with `ln w > tau`.
    pub fn selected(&self, tau: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0 && w.ln() > tau)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `w(y) = P(y | T) / P(y | D)` from the enumerated tables.
pub fn true_importance_weights(
    table_t: &DistributionTable,
    table_d: &DistributionTable,
    data: &Dataset,
) -> Result<SelectionWeights> {
    crate::sources::check_same_space(table_t, table_d)?;
    let values = data
        .iter()
        .map(|y| {
            let code = table_d.encode(y)?;
            let pd = table_d.probs()[code];
            if pd <= 0.0 {
                return Err(Error::AbsoluteContinuity { index: code });
            }
            Ok(table_t.probs()[code] / pd)
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionWeights::new(values, WeightMethod::TrueImportance)
}

/// `ŵ(y) = exp(log P(y | θ_T) - log P(y | θ_D))`.
pub fn estimated_importance_weights(
    params_t: &ModelParams,
    params_d: &ModelParams,
    data: &Dataset,
) -> Result<SelectionWeights> {
    if params_t.arch() != params_d.arch() {
        return Err(Error::ArchMismatch);
    }
    params_d.arch().check_dataset(data)?;
    let values = data
        .iter()
        .map(|y| Ok((log_prob(params_t, y)? - log_prob(params_d, y)?).exp()))
        .collect::<Result<Vec<_>>>()?;
    SelectionWeights::new(values, WeightMethod::EstimatedImportance)
}

/// Weights `exp(log_w)` from precomputed log-weights (e.g. `-λ · mean influence`).
pub fn influence_derived_weights(log_weights: &[f64], learning_rate: f64) -> Result<SelectionWeights> {
    let values = log_weights.iter().map(|l| l.exp()).collect();
    Ok(SelectionWeights::new(values, WeightMethod::InfluenceDerived)?.with_fine_tune(1, learning_rate))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssReport {
    pub n: usize,
    pub mean_w: f64,
    pub mean_w2: f64,
    /// `(Σ w)² / Σ w²`.
    pub n_e: f64,
    /// `mean_w² / mean_w2 · n`; equal to `n_e` up to rounding.
    pub n_e_from_means: f64,
}

pub fn effective_sample_size(weights: &SelectionWeights) -> Result<EssReport> {
    let n = weights.len();
    let sum: f64 = weights.values.iter().sum();
    let sum_sq: f64 = weights.values.iter().map(|w| w * w).sum();
    // n_e is scale free; dividing by the largest weight makes constant and
    // one-hot vectors exact and keeps the squares in range.
    let max = weights.values.iter().copied().fold(0.0, f64::max);
    if n == 0 || max <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let mean_w = sum / n as f64;
    let mean_w2 = sum_sq / n as f64;
    let scaled_sum: f64 = weights.values.iter().map(|w| w / max).sum();
    let scaled_sq: f64 = weights.values.iter().map(|w| (w / max).powi(2)).sum();
    Ok(EssReport {
        n,
        mean_w,
        mean_w2,
        n_e: (scaled_sum * scaled_sum / scaled_sq).clamp(1.0, n as f64),
        n_e_from_means: mean_w * mean_w / mean_w2 * n as f64,
    })
}

/// `b = I{ln w > τ}`; zero weights are never selected.
pub fn binarize_intsel(weights: &SelectionWeights, tau: f64) -> SelectionWeights {
    let values = weights
        .values
        .iter()
        .map(|w| if *w > 0.0 && w.ln() > tau { 1.0 } else { 0.0 })
        .collect();
    SelectionWeights {
        values,
        method: WeightMethod::IntselBinary,
        tau: Some(tau),
        n_ft: weights.n_ft,
        learning_rate: weights.learning_rate,
    }
}

/// Joint importance ratio `(P(x|T) / P(x|D)) · w_cond` from the conditional
/// (intelligent-selection) weight and the input marginals.
pub fn conditional_weight_identity(px_t: f64, px_d: f64, w_cond: f64) -> Result<f64> {
    if !(px_d > 0.0) {
        return Err(Error::AbsoluteContinuity { index: 0 });
    }
    if !(px_t >= 0.0) || !(w_cond >= 0.0) {
        return Err(Error::InvalidArgument(
            "marginal and conditional weight must be non-negative".into(),
        ));
    }
    Ok(px_t / px_d * w_cond)
}

/// Nearest-rank deciles (10%, …, 90%) of the finite `ln w` values, the default
/// threshold grid for binarization sweeps.
pub fn decile_thresholds(weights: &SelectionWeights) -> Vec<f64> {
    let mut logs: Vec<f64> = weights.log_values().filter(|l| l.is_finite()).collect();
    if logs.is_empty() {
        return Vec::new();
    }
    logs.sort_by(f64::total_cmp);
    (1..10)
        .map(|d| {
            let rank = (d * logs.len()).div_ceil(10).max(1);
            logs[rank - 1]
        })
        .collect()
}

/// Split of the importance-weighted estimation error, all terms exact expected
/// losses under the target table.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationErrorReport {
    /// `min_θ L(θ; T)` as reached by the optimization oracle.
    pub min_loss: f64,
    pub oracle_grad_norm: f64,
    /// `L(θ_D; T)` of plain training on D.
    pub loss_plain: f64,
    /// `L(θ_imp(D, w); T)` with the true weights.
    pub loss_true_weights: f64,
    /// `L(θ_imp(D, ŵ); T)` with the estimated weights.
    pub loss_estimated_weights: f64,
    /// `loss_true_weights - min_loss`.
    pub est_w: f64,
    /// `loss_estimated_weights - loss_true_weights`.
    pub est_w_hat: f64,
    pub n_ft: usize,
    pub ft_learning_rate: f64,
    /// Set when a term is negative beyond `tolerance`.
    pub est_w_negative: bool,
    pub est_w_hat_negative: bool,
    pub tolerance: f64,
}

/// Settings for [`estimation_error_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationSetup {
    pub train: TrainConfig,
    pub n_ft: usize,
    pub ft_learning_rate: f64,
    /// Slack for reporting negative terms as optimizer noise rather than errors.
    pub tolerance: f64,
}

pub fn estimation_error_report(
    table_t: &DistributionTable,
    table_d: &DistributionTable,
    arch: ArchSpec,
    generic: &Dataset,
    target: &Dataset,
    setup: EstimationSetup,
) -> Result<EstimationErrorReport> {
    let init = ModelParams::zeros(arch);
    let weights = true_importance_weights(table_t, table_d, generic)?;
    let (theta_w, _) = train(&init, generic, &setup.train, Some(&weights))?;
    let (theta_d, _) = train(&init, generic, &setup.train, None)?;
    let (theta_ft, _) = fine_tune(&theta_d, target, setup.n_ft, setup.ft_learning_rate)?;
    let estimated = estimated_importance_weights(&theta_ft, &theta_d, generic)?
        .with_fine_tune(setup.n_ft, setup.ft_learning_rate);
    let (theta_hat, _) = train(&init, generic, &setup.train, Some(&estimated))?;
    let oracle = oracle_min_loss(table_t, arch)?;

    let loss_plain = expected_loss(&theta_d, table_t)?;
    let loss_true_weights = expected_loss(&theta_w, table_t)?;
    let loss_estimated_weights = expected_loss(&theta_hat, table_t)?;
    let est_w = loss_true_weights - oracle.loss;
    let est_w_hat = loss_estimated_weights - loss_true_weights;
    Ok(EstimationErrorReport {
        min_loss: oracle.loss,
        oracle_grad_norm: oracle.grad_norm,
        loss_plain,
        loss_true_weights,
        loss_estimated_weights,
        est_w,
        est_w_hat,
        n_ft: setup.n_ft,
        ft_learning_rate: setup.ft_learning_rate,
        est_w_negative: est_w < -setup.tolerance,
        est_w_hat_negative: est_w_hat < -setup.tolerance,
        tolerance: setup.tolerance,
    })
}

/// One row of the weights CSV. Influence rankings add `mean_influence` and
/// `log_weight`, which the reader ignores.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightRow {
    index: usize,
    sequence: String,
    weight: String,
    method: String,
    tau: String,
    n_ft: String,
    lambda: String,
}

pub fn format_sequence(y: &[Token]) -> String {
    y.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn parse_sequence(s: &str) -> Result<Sequence> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("bad token {t:?} in sequence {s:?}")))
        })
        .collect()
}

/// 17 significant digits, as used in every CSV output.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Columns: `index,sequence,weight,method,tau,n_ft,lambda`.
pub fn write_weights_csv<W: Write>(data: &Dataset, weights: &SelectionWeights, out: W) -> Result<()> {
    if data.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    for (index, (y, &value)) in data.iter().zip(&weights.values).enumerate() {
        w.serialize(WeightRow {
            index,
            sequence: format_sequence(y),
            weight: format_float(value),
            method: weights.method.to_string(),
            tau: optional(weights.tau.map(format_float)),
            n_ft: optional(weights.n_ft),
            lambda: optional(weights.learning_rate.map(format_float)),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a weights (or influence ranking) CSV back into sequences and weights.
pub fn read_weights_csv<R: Read>(input: R) -> Result<(Vec<Sequence>, SelectionWeights)> {
    let mut reader = csv::Reader::from_reader(input);
    let mut sequences = Vec::new();
    let mut values = Vec::new();
    let mut meta: Option<(WeightMethod, Option<f64>, Option<usize>, Option<f64>)> = None;
    let float = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
        }
    };
    for (row_no, row) in reader.deserialize::<WeightRow>().enumerate() {
        let row = row?;
        if row.index != row_no {
            return Err(Error::Parse(format!(
                "row {row_no}: index {} out of order",
                row.index
            )));
        }
        sequences.push(parse_sequence(&row.sequence)?);
        values.push(float(&row.weight)?.ok_or_else(|| Error::Parse("missing weight".into()))?);
        if meta.is_none() {
            let n_ft = if row.n_ft.is_empty() {
                None
            } else {
                Some(row.n_ft.parse().map_err(|_| Error::Parse(format!("bad n_ft {:?}", row.n_ft)))?)
            };
            meta = Some((row.method.parse()?, float(&row.tau)?, n_ft, float(&row.lambda)?));
        }
    }
    let (method, tau, n_ft, lambda) =
        meta.ok_or_else(|| Error::Parse("weights file has no rows".into()))?;
    let mut weights = SelectionWeights::new(values, method)?;
    weights.tau = tau;
    weights.n_ft = n_ft;
    weights.learning_rate = lambda;
    Ok((sequences, weights))
}
