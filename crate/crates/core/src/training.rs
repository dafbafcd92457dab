//! Plain gradient descent on (weighted) empirical losses.
//!
//! Every run records, per step, the loss before the update, the norm of the
//! gradient that was applied and the distance from the initial parameters.
//! Because each update is `λ · g_t`, the final distance never exceeds
//! `λ · steps · g_max` (triangle inequality), which is the early-stopping
//! ball that fine-tuning stays inside.

use std::borrow::Cow;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{check_weights, ModelParams, WeightedBatch};
use crate::objective::{distance, norm, Objective};
use crate::selection::{format_float, SelectionWeights};
use crate::sources::Dataset;

/// A minibatch stream's seed is offset by this for the auxiliary dataset of a
/// multitask run, so the primary stream matches a single-task run.
const AUX_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Examples per step; 0 means the full dataset.
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn full_batch(learning_rate: f64, steps: usize) -> Self {
        Self {
            learning_rate,
            steps,
            batch_size: 0,
            seed: 0,
            shuffle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Objective before the update; `None` for skipped steps.
    pub loss: Option<f64>,
    /// L2 norm of the gradient applied at this step (the update is λ times it).
    pub update_norm: f64,
    /// `‖θ_{t+1} - θ_0‖₂` after the update.
    pub dist_from_init: f64,
    pub tau: Option<f64>,
    pub subset_size: usize,
}

impl StepRecord {
    pub fn skipped(&self) -> bool {
        self.loss.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub g_max: f64,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_distance(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.dist_from_init)
    }

    /// `λ · steps · g_max`.
    pub fn ball_radius(&self, learning_rate: f64) -> f64 {
        learning_rate * self.records.len() as f64 * self.g_max
    }

    /// Whether every recorded distance lies inside the ball for its step count.
    pub fn within_ball(&self, learning_rate: f64, tolerance: f64) -> bool {
        self.records.iter().enumerate().all(|(t, r)| {
            r.dist_from_init <= learning_rate * (t + 1) as f64 * self.g_max + tolerance
        })
    }

    pub fn skipped_steps(&self) -> usize {
        self.records.iter().filter(|r| r.skipped()).count()
    }

    /// Columns: `step,loss,update_norm,dist_from_init,tau,subset_size`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "loss", "update_norm", "dist_from_init", "tau", "subset_size"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.loss.map(format_float).unwrap_or_default(),
                format_float(r.update_norm),
                format_float(r.dist_from_init),
                r.tau.map(format_float).unwrap_or_default(),
                r.subset_size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Piecewise-constant selection threshold. Before the first breakpoint the
/// first threshold applies.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSchedule {
    breakpoints: Vec<(usize, f64)>,
}

impl TauSchedule {
    pub fn new(breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidArgument("tau schedule needs a breakpoint".into()));
        }
        if breakpoints.iter().any(|(_, tau)| tau.is_nan()) {
            return Err(Error::InvalidArgument("tau must not be NaN".into()));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidArgument(
                    "tau schedule steps must be strictly increasing".into(),
                ));
            }
            if pair[1].1 < pair[0].1 {
                return Err(Error::InvalidArgument(
                    "tau schedule thresholds must be non-decreasing".into(),
                ));
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(tau: f64) -> Result<Self> {
        Self::new(vec![(0, tau)])
    }

    pub fn breakpoints(&self) -> &[(usize, f64)] {
        &self.breakpoints
    }

    pub fn tau_at(&self, step: usize) -> f64 {
        self.breakpoints
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .unwrap_or(&self.breakpoints[0])
            .1
    }
}

/// Index stream for minibatches: sequential epochs, optionally reshuffled.
struct BatchPlan {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    shuffle: bool,
    rng: ChaCha8Rng,
}

impl BatchPlan {
    fn new(len: usize, batch: usize, seed: u64, shuffle: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        if shuffle {
            order.shuffle(&mut rng);
        }
        Self {
            order,
            cursor: 0,
            batch,
            shuffle,
            rng,
        }
    }

    fn full(&self) -> bool {
        self.batch == 0 || self.batch >= self.order.len()
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            if self.shuffle {
                self.order.shuffle(&mut self.rng);
            }
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..self.cursor]
    }
}

enum Step<'a> {
    Skip {
        tau: Option<f64>,
    },
    Run {
        primary: Cow<'a, WeightedBatch>,
        extra: Option<(Cow<'a, WeightedBatch>, f64)>,
        tau: Option<f64>,
        subset_size: usize,
    },
}

fn descend<'a>(
    init: &ModelParams,
    learning_rate: f64,
    steps: usize,
    mut plan: impl FnMut(usize) -> Step<'a>,
) -> Result<(ModelParams, TrainTrace)> {
    let arch = *init.arch();
    let theta0 = init.theta().to_vec();
    let mut theta = theta0.clone();
    let mut grad = vec![0.0; theta.len()];
    let mut extra_grad = vec![0.0; theta.len()];
    let mut trace = TrainTrace {
        records: Vec::with_capacity(steps),
        g_max: 0.0,
    };
    let mut initial_loss: Option<f64> = None;
    for step in 0..steps {
        let record = match plan(step) {
            Step::Skip { tau } => StepRecord {
                step,
                loss: None,
                update_norm: 0.0,
                dist_from_init: distance(&theta, &theta0),
                tau,
                subset_size: 0,
            },
            Step::Run {
                primary,
                extra,
                tau,
                subset_size,
            } => {
                let mut loss = primary.objective(&arch).value_and_gradient(&theta, &mut grad);
                if let Some((batch, alpha)) = &extra {
                    let aux = batch.objective(&arch).value_and_gradient(&theta, &mut extra_grad);
                    loss += alpha * aux;
                    for (g, e) in grad.iter_mut().zip(&extra_grad) {
                        *g += alpha * e;
                    }
                }
                let initial = *initial_loss.get_or_insert(loss);
                if !loss.is_finite() || (initial > 0.0 && loss > 10.0 * initial) {
                    return Err(Error::Diverged {
                        step,
                        loss,
                        initial,
                    });
                }
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= learning_rate * g;
                }
                let update_norm = norm(&grad);
                trace.g_max = trace.g_max.max(update_norm);
                StepRecord {
                    step,
                    loss: Some(loss),
                    update_norm,
                    dist_from_init: distance(&theta, &theta0),
                    tau,
                    subset_size,
                }
            }
        };
        trace.records.push(record);
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            step: steps,
            loss: f64::NAN,
            initial: initial_loss.unwrap_or(f64::NAN),
        });
    }
    Ok((ModelParams::from_parts_unchecked(arch, theta), trace))
}

fn check_inputs(init: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    init.arch().check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// SGD on the (weighted) empirical loss. With `batch_size = 0` each step is
/// `θ ← θ - λ ∇L(θ; data)`.
pub fn train(
    init: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    weights: Option<&SelectionWeights>,
) -> Result<(ModelParams, TrainTrace)> {
    check_inputs(init, data, cfg)?;
    if let Some(w) = weights {
        check_weights(data, w)?;
    }
    let values = weights.map(SelectionWeights::values);
    let mut batches = BatchPlan::new(data.len(), cfg.batch_size, cfg.seed, cfg.shuffle);
    let full = batches
        .full()
        .then(|| WeightedBatch::from_dataset(data, None, values));
    descend(init, cfg.learning_rate, cfg.steps, |_| {
        let primary = match &full {
            Some(batch) => Cow::Borrowed(batch),
            None => Cow::Owned(WeightedBatch::from_dataset(data, Some(batches.next()), values)),
        };
        Step::Run {
            primary,
            extra: None,
            tau: None,
            subset_size: data.len().min(if full.is_some() { data.len() } else { cfg.batch_size }),
        }
    })
}

/// `n_ft` full-batch steps on `target` starting from `base`.
pub fn fine_tune(
    base: &ModelParams,
    target: &Dataset,
    n_ft: usize,
    learning_rate: f64,
) -> Result<(ModelParams, TrainTrace)> {
    train(base, target, &TrainConfig::full_batch(learning_rate, n_ft), None)
}

/// SGD on `L(θ; T) + α L(θ; D)`. The `T` minibatch stream uses `cfg.seed`
/// exactly as [`train`] does, so `α = 0` reproduces training on `T`.
pub fn train_multitask(
    init: &ModelParams,
    target: &Dataset,
    generic: &Dataset,
    alpha: f64,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    check_inputs(init, target, cfg)?;
    check_inputs(init, generic, cfg)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "multitask weight must be non-negative, got {alpha}"
        )));
    }
    let mut t_batches = BatchPlan::new(target.len(), cfg.batch_size, cfg.seed, cfg.shuffle);
    let mut d_batches = BatchPlan::new(
        generic.len(),
        cfg.batch_size,
        cfg.seed.wrapping_add(AUX_SEED_OFFSET),
        cfg.shuffle,
    );
    let t_full = t_batches
        .full()
        .then(|| WeightedBatch::from_dataset(target, None, None));
    let d_full = d_batches
        .full()
        .then(|| WeightedBatch::from_dataset(generic, None, None));
    descend(init, cfg.learning_rate, cfg.steps, |_| {
        let primary = match &t_full {
            Some(b) => Cow::Borrowed(b),
            None => Cow::Owned(WeightedBatch::from_dataset(target, Some(t_batches.next()), None)),
        };
        let aux = match &d_full {
            Some(b) => Cow::Borrowed(b),
            None => Cow::Owned(WeightedBatch::from_dataset(generic, Some(d_batches.next()), None)),
        };
        Step::Run {
            primary,
            extra: Some((aux, alpha)),
            tau: None,
            subset_size: target.len().min(if t_full.is_some() { target.len() } else { cfg.batch_size }),
        }
    })
}

/// Trains on `{y : ln w(y) > τ_t}` at step `t`. Steps with an empty subset
/// leave the parameters unchanged and are recorded as skipped. With
/// `batch_size > 0` each step draws that many examples from the subset.
pub fn dynamic_selection_train(
    init: &ModelParams,
    data: &Dataset,
    scorer: &SelectionWeights,
    schedule: &TauSchedule,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    check_inputs(init, data, cfg)?;
    check_weights(data, scorer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Batches are assembled up front so the descent loop can borrow them;
    // `current` caches the subset and its full batch for the active threshold.
    let mut owned: Vec<WeightedBatch> = Vec::new();
    let mut current: Option<(f64, Vec<usize>, usize)> = None;
    let mut steps: Vec<(Option<usize>, f64, usize)> = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let tau = schedule.tau_at(step);
        if current.as_ref().is_none_or(|(t, _, _)| t.to_bits() != tau.to_bits()) {
            let subset = scorer.selected(tau);
            owned.push(WeightedBatch::from_dataset(data, Some(&subset), None));
            current = Some((tau, subset, owned.len() - 1));
        }
        let (_, subset, full) = current.as_ref().expect("set above");
        if subset.is_empty() {
            steps.push((None, tau, 0));
        } else if cfg.batch_size == 0 || cfg.batch_size >= subset.len() {
            steps.push((Some(*full), tau, subset.len()));
        } else {
            let picked: Vec<usize> = subset
                .choose_multiple(&mut rng, cfg.batch_size)
                .copied()
                .collect();
            owned.push(WeightedBatch::from_dataset(data, Some(&picked), None));
            steps.push((Some(owned.len() - 1), tau, cfg.batch_size));
        }
    }
    descend(init, cfg.learning_rate, cfg.steps, |t| match steps[t] {
        (None, tau, _) => Step::Skip { tau: Some(tau) },
        (Some(i), tau, subset_size) => Step::Run {
            primary: Cow::Borrowed(&owned[i]),
            extra: None,
            tau: Some(tau),
            subset_size,
        },
    })
}
