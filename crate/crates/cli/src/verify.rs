//! The acceptance suite behind `adaptlab verify`.
//!
//! Every suite writes `verify/<suite>.csv` with one `check,value,relation,bound`
//! row per check. The verdicts in `verify/summary.csv` are computed by reading
//! those files back, so they depend only on what this run wrote.

use std::path::Path;

use adaptlab_core::analysis::{
    crossover_experiment, decompose_with_oracle, oracle_min_loss, theorem1_check, CrossoverTable,
};
use adaptlab_core::influence::{residual_slope, one_step_logodds_check};
use adaptlab_core::model::{
    expected_loss, grad_log_prob, log_prob, model_distribution, write_params,
};
use adaptlab_core::selection::{
    binarize_intsel, effective_sample_size, format_float, true_importance_weights,
    write_weights_csv,
};
use adaptlab_core::sources::{
    derive_seed, entropy, enumerate_distribution, kl_divergence, pinsker_margin,
    DistributionTable, MarkovSource,
};
use adaptlab_core::training::{fine_tune, train, train_multitask};
use adaptlab_core::{
    ArchSpec, Dataset, ModelParams, SelectionWeights, TrainTrace, Vocab, WeightMethod,
};
use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{csv_bytes, generic_data, selection_weights, target_data, train_generic};
use crate::config::{tags, Experiment};
use crate::output::{sha256_hex, OutputDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Lt,
    Le,
    Ge,
    Eq,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "==",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "<" => Relation::Lt,
            "<=" => Relation::Le,
            ">=" => Relation::Ge,
            "==" => Relation::Eq,
            other => bail!("unknown relation {other:?}"),
        })
    }

    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Relation::Lt => value < bound,
            Relation::Le => value <= bound,
            Relation::Ge => value >= bound,
            Relation::Eq => value == bound,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
}

fn check(name: &str, value: f64, relation: Relation, bound: f64) -> Check {
    Check {
        name: name.to_string(),
        value,
        relation,
        bound,
    }
}

pub const SUITES: [&str; 11] = [
    "reweighting",
    "gradients",
    "bookkeeping",
    "ess",
    "ball",
    "influence",
    "theorem1",
    "crossover",
    "binarization",
    "pinsker",
    "determinism",
];

/// Inputs shared by several suites, built once.
struct Shared<'a> {
    exp: &'a Experiment,
    d: Dataset,
    t: Dataset,
    table_d: DistributionTable,
    table_t: DistributionTable,
    theta_d: ModelParams,
    trace_d: TrainTrace,
}

impl Shared<'_> {
    fn rng(&self, suite: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.exp.seed, &[tags::VERIFY, suite as u64]))
    }

    fn sweep_seeds(&self) -> Vec<u64> {
        self.exp
            .raw
            .experiment
            .seeds
            .iter()
            .map(|&s| derive_seed(self.exp.seed, &[tags::SWEEP, s]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteVerdict {
    pub suite: String,
    pub checks: usize,
    pub failed: usize,
}

impl SuiteVerdict {
    pub fn passed(&self) -> bool {
        self.failed == 0 && self.checks > 0
    }
}

/// Runs every suite, writes the report CSVs and returns the summary verdicts.
pub fn run(exp: &Experiment, out: &mut OutputDir) -> Result<Vec<SuiteVerdict>> {
    let d = generic_data(exp)?;
    let t = target_data(exp)?;
    let (theta_d, trace_d) = train_generic(exp, &d)?;
    let ctx = Shared {
        exp,
        table_d: enumerate_distribution(&exp.generic)?,
        table_t: enumerate_distribution(&exp.target)?,
        d,
        t,
        theta_d,
        trace_d,
    };
    for (i, suite) in SUITES.iter().enumerate() {
        let checks = match *suite {
            "reweighting" => reweighting(&ctx, i)?,
            "gradients" => gradients(&ctx, i)?,
            "bookkeeping" => bookkeeping(&ctx, i, out)?,
            "ess" => ess(&ctx, i)?,
            "ball" => ball(&ctx)?,
            "influence" => influence(&ctx, out)?,
            "theorem1" => theorem1(&ctx, out)?,
            "crossover" => crossover(&ctx, out)?,
            "binarization" => binarization(&ctx, i)?,
            "pinsker" => pinsker(&ctx, i)?,
            "determinism" => determinism(&ctx)?,
            _ => unreachable!(),
        };
        let rows: Vec<Vec<String>> = checks
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    format_float(c.value),
                    c.relation.as_str().to_string(),
                    format_float(c.bound),
                ]
            })
            .collect();
        let bytes = csv_bytes(&["check", "value", "relation", "bound"], &rows)?;
        out.write(&format!("verify/{suite}.csv"), &bytes)?;
    }
    let verdicts = summarize(out.root())?;
    let rows: Vec<Vec<String>> = verdicts
        .iter()
        .map(|v| {
            let status = if v.passed() { "PASS" } else { "FAIL" };
            vec![v.suite.clone(), v.checks.to_string(), v.failed.to_string(), status.into()]
        })
        .collect();
    out.write(
        "verify/summary.csv",
        &csv_bytes(&["suite", "checks", "failed", "status"], &rows)?,
    )?;
    Ok(verdicts)
}

/// Re-evaluates every check from the suite CSVs under `root/verify`.
pub fn summarize(root: &Path) -> Result<Vec<SuiteVerdict>> {
    SUITES
        .iter()
        .map(|suite| {
            let path = root.join(format!("verify/{suite}.csv"));
            let mut reader =
                csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut checks = 0;
            let mut failed = 0;
            for record in reader.records() {
                let record = record?;
                let value: f64 = record[1].parse().context("value column")?;
                let relation = Relation::parse(&record[2])?;
                let bound: f64 = record[3].parse().context("bound column")?;
                checks += 1;
                if !relation.holds(value, bound) {
                    failed += 1;
                }
            }
            Ok(SuiteVerdict {
                suite: suite.to_string(),
                checks,
                failed,
            })
        })
        .collect()
}

fn all_sequences(table: &DistributionTable) -> Result<Dataset> {
    let seqs = (0..table.len()).map(|c| table.decode(c)).collect();
    Ok(Dataset::new(table.vocab(), table.seq_len(), seqs, 0)?)
}

/// `Σ P_D w f = Σ P_T f` for random test functions.
fn reweighting(ctx: &Shared, suite: usize) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let omega = all_sequences(&ctx.table_d)?;
    let w = true_importance_weights(&ctx.table_t, &ctx.table_d, &omega)?;
    let count = ctx.exp.raw.verify.reweighting_functions;
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let f: Vec<f64> = if k % 2 == 0 {
            (0..omega.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            let theta = ModelParams::gaussian(ctx.exp.arch, 1.0, rng.random());
            omega
                .iter()
                .map(|y| log_prob(&theta, y).map(|lp| -lp))
                .collect::<adaptlab_core::Result<_>>()?
        };
        let lhs: f64 = (0..omega.len())
            .map(|i| ctx.table_d.probs()[i] * w.values()[i] * f[i])
            .sum();
        let rhs: f64 = (0..omega.len()).map(|i| ctx.table_t.probs()[i] * f[i]).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(vec![
        check("functions", count as f64, Relation::Ge, 20.0),
        check("max_abs_error", worst, Relation::Lt, 1e-10),
    ])
}

/// Analytic gradients against central differences of `log_prob`.
fn gradients(ctx: &Shared, suite: usize) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let v = ctx.exp.arch.vocab();
    let n = ctx.exp.arch.seq_len();
    let archs = [ctx.exp.arch, ArchSpec::loglinear(2.min(n), v, n)?];
    let pairs = ctx.exp.raw.verify.gradient_pairs;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let arch = archs[k % archs.len()];
        let params = ModelParams::gaussian(arch, 1.0, rng.random());
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..v.size())).collect();
        let analytic = grad_log_prob(&params, &y)?;
        let mut theta = params.theta().to_vec();
        let mut err: f64 = 0.0;
        for j in 0..theta.len() {
            let orig = theta[j];
            theta[j] = orig + h;
            let up = log_prob(&ModelParams::new(arch, theta.clone())?, &y)?;
            theta[j] = orig - h;
            let down = log_prob(&ModelParams::new(arch, theta.clone())?, &y)?;
            theta[j] = orig;
            err = err.max((analytic.values()[j] - (up - down) / (2.0 * h)).abs());
        }
        let scale = analytic.values().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        worst = worst.max(err / scale);
    }
    Ok(vec![
        check("pairs", pairs as f64, Relation::Ge, 50.0),
        check("max_relative_error", worst, Relation::Lt, 1e-5),
    ])
}

/// `E[-log P_θ] - H = KL(truth, model)` and the decomposition totals.
fn bookkeeping(ctx: &Shared, suite: usize, out: &mut OutputDir) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let v = ctx.exp.arch.vocab();
    let n = ctx.exp.arch.seq_len();
    let archs = [ctx.exp.arch, ArchSpec::loglinear(1, v, n)?];
    let mut gibbs: f64 = 0.0;
    for k in 0..10 {
        let params = ModelParams::gaussian(archs[k % 2], 1.0, rng.random());
        let model = model_distribution(&params)?;
        for table in [&ctx.table_d, &ctx.table_t] {
            let lhs = expected_loss(&params, table)? - entropy(table);
            gibbs = gibbs.max((lhs - kl_divergence(table, &model)?).abs());
        }
    }

    let mut total_err: f64 = 0.0;
    let mut min_app = f64::INFINITY;
    let mut min_est = f64::INFINITY;
    let mut rows = Vec::new();
    for arch in archs {
        for (role, table, data) in [
            ("generic", &ctx.table_d, &ctx.d),
            ("target", &ctx.table_t, &ctx.t),
        ] {
            let oracle = oracle_min_loss(table, arch)?;
            let r = decompose_with_oracle(table, &oracle, data, &ctx.exp.train)?;
            total_err = total_err.max((r.total - r.direct).abs());
            min_app = min_app.min(r.l_app + r.optimizer_tolerance);
            min_est = min_est.min(r.l_est + r.optimizer_tolerance);
            rows.push(vec![
                role.to_string(),
                arch.family().to_string(),
                arch.context_len().to_string(),
                data.len().to_string(),
                format_float(r.l_h),
                format_float(r.l_app),
                format_float(r.l_est),
                format_float(r.total),
                format_float(r.direct),
                format_float(r.optimizer_tolerance),
                format_float(oracle.grad_norm),
            ]);
        }
    }
    let header = [
        "role", "family", "context_len", "size", "l_h", "l_app", "l_est", "total", "direct",
        "optimizer_tolerance", "oracle_grad_norm",
    ];
    out.write("verify/decomposition.csv", &csv_bytes(&header, &rows)?)?;
    Ok(vec![
        check("gibbs_max_abs_error", gibbs, Relation::Le, 1e-8),
        check("decomposition_max_abs_error", total_err, Relation::Le, 1e-9),
        check("min_l_app_plus_tolerance", min_app, Relation::Ge, 0.0),
        check("min_l_est_plus_tolerance", min_est, Relation::Ge, 0.0),
    ])
}

fn ess(ctx: &Shared, suite: usize) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let make = |values: Vec<f64>| SelectionWeights::new(values, WeightMethod::TrueImportance);
    let uniform = effective_sample_size(&make(vec![1.0; 10])?)?;
    let mut one_hot = vec![0.0; 10];
    one_hot[3] = 2.5;
    let one_hot = effective_sample_size(&make(one_hot)?)?;
    let mut min_ne = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let count = ctx.exp.raw.verify.ess_vectors;
    for _ in 0..count {
        let len = rng.random_range(1..=200);
        let mut values: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) })
            .collect();
        if values.iter().all(|w| *w == 0.0) {
            values[0] = 1.0;
        }
        let r = effective_sample_size(&make(values)?)?;
        min_ne = min_ne.min(r.n_e);
        max_excess = max_excess.max(r.n_e - r.n as f64);
    }
    Ok(vec![
        check("uniform_n10_error", (uniform.n_e - 10.0).abs(), Relation::Eq, 0.0),
        check("one_hot_error", (one_hot.n_e - 1.0).abs(), Relation::Eq, 0.0),
        check("random_vectors", count as f64, Relation::Ge, 1000.0),
        check("random_min_n_e", min_ne, Relation::Ge, 1.0),
        check("random_max_n_e_minus_n", max_excess, Relation::Le, 0.0),
    ])
}

/// `‖θ_end - θ_start‖ ≤ λ · steps · g_max` on every training run of the suite.
fn ball(ctx: &Shared) -> Result<Vec<Check>> {
    let exp = ctx.exp;
    let sel = &exp.raw.selection;
    let mut worst_trace = ctx.trace_d.final_distance() - ctx.trace_d.ball_radius(exp.train.learning_rate);
    let mut worst_params = f64::NEG_INFINITY;
    let mut runs = 1;
    let mut n_fts = vec![0, 1, 10, 100, sel.n_ft];
    n_fts.sort_unstable();
    n_fts.dedup();
    for n_ft in n_fts {
        let (theta_ft, trace) = fine_tune(&ctx.theta_d, &ctx.t, n_ft, sel.ft_learning_rate)?;
        let radius = trace.ball_radius(sel.ft_learning_rate);
        worst_trace = worst_trace.max(trace.final_distance() - radius);
        let direct = theta_ft
            .theta()
            .iter()
            .zip(ctx.theta_d.theta())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst_params = worst_params.max(direct - radius);
        runs += 1;
    }
    let weights = selection_weights(exp, &ctx.d, &ctx.t, &ctx.theta_d)?;
    let (_, trace_w) = train(&ModelParams::zeros(exp.arch), &ctx.d, &exp.train, Some(&weights))?;
    worst_trace = worst_trace.max(trace_w.final_distance() - trace_w.ball_radius(exp.train.learning_rate));
    let (_, trace_m) = train_multitask(&ModelParams::zeros(exp.arch), &ctx.t, &ctx.d, 0.5, &exp.train)?;
    worst_trace = worst_trace.max(trace_m.final_distance() - trace_m.ball_radius(exp.train.learning_rate));
    runs += 2;
    Ok(vec![
        check("runs", runs as f64, Relation::Ge, 1.0),
        check("max_trace_distance_minus_radius", worst_trace, Relation::Le, 1e-9),
        check("max_param_distance_minus_radius", worst_params, Relation::Le, 1e-9),
    ])
}

fn influence(ctx: &Shared, out: &mut OutputDir) -> Result<Vec<Check>> {
    let cfg = &ctx.exp.raw.verify;
    let probes = ctx.d.prefix(ctx.exp.raw.influence.probes.min(ctx.d.len()));
    let small = one_step_logodds_check(&ctx.theta_d, &ctx.t, cfg.small_learning_rate, &probes)?;
    let fit = residual_slope(&ctx.theta_d, &ctx.t, &probes, &cfg.slope_learning_rates)?;
    let rows: Vec<Vec<String>> = fit
        .learning_rates
        .iter()
        .zip(&fit.max_residuals)
        .map(|(lr, r)| vec![format_float(*lr), format_float(*r)])
        .collect();
    out.write(
        "verify/influence_slope.csv",
        &csv_bytes(&["learning_rate", "max_abs_residual"], &rows)?,
    )?;
    Ok(vec![
        check("small_lr_max_abs_residual", small.max_abs_residual, Relation::Lt, 1e-10),
        check("slope_lower", fit.slope, Relation::Ge, 1.8),
        check("slope_upper", fit.slope, Relation::Le, 2.2),
    ])
}

fn theorem1(ctx: &Shared, out: &mut OutputDir) -> Result<Vec<Check>> {
    let exp = ctx.exp;
    let sizes = &exp.raw.experiment.sample_sizes;
    let largest = *sizes.iter().max().expect("validated non-empty");
    let reports = theorem1_check(
        &exp.target,
        &exp.generic,
        exp.arch,
        sizes,
        &ctx.sweep_seeds(),
        &exp.train,
        exp.raw.experiment.epsilon,
    )?;
    let kl = kl_divergence(&ctx.table_t, &ctx.table_d)?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.sample_size.to_string(),
                r.seed.to_string(),
                format_float(r.h_t),
                format_float(r.kl_td),
                format_float(r.epsilon),
                format_float(r.bound),
                format_float(r.observed),
                format_float(r.margin),
                format_float(r.m),
                r.vacuous.to_string(),
            ]
        })
        .collect();
    let header = [
        "sample_size", "seed", "h_t", "kl_td", "epsilon", "bound", "observed", "margin", "m",
        "vacuous",
    ];
    out.write("verify/theorem1_cells.csv", &csv_bytes(&header, &rows)?)?;
    let at_largest: Vec<_> = reports.iter().filter(|r| r.sample_size == largest).collect();
    let passes = at_largest.iter().filter(|r| r.holds()).count();
    let kl_mismatch = reports.iter().filter(|r| r.kl_td != kl).count();
    Ok(vec![
        check("seeds_at_largest_size", at_largest.len() as f64, Relation::Ge, 20.0),
        check(
            "passes_at_largest_size",
            passes as f64,
            Relation::Ge,
            exp.raw.verify.min_theorem_passes as f64,
        ),
        check("kl_mismatches", kl_mismatch as f64, Relation::Eq, 0.0),
    ])
}

fn crossover_rows(label: &str, table: &CrossoverTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|r| {
            vec![
                label.to_string(),
                r.size_t.to_string(),
                r.median_loss_t.map(format_float).unwrap_or_default(),
                format_float(r.median_loss_d),
                r.t_wins.map(|b| b.to_string()).unwrap_or_default(),
                r.flagged.to_string(),
            ]
        })
        .collect()
}

fn crossover(ctx: &Shared, out: &mut OutputDir) -> Result<Vec<Check>> {
    let exp = ctx.exp;
    let sizes = &exp.raw.experiment.crossover_sizes;
    let size_d = exp.raw.data.generic_size;
    let seeds = ctx.sweep_seeds();
    let shifted = crossover_experiment(&exp.target, &exp.generic, exp.arch, sizes, size_d, &seeds, &exp.train)?;
    let same = crossover_experiment(&exp.generic, &exp.generic, exp.arch, sizes, size_d, &seeds, &exp.train)?;
    let mut rows = crossover_rows("target", &shifted);
    rows.extend(crossover_rows("in_domain", &same));
    let header = ["target", "size_t", "median_loss_t", "median_loss_d", "t_wins", "flagged"];
    out.write("verify/crossover_table.csv", &csv_bytes(&header, &rows)?)?;

    let medians: Vec<f64> = shifted.rows.iter().filter_map(|r| r.median_loss_t).collect();
    let max_increase = medians
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let largest = *sizes.iter().max().expect("validated non-empty") as f64;
    Ok(vec![
        check("median_max_increase", max_increase, Relation::Le, 0.0),
        check(
            "crossover_size",
            shifted.crossover.map_or(f64::INFINITY, |n| n as f64),
            Relation::Le,
            largest,
        ),
        check(
            "in_domain_crossover_size",
            same.crossover.map_or(f64::INFINITY, |n| n as f64),
            Relation::Ge,
            size_d as f64 / 4.0,
        ),
    ])
}

fn binarization(ctx: &Shared, suite: usize) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let mut taus: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.15).collect();
    taus.insert(0, f64::NEG_INFINITY);
    taus.push(f64::INFINITY);
    let count = ctx.exp.raw.verify.binarization_vectors;
    let mut monotone_violations = 0;
    let mut shift_mismatches = 0;
    for _ in 0..count {
        let values: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
        let c = rng.random_range(-4.0f64..4.0).exp();
        let w = SelectionWeights::new(values.clone(), WeightMethod::EstimatedImportance)?;
        let scaled = SelectionWeights::new(
            values.iter().map(|x| c * x).collect(),
            WeightMethod::EstimatedImportance,
        )?;
        let mut last = usize::MAX;
        for &tau in &taus {
            let b = binarize_intsel(&w, tau);
            let size = b.values().iter().filter(|x| **x == 1.0).count();
            if size > last {
                monotone_violations += 1;
            }
            last = size;
            if binarize_intsel(&scaled, tau + c.ln()).values() != b.values() {
                shift_mismatches += 1;
            }
        }
    }
    Ok(vec![
        check("vectors", count as f64, Relation::Ge, 100.0),
        check("monotonicity_violations", monotone_violations as f64, Relation::Eq, 0.0),
        check("scale_shift_mismatches", shift_mismatches as f64, Relation::Eq, 0.0),
    ])
}

fn random_table(rng: &mut ChaCha8Rng) -> Result<(DistributionTable, DistributionTable)> {
    let vocab = Vocab::new(rng.random_range(2..=3))?;
    let seq_len = rng.random_range(1..=3);
    if rng.random_bool(0.5) {
        let row = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..vocab.size()).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let source = |rng: &mut ChaCha8Rng| -> Result<MarkovSource> {
            let initial = row(rng);
            let transition = (0..vocab.size()).map(|_| row(rng)).collect();
            Ok(MarkovSource::new(vocab, initial, transition, seq_len)?)
        };
        let p = enumerate_distribution(&source(rng)?)?;
        let q = enumerate_distribution(&source(rng)?)?;
        Ok((p, q))
    } else {
        let size = vocab.size().pow(seq_len as u32);
        let dist = |rng: &mut ChaCha8Rng| -> Result<DistributionTable> {
            // exponential draws normalized: a flat Dirichlet sample
            let raw: Vec<f64> = (0..size).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12).collect();
            let s: f64 = raw.iter().sum();
            Ok(DistributionTable::new(vocab, seq_len, raw.iter().map(|x| x / s).collect())?)
        };
        Ok((dist(rng)?, dist(rng)?))
    }
}

fn pinsker(ctx: &Shared, suite: usize) -> Result<Vec<Check>> {
    let mut rng = ctx.rng(suite);
    let count = ctx.exp.raw.verify.pinsker_pairs;
    let mut min_margin = f64::INFINITY;
    for _ in 0..count {
        let (p, q) = random_table(&mut rng)?;
        min_margin = min_margin.min(pinsker_margin(&p, &q)?);
    }
    Ok(vec![
        check("pairs", count as f64, Relation::Ge, 1000.0),
        check("min_margin", min_margin, Relation::Ge, -1e-10),
    ])
}

/// Rebuilds data, parameters and weights twice in-process and compares bytes.
fn determinism(ctx: &Shared) -> Result<Vec<Check>> {
    let exp = ctx.exp;
    let digest = || -> Result<Vec<String>> {
        let d = generic_data(exp)?;
        let t = target_data(exp)?;
        let (theta, trace) = train_generic(exp, &d)?;
        let weights = selection_weights(exp, &d, &t, &theta)?;
        let mut params = Vec::new();
        write_params(&theta, &mut params)?;
        let mut trace_csv = Vec::new();
        trace.write_csv(&mut trace_csv)?;
        let mut weights_csv = Vec::new();
        write_weights_csv(&d, &weights, &mut weights_csv)?;
        let seqs: Vec<u8> = d.iter().flatten().map(|&x| x as u8).collect();
        Ok([seqs, params, trace_csv, weights_csv]
            .iter()
            .map(|b| sha256_hex(b))
            .collect())
    };
    let a = digest()?;
    let b = digest()?;
    let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    let shared = ctx.theta_d == train_generic(exp, &ctx.d)?.0;
    Ok(vec![
        check("artifacts", a.len() as f64, Relation::Ge, 4.0),
        check("checksum_mismatches", mismatches as f64, Relation::Eq, 0.0),
        check("retrain_matches", f64::from(u8::from(shared)), Relation::Eq, 1.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Relation::Lt.holds(1.0, 2.0));
        assert!(!Relation::Lt.holds(2.0, 2.0));
        assert!(Relation::Le.holds(2.0, 2.0));
        assert!(Relation::Ge.holds(f64::INFINITY, 2500.0));
        assert!(!Relation::Le.holds(f64::INFINITY, 3000.0));
        assert!(!Relation::Ge.holds(f64::NAN, 0.0));
        for r in [Relation::Lt, Relation::Le, Relation::Ge, Relation::Eq] {
            assert_eq!(Relation::parse(r.as_str()).unwrap(), r);
        }
    }

    #[test]
    fn summary_reads_back_written_checks() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        for suite in SUITES {
            let bound = if suite == "pinsker" { -1.0 } else { 1.0 };
            let rows = vec![vec!["x".into(), format_float(0.5), "<".into(), format_float(bound)]];
            out.write(
                &format!("verify/{suite}.csv"),
                &csv_bytes(&["check", "value", "relation", "bound"], &rows).unwrap(),
            )
            .unwrap();
        }
        let verdicts = summarize(dir.path()).unwrap();
        assert_eq!(verdicts.len(), SUITES.len());
        for v in verdicts {
            assert_eq!(v.passed(), v.suite != "pinsker", "{v:?}");
        }
    }
}
