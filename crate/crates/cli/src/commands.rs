//! `simulate`, `train`, `select`, `influence` and `report`. Each command
//! rebuilds what it needs from the config, so outputs never depend on files
//! left over from earlier runs.

use std::fs;

use adaptlab_core::influence::{
    one_step_logodds_check, write_influence_csv, Curvature, HessianFactor, MeanInfluence,
};
use adaptlab_core::model::{empirical_loss, expected_loss, write_params};
use adaptlab_core::selection::{
    binarize_intsel, decile_thresholds, effective_sample_size, estimated_importance_weights,
    format_float, format_sequence, influence_derived_weights, true_importance_weights,
    write_weights_csv,
};
use adaptlab_core::sources::{
    chain_rule_entropy, entropy, enumerate_distribution, kl_divergence, sample,
};
use adaptlab_core::training::{dynamic_selection_train, fine_tune, train};
use adaptlab_core::{
    Dataset, HessianOptions, ModelParams, SelectionWeights, TrainTrace, WeightMethod,
};
use anyhow::{bail, Context, Result};

use crate::config::{tags, Experiment};
use crate::output::OutputDir;

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn generic_data(exp: &Experiment) -> Result<Dataset> {
    Ok(sample(
        &exp.generic,
        exp.raw.data.generic_size,
        exp.data_seed(tags::GENERIC_DATA),
    )?)
}

pub fn target_data(exp: &Experiment) -> Result<Dataset> {
    Ok(sample(
        &exp.target,
        exp.raw.data.target_size,
        exp.data_seed(tags::TARGET_DATA),
    )?)
}

/// `θ_D`: trained from zero init on the generic dataset.
pub fn train_generic(exp: &Experiment, d: &Dataset) -> Result<(ModelParams, TrainTrace)> {
    Ok(train(&ModelParams::zeros(exp.arch), d, &exp.train, None)?)
}

fn dataset_csv(data: &Dataset) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = data
        .iter()
        .enumerate()
        .map(|(i, y)| vec![i.to_string(), format_sequence(y)])
        .collect();
    csv_bytes(&["index", "sequence"], &rows)
}

fn params_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    Ok(buf)
}

pub fn simulate(exp: &Experiment, out: &mut OutputDir) -> Result<()> {
    let d = generic_data(exp)?;
    let t = target_data(exp)?;
    out.write("data/generic.csv", &dataset_csv(&d)?)?;
    out.write("data/target.csv", &dataset_csv(&t)?)?;

    let table_d = enumerate_distribution(&exp.generic)?;
    let table_t = enumerate_distribution(&exp.target)?;
    let mut rows = Vec::new();
    for (role, source, table) in [
        ("generic", &exp.generic, &table_d),
        ("target", &exp.target, &table_t),
    ] {
        rows.push(vec![
            role.to_string(),
            source.vocab().size().to_string(),
            source.seq_len().to_string(),
            table.len().to_string(),
            format_float(entropy(table)),
            format_float(chain_rule_entropy(source)),
            format_float(kl_divergence(table, &table_d)?),
            format_float(table.min_prob()),
        ]);
    }
    let header = [
        "role",
        "vocab",
        "seq_len",
        "space_size",
        "entropy",
        "chain_rule_entropy",
        "kl_to_generic",
        "min_prob",
    ];
    out.write("sources.csv", &csv_bytes(&header, &rows)?)
}

pub fn train_cmd(exp: &Experiment, out: &mut OutputDir) -> Result<()> {
    let d = generic_data(exp)?;
    let t = target_data(exp)?;
    let table_d = enumerate_distribution(&exp.generic)?;
    let table_t = enumerate_distribution(&exp.target)?;
    let (theta_d, trace_d) = train_generic(exp, &d)?;
    let sel = &exp.raw.selection;
    let (theta_ft, trace_ft) = fine_tune(&theta_d, &t, sel.n_ft, sel.ft_learning_rate)?;

    out.write("params/generic.txt", &params_bytes(&theta_d)?)?;
    out.write("params/finetuned.txt", &params_bytes(&theta_ft)?)?;
    out.write_with("traces/generic.csv", |w| trace_d.write_csv(w))?;
    out.write_with("traces/finetuned.csv", |w| trace_ft.write_csv(w))?;

    let mut rows = Vec::new();
    for (name, params, data, trace, lr) in [
        ("generic", &theta_d, &d, &trace_d, exp.train.learning_rate),
        ("finetuned", &theta_ft, &t, &trace_ft, sel.ft_learning_rate),
    ] {
        rows.push(vec![
            name.to_string(),
            trace.len().to_string(),
            format_float(empirical_loss(params, data, None)?),
            format_float(expected_loss(params, &table_d)?),
            format_float(expected_loss(params, &table_t)?),
            format_float(trace.final_distance()),
            format_float(trace.ball_radius(lr)),
            trace.within_ball(lr, 1e-9).to_string(),
        ]);
    }
    let header = [
        "model",
        "steps",
        "train_loss",
        "expected_loss_generic",
        "expected_loss_target",
        "dist_from_init",
        "ball_radius",
        "within_ball",
    ];
    out.write("train_summary.csv", &csv_bytes(&header, &rows)?)
}

/// Weights over the generic dataset for the configured method.
pub fn selection_weights(
    exp: &Experiment,
    d: &Dataset,
    t: &Dataset,
    theta_d: &ModelParams,
) -> Result<SelectionWeights> {
    let sel = &exp.raw.selection;
    let estimated = || -> Result<SelectionWeights> {
        let (theta_ft, _) = fine_tune(theta_d, t, sel.n_ft, sel.ft_learning_rate)?;
        Ok(estimated_importance_weights(&theta_ft, theta_d, d)?
            .with_fine_tune(sel.n_ft, sel.ft_learning_rate))
    };
    let weights = match exp.method {
        WeightMethod::TrueImportance => true_importance_weights(
            &enumerate_distribution(&exp.target)?,
            &enumerate_distribution(&exp.generic)?,
            d,
        )?,
        WeightMethod::EstimatedImportance => estimated()?,
        WeightMethod::IntselBinary => {
            let Some(tau) = sel.tau else {
                bail!("selection.tau is required for intsel_binary");
            };
            binarize_intsel(&estimated()?, tau)
        }
        WeightMethod::InfluenceDerived => {
            let scorer = MeanInfluence::new(theta_d, t, Curvature::Identity)?;
            let log_w: Vec<f64> = scorer
                .scores(d)?
                .into_iter()
                .map(|i| -sel.ft_learning_rate * i)
                .collect();
            influence_derived_weights(&log_w, 1.0)?.with_fine_tune(1, sel.ft_learning_rate)
        }
    };
    Ok(match sel.tau {
        Some(tau) if weights.tau().is_none() => weights.with_tau(tau),
        _ => weights,
    })
}

pub fn select(exp: &Experiment, out: &mut OutputDir) -> Result<()> {
    let d = generic_data(exp)?;
    let t = target_data(exp)?;
    let table_t = enumerate_distribution(&exp.target)?;
    let (theta_d, _) = train_generic(exp, &d)?;
    let weights = selection_weights(exp, &d, &t, &theta_d)?;
    out.write_with("weights.csv", |w| write_weights_csv(&d, &weights, w))?;

    let ess = effective_sample_size(&weights)?;
    let (theta_w, trace_w) = train(&ModelParams::zeros(exp.arch), &d, &exp.train, Some(&weights))?;
    out.write_with("traces/weighted.csv", |w| trace_w.write_csv(w))?;
    let selected = weights.tau().map(|tau| weights.selected(tau).len());
    let row = vec![
        weights.method().to_string(),
        ess.n.to_string(),
        format_float(ess.mean_w),
        format_float(ess.mean_w2),
        format_float(ess.n_e),
        weights.tau().map(format_float).unwrap_or_default(),
        selected.map(|s| s.to_string()).unwrap_or_default(),
        format_float(expected_loss(&theta_d, &table_t)?),
        format_float(expected_loss(&theta_w, &table_t)?),
    ];
    let header = [
        "method",
        "n",
        "mean_w",
        "mean_w2",
        "n_e",
        "tau",
        "selected",
        "loss_target_plain",
        "loss_target_weighted",
    ];
    out.write("selection_summary.csv", &csv_bytes(&header, &[row])?)?;

    let deciles: Vec<Vec<String>> = decile_thresholds(&weights)
        .into_iter()
        .enumerate()
        .map(|(i, ln_w)| {
            let count = weights.selected(ln_w).len();
            vec![(i + 1).to_string(), format_float(ln_w), count.to_string()]
        })
        .collect();
    out.write("deciles.csv", &csv_bytes(&["decile", "log_weight", "selected"], &deciles)?)?;

    if let Some(schedule) = &exp.schedule {
        let (theta_s, trace_s) =
            dynamic_selection_train(&ModelParams::zeros(exp.arch), &d, &weights, schedule, &exp.train)?;
        out.write_with("traces/dynamic.csv", |w| trace_s.write_csv(w))?;
        out.write("params/dynamic.txt", &params_bytes(&theta_s)?)?;
    }
    Ok(())
}

pub fn influence_cmd(exp: &Experiment, out: &mut OutputDir) -> Result<()> {
    let d = generic_data(exp)?;
    let t = target_data(exp)?;
    let (theta_d, _) = train_generic(exp, &d)?;
    let probes = d.prefix(exp.raw.influence.probes.min(d.len()));
    let inf = &exp.raw.influence;
    let factor;
    let curvature = match exp.hessian_mode {
        adaptlab_core::influence::HessianMode::Identity => Curvature::Identity,
        adaptlab_core::influence::HessianMode::DampedTrue => {
            factor = HessianFactor::from_model(&theta_d, &d, inf.damping, HessianOptions::default())
                .context("influence.damping")?;
            Curvature::Damped(&factor)
        }
    };
    let scores = MeanInfluence::new(&theta_d, &t, curvature)?.scores(&probes)?;
    out.write_with("influence.csv", |w| {
        write_influence_csv(&probes, &scores, inf.learning_rate, w)
    })?;

    let check = one_step_logodds_check(&theta_d, &t, inf.learning_rate, &probes)?;
    let rows: Vec<Vec<String>> = probes
        .iter()
        .zip(&check.rows)
        .enumerate()
        .map(|(i, (y, r))| {
            vec![
                i.to_string(),
                format_sequence(y),
                format_float(r.log_odds),
                format_float(r.predicted),
                format_float(r.residual),
            ]
        })
        .collect();
    let header = ["index", "sequence", "log_odds", "predicted", "residual"];
    out.write("influence_residuals.csv", &csv_bytes(&header, &rows)?)
}

/// Merges every `*summary*.csv` under the output directory into one long
/// table of `file,row,column,value`, plus the manifests' checksums.
pub fn report(out: &mut OutputDir) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out.root(), out.root(), &mut files)?;
    files.sort();
    let mut rows = Vec::new();
    for rel in &files {
        let name = rel.rsplit('/').next().unwrap_or(rel);
        if name.ends_with(".csv") && name.contains("summary") {
            let mut reader = csv::Reader::from_path(out.path(rel))?;
            let header = reader.headers()?.clone();
            for (i, record) in reader.records().enumerate() {
                for (col, value) in header.iter().zip(record?.iter()) {
                    rows.push(vec![rel.clone(), i.to_string(), col.to_string(), value.to_string()]);
                }
            }
        } else if name.starts_with("manifest_") && name.ends_with(".json") && name != "manifest_report.json" {
            let manifest = crate::output::RunManifest::read(&out.path(rel))?;
            for (file, sha) in &manifest.outputs {
                rows.push(vec![rel.clone(), file.clone(), "sha256".into(), sha.clone()]);
            }
        }
    }
    if rows.is_empty() {
        bail!("nothing to report in {}", out.root().display());
    }
    out.write("report.csv", &csv_bytes(&["file", "row", "column", "value"], &rows)?)
}

fn collect_files(root: &std::path::Path, dir: &std::path::Path, acc: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            acc.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
