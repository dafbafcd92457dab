//! Experiment configuration: a TOML file with named sources, roles that pick
//! the generic (`D`) and target (`T`) distributions, and per-command sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adaptlab_core::influence::{HessianMode, DEFAULT_DAMPING};
use adaptlab_core::sources::derive_seed;
use adaptlab_core::{ArchSpec, Family, MarkovSource, TauSchedule, TrainConfig, Vocab, WeightMethod};
use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed; every random draw derives from it and a fixed tag.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sources: BTreeMap<String, SourceSpec>,
    pub roles: Roles,
    pub arch: ArchSection,
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub influence: InfluenceSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Explicit {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        seq_len: usize,
    },
    Uniform {
        vocab: usize,
        seq_len: usize,
    },
    Sticky {
        vocab: usize,
        seq_len: usize,
        stay: f64,
    },
    Perturbed {
        base: String,
        epsilon: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub generic: String,
    pub target: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub family: String,
    pub context_len: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generic_size: usize,
    pub target_size: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub step: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    #[serde(default = "default_method")]
    pub method: String,
    pub tau: Option<f64>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default = "default_n_ft")]
    pub n_ft: usize,
    #[serde(default = "default_ft_lr")]
    pub ft_learning_rate: f64,
}

fn default_method() -> String {
    "estimated_importance".into()
}
fn default_n_ft() -> usize {
    10
}
fn default_ft_lr() -> f64 {
    0.5
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            method: default_method(),
            tau: None,
            schedule: Vec::new(),
            n_ft: default_n_ft(),
            ft_learning_rate: default_ft_lr(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_influence_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_mode() -> String {
    "identity".into()
}
fn default_damping() -> f64 {
    DEFAULT_DAMPING
}
fn default_influence_lr() -> f64 {
    1e-3
}
fn default_probes() -> usize {
    200
}

impl Default for InfluenceSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            damping: default_damping(),
            learning_rate: default_influence_lr(),
            probes: default_probes(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub sample_sizes: Vec<usize>,
    pub crossover_sizes: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub reweighting_functions: usize,
    pub gradient_pairs: usize,
    pub ess_vectors: usize,
    pub binarization_vectors: usize,
    pub pinsker_pairs: usize,
    pub small_learning_rate: f64,
    pub slope_learning_rates: Vec<f64>,
    pub min_theorem_passes: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            reweighting_functions: 20,
            gradient_pairs: 50,
            ess_vectors: 1_000,
            binarization_vectors: 100,
            pinsker_pairs: 1_000,
            small_learning_rate: 1e-6,
            slope_learning_rates: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            min_theorem_passes: 19,
        }
    }
}

/// Fixed tags mixed into the base seed, one per random draw.
pub mod tags {
    pub const GENERIC_DATA: u64 = 1;
    pub const TARGET_DATA: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SWEEP: u64 = 4;
    pub const VERIFY: u64 = 5;
}

/// A validated configuration with every name resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub generic: MarkovSource,
    pub target: MarkovSource,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub method: WeightMethod,
    pub schedule: Option<TauSchedule>,
    pub hessian_mode: HessianMode,
}

impl Experiment {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut exp = Self::parse(&text, seed_override)
            .with_context(|| format!("invalid config {}", path.display()))?;
        exp.config_hash = crate::output::sha256_hex(text.as_bytes());
        Ok(exp)
    }

    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let raw: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
        let seed = seed_override.unwrap_or(raw.seed);
        let generic = resolve_source(&raw.sources, &raw.roles.generic, "roles.generic")?;
        let target = resolve_source(&raw.sources, &raw.roles.target, "roles.target")?;
        if generic.vocab() != target.vocab() || generic.seq_len() != target.seq_len() {
            bail!(
                "roles.generic and roles.target must share vocab and seq_len (got V={} n={} and V={} n={})",
                generic.vocab().size(),
                generic.seq_len(),
                target.vocab().size(),
                target.seq_len()
            );
        }
        let family: Family = raw
            .arch
            .family
            .parse()
            .map_err(|e| anyhow!("arch.family: {e}"))?;
        let arch = ArchSpec::new(family, raw.arch.context_len, generic.vocab(), generic.seq_len())
            .context("arch")?;
        let train = TrainConfig {
            learning_rate: raw.train.learning_rate,
            steps: raw.train.steps,
            batch_size: raw.train.batch_size,
            seed: derive_seed(seed, &[tags::TRAIN]),
            shuffle: raw.train.shuffle,
        };
        train.validate().context("train")?;
        let method: WeightMethod = raw
            .selection
            .method
            .parse()
            .map_err(|e| anyhow!("selection.method: {e}"))?;
        let schedule = if raw.selection.schedule.is_empty() {
            None
        } else {
            let points = raw.selection.schedule.iter().map(|e| (e.step, e.tau)).collect();
            Some(TauSchedule::new(points).context("selection.schedule")?)
        };
        let hessian_mode = match raw.influence.mode.as_str() {
            "identity" => HessianMode::Identity,
            "damped_true" => HessianMode::DampedTrue,
            other => bail!("influence.mode: expected identity or damped_true, got '{other}'"),
        };
        if raw.data.generic_size == 0 || raw.data.target_size == 0 {
            bail!("data.generic_size and data.target_size must be positive");
        }
        for (name, grid) in [
            ("experiment.seeds", raw.experiment.seeds.len()),
            ("experiment.sample_sizes", raw.experiment.sample_sizes.len()),
            ("experiment.crossover_sizes", raw.experiment.crossover_sizes.len()),
            ("verify.slope_learning_rates", raw.verify.slope_learning_rates.len()),
        ] {
            if grid == 0 {
                bail!("{name} must not be empty");
            }
        }
        Ok(Self {
            raw,
            config_hash: String::new(),
            seed,
            generic,
            target,
            arch,
            train,
            method,
            schedule,
            hessian_mode,
        })
    }

    pub fn data_seed(&self, tag: u64) -> u64 {
        derive_seed(self.seed, &[tag])
    }
}

fn resolve_source(
    sources: &BTreeMap<String, SourceSpec>,
    name: &str,
    field: &str,
) -> Result<MarkovSource> {
    let mut chain = Vec::new();
    build_source(sources, name, field, &mut chain)
}

fn build_source(
    sources: &BTreeMap<String, SourceSpec>,
    name: &str,
    field: &str,
    chain: &mut Vec<String>,
) -> Result<MarkovSource> {
    if chain.iter().any(|n| n == name) {
        bail!("sources.{name}: perturbation cycle through {}", chain.join(" -> "));
    }
    let spec = sources
        .get(name)
        .ok_or_else(|| anyhow!("{field}: undefined source '{name}'"))?;
    chain.push(name.to_string());
    let ctx = || format!("sources.{name}");
    let source = match spec {
        SourceSpec::Explicit {
            initial,
            transition,
            seq_len,
        } => MarkovSource::new(
            Vocab::new(initial.len()).with_context(ctx)?,
            initial.clone(),
            transition.clone(),
            *seq_len,
        ),
        SourceSpec::Uniform { vocab, seq_len } => {
            MarkovSource::uniform(Vocab::new(*vocab).with_context(ctx)?, *seq_len)
        }
        SourceSpec::Sticky {
            vocab,
            seq_len,
            stay,
        } => MarkovSource::sticky(Vocab::new(*vocab).with_context(ctx)?, *seq_len, *stay),
        SourceSpec::Perturbed {
            base,
            epsilon,
            seed,
        } => {
            let field = format!("sources.{name}.base");
            build_source(sources, base, &field, chain)?.perturbed(*epsilon, *seed)
        }
    }
    .with_context(ctx)?;
    chain.pop();
    Ok(source)
}
