//! Versioned JSON inputs.

use std::fs;
use std::path::{Path, PathBuf};

use pointsentinel_core::evalkit::{ABSOLUTE_DELTA_MM, DEFAULT_ALPHA, DEFAULT_RESAMPLES, RELATIVE_DELTA};
use pointsentinel_core::nn::HeadVariant;
use pointsentinel_core::synthgen::SceneConfig;
use pointsentinel_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{invalid, CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Deserialize)]
struct Versioned {
    version: Option<u32>,
}

/// Reads a JSON file whose top-level `"version"` must equal [`CONFIG_VERSION`].
pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |e: serde_json::Error| invalid!("{}: {e}", path.display());
    let v: Versioned = serde_json::from_str(&text).map_err(bad)?;
    match v.version {
        None => return Err(invalid!("{}: missing required field \"version\"", path.display())),
        Some(CONFIG_VERSION) => {}
        Some(other) => {
            return Err(invalid!(
                "{}: unsupported version {other} (expected {CONFIG_VERSION})",
                path.display()
            ))
        }
    }
    serde_json::from_str(&text).map_err(bad)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresenceCounts {
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Input of `generate`: a scene configuration plus how many scenes to draw.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub version: u32,
    #[serde(default)]
    pub scene: SceneConfig,
    /// Number of target scenes; ignored when `presence` is set.
    #[serde(default)]
    pub n: usize,
    #[serde(default = "one")]
    pub patient_group_size: usize,
    /// Generate a presence set (targets plus distractor-only negatives) instead.
    pub presence: Option<PresenceCounts>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub delta_max_relative: f64,
    pub delta_max_mm: f64,
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub n_thresholds: usize,
    pub bootstrap_seed: u64,
    /// Head pairs compared with the DeLong test on the presence set.
    pub delong_pairs: Vec<(HeadVariant, HeadVariant)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta_max_relative: RELATIVE_DELTA,
            delta_max_mm: ABSOLUTE_DELTA_MM,
            n_bootstrap: DEFAULT_RESAMPLES,
            alpha: DEFAULT_ALPHA,
            n_thresholds: 101,
            bootstrap_seed: 0,
            delong_pairs: vec![(HeadVariant::SpatialSoftmax, HeadVariant::Pixelwise)],
        }
    }
}

/// Input of `train` and `evaluate`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub name: String,
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    pub presence_dataset: Option<PathBuf>,
    pub heads: Vec<HeadVariant>,
    pub seeds: Vec<u64>,
    /// Fraction of training patients held out for model selection.
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Shared training settings; `head_variant` and `seed` are set per job.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

fn default_val_frac() -> f64 {
    0.1
}

impl ExperimentSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.heads.is_empty() {
            return Err(invalid!("experiment {:?} lists no heads", self.name));
        }
        if self.seeds.is_empty() {
            return Err(invalid!("experiment {:?} lists no seeds", self.name));
        }
        let mut heads = self.heads.clone();
        heads.sort();
        heads.dedup();
        if heads.len() != self.heads.len() {
            return Err(invalid!("experiment {:?} repeats a head", self.name));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(invalid!("val_frac must lie in (0, 1)"));
        }
        let e = &self.eval;
        if !(e.delta_max_relative > 0.0 && e.delta_max_mm > 0.0) {
            return Err(invalid!("eval deltas must be positive"));
        }
        if e.n_bootstrap < 100 || !(e.alpha > 0.0 && e.alpha < 1.0) || e.n_thresholds < 2 {
            return Err(invalid!("eval needs n_bootstrap >= 100, alpha in (0, 1), n_thresholds >= 2"));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn job_config(&self, head: HeadVariant, seed: u64) -> TrainConfig {
        TrainConfig {
            head_variant: head,
            seed,
            ..self.train.clone()
        }
    }
}

/// File stem shared by a job's checkpoint, log and evaluation outputs.
pub fn job_name(head: HeadVariant, seed: u64) -> String {
    format!("{head}-seed{seed}")
}
