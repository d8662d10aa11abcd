//! Experiment configuration: a flat TOML file. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpfed::engine::{Algorithm, ClipMode, SensitivityMode, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Generated on the fly from the synthetic keys.
    Synthetic,
    /// IDX image/label pair partitioned with `gamma`.
    Idx,
    /// File written by `dpfed generate`.
    Binary,
    /// CSV with header `user,split,label,f0,...`.
    Csv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Logreg,
    Mlp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    #[default]
    Fixed,
    Median,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: u64,

    pub dataset: DatasetKind,
    pub users: Option<usize>,
    /// Records per user for synthetic data.
    pub records: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub flip_prob: Option<f64>,
    #[serde(default)]
    pub data_seed: u64,
    /// Binary or CSV dataset file.
    pub path: Option<PathBuf>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    /// Percentage of i.i.d. records per user for IDX pools.
    pub gamma: Option<f64>,
    /// Seeded subsample of the IDX pool before partitioning.
    pub pool_size: Option<usize>,

    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "default_pca")]
    pub pca_components: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub precision: Precision,

    pub algorithms: Vec<Algorithm>,
    pub rounds: u64,
    pub local_steps: u64,
    pub user_ratio: f64,
    pub data_ratio: f64,
    #[serde(default = "one")]
    pub eta_g: f64,
    pub eta0: f64,
    /// Per-algorithm overrides of `eta0`, e.g. `{ DP_FEDAVG = 0.3 }`.
    #[serde(default)]
    pub eta0_by_algorithm: BTreeMap<Algorithm, f64>,
    #[serde(default)]
    pub sigma_g: f64,
    #[serde(default)]
    pub clip_mode: ClipKind,
    /// Fixed threshold, or the initial one for the median heuristic.
    #[serde(default = "one")]
    pub clip: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: SensitivityMode,
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `1/(M R)` with `R` the training shard size.
    pub delta: Option<f64>,

    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    /// Solve for `F*` so convex runs report the log10 loss gap.
    #[serde(default = "yes")]
    pub reference: bool,

    pub budget_eps: Option<f64>,
    #[serde(default)]
    pub sigma_grid: Vec<f64>,
    #[serde(default)]
    pub k_grid: Vec<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_repeats() -> u64 {
    3
}

fn default_pca() -> usize {
    dpfed::models::PCA_COMPONENTS
}

fn default_hidden() -> usize {
    dpfed::models::HIDDEN_UNITS
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_sensitivity() -> SensitivityMode {
    SensitivityMode::Record
}

fn default_l2() -> f64 {
    dpfed::models::DEFAULT_L2
}

fn default_eval_every() -> u64 {
    1
}

fn default_tail() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("invalid experiment config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.path, &mut cfg.idx_images, &mut cfg.idx_labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        if self.algorithms.is_empty() {
            bail!("algorithms must list at least one algorithm");
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                for (name, v) in [("users", self.users.is_some()), ("records", self.records.is_some())] {
                    if !v {
                        bail!("synthetic datasets need `{name}`");
                    }
                }
            }
            DatasetKind::Idx => {
                for (name, p) in [("idx_images", &self.idx_images), ("idx_labels", &self.idx_labels)] {
                    let p = p.as_ref().with_context(|| format!("idx datasets need `{name}`"))?;
                    if !p.exists() {
                        bail!("{name} file {} does not exist", p.display());
                    }
                }
                if self.users.is_none() || self.gamma.is_none() {
                    bail!("idx datasets need `users` and `gamma`");
                }
            }
            DatasetKind::Binary | DatasetKind::Csv => {
                let p = self.path.as_ref().context("file datasets need `path`")?;
                if !p.exists() {
                    bail!("dataset file {} does not exist", p.display());
                }
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                bail!("delta must lie in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn clip_mode(&self) -> ClipMode {
        match self.clip_mode {
            ClipKind::Fixed => ClipMode::Fixed(self.clip),
            ClipKind::Median => ClipMode::Median(self.clip),
            ClipKind::Off => ClipMode::Off,
        }
    }

    pub fn eta0_for(&self, algorithm: Algorithm) -> f64 {
        self.eta0_by_algorithm.get(&algorithm).copied().unwrap_or(self.eta0)
    }

    pub fn train_config(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm,
            rounds: self.rounds,
            local_steps: self.local_steps,
            user_ratio: self.user_ratio,
            data_ratio: self.data_ratio,
            eta_g: self.eta_g,
            eta0: self.eta0_for(algorithm),
            sigma_g: self.sigma_g,
            clip: self.clip_mode(),
            sensitivity: self.sensitivity,
            l2_reg: self.l2_reg,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
dataset = "synthetic"
users = 10
records = 50
alpha = 1.0
beta = 1.0
algorithms = ["DP_SCAFFOLD", "DP_FEDAVG"]
rounds = 5
local_steps = 2
user_ratio = 0.5
data_ratio = 0.2
eta0 = 0.5
sigma_g = 1.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.repeats, 3);
        assert_eq!(cfg.algorithms, vec![Algorithm::DpScaffold, Algorithm::DpFedavg]);
        assert_eq!(cfg.clip_mode(), ClipMode::Fixed(1.0));
        assert_eq!(cfg.l2_reg, 5e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nsigma = 3.0\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(format!("{err:#}").contains("unknown field"));
    }

    #[test]
    fn step_size_overrides() {
        let text = format!("{MINIMAL}eta0_by_algorithm = {{ DP_FEDAVG = 0.1 }}\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.train_config(Algorithm::DpFedavg, 0).eta0, 0.1);
        assert_eq!(cfg.train_config(Algorithm::DpScaffold, 0).eta0, 0.5);
        let bad = format!("{MINIMAL}eta0_by_algorithm = {{ DP_FEDPROX = 0.1 }}\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn missing_files_are_rejected() {
        let text = MINIMAL.replace("dataset = \"synthetic\"", "dataset = \"binary\"\npath = \"/nonexistent/x.bin\"");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
