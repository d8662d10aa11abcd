use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    DpScaffold,
    DpScaffoldWarm,
    DpFedavg,
    DpFedsgd,
    Scaffold,
    ScaffoldWarm,
    Fedavg,
    Fedsgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::DpScaffold,
        Algorithm::DpScaffoldWarm,
        Algorithm::DpFedavg,
        Algorithm::DpFedsgd,
        Algorithm::Scaffold,
        Algorithm::ScaffoldWarm,
        Algorithm::Fedavg,
        Algorithm::Fedsgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DpScaffold => "DP_SCAFFOLD",
            Algorithm::DpScaffoldWarm => "DP_SCAFFOLD_WARM",
            Algorithm::DpFedavg => "DP_FEDAVG",
            Algorithm::DpFedsgd => "DP_FEDSGD",
            Algorithm::Scaffold => "SCAFFOLD",
            Algorithm::ScaffoldWarm => "SCAFFOLD_WARM",
            Algorithm::Fedavg => "FEDAVG",
            Algorithm::Fedsgd => "FEDSGD",
        }
    }

    pub fn is_private(self) -> bool {
        matches!(
            self,
            Algorithm::DpScaffold | Algorithm::DpScaffoldWarm | Algorithm::DpFedavg | Algorithm::DpFedsgd
        )
    }

    pub fn uses_controls(self) -> bool {
        matches!(
            self,
            Algorithm::DpScaffold | Algorithm::DpScaffoldWarm | Algorithm::Scaffold | Algorithm::ScaffoldWarm
        )
    }

    pub fn warm_start(self) -> bool {
        matches!(self, Algorithm::DpScaffoldWarm | Algorithm::ScaffoldWarm)
    }

    pub fn single_pass(self) -> bool {
        matches!(self, Algorithm::DpFedsgd | Algorithm::Fedsgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// No clipping.
    Off,
    Fixed(f64),
    /// Threshold for the next round is the median of this round's
    /// unclipped per-example norms, starting from the given value.
    Median(f64),
}

impl ClipMode {
    pub fn initial(self) -> f64 {
        match self {
            ClipMode::Off => f64::INFINITY,
            ClipMode::Fixed(c) | ClipMode::Median(c) => c,
        }
    }
}

/// Neighbouring relation the noise is calibrated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Datasets differing in one record: `2C / batch`.
    Record,
    /// Datasets differing in one user's data: `2C / s`.
    User,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub local_steps: u64,
    pub user_ratio: f64,
    pub data_ratio: f64,
    #[serde(default = "one")]
    pub eta_g: f64,
    pub eta0: f64,
    #[serde(default)]
    pub sigma_g: f64,
    pub clip: ClipMode,
    #[serde(default = "record")]
    pub sensitivity: SensitivityMode,
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn record() -> SensitivityMode {
    SensitivityMode::Record
}

fn default_l2() -> f64 {
    crate::models::DEFAULT_L2
}

impl TrainConfig {
    /// Config with the overrides implied by the algorithm applied:
    /// non-private variants drop noise and clipping, single-pass variants
    /// take `K = round(1/s)` local steps.
    pub fn effective(&self) -> TrainConfig {
        let mut c = self.clone();
        if !c.algorithm.is_private() {
            c.sigma_g = 0.0;
            c.clip = ClipMode::Off;
        }
        if c.algorithm.single_pass() {
            c.local_steps = (1.0 / c.data_ratio).round().max(1.0) as u64;
        }
        c
    }

    pub fn local_lr(&self) -> f64 {
        self.eta0 / (self.data_ratio * self.local_steps as f64)
    }

    pub fn warm_rounds(&self) -> u64 {
        if self.algorithm.warm_start() {
            (4.0 / self.user_ratio).ceil() as u64
        } else {
            0
        }
    }

    pub fn users_per_round(&self, users: usize) -> usize {
        (self.user_ratio * users as f64 + 1e-9).floor() as usize
    }

    pub fn batch_size(&self, records: usize) -> usize {
        (self.data_ratio * records as f64 + 1e-9).floor() as usize
    }

    /// Checks ranges and that at least one user and one record are drawn.
    pub fn validate(&self, users: usize, records: usize) -> Result<()> {
        let ratio = |v: f64| v > 0.0 && v <= 1.0;
        if !ratio(self.user_ratio) || !ratio(self.data_ratio) {
            return Err(config("user_ratio and data_ratio must lie in (0, 1]"));
        }
        if self.rounds == 0 || self.local_steps == 0 {
            return Err(config("rounds and local_steps must be at least 1"));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0 && self.eta_g.is_finite() && self.eta_g > 0.0) {
            return Err(config("step sizes must be positive"));
        }
        if !(self.sigma_g.is_finite() && self.sigma_g >= 0.0) {
            return Err(config("sigma_g must be a nonnegative number"));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(config("l2_reg must be nonnegative"));
        }
        match self.clip {
            ClipMode::Off => {
                if self.algorithm.is_private() && self.sigma_g > 0.0 {
                    return Err(config("noise without clipping has unbounded sensitivity"));
                }
            }
            ClipMode::Fixed(c) | ClipMode::Median(c) => {
                if !(c > 0.0) {
                    return Err(config("clipping threshold must be positive"));
                }
            }
        }
        if self.users_per_round(users) < 1 {
            return Err(config(format!("floor(l*M) = 0 for l={} and M={users}", self.user_ratio)));
        }
        if self.batch_size(records) < 1 {
            return Err(config(format!("floor(s*R) = 0 for s={} and R={records}", self.data_ratio)));
        }
        Ok(())
    }
}
