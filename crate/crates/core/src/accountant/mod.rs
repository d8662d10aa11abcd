//! Privacy accounting for the two-level subsampled Gaussian pipeline used by
//! DP-SCAFFOLD and DP-FedAvg: `K` data-subsampled noisy gradient steps per
//! selected user, `l`-subsampled users per round and `T` rounds.
//!
//! Towards a third party the per-round aggregate of `lM` noisy contributions
//! behaves like a single subsampled Gaussian with variance `lM σ_g²`, which
//! is then amplified by user sampling. The server sees individual
//! contributions and the selected set, so neither effect applies there.

mod rdp;

pub use rdp::{
    compose, rdp_at_real_order, rdp_gaussian, rdp_subsampled_gaussian, rdp_to_dp,
    subsample_generic, subsampled_gaussian_curve, DpConversion, RdpCurve, DEFAULT_MAX_ORDER,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Parameters of one training run as seen by the accountant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    /// Noise multiplier relative to the sensitivity.
    pub sigma_g: f64,
    /// Local steps per round.
    pub local_steps: u64,
    pub rounds: u64,
    pub user_ratio: f64,
    pub data_ratio: f64,
    pub users: u64,
    /// Records per user (training shard size).
    pub records: u64,
    pub delta: f64,
}

impl MechanismParams {
    /// Default `δ = 1/(M R)`.
    pub fn default_delta(users: u64, records: u64) -> f64 {
        1.0 / (users as f64 * records as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.user_ratio > 0.0 && self.user_ratio <= 1.0) {
            return Err(domain(format!("user ratio must lie in (0, 1], got {}", self.user_ratio)));
        }
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return Err(domain(format!("data ratio must lie in (0, 1], got {}", self.data_ratio)));
        }
        if !(self.sigma_g >= 0.0) {
            return Err(domain(format!("noise multiplier must be >= 0, got {}", self.sigma_g)));
        }
        if self.local_steps == 0 || self.rounds == 0 || self.users == 0 || self.records == 0 {
            return Err(domain("K, T, M and R must all be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(domain(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    fn require_noise(&self) -> Result<()> {
        if !(self.sigma_g > 0.0) {
            return Err(domain("accounting requires a positive noise multiplier"));
        }
        Ok(())
    }

    fn with_rounds(&self, rounds: u64) -> Self {
        Self { rounds, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccountingPath {
    #[serde(rename = "RDP_PATH")]
    Rdp,
    #[serde(rename = "DP_PATH")]
    Dp,
}

/// (ε, δ) guarantees towards a third party and towards the server.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub eps_third_party: f64,
    pub eps_server: f64,
    pub delta: f64,
    pub delta_server: f64,
    pub best_alpha: f64,
    pub path: AccountingPath,
    pub warm_rounds: u64,
}

/// Per-round third-party RDP curve, before composition over rounds.
pub fn third_party_round_curve(p: &MechanismParams) -> Result<RdpCurve> {
    p.validate()?;
    p.require_noise()?;
    let aggregate_var = p.user_ratio * p.users as f64 * p.sigma_g * p.sigma_g;
    let local = subsampled_gaussian_curve(DEFAULT_MAX_ORDER, p.data_ratio, aggregate_var)?;
    subsample_generic(&compose(&local, p.local_steps), p.user_ratio)
}

/// Per-round RDP curve of one user's contribution as seen by the server.
pub fn server_round_curve(p: &MechanismParams) -> Result<RdpCurve> {
    p.validate()?;
    p.require_noise()?;
    let local = subsampled_gaussian_curve(DEFAULT_MAX_ORDER, p.data_ratio, p.sigma_g * p.sigma_g)?;
    Ok(compose(&local, p.local_steps))
}

/// Third-party guarantee after `T + warm_rounds` rounds.
pub fn third_party_epsilon(p: &MechanismParams, warm_rounds: u64) -> Result<DpConversion> {
    let per_round = third_party_round_curve(p)?;
    rdp_to_dp(&compose(&per_round, p.rounds + warm_rounds), p.delta)
}

/// Server guarantee after `T + warm_rounds` rounds.
pub fn server_epsilon(p: &MechanismParams, warm_rounds: u64) -> Result<DpConversion> {
    let per_round = server_round_curve(p)?;
    rdp_to_dp(&compose(&per_round, p.rounds + warm_rounds), p.delta)
}

/// Third-party report through the RDP pipeline; the server guarantee is
/// included for the same parameters.
pub fn third_party_report(p: &MechanismParams, warm_rounds: u64) -> Result<PrivacyReport> {
    let third = third_party_epsilon(p, warm_rounds)?;
    let server = server_epsilon(p, warm_rounds)?;
    Ok(PrivacyReport {
        eps_third_party: third.eps,
        eps_server: server.eps,
        delta: p.delta,
        delta_server: p.delta,
        best_alpha: third.alpha,
        path: AccountingPath::Rdp,
        warm_rounds,
    })
}

/// Same report keyed on the server guarantee. `best_alpha` is the order
/// minimizing the server bound.
pub fn server_report(p: &MechanismParams, warm_rounds: u64) -> Result<PrivacyReport> {
    let third = third_party_epsilon(p, warm_rounds)?;
    let server = server_epsilon(p, warm_rounds)?;
    Ok(PrivacyReport {
        eps_third_party: third.eps,
        eps_server: server.eps,
        delta: p.delta,
        delta_server: p.delta,
        best_alpha: server.alpha,
        path: AccountingPath::Rdp,
        warm_rounds,
    })
}

/// Third-party guarantee as a function of the number of rounds, with the
/// per-round curve computed once.
#[derive(Clone, Debug)]
pub struct RoundAccountant {
    per_round: RdpCurve,
    delta: f64,
}

impl RoundAccountant {
    /// The `rounds` field of `p` is ignored.
    pub fn new(p: &MechanismParams) -> Result<Self> {
        Ok(Self {
            per_round: third_party_round_curve(&p.with_rounds(1))?,
            delta: p.delta,
        })
    }

    pub fn epsilon_after(&self, rounds: u64) -> Result<f64> {
        Ok(rdp_to_dp(&compose(&self.per_round, rounds), self.delta)?.eps)
    }
}

/// Number of points of the uniform split grid over `(0, 1)`.
pub const SPLIT_GRID: usize = 99;

struct DpPathOptimum {
    eps: f64,
    alpha: f64,
    split: f64,
}

/// Strong composition over rounds of the per-round (ε_a, δ') guarantee,
/// optionally amplified by user sampling. Minimized over the order grid
/// and the δ split `δ' = xδ/(Tl)`, `δ'' = (1-x)δ`.
fn strong_composition_search(
    local: &RdpCurve,
    p: &MechanismParams,
    amplify_users: bool,
) -> Result<DpPathOptimum> {
    let t = p.rounds as f64;
    let l = p.user_ratio;
    let mut best = DpPathOptimum {
        eps: f64::INFINITY,
        alpha: f64::NAN,
        split: f64::NAN,
    };
    let objective = |alpha: f64, x: f64| -> Result<f64> {
        let rdp = local.eval(alpha)?;
        let eps_a = rdp + (t * l / (x * p.delta)).ln() / (alpha - 1.0);
        let eps_star = if amplify_users {
            (l * eps_a.exp_m1()).ln_1p()
        } else {
            eps_a
        };
        let log_inv = -((1.0 - x) * p.delta).ln();
        Ok(eps_star * (2.0 * t * log_inv).sqrt() + t * eps_star * eps_star.exp_m1())
    };
    for i in 1..=SPLIT_GRID {
        let x = i as f64 / (SPLIT_GRID + 1) as f64;
        let mut best_order = None;
        for order in local.orders() {
            let value = objective(f64::from(order), x)?;
            if value < best.eps {
                best = DpPathOptimum {
                    eps: value,
                    alpha: f64::from(order),
                    split: x,
                };
                best_order = Some(order);
            }
        }
        if let Some(order) = best_order {
            // local refinement of the order at this split
            let lo = (f64::from(order) - 1.0).max(1.0 + 1e-9);
            let hi = (f64::from(order) + 1.0).min(f64::from(local.max_order()));
            let steps = 200;
            for k in 0..=steps {
                let alpha = lo + (hi - lo) * k as f64 / steps as f64;
                let v = objective(alpha, x)?;
                if v < best.eps {
                    best.eps = v;
                    best.alpha = alpha;
                }
            }
        }
    }
    Ok(best)
}

/// Looser cross-check bound: classical amplification by subsampling over
/// users plus strong composition over rounds.
///
/// The server guarantee uses the same composition without user
/// amplification or aggregation, and holds with
/// `δ_s = xδ/l + (1 - x)δ` at the optimal split (`δ/2 (1/l + 1)` for `x = 1/2`).
pub fn dp_path_report(p: &MechanismParams) -> Result<PrivacyReport> {
    p.validate()?;
    p.require_noise()?;
    let aggregate_var = p.user_ratio * p.users as f64 * p.sigma_g * p.sigma_g;
    let third_local = compose(
        &subsampled_gaussian_curve(DEFAULT_MAX_ORDER, p.data_ratio, aggregate_var)?,
        p.local_steps,
    );
    let third = strong_composition_search(&third_local, p, true)?;
    let server_local = server_round_curve(p)?;
    let server = strong_composition_search(&server_local, p, false)?;
    let delta_server = if server.split.is_nan() {
        p.delta / 2.0 * (1.0 / p.user_ratio + 1.0)
    } else {
        server.split * p.delta / p.user_ratio + (1.0 - server.split) * p.delta
    };
    Ok(PrivacyReport {
        eps_third_party: third.eps,
        eps_server: server.eps,
        delta: p.delta,
        delta_server,
        best_alpha: third.alpha,
        path: AccountingPath::Dp,
        warm_rounds: 0,
    })
}

/// Largest number of rounds whose third-party guarantee (with the warm
/// rounds composed in) stays within `budget_eps`. The `rounds` field of
/// `p` is ignored. Returns 0 if a single round already exceeds the budget.
pub fn max_rounds(budget_eps: f64, p: &MechanismParams, warm_rounds: u64) -> Result<u64> {
    let acc = RoundAccountant::new(p)?;
    let eps_at = |t: u64| acc.epsilon_after(t + warm_rounds);
    if eps_at(1)? > budget_eps {
        return Ok(0);
    }
    const LIMIT: u64 = 1 << 40;
    let mut lo = 1u64;
    let mut hi = 2u64;
    while eps_at(hi)? <= budget_eps {
        lo = hi;
        hi *= 2;
        if hi > LIMIT {
            return Err(Error::Unbounded("maximal round count"));
        }
    }
    // eps(lo) <= budget < eps(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps_at(mid)? <= budget_eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Order-of-magnitude noise multiplier for an (ε, δ) budget, constants
/// omitted: `s sqrt(l T K log(2Tl/δ) log(2/δ)) / (ε sqrt(M))`.
pub fn asymptotic_sigma(
    eps: f64,
    delta: f64,
    rounds: u64,
    local_steps: u64,
    user_ratio: f64,
    data_ratio: f64,
    users: u64,
) -> f64 {
    let t = rounds as f64;
    let inner = user_ratio
        * t
        * local_steps as f64
        * (2.0 * t * user_ratio / delta).ln()
        * (2.0 / delta).ln();
    data_ratio * inner.sqrt() / (eps * (users as f64).sqrt())
}
