//! Rényi-DP primitives: Gaussian and subsampled-Gaussian curves, generic
//! subsampling amplification, composition and conversion to (ε, δ)-DP.
//!
//! Curves are tabulated at every integer order `2..=max_order`. Values at
//! real orders come from linear interpolation of the cumulant generating
//! function `K(λ) = (α - 1) ε(α)`, which is convex in λ and therefore an
//! upper bound between integers.

use crate::error::{domain, Error, Result};

/// Largest integer Rényi order tabulated by default.
pub const DEFAULT_MAX_ORDER: u32 = 256;

/// RDP bound tabulated on the contiguous integer orders `2..=max_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct RdpCurve {
    eps: Vec<f64>,
}

impl RdpCurve {
    /// Builds a curve from values at orders `2, 3, ..., eps.len() + 1`.
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::Empty("RDP curve"));
        }
        if let Some(bad) = eps.iter().find(|e| e.is_nan() || **e < 0.0) {
            return Err(domain(format!("RDP epsilon must be nonnegative, got {bad}")));
        }
        Ok(Self { eps })
    }

    pub fn from_fn(max_order: u32, mut f: impl FnMut(u32) -> Result<f64>) -> Result<Self> {
        if max_order < 2 {
            return Err(domain("curve needs at least order 2"));
        }
        let eps = (2..=max_order).map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(eps)
    }

    pub fn zero(max_order: u32) -> Self {
        Self {
            eps: vec![0.0; max_order.saturating_sub(1).max(1) as usize],
        }
    }

    pub fn max_order(&self) -> u32 {
        self.eps.len() as u32 + 1
    }

    pub fn orders(&self) -> impl Iterator<Item = u32> + '_ {
        2..=self.max_order()
    }

    pub fn values(&self) -> &[f64] {
        &self.eps
    }

    /// Tabulated value at an integer order.
    pub fn at(&self, order: u32) -> Option<f64> {
        order
            .checked_sub(2)
            .and_then(|i| self.eps.get(i as usize))
            .copied()
    }

    /// Value at a real order, interpolating the CGF between integer orders.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        rdp_at_real_order(self, alpha)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.orders().zip(self.eps.iter().copied())
    }
}

/// `ln(exp(a_1) + ... + exp(a_n))`, ignoring `-inf` terms.
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// `ln C(n, k)` for `k = 0..=n`, built by the multiplicative recurrence.
fn log_binomials(n: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..=n {
        acc += f64::from(n - k + 1).ln() - f64::from(k).ln();
        out.push(acc);
    }
    out
}

/// RDP of the Gaussian mechanism with sensitivity 1 and variance `sigma2`.
pub fn rdp_gaussian(alpha: f64, sigma2: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(domain(format!("Rényi order must exceed 1, got {alpha}")));
    }
    if !(sigma2 > 0.0) {
        return Err(domain(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(alpha / (2.0 * sigma2))
}

fn check_ratio(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(domain(format!("sampling ratio must lie in [0, 1], got {q}")));
    }
    Ok(())
}

/// Upper bound on the RDP of the Gaussian mechanism applied to a
/// `q`-subsample drawn without replacement, at integer order `alpha >= 2`.
///
/// All terms are accumulated in log space.
pub fn rdp_subsampled_gaussian(alpha: u32, q: f64, sigma2: f64) -> Result<f64> {
    if alpha < 2 {
        return Err(domain(format!("integer order must be >= 2, got {alpha}")));
    }
    check_ratio(q)?;
    if !(sigma2 > 0.0) {
        return Err(domain(format!("noise variance must be positive, got {sigma2}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let lq = q.ln();
    let inv = 1.0 / sigma2;
    let lbin = log_binomials(alpha);
    let mut terms = Vec::with_capacity(alpha as usize);
    terms.push(0.0);
    let second = (std::f64::consts::LN_2 + inv.exp_m1().ln()).min(inv);
    terms.push(std::f64::consts::LN_2 + 2.0 * lq + lbin[2] + second);
    for j in 3..=alpha {
        let jf = f64::from(j);
        terms.push(std::f64::consts::LN_2 + jf * lq + lbin[j as usize] + jf * (jf - 1.0) * inv / 2.0);
    }
    let total = log_sum_exp(&terms);
    if !total.is_finite() {
        return Err(Error::Overflow("subsampled Gaussian RDP"));
    }
    Ok(total / f64::from(alpha - 1))
}

/// Subsampled-Gaussian RDP tabulated on `2..=max_order`.
pub fn subsampled_gaussian_curve(max_order: u32, q: f64, sigma2: f64) -> Result<RdpCurve> {
    RdpCurve::from_fn(max_order, |a| rdp_subsampled_gaussian(a, q, sigma2))
}

/// RDP at a real order `alpha > 1` from integer-order values.
///
/// For `1 < alpha < 2` the lower endpoint is `K(0) = 0`.
pub fn rdp_at_real_order(curve: &RdpCurve, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(domain(format!("Rényi order must exceed 1, got {alpha}")));
    }
    let lo = alpha.floor();
    let hi = alpha.ceil();
    if hi > f64::from(curve.max_order()) {
        return Err(domain(format!(
            "order {alpha} beyond tabulated maximum {}",
            curve.max_order()
        )));
    }
    if lo == hi {
        return Ok(curve.at(lo as u32).expect("order within range"));
    }
    let cgf_lo = if lo < 2.0 {
        0.0
    } else {
        (lo - 1.0) * curve.at(lo as u32).expect("order within range")
    };
    let cgf_hi = (hi - 1.0) * curve.at(hi as u32).expect("order within range");
    let frac = alpha - lo;
    Ok(((1.0 - frac) * cgf_lo + frac * cgf_hi) / (alpha - 1.0))
}

/// RDP of `n` adaptive compositions.
pub fn compose(curve: &RdpCurve, n: u64) -> RdpCurve {
    let n = n as f64;
    RdpCurve {
        eps: curve.eps.iter().map(|e| e * n).collect(),
    }
}

/// Amplification by subsampling without replacement for a generic
/// mechanism with no finite pure-DP bound.
///
/// The second-order term uses `min{4(e^{ε(2)} - 1), 2e^{ε(2)}}` and the
/// higher-order terms carry the mechanism-agnostic factor 2. The result is
/// capped by the input curve, since subsampling never weakens a guarantee.
pub fn subsample_generic(curve: &RdpCurve, q: f64) -> Result<RdpCurve> {
    check_ratio(q)?;
    let max_order = curve.max_order();
    if q == 0.0 {
        return Ok(RdpCurve::zero(max_order));
    }
    let lq = q.ln();
    let eps2 = curve.eps[0];
    let second = if eps2 == 0.0 {
        f64::NEG_INFINITY
    } else {
        (4.0f64.ln() + eps2.exp_m1().ln()).min(std::f64::consts::LN_2 + eps2)
    };
    let mut out = Vec::with_capacity(curve.eps.len());
    let mut terms = Vec::with_capacity(max_order as usize);
    for alpha in 2..=max_order {
        let lbin = log_binomials(alpha);
        terms.clear();
        terms.push(0.0);
        terms.push(2.0 * lq + lbin[2] + second);
        for j in 3..=alpha {
            let jf = f64::from(j);
            let ej = curve.eps[(j - 2) as usize];
            terms.push(std::f64::consts::LN_2 + jf * lq + lbin[j as usize] + (jf - 1.0) * ej);
        }
        let total = log_sum_exp(&terms);
        if total.is_nan() || total == f64::INFINITY {
            return Err(Error::Overflow("generic subsampled RDP"));
        }
        let amplified = total / f64::from(alpha - 1);
        out.push(amplified.min(curve.eps[(alpha - 2) as usize]));
    }
    RdpCurve::new(out)
}

/// Result of converting an RDP curve to (ε, δ)-DP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpConversion {
    pub eps: f64,
    pub alpha: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Smallest ε such that the curve implies (ε, δ)-DP, searched over the
/// integer grid and refined by golden-section search around the best order.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpConversion> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let objective = |alpha: f64, eps: f64| eps + log_inv_delta / (alpha - 1.0);

    let mut best = DpConversion {
        eps: f64::INFINITY,
        alpha: f64::NAN,
    };
    for (order, eps) in curve.iter() {
        let value = objective(f64::from(order), eps);
        if value < best.eps {
            best = DpConversion {
                eps: value,
                alpha: f64::from(order),
            };
        }
    }
    if !best.eps.is_finite() {
        return Ok(best);
    }

    let center = best.alpha;
    let lo = (center - 1.0).max(1.0 + 1e-9);
    let hi = (center + 1.0).min(f64::from(curve.max_order()));
    let (alpha, eps) = golden_min(
        |a| match rdp_at_real_order(curve, a) {
            Ok(e) => objective(a, e),
            Err(_) => f64::INFINITY,
        },
        lo,
        hi,
        60,
    );
    if eps < best.eps {
        best = DpConversion { eps, alpha };
    }
    Ok(best)
}
