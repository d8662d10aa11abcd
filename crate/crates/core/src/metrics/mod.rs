//! Evaluation quantities reported per round: train-loss gap to a reference
//! optimum, test accuracy and gradient dissimilarity across users.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{config, Error, Result};
use crate::models::{correct_count, Model};
use crate::scalar::{norm_sq, Real};

/// Gaps at or below this value are reported as `log10` of it.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `log10(F(x) - F*)`.
    Log10Gap,
    /// Raw regularized train loss `F(x)`.
    Loss,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Log10Gap => "log10_gap",
            MetricKind::Loss => "loss",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub train_loss: f64,
    pub metric_kind: MetricKind,
    /// The gap hit [`GAP_FLOOR`].
    pub gap_floored: bool,
    pub accuracy: f64,
    pub grad_dissim: f64,
    pub grad_log_dissim: f64,
    pub eps_so_far: f64,
    pub clip_c: f64,
}

/// Result of the centralized reference solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum<S> {
    pub params: Vec<S>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Whether the gradient-norm tolerance was reached.
    pub converged: bool,
}

/// Gradient descent with Armijo backtracking. The trial step doubles after
/// each accepted step. Once decreases fall below the resolution of the
/// objective, a step is also accepted if it shrinks the gradient norm.
pub fn minimize<S: Real>(
    mut objective: impl FnMut(&[S]) -> Result<(S, Vec<S>)>,
    x0: Vec<S>,
    tol: f64,
    max_iter: usize,
) -> Result<Optimum<S>> {
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut step = 1.0f64;
    let mut trial = x.clone();
    for it in 0..max_iter {
        let gn2 = norm_sq(&g).to_f64_lossy();
        if gn2.sqrt() <= tol {
            return Ok(Optimum {
                params: x,
                value: f.to_f64_lossy(),
                grad_norm: gn2.sqrt(),
                iterations: it,
                converged: true,
            });
        }
        let mut accepted = false;
        while step > 1e-20 {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = *xi - S::of(step) * *gi;
            }
            let (ft, gt) = objective(&trial)?;
            let (ft64, f64_) = (ft.to_f64_lossy(), f.to_f64_lossy());
            let armijo = ft64 <= f64_ - 0.5 * step * gn2;
            // near the optimum the decrease drops below the resolution of F
            let flat = ft64 <= f64_ + 4.0 * f64::EPSILON * f64_.abs() && norm_sq(&gt).to_f64_lossy() < gn2;
            if armijo || flat {
                std::mem::swap(&mut x, &mut trial);
                f = ft;
                g = gt;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad_norm = norm_sq(&g).sqrt().to_f64_lossy();
    Ok(Optimum {
        params: x,
        value: f.to_f64_lossy(),
        grad_norm,
        iterations: max_iter,
        converged: grad_norm <= tol,
    })
}

/// Per-user regularized train loss and full gradient.
pub fn user_gradients<S: Real, M: Model<S> + ?Sized>(
    data: &FederatedDataset<S>,
    model: &M,
    params: &[S],
) -> Result<Vec<(S, Vec<S>)>> {
    data.users()
        .par_iter()
        .map(|u| model.full_grad(params, &u.train))
        .collect()
}

/// Global objective `F = (1/M) Σ F_i` and its gradient.
pub fn global_loss_grad<S: Real, M: Model<S> + ?Sized>(
    data: &FederatedDataset<S>,
    model: &M,
    params: &[S],
) -> Result<(S, Vec<S>)> {
    Ok(average(&user_gradients(data, model, params)?))
}

fn average<S: Real>(per_user: &[(S, Vec<S>)]) -> (S, Vec<S>) {
    let m = S::of(per_user.len() as f64);
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); per_user[0].1.len()];
    for (l, g) in per_user {
        loss += *l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += *b;
        }
    }
    grad.iter_mut().for_each(|v| *v /= m);
    (loss / m, grad)
}

/// Minimizer of the global objective by full-batch gradient descent from
/// zero, stopping at `‖∇F‖ ≤ 1e-8` or after `1e5` iterations.
pub fn reference_optimum<S: Real, M: Model<S> + ?Sized>(data: &FederatedDataset<S>, model: &M) -> Result<Optimum<S>> {
    minimize(
        |x| global_loss_grad(data, model, x),
        vec![S::zero(); model.num_params()],
        1e-8,
        100_000,
    )
}

/// `(1/M) Σ ‖∇F_i‖² - ‖∇F‖²` and `ln((1/M) Σ ‖∇F_i‖²) - ln ‖∇F‖²`.
fn dissimilarities<S: Real>(per_user: &[(S, Vec<S>)]) -> (f64, f64) {
    let (_, mean_grad) = average(per_user);
    let mean_sq = per_user.iter().map(|(_, g)| norm_sq(g).to_f64_lossy()).sum::<f64>() / per_user.len() as f64;
    let global_sq = norm_sq(&mean_grad).to_f64_lossy();
    (mean_sq - global_sq, mean_sq.ln() - global_sq.ln())
}

pub fn grad_dissimilarity<S: Real, M: Model<S> + ?Sized>(
    data: &FederatedDataset<S>,
    model: &M,
    params: &[S],
) -> Result<f64> {
    Ok(dissimilarities(&user_gradients(data, model, params)?).0)
}

pub fn grad_log_dissimilarity<S: Real, M: Model<S> + ?Sized>(
    data: &FederatedDataset<S>,
    model: &M,
    params: &[S],
) -> Result<f64> {
    Ok(dissimilarities(&user_gradients(data, model, params)?).1)
}

/// Test accuracy over all users' test records.
pub fn test_accuracy<S: Real, M: Model<S> + ?Sized>(data: &FederatedDataset<S>, model: &M, params: &[S]) -> Result<f64> {
    let (correct, total) = data
        .users()
        .par_iter()
        .map(|u| (correct_count(model, params, &u.test), u.test.len()))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(Error::Empty("test records"));
    }
    Ok(correct as f64 / total as f64)
}

/// Reported train metric: `log10` gap when a reference value is known,
/// raw loss otherwise. The flag marks a floored gap.
pub fn train_metric(loss: f64, reference: Option<f64>) -> (f64, MetricKind, bool) {
    match reference {
        Some(f_star) => {
            let gap = loss - f_star;
            if gap > GAP_FLOOR {
                (gap.log10(), MetricKind::Log10Gap, false)
            } else {
                (GAP_FLOOR.log10(), MetricKind::Log10Gap, true)
            }
        }
        None => (loss, MetricKind::Loss, false),
    }
}

/// Snapshot of the evaluation metrics at one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub train_loss: f64,
    pub train_metric: f64,
    pub metric_kind: MetricKind,
    pub gap_floored: bool,
    pub accuracy: f64,
    pub grad_dissim: f64,
    pub grad_log_dissim: f64,
}

pub fn evaluate<S: Real, M: Model<S> + ?Sized>(
    data: &FederatedDataset<S>,
    model: &M,
    params: &[S],
    reference: Option<f64>,
) -> Result<Evaluation> {
    let per_user = user_gradients(data, model, params)?;
    let (loss, _) = average(&per_user);
    let (grad_dissim, grad_log_dissim) = dissimilarities(&per_user);
    let reference = if model.is_convex() { reference } else { None };
    let (train_metric, metric_kind, gap_floored) = train_metric(loss.to_f64_lossy(), reference);
    Ok(Evaluation {
        train_loss: loss.to_f64_lossy(),
        train_metric,
        metric_kind,
        gap_floored,
        accuracy: test_accuracy(data, model, params)?,
        grad_dissim,
        grad_log_dissim,
    })
}

/// Mean accuracy over the last `⌈fraction · T⌉` rounds, `T` being the
/// last recorded round.
pub fn tail_average(trace: &[RoundMetrics], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(config("tail fraction must lie in (0, 1]"));
    }
    let last = trace.last().ok_or(Error::Empty("trace"))?.round;
    let window = (fraction * last as f64).ceil() as u64;
    let tail: Vec<f64> = trace
        .iter()
        .filter(|r| r.round + window > last)
        .map(|r| r.accuracy)
        .collect();
    if tail.is_empty() {
        return Err(Error::Empty("tail window"));
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// First round of the tail window used by [`tail_average`].
pub fn tail_start(rounds: u64, fraction: f64) -> u64 {
    rounds + 1 - ((fraction * rounds as f64).ceil() as u64).min(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Shard, UserData};
    use crate::models::LogReg;

    fn row(round: u64, accuracy: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            train_loss: 0.0,
            metric_kind: MetricKind::Loss,
            gap_floored: false,
            accuracy,
            grad_dissim: 0.0,
            grad_log_dissim: 0.0,
            eps_so_far: 0.0,
            clip_c: 1.0,
        }
    }

    #[test]
    fn tail_average_windows() {
        let constant: Vec<_> = (1..=10).map(|t| row(t, 0.7)).collect();
        assert!((tail_average(&constant, 0.1).unwrap() - 0.7).abs() < 1e-15);
        let ramp: Vec<_> = (1..=10).map(|t| row(t, t as f64)).collect();
        assert_eq!(tail_average(&ramp, 0.1).unwrap(), 10.0);
        assert_eq!(tail_average(&ramp, 1.0).unwrap(), 5.5);
        assert_eq!(tail_start(10, 0.1), 10);
        assert_eq!(tail_start(488, 0.1), 440);
        assert!(tail_average(&[], 0.1).is_err());
    }

    #[test]
    fn quadratic_minimizer_recovered() {
        // f(x) = 1/2 xᵀAx - bᵀx
        let a = [[2.0, 0.5, 0.0], [0.5, 4.0, 1.0], [0.0, 1.0, 9.0]];
        let b = [1.0, -2.0, 3.0];
        let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let ax: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect();
            let f = 0.5 * (0..3).map(|i| x[i] * ax[i]).sum::<f64>() - (0..3).map(|i| b[i] * x[i]).sum::<f64>();
            Ok((f, (0..3).map(|i| ax[i] - b[i]).collect()))
        };
        let opt = minimize(obj, vec![0.0; 3], 1e-10, 100_000).unwrap();
        // numpy.linalg.solve(A, b)
        let want = [0.6715867158671587, -0.6863468634686347, 0.4095940959409594];
        assert!(opt.converged);
        for i in 0..3 {
            assert!((opt.params[i] - want[i]).abs() < 1e-6, "{:?}", opt.params);
        }
    }

    fn dataset(users: Vec<Shard<f64>>) -> FederatedDataset<f64> {
        let dim = users[0].dim();
        FederatedDataset::new(
            users
                .into_iter()
                .map(|s| UserData {
                    test: s.clone(),
                    train: s,
                })
                .collect(),
            dim,
            2,
        )
        .unwrap()
    }

    #[test]
    fn identical_users_have_no_dissimilarity() {
        let s = Shard::new(2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8], vec![0, 1, 1]).unwrap();
        let data = dataset(vec![s.clone(), s.clone(), s]);
        let m = LogReg::new(2, 2, 5e-3);
        let params = vec![0.3, -0.2, 0.1, 0.5, 0.0, 0.1];
        assert!(grad_dissimilarity(&data, &m, &params).unwrap().abs() < 1e-10);
        let single = dataset(vec![Shard::new(2, vec![1.0, 0.0], vec![1]).unwrap()]);
        assert_eq!(grad_dissimilarity(&single, &m, &params).unwrap(), 0.0);
    }

    #[test]
    fn reference_optimum_is_stationary_and_below_iterates() {
        let a = Shard::new(2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8], vec![0, 1, 1]).unwrap();
        let b = Shard::new(2, vec![-1.0, 0.0, 0.8, -0.6], vec![1, 0]).unwrap();
        let data = dataset(vec![a, b]);
        let m = LogReg::new(2, 2, 5e-3);
        let opt = reference_optimum(&data, &m).unwrap();
        assert!(opt.converged);
        assert!(opt.grad_norm <= 1e-8);
        let other = vec![0.1; m.num_params()];
        let (f, _) = global_loss_grad(&data, &m, &other).unwrap();
        assert!(f - opt.value >= -1e-8);
        let eval = evaluate(&data, &m, &opt.params, Some(opt.value)).unwrap();
        assert!(eval.gap_floored);
        assert_eq!(eval.train_metric, -12.0);
    }

    #[test]
    fn gap_metric_and_floor() {
        assert_eq!(train_metric(1.1, Some(0.1)), (0.0, MetricKind::Log10Gap, false));
        assert_eq!(train_metric(0.1, Some(0.1)), (-12.0, MetricKind::Log10Gap, true));
        assert_eq!(train_metric(0.3, None), (0.3, MetricKind::Loss, false));
    }
}
