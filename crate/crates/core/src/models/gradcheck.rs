use crate::scalar::{norm_sq, Real};

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference_grad<S: Real>(f: impl Fn(&[S]) -> S, x: &[S], h: f64) -> Vec<S> {
    let h = S::of(h);
    let two = S::of(2.0);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (two * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error<S: Real>(a: &[S], b: &[S]) -> f64 {
    let diff: Vec<S> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let scale = norm_sq(a).sqrt().max(norm_sq(b).sqrt()).to_f64_lossy();
    if scale == 0.0 {
        return 0.0;
    }
    norm_sq(&diff).sqrt().to_f64_lossy() / scale
}

/// Largest [`relative_error`] over pairs of gradients.
pub fn max_relative_error<S: Real>(pairs: &[(Vec<S>, Vec<S>)]) -> f64 {
    pairs
        .iter()
        .map(|(a, b)| relative_error(a, b))
        .fold(0.0, f64::max)
}
