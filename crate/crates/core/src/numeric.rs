//! Small numeric helpers shared by the model modules.

/// Activation `σ(x) = (1 + tanh(x/2)) / 2`, the logistic function written
/// through `tanh`.
///
/// The result is clamped to the open interval (0, 1): for |x| beyond ~37 the
/// unclamped value rounds to exactly 0 or 1 in `f64`.
#[inline]
pub fn sigma(x: f64) -> f64 {
    let s = 0.5 * (1.0 + (0.5 * x).tanh());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`, stable for large |x|.
#[inline]
pub fn log_sigma(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln Σ exp(x_i)` with max-subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln Γ(n + 1)` for small integer `n`, summed exactly from logs.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Nearest-rank percentile of an ascending-sorted slice: the smallest value
/// such that at least `p`% of the samples are ≤ it.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}
