//! Tanh-squashed diagonal Gaussian policy arithmetic.

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the log of the tanh Jacobian to keep it finite at |u| large.
pub const TANH_EPS: f64 = 1e-6;
/// Largest emitted action magnitude. `tanh` rounds to exactly 1.0 for
/// |u| > ~19, so squashed actions are pulled just inside the open interval.
pub const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

pub fn clamp_log_std(raw: f64) -> f64 {
    raw.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

pub fn squash(u: f64) -> f64 {
    u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// Diagonal Gaussian log-density of `u` under `N(mu, exp(log_std)^2)`.
pub fn gaussian_log_prob(mu: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &ls), &x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_TWO_PI
        })
        .sum()
}

/// `sum log(1 - tanh(u)^2 + TANH_EPS)`, capped at zero per coordinate so the
/// epsilon never turns the correction positive near `u = 0`.
pub fn tanh_correction(u: &[f64]) -> f64 {
    u.iter()
        .map(|&x| {
            let t = x.tanh();
            (1.0 - t * t + TANH_EPS).ln().min(0.0)
        })
        .sum()
}

/// Derivative of `-log(1 - tanh(u)^2 + TANH_EPS)` (one coordinate of
/// [`tanh_correction`], negated) with respect to `u`.
pub fn neg_correction_grad(u: f64) -> f64 {
    let t = u.tanh();
    let s = 1.0 - t * t;
    if s + TANH_EPS >= 1.0 {
        0.0
    } else {
        2.0 * t * s / (s + TANH_EPS)
    }
}

/// Log-density of the squashed action `tanh(u)`.
pub fn squashed_log_prob(mu: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    gaussian_log_prob(mu, log_std, u) - tanh_correction(u)
}
