//! Standard normal CDF and interval probabilities.
//!
//! `libm::erfc` is accurate to a few ulps over the whole real line, which
//! keeps far-tail cell masses meaningful (differences are taken on the side
//! of the distribution where both tails are small).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Φ(x).
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), computed without cancellation.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// P(a ≤ Z ≤ b) for a standard normal `Z`.
#[inline]
pub fn std_normal_interval(a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let p = if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    };
    p.max(0.0)
}

/// Probability that `N(mean, std²)` falls in `[lo, hi)` (or `[lo, hi]` when
/// `closed_upper`). A zero deviation is a point mass at `mean`.
#[inline]
pub fn interval_probability(lo: f64, hi: f64, mean: f64, std: f64, closed_upper: bool) -> f64 {
    if std == 0.0 {
        let inside = mean >= lo && (mean < hi || (closed_upper && mean <= hi));
        return if inside { 1.0 } else { 0.0 };
    }
    std_normal_interval((lo - mean) / std, (hi - mean) / std)
}
