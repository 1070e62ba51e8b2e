//! Distribution functions needed for the preliminary tests and the intervals:
//! the standard normal CDF, regularized incomplete beta, central F and t
//! tail probabilities, their quantiles, and the noncentral F CDF.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Φ(hi) − Φ(lo)`, clamped at zero. For arguments in the upper tail the
/// difference is taken between survival values to keep precision.
#[inline]
pub fn norm_interval(lo: f64, hi: f64) -> f64 {
    let diff = if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    };
    diff.max(0.0)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `Pr(F > x)` for `F ~ F(d1, d2)`.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))
}

/// `Pr(F ≤ x)` for `F ~ F(d1, d2)`.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    beta_reg(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
}

/// Two-sided tail `Pr(|T| > t)` for `T ~ t_r`.
pub fn t_two_sided_sf(t: f64, r: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * r, 0.5, r / (r + t * t))
}

/// Bisection for the root of a decreasing function `tail(x) = target` on
/// `[0, ∞)`. The bracket is grown geometrically and then halved until its
/// width is below `1e-13` relative (and never wider than `1e-10` absolute
/// for quantiles below 1000).
fn bisect_decreasing(tail: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while tail(hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn check_level(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must lie in (0, 1), got {p}")))
    }
}

fn check_df(df: f64, what: &str) -> Result<()> {
    if df.is_finite() && df > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive, got {df}")))
    }
}

/// Upper `sig` quantile of `F(d1, d2)`: the `ℓ` with `Pr(F > ℓ) = sig`.
pub fn f_upper_quantile(sig: f64, d1: f64, d2: f64) -> Result<f64> {
    check_level(sig, "significance level")?;
    check_df(d1, "numerator degrees of freedom")?;
    check_df(d2, "denominator degrees of freedom")?;
    Ok(bisect_decreasing(|x| f_sf(x, d1, d2), sig))
}

/// The `t(r)` with `Pr(T ≤ t(r)) = 1 − α/2` for `T ~ t_r`.
pub fn t_two_sided_quantile(alpha: f64, r: f64) -> Result<f64> {
    check_level(alpha, "alpha")?;
    check_df(r, "t degrees of freedom")?;
    Ok(bisect_decreasing(|t| t_two_sided_sf(t, r), alpha))
}

/// CDF of the noncentral `F(d1, d2, λ)` distribution, as a Poisson(λ/2)
/// mixture of central beta probabilities. Terms are summed outward from the
/// Poisson mode using the recurrence `I_y(a+1, b) = I_y(a, b) − y^a (1−y)^b / (a B(a, b))`.
pub fn noncentral_f_cdf(x: f64, d1: f64, d2: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if lambda <= 0.0 {
        return f_cdf(x, d1, d2);
    }
    let y = d1 * x / (d1 * x + d2);
    let b = 0.5 * d2;
    let half = 0.5 * lambda;
    let mode = half.floor();
    let width = (12.0 * half.sqrt() + 40.0).ceil();
    let j_lo = (mode - width).max(0.0) as u64;
    let j_hi = (mode + width) as u64;

    let ln_pois = |j: f64| -half + j * half.ln() - ln_gamma(j + 1.0);
    // beta term y^a (1-y)^b / (a B(a,b)) in log space
    let ln_term = |a: f64| a * y.ln() + b * (1.0 - y).ln() - a.ln() - ln_beta(a, b);

    let a0 = 0.5 * d1 + mode;
    let i_mode = beta_reg(a0, b, y);
    let mut total = ln_pois(mode).exp() * i_mode;

    // forward
    let mut i_cur = i_mode;
    let mut j = mode as u64;
    while j < j_hi {
        let a = 0.5 * d1 + j as f64;
        i_cur = (i_cur - ln_term(a).exp()).max(0.0);
        j += 1;
        total += ln_pois(j as f64).exp() * i_cur;
    }
    // backward
    let mut i_cur = i_mode;
    let mut j = mode as u64;
    while j > j_lo {
        j -= 1;
        let a = 0.5 * d1 + j as f64;
        i_cur = (i_cur + ln_term(a).exp()).min(1.0);
        total += ln_pois(j as f64).exp() * i_cur;
    }
    total.clamp(0.0, 1.0)
}
