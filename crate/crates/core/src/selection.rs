//! The two-stage F-test procedure and the coverage events of the three
//! confidence intervals, all in scale-free units: `γ = β/σ`, `Q = τ̂/σ`,
//! `D = mΣ̂²/σ²`.
//!
//! Interval membership is evaluated through the deviation `γ̂ − γ` and the
//! true slopes only, so the intercept part of `γ` never enters on its own.

use std::fmt;

use crate::design::{GeometryBundle, TwoStageConfig};
use crate::error::{Error, Result};

/// `γ̂ = β̂/σ`, its slope part `Q`, and `D = mΣ̂²/σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSufficientStats {
    gamma_hat: Vec<f64>,
    d: f64,
}

impl ScaledSufficientStats {
    pub fn new(gamma_hat: Vec<f64>, d: f64) -> Result<Self> {
        if gamma_hat.len() < 4 || !gamma_hat.len().is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "gamma_hat must have even length 2k ≥ 4, got {}",
                gamma_hat.len()
            )));
        }
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("D must be finite and non-negative, got {d}")));
        }
        Ok(Self { gamma_hat, d })
    }

    pub fn gamma_hat(&self) -> &[f64] {
        &self.gamma_hat
    }

    /// `Q = C_τᵀγ̂`, the last `k` entries of `γ̂`.
    pub fn q(&self) -> &[f64] {
        &self.gamma_hat[self.gamma_hat.len() / 2..]
    }

    pub fn d(&self) -> f64 {
        self.d
    }
}

/// Cell of the partition induced by the two tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// Stage 1 accepts: all slopes zero.
    A,
    /// Stage 1 rejects, Stage 2 accepts: equal slopes.
    B,
    /// Both reject: full model.
    C,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::A => "A",
            Region::B => "B",
            Region::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOutcome {
    pub region: Region,
    pub f_tau: f64,
    pub f_xi: f64,
}

/// Region for given F statistics. Ties accept the null.
#[inline]
pub fn classify(f_tau: f64, f_xi: f64, cfg: &TwoStageConfig) -> Region {
    if f_tau <= cfg.l_tau {
        Region::A
    } else if f_xi <= cfg.l_xi {
        Region::B
    } else {
        Region::C
    }
}

#[inline]
pub(crate) fn f_pair(geom: &GeometryBundle, q: &[f64], d: f64) -> (f64, f64, f64, f64) {
    let m = geom.m as f64;
    let k = geom.k as f64;
    let qv = geom.tau_form(q);
    let qw = geom.xi_form(q);
    ((m / k) * qv / d, (m / (k - 1.0)) * qw / d, qv, qw)
}

/// `(F_τ, F_ξ)` computed from `(Q, D)`.
pub fn f_statistics(stats: &ScaledSufficientStats, geom: &GeometryBundle) -> Result<(f64, f64)> {
    check_dims(stats, geom)?;
    if stats.d <= 0.0 {
        return Err(Error::Domain("F statistics need D > 0".into()));
    }
    let (f_tau, f_xi, _, _) = f_pair(geom, stats.q(), stats.d);
    Ok((f_tau, f_xi))
}

pub fn select_region(
    stats: &ScaledSufficientStats,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
) -> Result<SelectionOutcome> {
    let (f_tau, f_xi) = f_statistics(stats, geom)?;
    Ok(SelectionOutcome { region: classify(f_tau, f_xi, cfg), f_tau, f_xi })
}

fn check_dims(stats: &ScaledSufficientStats, geom: &GeometryBundle) -> Result<()> {
    if stats.gamma_hat.len() != 2 * geom.k {
        return Err(Error::Domain(format!(
            "gamma_hat has length {}, geometry expects {}",
            stats.gamma_hat.len(),
            2 * geom.k
        )));
    }
    Ok(())
}

fn check_gamma(gamma: &[f64], geom: &GeometryBundle) -> Result<()> {
    if gamma.len() != 2 * geom.k {
        return Err(Error::Domain(format!(
            "gamma has length {}, geometry expects {}",
            gamma.len(),
            2 * geom.k
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `aᵀG_τγ̂ − aᵀγ = (G_τᵀa)ᵀ(γ̂ − γ) − v₂₁ᵀV₂₂⁻¹τ`.
#[inline]
fn tau_offset(geom: &GeometryBundle, dev: &[f64], slopes: &[f64]) -> f64 {
    dot(geom.a_g_tau.as_slice(), dev) - dot(geom.h_tau.as_slice(), slopes)
}

/// `aᵀG_ξγ̂ − aᵀγ = (G_ξᵀa)ᵀ(γ̂ − γ) − w₂₁ᵀW₂₂⁻¹ξ`.
#[inline]
fn xi_offset(geom: &GeometryBundle, dev: &[f64], slopes: &[f64]) -> f64 {
    let h = geom.h_xi.as_slice();
    let xi_term: f64 = (1..slopes.len()).map(|j| h[j - 1] * (slopes[0] - slopes[j])).sum();
    dot(geom.a_g_xi.as_slice(), dev) - xi_term
}

#[inline]
fn tau_half_width(geom: &GeometryBundle, cfg: &TwoStageConfig, d: f64, qv: f64) -> f64 {
    let r = (geom.m + geom.k) as f64;
    cfg.t_mk * ((d + qv) / r).sqrt() * geom.v_star.sqrt()
}

#[inline]
fn xi_half_width(geom: &GeometryBundle, cfg: &TwoStageConfig, d: f64, qw: f64) -> f64 {
    let r = (geom.m + geom.k - 1) as f64;
    cfg.t_mk1 * ((d + qw) / r).sqrt() * geom.w_star.sqrt()
}

#[inline]
fn full_half_width(geom: &GeometryBundle, cfg: &TwoStageConfig, d: f64) -> f64 {
    cfg.t_m * (d / geom.m as f64).sqrt() * geom.v11.sqrt()
}

/// Region and coverage for one draw, given the deviation `γ̂ − γ`, `Q`, `D`
/// and the true slopes. This is the hot path of the naive estimator.
#[inline]
pub(crate) fn coverage_from_deviation(
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    dev: &[f64],
    q: &[f64],
    d: f64,
    slopes: &[f64],
) -> (Region, bool) {
    let (f_tau, f_xi, qv, qw) = f_pair(geom, q, d);
    let region = classify(f_tau, f_xi, cfg);
    let covered = match region {
        Region::A => tau_offset(geom, dev, slopes).abs() <= tau_half_width(geom, cfg, d, qv),
        Region::B => xi_offset(geom, dev, slopes).abs() <= xi_half_width(geom, cfg, d, qw),
        Region::C => dot(geom.a.as_slice(), dev).abs() <= full_half_width(geom, cfg, d),
    };
    (region, covered)
}

fn deviation(stats: &ScaledSufficientStats, gamma: &[f64]) -> Vec<f64> {
    stats.gamma_hat.iter().zip(gamma).map(|(h, g)| h - g).collect()
}

/// `aᵀγ ∈ [aᵀG_τγ̂ ± t(m+k)·√((D + QᵀV₂₂⁻¹Q)/(m+k))·√v*]`.
pub fn covers_tau(
    stats: &ScaledSufficientStats,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    gamma: &[f64],
) -> Result<bool> {
    check_dims(stats, geom)?;
    check_gamma(gamma, geom)?;
    let dev = deviation(stats, gamma);
    let qv = geom.tau_form(stats.q());
    let slopes = &gamma[geom.k..];
    Ok(tau_offset(geom, &dev, slopes).abs() <= tau_half_width(geom, cfg, stats.d, qv))
}

/// `aᵀγ ∈ [aᵀG_ξγ̂ ± t(m+k−1)·√((D + QᵀUᵀW₂₂⁻¹UQ)/(m+k−1))·√w*]`.
pub fn covers_xi(
    stats: &ScaledSufficientStats,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    gamma: &[f64],
) -> Result<bool> {
    check_dims(stats, geom)?;
    check_gamma(gamma, geom)?;
    let dev = deviation(stats, gamma);
    let qw = geom.xi_form(stats.q());
    let slopes = &gamma[geom.k..];
    Ok(xi_offset(geom, &dev, slopes).abs() <= xi_half_width(geom, cfg, stats.d, qw))
}

/// `aᵀγ ∈ [aᵀγ̂ ± t(m)·√(D/m)·√v₁₁]`.
pub fn covers_full(
    stats: &ScaledSufficientStats,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    gamma: &[f64],
) -> Result<bool> {
    check_dims(stats, geom)?;
    check_gamma(gamma, geom)?;
    let dev = deviation(stats, gamma);
    Ok(dot(geom.a.as_slice(), &dev).abs() <= full_half_width(geom, cfg, stats.d))
}

/// Whether the interval chosen by the two-stage procedure covers `θ`.
pub fn coverage_indicator(
    stats: &ScaledSufficientStats,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    gamma: &[f64],
) -> Result<bool> {
    match select_region(stats, geom, cfg)?.region {
        Region::A => covers_tau(stats, geom, cfg, gamma),
        Region::B => covers_xi(stats, geom, cfg, gamma),
        Region::C => covers_full(stats, geom, cfg, gamma),
    }
}
