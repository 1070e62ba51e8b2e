//! Closed-form coverage probabilities conditional on `(Q, D) = (q, d)`.
//!
//! Given `Q = q`, the interval centres are normal:
//!
//! * `aᵀG_τγ̂` is independent of `Q`, with mean `aᵀγ − v₂₁ᵀV₂₂⁻¹τ` and
//!   variance `v*`;
//! * `aᵀG_ξγ̂` has mean `aᵀγ − w₂₁ᵀW₂₂⁻¹ξ − s₂₁ᵀV₂₂⁻¹(τ − q)` and variance
//!   `w* − s₂₁ᵀV₂₂⁻¹s₂₁`;
//! * `aᵀγ̂` has mean `aᵀγ − v₂₁ᵀV₂₂⁻¹(τ − q)` and variance `v*`.
//!
//! The region is fixed by `(q, d)`, so each conditional probability is a
//! single normal interval probability on the active branch and zero
//! elsewhere. (`τ`, `ξ` here are the scaled slopes `τ/σ`, `ξ/σ`.)

use crate::design::{GeometryBundle, TwoStageConfig};
use crate::dist::norm_interval;
use crate::error::{Error, Result};
use crate::selection::{classify, f_pair, Region};

/// Conditional coverage kernel for one slope point.
#[derive(Debug, Clone)]
pub struct ConditionalKernel<'g> {
    geom: &'g GeometryBundle,
    cfg: TwoStageConfig,
    slopes: Vec<f64>,
    /// `v₂₁ᵀV₂₂⁻¹τ`
    tau_bias: f64,
    /// `w₂₁ᵀW₂₂⁻¹ξ + s₂₁ᵀV₂₂⁻¹τ`
    xi_bias: f64,
    sd_star: f64,
    sd_xi: f64,
    e_tau_scale: f64,
    e_xi_scale: f64,
    e_full_scale: f64,
}

impl<'g> ConditionalKernel<'g> {
    pub fn new(geom: &'g GeometryBundle, cfg: &TwoStageConfig, slopes: &[f64]) -> Result<Self> {
        let k = geom.k;
        if slopes.len() != k {
            return Err(Error::Domain(format!(
                "slope point has {} entries, expected k = {k}",
                slopes.len()
            )));
        }
        if geom.cond_var_xi <= 1e-12 * geom.v11 {
            return Err(Error::ConditioningFailure(format!(
                "w* − s21'V22^-1 s21 = {:e} is not positive",
                geom.cond_var_xi
            )));
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let xi: Vec<f64> = slopes[1..].iter().map(|s| slopes[0] - s).collect();
        let tau_bias = dot(geom.h_tau.as_slice(), slopes);
        let xi_bias = dot(geom.h_xi.as_slice(), &xi) + dot(geom.h_s.as_slice(), slopes);
        let (m, kf) = (geom.m as f64, k as f64);
        Ok(Self {
            geom,
            cfg: *cfg,
            slopes: slopes.to_vec(),
            tau_bias,
            xi_bias,
            sd_star: geom.v_star.sqrt(),
            sd_xi: geom.cond_var_xi.sqrt(),
            e_tau_scale: cfg.t_mk * geom.v_star.sqrt() / (m + kf).sqrt(),
            e_xi_scale: cfg.t_mk1 * geom.w_star.sqrt() / (m + kf - 1.0).sqrt(),
            e_full_scale: cfg.t_m * geom.v11.sqrt() / m.sqrt(),
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn check(&self, q: &[f64], d: f64) -> Result<()> {
        if q.len() != self.geom.k {
            return Err(Error::Domain(format!(
                "q has {} entries, expected k = {}",
                q.len(),
                self.geom.k
            )));
        }
        if !(d > 0.0) {
            return Err(Error::Domain(format!("conditional probabilities need d > 0, got {d}")));
        }
        Ok(())
    }

    #[inline]
    fn tau_branch(&self, d: f64, qv: f64) -> f64 {
        let e = self.e_tau_scale * (d + qv).sqrt();
        norm_interval((self.tau_bias - e) / self.sd_star, (self.tau_bias + e) / self.sd_star)
    }

    #[inline]
    fn xi_branch(&self, q: &[f64], d: f64, qw: f64) -> f64 {
        let hs_q: f64 = self.geom.h_s.iter().zip(q).map(|(h, v)| h * v).sum();
        let centre = self.xi_bias - hs_q;
        let e = self.e_xi_scale * (d + qw).sqrt();
        norm_interval((centre - e) / self.sd_xi, (centre + e) / self.sd_xi)
    }

    #[inline]
    fn full_branch(&self, q: &[f64], d: f64) -> f64 {
        let h_q: f64 = self.geom.h_tau.iter().zip(q).map(|(h, v)| h * v).sum();
        let centre = self.tau_bias - h_q;
        let e = self.e_full_scale * d.sqrt();
        norm_interval((centre - e) / self.sd_star, (centre + e) / self.sd_star)
    }

    /// `Pr(θ ∈ I_τ, A | Q = q, D = d)`.
    pub fn p_tau(&self, q: &[f64], d: f64) -> Result<f64> {
        self.check(q, d)?;
        let (ft, fx, qv, _) = f_pair(self.geom, q, d);
        Ok(match classify(ft, fx, &self.cfg) {
            Region::A => self.tau_branch(d, qv),
            _ => 0.0,
        })
    }

    /// `Pr(θ ∈ I_ξ, B | Q = q, D = d)`.
    pub fn p_xi(&self, q: &[f64], d: f64) -> Result<f64> {
        self.check(q, d)?;
        let (ft, fx, _, qw) = f_pair(self.geom, q, d);
        Ok(match classify(ft, fx, &self.cfg) {
            Region::B => self.xi_branch(q, d, qw),
            _ => 0.0,
        })
    }

    /// `Pr(θ ∈ I, C | Q = q, D = d)`.
    pub fn p_full(&self, q: &[f64], d: f64) -> Result<f64> {
        self.check(q, d)?;
        let (ft, fx, _, _) = f_pair(self.geom, q, d);
        Ok(match classify(ft, fx, &self.cfg) {
            Region::C => self.full_branch(q, d),
            _ => 0.0,
        })
    }

    /// `p_τ + p_ξ + p`; only the branch of the region selected by `(q, d)`
    /// can be nonzero.
    pub fn conditional_cp(&self, q: &[f64], d: f64) -> Result<f64> {
        self.check(q, d)?;
        Ok(self.eval(q, d).1)
    }

    /// Region and conditional coverage, unchecked.
    #[inline]
    pub(crate) fn eval(&self, q: &[f64], d: f64) -> (Region, f64) {
        let (ft, fx, qv, qw) = f_pair(self.geom, q, d);
        let region = classify(ft, fx, &self.cfg);
        let p = match region {
            Region::A => self.tau_branch(d, qv),
            Region::B => self.xi_branch(q, d, qw),
            Region::C => self.full_branch(q, d),
        };
        (region, p)
    }
}
