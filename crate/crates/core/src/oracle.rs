//! Raw-data reference pipeline: simulate `Y = Xβ + ε`, fit by least
//! squares, test on residual sums of squares and build the intervals from
//! their textbook formulas. Slow on purpose; used to cross-check the
//! scale-free event algebra of [`crate::selection`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::design::{GeometryBundle, TwoStageConfig};
use crate::error::{Error, Result};
use crate::montecarlo::{chunk_rng, naive_indicator_from_normals, normal, CoverageEstimate, Estimator, SlopePoint, CHUNK_RUNS};
use crate::selection::Region;

/// Full and constrained least-squares fits of one data set.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFit {
    pub beta_hat: DVector<f64>,
    pub rss_full: f64,
    /// `G_τβ̂`, the fit under `τ = 0`.
    pub beta_tau: DVector<f64>,
    pub rss_tau: f64,
    /// `G_ξβ̂`, the fit under `ξ = 0`.
    pub beta_xi: DVector<f64>,
    pub rss_xi: f64,
    pub sigma2_hat: f64,
}

/// Closed intervals `[lo, hi]` for `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawIntervals {
    pub tau: (f64, f64),
    pub xi: (f64, f64),
    pub full: (f64, f64),
}

fn design_of(geom: &GeometryBundle) -> Result<&DMatrix<f64>> {
    geom.design
        .as_ref()
        .ok_or_else(|| Error::Domain("geometry was built without a design matrix".into()))
}

fn rss(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (y - x * b).norm_squared()
}

/// Fits the data `Y = Xβ + ε` for a given noise vector `ε`.
pub fn fit_from_noise(beta: &[f64], geom: &GeometryBundle, eps: &[f64]) -> Result<RawFit> {
    let x = design_of(geom)?;
    if beta.len() != x.ncols() || eps.len() != x.nrows() {
        return Err(Error::Domain(format!(
            "expected β of length {} and ε of length {}",
            x.ncols(),
            x.nrows()
        )));
    }
    let y = x * DVector::from_column_slice(beta) + DVector::from_column_slice(eps);
    let chol = (x.transpose() * x).cholesky().ok_or(Error::SingularDesign)?;
    let beta_hat = chol.solve(&(x.transpose() * &y));
    let beta_tau = &geom.g_tau * &beta_hat;
    let beta_xi = &geom.g_xi * &beta_hat;
    let rss_full = rss(x, &y, &beta_hat);
    Ok(RawFit {
        rss_tau: rss(x, &y, &beta_tau),
        rss_xi: rss(x, &y, &beta_xi),
        sigma2_hat: rss_full / geom.m as f64,
        rss_full,
        beta_hat,
        beta_tau,
        beta_xi,
    })
}

/// Draws `ε ~ N(0, σ²I)` and fits.
pub fn simulate_and_fit<R: Rng + ?Sized>(
    beta: &[f64],
    sigma: f64,
    geom: &GeometryBundle,
    rng: &mut R,
) -> Result<RawFit> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("σ must be positive, got {sigma}")));
    }
    let n = design_of(geom)?.nrows();
    let eps: Vec<f64> = (0..n).map(|_| sigma * normal(rng)).collect();
    fit_from_noise(beta, geom, &eps)
}

impl RawFit {
    /// `F_τ = ((R(β̂_τ) − R(β̂))/k) / Σ̂²`.
    pub fn f_tau(&self, k: usize) -> f64 {
        (self.rss_tau - self.rss_full) / k as f64 / self.sigma2_hat
    }

    /// `F_ξ = ((R(β̂_ξ) − R(β̂))/(k − 1)) / Σ̂²`.
    pub fn f_xi(&self, k: usize) -> f64 {
        (self.rss_xi - self.rss_full) / (k - 1) as f64 / self.sigma2_hat
    }

    pub fn region(&self, cfg: &TwoStageConfig) -> Region {
        let k = cfg.k;
        if self.f_tau(k) <= cfg.l_tau {
            Region::A
        } else if self.f_xi(k) <= cfg.l_xi {
            Region::B
        } else {
            Region::C
        }
    }

    pub fn intervals(&self, geom: &GeometryBundle, cfg: &TwoStageConfig) -> RawIntervals {
        let (m, k) = (geom.m as f64, geom.k as f64);
        let a = &geom.a;
        let ci = |centre: f64, half: f64| (centre - half, centre + half);
        RawIntervals {
            tau: ci(
                a.dot(&self.beta_tau),
                cfg.t_mk * (self.rss_tau / (m + k)).sqrt() * geom.v_star.sqrt(),
            ),
            xi: ci(
                a.dot(&self.beta_xi),
                cfg.t_mk1 * (self.rss_xi / (m + k - 1.0)).sqrt() * geom.w_star.sqrt(),
            ),
            full: ci(a.dot(&self.beta_hat), cfg.t_m * geom.v11.sqrt() * self.sigma2_hat.sqrt()),
        }
    }

    /// Whether the interval chosen by the two-stage procedure contains `θ`.
    pub fn covers(&self, theta: f64, geom: &GeometryBundle, cfg: &TwoStageConfig) -> (Region, bool) {
        let iv = self.intervals(geom, cfg);
        let region = self.region(cfg);
        let (lo, hi) = match region {
            Region::A => iv.tau,
            Region::B => iv.xi,
            Region::C => iv.full,
        };
        (region, lo <= theta && theta <= hi)
    }

    /// Relative errors of `R(β̂_τ) = R(β̂) + τ̂ᵀV₂₂⁻¹τ̂` and the analogous
    /// `ξ` identity, both in units of `σ²`-free raw data.
    pub fn rss_identity_errors(&self, geom: &GeometryBundle) -> (f64, f64) {
        let tau_hat: Vec<f64> = self.beta_hat.as_slice()[geom.k..].to_vec();
        let qv = geom.tau_form(&tau_hat);
        let qw = geom.xi_form(&tau_hat);
        (
            (self.rss_tau - (self.rss_full + qv)).abs() / self.rss_tau,
            (self.rss_xi - (self.rss_full + qw)).abs() / self.rss_xi,
        )
    }
}

fn check(beta: &[f64], sigma: f64, geom: &GeometryBundle, runs: usize) -> Result<()> {
    design_of(geom)?;
    if beta.len() != 2 * geom.k {
        return Err(Error::Domain(format!("β must have length 2k = {}", 2 * geom.k)));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("σ must be positive, got {sigma}")));
    }
    if runs < 2 {
        return Err(Error::Domain(format!("need at least 2 runs, got {runs}")));
    }
    Ok(())
}

fn slope_point(beta: &[f64], sigma: f64, k: usize) -> Result<SlopePoint> {
    SlopePoint::new(beta[k..].iter().map(|b| b / sigma).collect())
}

/// Empirical coverage of the two-stage interval over `runs` raw simulations.
pub fn estimate_cp_raw(
    beta: &[f64],
    sigma: f64,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    check(beta, sigma, geom, runs)?;
    let point = slope_point(beta, sigma, geom.k)?;
    let theta = geom.a.dot(&DVector::from_column_slice(beta));
    let n_chunks = runs.div_ceil(CHUNK_RUNS);
    let hits: Vec<Result<usize>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_RUNS.min(runs - c * CHUNK_RUNS);
            let mut rng = chunk_rng(seed, &point, c as u64);
            let mut hits = 0;
            for _ in 0..len {
                let fit = simulate_and_fit(beta, sigma, geom, &mut rng)?;
                hits += fit.covers(theta, geom, cfg).1 as usize;
            }
            Ok(hits)
        })
        .collect();
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    let p = total as f64 / runs as f64;
    Ok(CoverageEstimate {
        estimate: p,
        se: (p * (1.0 - p) / runs as f64).sqrt(),
        runs,
        estimator: Estimator::Naive,
        seed,
        point,
    })
}

/// Run-for-run comparison of the raw pipeline and the naive estimator's
/// scale-free events on common noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnReport {
    pub runs: usize,
    /// Runs where both pipelines pick the same region and agree on coverage.
    pub agreements: usize,
    pub raw_coverage: f64,
    pub naive_coverage: f64,
    /// Largest relative error of the `τ` and `ξ` RSS identities.
    pub max_rss_identity_error: f64,
}

impl CrnReport {
    pub fn agreement_rate(&self) -> f64 {
        self.agreements as f64 / self.runs as f64
    }
}

/// Each run draws `e ~ N(0, I_n)`, fits `Y = Xβ + σe`, and feeds the naive
/// pipeline the same noise as `z = L⁻¹(XᵀX)⁻¹Xᵀe`, `D = eᵀ(I − H)e`.
pub fn crn_agreement(
    beta: &[f64],
    sigma: f64,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CrnReport> {
    check(beta, sigma, geom, runs)?;
    let x = design_of(geom)?;
    let n = x.nrows();
    let point = slope_point(beta, sigma, geom.k)?;
    let theta = geom.a.dot(&DVector::from_column_slice(beta));
    // z = L⁻¹(XᵀX)⁻¹Xᵀe
    let l = &geom.xtx_inv_chol;
    let proj = l
        .clone()
        .solve_lower_triangular(&(&geom.xtx_inv * x.transpose()))
        .ok_or(Error::SingularDesign)?;

    let n_chunks = runs.div_ceil(CHUNK_RUNS);
    let parts: Vec<Result<(usize, usize, usize, f64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_RUNS.min(runs - c * CHUNK_RUNS);
            let mut rng = chunk_rng(seed, &point, c as u64);
            let (mut agree, mut raw_hits, mut naive_hits, mut worst) = (0, 0, 0, 0.0f64);
            for _ in 0..len {
                let e = DVector::from_iterator(n, (0..n).map(|_| normal(&mut rng)));
                let eps: Vec<f64> = e.iter().map(|v| sigma * v).collect();
                let fit = fit_from_noise(beta, geom, &eps)?;
                let (raw_region, raw_cov) = fit.covers(theta, geom, cfg);
                let z = &proj * &e;
                let d = fit.rss_full / (sigma * sigma);
                let (region, cov) = naive_indicator_from_normals(&point, geom, cfg, z.as_slice(), d);
                agree += (region == raw_region && cov == raw_cov) as usize;
                raw_hits += raw_cov as usize;
                naive_hits += cov as usize;
                let (et, ex) = fit.rss_identity_errors(geom);
                worst = worst.max(et).max(ex);
            }
            Ok((agree, raw_hits, naive_hits, worst))
        })
        .collect();
    let (mut agree, mut raw_hits, mut naive_hits, mut worst) = (0, 0, 0, 0.0f64);
    for p in parts {
        let (a, r, nh, w) = p?;
        agree += a;
        raw_hits += r;
        naive_hits += nh;
        worst = worst.max(w);
    }
    Ok(CrnReport {
        runs,
        agreements: agree,
        raw_coverage: raw_hits as f64 / runs as f64,
        naive_coverage: naive_hits as f64 / runs as f64,
        max_rss_identity_error: worst,
    })
}
