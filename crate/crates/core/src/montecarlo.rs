//! Monte Carlo coverage estimators.
//!
//! Runs are split into fixed chunks of [`CHUNK_RUNS`]. Each chunk draws from
//! its own ChaCha stream keyed by `(seed, point, chunk)`, chunks are
//! evaluated in parallel and their partial sums are folded in chunk order,
//! so results do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional::ConditionalKernel;
use crate::design::{GeometryBundle, TwoStageConfig};
use crate::error::{Error, Result};
use crate::selection::{classify, coverage_from_deviation, f_pair, Region, ScaledSufficientStats};

/// Runs per RNG stream.
pub const CHUNK_RUNS: usize = 2048;

/// Above this many degrees of freedom `D` is drawn from a gamma sampler
/// instead of a sum of squared normals.
pub const CHI_SQUARE_SUM_MAX_DF: usize = 64;

/// Slope-to-noise ratios `(b₁/σ, …, b_k/σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    values: Vec<f64>,
}

impl SlopePoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("slope point is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("slope point has non-finite entry {v}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(k: usize) -> Self {
        Self { values: vec![0.0; k] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// FNV-1a over the bit patterns, with `-0.0` folded onto `0.0`.
    pub fn stream_key(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            let v = if *v == 0.0 { 0.0 } else { *v };
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl From<SlopePoint> for Vec<f64> {
    fn from(p: SlopePoint) -> Self {
        p.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Naive,
    Conditioned,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Naive => "naive",
            Estimator::Conditioned => "conditioned",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Estimator::Naive),
            "conditioned" => Ok(Estimator::Conditioned),
            other => Err(Error::Parse(format!(
                "unknown estimator {other:?}; expected \"naive\" or \"conditioned\""
            ))),
        }
    }
}

/// Which preliminary test a gate probability refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// `Pr(F_τ ≤ ℓ_τ)`
    Tau,
    /// `Pr(F_ξ ≤ ℓ_ξ)`
    Xi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub estimate: f64,
    pub se: f64,
    pub runs: usize,
    pub estimator: Estimator,
    pub seed: u64,
    pub point: SlopePoint,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The RNG stream for one chunk of runs at one point.
pub fn chunk_rng(seed: u64, point: &SlopePoint, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix(point.stream_key() ^ splitmix(chunk)));
    rng
}

#[inline]
pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `D ~ χ²_m`.
#[inline]
pub(crate) fn chi_square<R: Rng + ?Sized>(rng: &mut R, m: usize) -> f64 {
    if m <= CHI_SQUARE_SUM_MAX_DF {
        (0..m).map(|_| normal(rng).powi(2)).sum()
    } else {
        ChiSquared::new(m as f64).expect("positive df").sample(rng)
    }
}

/// `L z` for lower-triangular `L`, written into `out`.
#[inline]
fn lower_mul(l: &nalgebra::DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    let n = z.len();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[(i, j)] * z[j];
        }
        out[i] = s;
    }
}

fn check_inputs(point: &SlopePoint, geom: &GeometryBundle, runs: usize) -> Result<()> {
    if point.len() != geom.k {
        return Err(Error::Domain(format!(
            "slope point has {} entries, expected k = {}",
            point.len(),
            geom.k
        )));
    }
    if runs < 2 {
        return Err(Error::Domain(format!("need at least 2 runs, got {runs}")));
    }
    Ok(())
}

/// Sums over `runs` draws of a per-draw value, chunked and reduced in order.
fn chunked_sum<F>(runs: usize, seed: u64, point: &SlopePoint, per_chunk: F) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng, usize) -> (f64, f64) + Sync,
{
    let n_chunks = runs.div_ceil(CHUNK_RUNS);
    let partials: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_RUNS.min(runs - c * CHUNK_RUNS);
            let mut rng = chunk_rng(seed, point, c as u64);
            per_chunk(&mut rng, len)
        })
        .collect();
    partials
        .into_iter()
        .fold((0.0, 0.0), |(s, ss), (a, b)| (s + a, ss + b))
}

/// One draw of `(γ̂, D)`: `γ̂ = γ + L z` with `LLᵀ = (XᵀX)⁻¹` and an
/// independent `D ~ χ²_m`. `gamma` is the full `2k`-vector.
pub fn sample_stats<R: Rng + ?Sized>(
    gamma: &[f64],
    geom: &GeometryBundle,
    rng: &mut R,
) -> Result<ScaledSufficientStats> {
    let p = 2 * geom.k;
    let z: Vec<f64> = (0..p).map(|_| normal(rng)).collect();
    let d = chi_square(rng, geom.m);
    stats_from_normals(gamma, geom, &z, d)
}

/// `γ̂ = γ + L z` for a given standard-normal vector `z`.
pub fn stats_from_normals(
    gamma: &[f64],
    geom: &GeometryBundle,
    z: &[f64],
    d: f64,
) -> Result<ScaledSufficientStats> {
    let p = 2 * geom.k;
    if gamma.len() != p || z.len() != p {
        return Err(Error::Domain(format!("γ and z must have length 2k = {p}")));
    }
    let mut dev = vec![0.0; p];
    lower_mul(&geom.xtx_inv_chol, z, &mut dev);
    let gamma_hat = gamma.iter().zip(&dev).map(|(g, e)| g + e).collect();
    ScaledSufficientStats::new(gamma_hat, d)
}

/// Naive coverage indicator for the draw `(z, D)`, evaluated through the
/// deviation `γ̂ − γ = L z`.
pub fn naive_indicator_from_normals(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    z: &[f64],
    d: f64,
) -> (Region, bool) {
    let k = geom.k;
    let mut dev = vec![0.0; 2 * k];
    lower_mul(&geom.xtx_inv_chol, z, &mut dev);
    let slopes = point.values();
    let q: Vec<f64> = slopes.iter().zip(&dev[k..]).map(|(s, e)| s + e).collect();
    coverage_from_deviation(geom, cfg, &dev, &q, d, slopes)
}

/// Mean of the coverage indicator over `runs` draws; `se = √(p̂(1 − p̂)/M)`.
pub fn estimate_naive(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    estimate_naive_with_intercepts(point, &vec![0.0; geom.k], geom, cfg, runs, seed)
}

/// [`estimate_naive`] with the intercept part of `γ` set explicitly.
#[doc(hidden)]
pub fn estimate_naive_with_intercepts(
    point: &SlopePoint,
    intercepts: &[f64],
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    check_inputs(point, geom, runs)?;
    let k = geom.k;
    if intercepts.len() != k {
        return Err(Error::Domain(format!("expected {k} intercepts")));
    }
    let gamma: Vec<f64> = intercepts.iter().chain(point.values()).copied().collect();
    let (hits, _) = chunked_sum(runs, seed, point, |rng, len| {
        let mut z = vec![0.0; 2 * k];
        let mut dev = vec![0.0; 2 * k];
        let mut gamma_hat = vec![0.0; 2 * k];
        let mut hits = 0.0;
        for _ in 0..len {
            z.iter_mut().for_each(|v| *v = normal(rng));
            let d = chi_square(rng, geom.m);
            lower_mul(&geom.xtx_inv_chol, &z, &mut dev);
            for ((h, g), e) in gamma_hat.iter_mut().zip(&gamma).zip(&dev) {
                *h = g + e;
            }
            let (_, covered) =
                coverage_from_deviation(geom, cfg, &dev, &gamma_hat[k..], d, &gamma[k..]);
            if covered {
                hits += 1.0;
            }
        }
        (hits, hits)
    });
    let p = hits / runs as f64;
    Ok(CoverageEstimate {
        estimate: p,
        se: (p * (1.0 - p) / runs as f64).sqrt(),
        runs,
        estimator: Estimator::Naive,
        seed,
        point: point.clone(),
    })
}

/// Mean of `p_τ + p_ξ + p` over `runs` draws of `Q ~ N(τ/σ, V₂₂)` and
/// `D ~ χ²_m`; `se` is the sample standard deviation over `√M`.
pub fn estimate_conditioned(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    check_inputs(point, geom, runs)?;
    let kernel = ConditionalKernel::new(geom, cfg, point.values())?;
    let k = geom.k;
    let slopes = point.values();
    let (s, ss) = chunked_sum(runs, seed, point, |rng, len| {
        let mut z = vec![0.0; k];
        let mut q = vec![0.0; k];
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..len {
            z.iter_mut().for_each(|v| *v = normal(rng));
            let d = chi_square(rng, geom.m);
            lower_mul(&geom.v22_chol, &z, &mut q);
            q.iter_mut().zip(slopes).for_each(|(v, t)| *v += t);
            let (_, p) = kernel.eval(&q, d);
            s += p;
            ss += p * p;
        }
        (s, ss)
    });
    let m = runs as f64;
    let mean = s / m;
    let var = ((ss - s * mean) / (m - 1.0)).max(0.0);
    Ok(CoverageEstimate {
        estimate: mean,
        se: (var / m).sqrt(),
        runs,
        estimator: Estimator::Conditioned,
        seed,
        point: point.clone(),
    })
}

pub fn estimate(
    estimator: Estimator,
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    match estimator {
        Estimator::Naive => estimate_naive(point, geom, cfg, runs, seed),
        Estimator::Conditioned => estimate_conditioned(point, geom, cfg, runs, seed),
    }
}

/// Monte Carlo estimate of `Pr(F_τ ≤ ℓ_τ)` or `Pr(F_ξ ≤ ℓ_ξ)` at a point.
/// The estimator tag is `naive` since the estimate is a mean of indicators.
pub fn gate_probability(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    which: Gate,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    check_inputs(point, geom, runs)?;
    let k = geom.k;
    let slopes = point.values();
    let (hits, _) = chunked_sum(runs, seed, point, |rng, len| {
        let mut z = vec![0.0; k];
        let mut q = vec![0.0; k];
        let mut hits = 0.0;
        for _ in 0..len {
            z.iter_mut().for_each(|v| *v = normal(rng));
            let d = chi_square(rng, geom.m);
            lower_mul(&geom.v22_chol, &z, &mut q);
            q.iter_mut().zip(slopes).for_each(|(v, t)| *v += t);
            let (f_tau, f_xi, _, _) = f_pair(geom, &q, d);
            let accept = match which {
                Gate::Tau => f_tau <= cfg.l_tau,
                Gate::Xi => f_xi <= cfg.l_xi,
            };
            if accept {
                hits += 1.0;
            }
        }
        (hits, hits)
    });
    let p = hits / runs as f64;
    Ok(CoverageEstimate {
        estimate: p,
        se: (p * (1.0 - p) / runs as f64).sqrt(),
        runs,
        estimator: Estimator::Naive,
        seed,
        point: point.clone(),
    })
}

/// Coverage and gate indicators on common draws, for the bound
/// `0 ≤ Pr(S) − Pr(S ∩ T) ≤ Pr(Tᶜ)` with `T = {F_τ ≤ ℓ_τ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSplit {
    pub runs: usize,
    pub covered: usize,
    pub covered_and_gate: usize,
    pub gate_fails: usize,
}

pub fn gate_split(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<GateSplit> {
    check_inputs(point, geom, runs)?;
    let k = geom.k;
    let slopes = point.values();
    let n_chunks = runs.div_ceil(CHUNK_RUNS);
    let parts: Vec<[usize; 3]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_RUNS.min(runs - c * CHUNK_RUNS);
            let mut rng = chunk_rng(seed, point, c as u64);
            let mut z = vec![0.0; 2 * k];
            let mut dev = vec![0.0; 2 * k];
            let mut q = vec![0.0; k];
            let mut counts = [0usize; 3];
            for _ in 0..len {
                z.iter_mut().for_each(|v| *v = normal(&mut rng));
                let d = chi_square(&mut rng, geom.m);
                lower_mul(&geom.xtx_inv_chol, &z, &mut dev);
                for j in 0..k {
                    q[j] = slopes[j] + dev[k + j];
                }
                let (region, covered) = coverage_from_deviation(geom, cfg, &dev, &q, d, slopes);
                let gate = region == Region::A;
                counts[0] += covered as usize;
                counts[1] += (covered && gate) as usize;
                counts[2] += (!gate) as usize;
            }
            counts
        })
        .collect();
    let total = parts.iter().fold([0usize; 3], |acc, p| [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]);
    Ok(GateSplit {
        runs,
        covered: total[0],
        covered_and_gate: total[1],
        gate_fails: total[2],
    })
}

/// Region frequencies over `runs` draws, mostly for diagnostics.
pub fn region_frequencies(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<[f64; 3]> {
    check_inputs(point, geom, runs)?;
    let k = geom.k;
    let slopes = point.values();
    let mut counts = [0usize; 3];
    let mut rng = chunk_rng(seed, point, 0);
    let mut z = vec![0.0; k];
    let mut q = vec![0.0; k];
    for _ in 0..runs {
        z.iter_mut().for_each(|v| *v = normal(&mut rng));
        let d = chi_square(&mut rng, geom.m);
        lower_mul(&geom.v22_chol, &z, &mut q);
        q.iter_mut().zip(slopes).for_each(|(v, t)| *v += t);
        let (f_tau, f_xi, _, _) = f_pair(geom, &q, d);
        counts[match classify(f_tau, f_xi, cfg) {
            Region::A => 0,
            Region::B => 1,
            Region::C => 2,
        }] += 1;
    }
    Ok(counts.map(|c| c as f64 / runs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_geometry, critical_values};
    use crate::design_file::DesignFile;

    fn setup() -> (GeometryBundle, TwoStageConfig) {
        let d = DesignFile::reference();
        let g = build_geometry(&d.layout, &d.contrast).unwrap();
        let cfg = critical_values(&d.layout, 0.05, 0.1, 0.1).unwrap();
        (g, cfg)
    }

    #[test]
    fn zero_noise_hook() {
        let (g, _) = setup();
        let gamma = [0.3, -0.2, 0.1, 0.05, 0.0, -0.05];
        let s = stats_from_normals(&gamma, &g, &[0.0; 6], 18.0).unwrap();
        assert_eq!(s.gamma_hat(), &gamma);
        assert_eq!(s.q(), &gamma[3..]);
    }

    #[test]
    fn stream_key_ignores_sign_of_zero() {
        let a = SlopePoint::new(vec![0.0, -0.0, 1.0]).unwrap();
        let b = SlopePoint::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.stream_key(), b.stream_key());
        let c = SlopePoint::new(vec![0.0, 0.0, 1.5]).unwrap();
        assert_ne!(a.stream_key(), c.stream_key());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn sample_mean_and_covariance() {
        let (g, _) = setup();
        let gamma = [0.5, -0.5, 0.0, 0.1, 0.2, -0.1];
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = [0.0; 6];
        let mut cross = [[0.0; 6]; 6];
        let mut dsum = 0.0;
        for _ in 0..n {
            let s = sample_stats(&gamma, &g, &mut rng).unwrap();
            dsum += s.d();
            let e: Vec<f64> = s.gamma_hat().iter().zip(&gamma).map(|(h, g)| h - g).collect();
            for i in 0..6 {
                sum[i] += e[i];
                for j in 0..6 {
                    cross[i][j] += e[i] * e[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..6 {
            let sd = g.xtx_inv[(i, i)].sqrt();
            assert!((sum[i] / nf).abs() < 4.0 * sd / nf.sqrt(), "mean {i}");
            for j in 0..6 {
                let c = cross[i][j] / nf;
                let scale = (g.xtx_inv[(i, i)] * g.xtx_inv[(j, j)]).sqrt();
                assert!((c - g.xtx_inv[(i, j)]).abs() < 0.02 * scale, "cov {i},{j}");
            }
        }
        assert!((dsum / nf - 18.0).abs() < 4.0 * (36.0 / nf).sqrt());
    }

    #[test]
    fn chi_square_large_df_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| chi_square(&mut rng, 100)).sum::<f64>() / n as f64;
        assert!((mean - 100.0).abs() < 4.0 * (200.0 / n as f64).sqrt());
    }

    #[test]
    fn chunking_is_deterministic_and_covers_all_runs() {
        let (g, cfg) = setup();
        let p = SlopePoint::new(vec![0.1, 0.0, -0.1]).unwrap();
        let runs = CHUNK_RUNS * 2 + 17;
        let a = estimate_conditioned(&p, &g, &cfg, runs, 5).unwrap();
        let b = estimate_conditioned(&p, &g, &cfg, runs, 5).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| estimate_conditioned(&p, &g, &cfg, runs, 5).unwrap());
        assert_eq!(a.estimate.to_bits(), c.estimate.to_bits());
        assert_eq!(a.runs, runs);
        let other = estimate_conditioned(&p, &g, &cfg, runs, 6).unwrap();
        assert_ne!(a.estimate, other.estimate);
    }

    #[test]
    fn naive_se_formula() {
        let (g, cfg) = setup();
        let p = SlopePoint::zeros(3);
        let e = estimate_naive(&p, &g, &cfg, 4000, 1).unwrap();
        let expected = (e.estimate * (1.0 - e.estimate) / 4000.0).sqrt();
        assert_eq!(e.se, expected);
        assert_eq!(e.estimator, Estimator::Naive);
    }

    #[test]
    fn degenerate_thresholds_give_nominal_coverage() {
        let (g, cfg) = setup();
        let off = cfg.always_full();
        let p = SlopePoint::new(vec![0.2, -0.1, 0.05]).unwrap();
        for est in [Estimator::Naive, Estimator::Conditioned] {
            let e = estimate(est, &p, &g, &off, 50_000, 11).unwrap();
            assert!((e.estimate - 0.95).abs() < 3.0 * e.se.max(1e-6), "{est}: {e:?}");
        }
    }

    #[test]
    fn gate_probabilities() {
        let (g, cfg) = setup();
        let e = gate_probability(&SlopePoint::zeros(3), &g, &cfg, Gate::Tau, 40_000, 2).unwrap();
        assert!((e.estimate - 0.9).abs() < 3.0 * (0.09f64 / 40_000.0).sqrt());
        let far = SlopePoint::new(vec![10.0, 10.5, 9.5]).unwrap();
        let e = gate_probability(&far, &g, &cfg, Gate::Tau, 4000, 2).unwrap();
        assert_eq!(e.estimate, 0.0);
        let equal = SlopePoint::new(vec![3.0, 3.0, 3.0]).unwrap();
        let e = gate_probability(&equal, &g, &cfg, Gate::Xi, 40_000, 2).unwrap();
        assert!((e.estimate - 0.9).abs() < 3.0 * (0.09f64 / 40_000.0).sqrt());
    }

    #[test]
    fn region_frequencies_sum_to_one() {
        let (g, cfg) = setup();
        let p = SlopePoint::new(vec![0.1, 0.2, 0.0]).unwrap();
        let f = region_frequencies(&p, &g, &cfg, 5000, 3).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        let (g, cfg) = setup();
        let p = SlopePoint::zeros(3);
        assert!(estimate_naive(&p, &g, &cfg, 1, 0).is_err());
        assert!(estimate_conditioned(&SlopePoint::zeros(2), &g, &cfg, 10, 0).is_err());
        assert!(SlopePoint::new(vec![f64::NAN]).is_err());
        assert!("bogus".parse::<Estimator>().is_err());
        assert_eq!("conditioned".parse::<Estimator>().unwrap(), Estimator::Conditioned);
    }
}
