//! Grid evaluation, low-coverage line fitting, line profiles and the
//! restricted search for the minimum coverage probability.
//!
//! The search has two parts. Inside a cube of slope points the two-stage
//! coverage is estimated on a grid and refined along the fitted low-coverage
//! lines (`min1`). Outside the cube the first test rejects with probability
//! close to one, so the coverage there is that of the second test alone and
//! depends only on the slope differences; it is searched over a square of
//! differences with the first slope pushed far away (`min2`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{GeometryBundle, TwoStageConfig};
use crate::dist::noncentral_f_cdf;
use crate::error::{Error, Result};
use crate::montecarlo::{self, gate_probability, gate_split, CoverageEstimate, Estimator, Gate, SlopePoint};

/// A regular lattice with the same bounds on every axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub bounds: (f64, f64),
    pub points_per_axis: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            bounds: (-0.25, 0.25),
            points_per_axis: 21,
            runs: 10_000,
            seed: 1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("grid bounds must satisfy lo < hi, got ({lo}, {hi})")));
        }
        if self.points_per_axis < 2 {
            return Err(Error::Domain("need at least 2 grid points per axis".into()));
        }
        if self.runs < 2 {
            return Err(Error::Domain(format!("need at least 2 runs, got {}", self.runs)));
        }
        Ok(())
    }

    /// Lattice coordinates along one axis; the midpoint of a symmetric odd
    /// lattice is exactly zero.
    pub fn axis(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds;
        let n = self.points_per_axis - 1;
        (0..=n)
            .map(|i| (lo * (n - i) as f64 + hi * i as f64) / n as f64)
            .collect()
    }

    /// All lattice points in `dim` dimensions, last axis fastest.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let axis = self.axis();
        let n = axis.len();
        let total = n.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; dim];
                for j in (0..dim).rev() {
                    p[j] = axis[idx % n];
                    idx /= n;
                }
                p
            })
            .collect()
    }
}

/// Estimates the coverage at every lattice point of `spec` in slope space.
pub fn grid_eval(
    spec: &GridSpec,
    estimator: Estimator,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
) -> Result<Vec<CoverageEstimate>> {
    spec.validate()?;
    spec.points(geom.k)
        .into_par_iter()
        .map(|p| montecarlo::estimate(estimator, &SlopePoint::new(p)?, geom, cfg, spec.runs, spec.seed))
        .collect()
}

/// The entry with the smallest estimate; ties go to the earliest.
pub fn table_minimum(table: &[CoverageEstimate]) -> Option<&CoverageEstimate> {
    table.iter().fold(None, |best: Option<&CoverageEstimate>, e| match best {
        Some(b) if b.estimate <= e.estimate => Some(b),
        _ => Some(e),
    })
}

/// A line `offsets + c·(1, …, 1)` in slope space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineLocus {
    pub direction: Vec<f64>,
    pub offsets: Vec<f64>,
    pub c_range: (f64, f64),
}

impl LineLocus {
    pub fn new(offsets: Vec<f64>, c_range: (f64, f64)) -> Self {
        Self {
            direction: vec![1.0; offsets.len()],
            offsets,
            c_range,
        }
    }

    pub fn point_at(&self, c: f64) -> Vec<f64> {
        self.offsets.iter().zip(&self.direction).map(|(o, d)| o + c * d).collect()
    }
}

/// Splits points into two groups by the sign of their residuals
/// `(γ_j − γ_1)_{j ≥ 2}` projected on the dominant eigenvector of the
/// residuals' second-moment matrix. The eigenvector is oriented so that its
/// first nonzero entry is positive; points with a nonnegative projection go
/// in the first group.
pub fn split_low_cp_clusters(points: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if points.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let k = points[0].len();
    let r = k - 1;
    let residuals: Vec<Vec<f64>> = points.iter().map(|p| p[1..].iter().map(|v| v - p[0]).collect()).collect();
    let mut s = DMatrix::<f64>::zeros(r, r);
    for res in &residuals {
        let v = DVector::from_column_slice(res);
        s += &v * v.transpose();
    }
    let eig = SymmetricEigen::new(s);
    let top = eig.eigenvalues.iamax();
    let mut dir = eig.eigenvectors.column(top).into_owned();
    if let Some(first) = dir.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            dir = -dir;
        }
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (p, res) in points.iter().zip(&residuals) {
        let proj: f64 = res.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
        if proj >= 0.0 {
            pos.push(p.clone());
        } else {
            neg.push(p.clone());
        }
    }
    (pos, neg)
}

fn fit_unit_slope_line(points: &[Vec<f64>]) -> LineLocus {
    let k = points[0].len();
    let n = points.len() as f64;
    let mut offsets = vec![0.0; k];
    for p in points {
        for j in 1..k {
            offsets[j] += (p[j] - p[0]) / n;
        }
    }
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    LineLocus::new(offsets, (lo, hi))
}

/// Fits two unit-slope lines to the grid points whose estimate is below
/// `threshold`. Each line is parameterized by `c = γ_1`; the offsets are
/// the least-squares intercepts `mean(γ_j − γ_1)`. The first line returned
/// is the one whose second offset is larger.
pub fn fit_low_cp_lines(table: &[CoverageEstimate], threshold: f64) -> Result<(LineLocus, LineLocus)> {
    let low: Vec<Vec<f64>> = table
        .iter()
        .filter(|e| e.estimate < threshold)
        .map(|e| e.point.values().to_vec())
        .collect();
    if low.first().is_some_and(|p| p.len() < 2) {
        return Err(Error::Domain("line fitting needs k ≥ 2".into()));
    }
    let (a, b) = split_low_cp_clusters(&low);
    for (cluster, pts) in [(1, &a), (2, &b)] {
        if pts.len() < 2 {
            return Err(Error::InsufficientLowCpPoints { cluster, found: pts.len() });
        }
    }
    let (la, lb) = (fit_unit_slope_line(&a), fit_unit_slope_line(&b));
    Ok(if la.offsets[1] >= lb.offsets[1] { (la, lb) } else { (lb, la) })
}

/// Unit principal axis of a point cloud, oriented to have a nonnegative sum.
pub fn principal_direction(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::Domain("principal direction needs at least 2 points".into()));
    }
    let k = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::<f64>::zeros(k);
    for p in points {
        mean += DVector::from_column_slice(p) / n;
    }
    let mut s = DMatrix::<f64>::zeros(k, k);
    for p in points {
        let v = DVector::from_column_slice(p) - &mean;
        s += &v * v.transpose();
    }
    let eig = SymmetricEigen::new(s);
    let dir = eig.eigenvectors.column(eig.eigenvalues.iamax()).into_owned();
    let dir = if dir.sum() < 0.0 { -dir } else { dir };
    Ok(dir.iter().copied().collect())
}

/// Angle in degrees between `v` and `(1, …, 1)`, ignoring orientation.
pub fn angle_to_diagonal(v: &[f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = v.iter().sum::<f64>().abs() / (norm * (v.len() as f64).sqrt());
    cos.min(1.0).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub c: f64,
    pub estimate: CoverageEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineProfile {
    pub line: LineLocus,
    pub rows: Vec<ProfileRow>,
    /// Refined location of the minimum.
    pub c_min: f64,
    /// Fresh estimate at `c_min`.
    pub cp_min: CoverageEstimate,
    /// Whether the smallest lattice value is at an interior lattice point.
    pub interior_min: bool,
}

impl LineProfile {
    /// Interior minimum with both end values above it by more than three
    /// combined standard errors.
    pub fn is_u_shaped(&self) -> bool {
        let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) else {
            return false;
        };
        let min = self
            .rows
            .iter()
            .map(|r| &r.estimate)
            .fold(&first.estimate, |b, e| if e.estimate < b.estimate { e } else { b });
        let above = |e: &CoverageEstimate| {
            e.estimate - min.estimate > 3.0 * (e.se.powi(2) + min.se.powi(2)).sqrt()
        };
        self.interior_min && above(&first.estimate) && above(&last.estimate)
    }
}

/// Vertex of the parabola through `(x0,y0), (x1,y1), (x2,y2)`, clamped to
/// `[x0, x2]`; `x1` when the parabola is not convex.
pub fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d01 = (y[1] - y[0]) / (x[1] - x[0]);
    let d12 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d12 - d01) / (x[2] - x[0]);
    if !(curv > 0.0) {
        return x[1];
    }
    // Newton form y = y0 + d01(x − x0) + curv(x − x0)(x − x1)
    let vertex = 0.5 * (x[0] + x[1]) - d01 / (2.0 * curv);
    vertex.clamp(x[0], x[2])
}

/// Coverage along `line` at `n_points` equally spaced values of `c`, with
/// the minimum refined through the smallest lattice value and its two
/// neighbours and re-estimated there.
pub fn line_profile(
    line: &LineLocus,
    n_points: usize,
    estimator: Estimator,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<LineProfile> {
    if n_points < 3 {
        return Err(Error::Domain("a line profile needs at least 3 points".into()));
    }
    let (lo, hi) = line.c_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!("invalid c range ({lo}, {hi})")));
    }
    let n = n_points - 1;
    let cs: Vec<f64> = (0..=n).map(|i| (lo * (n - i) as f64 + hi * i as f64) / n as f64).collect();
    let rows: Vec<ProfileRow> = cs
        .par_iter()
        .map(|&c| {
            let p = SlopePoint::new(line.point_at(c))?;
            Ok(ProfileRow {
                c,
                estimate: montecarlo::estimate(estimator, &p, geom, cfg, runs, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    let imin = (0..rows.len())
        .min_by(|&a, &b| rows[a].estimate.estimate.total_cmp(&rows[b].estimate.estimate))
        .expect("nonempty");
    let interior_min = imin > 0 && imin < n;
    let c_min = if interior_min {
        parabola_vertex(
            [cs[imin - 1], cs[imin], cs[imin + 1]],
            [
                rows[imin - 1].estimate.estimate,
                rows[imin].estimate.estimate,
                rows[imin + 1].estimate.estimate,
            ],
        )
    } else {
        cs[imin]
    };
    let cp_min = montecarlo::estimate(estimator, &SlopePoint::new(line.point_at(c_min))?, geom, cfg, runs, seed)?;
    Ok(LineProfile {
        line: line.clone(),
        rows,
        c_min,
        cp_min,
        interior_min,
    })
}

/// Coverage with the first slope at `offset` and the others at
/// `offset + deltas`, so that the first test rejects with probability close
/// to one and the coverage is that of the second stage alone.
pub fn second_test_only_cp(
    deltas: &[f64],
    offset: f64,
    estimator: Estimator,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<CoverageEstimate> {
    if deltas.len() + 1 != geom.k {
        return Err(Error::Domain(format!("expected k − 1 = {} slope differences", geom.k - 1)));
    }
    let slopes: Vec<f64> = std::iter::once(offset).chain(deltas.iter().map(|d| offset + d)).collect();
    montecarlo::estimate(estimator, &SlopePoint::new(slopes)?, geom, cfg, runs, seed)
}

/// Empirical check of `0 ≤ Pr(S) − Pr(S ∩ T) ≤ Pr(Tᶜ)` on common draws,
/// with `S` the coverage event and `T = {F_τ ≤ ℓ_τ}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateBoundCheck {
    pub point: Vec<f64>,
    pub runs: usize,
    pub pr_s: f64,
    pub pr_s_and_t: f64,
    pub pr_t_complement: f64,
    /// `√(se²(Pr(S) − Pr(S∩T)) + se²(Pr(Tᶜ)))`
    pub combined_se: f64,
}

impl GateBoundCheck {
    pub fn difference(&self) -> f64 {
        self.pr_s - self.pr_s_and_t
    }

    pub fn holds(&self) -> bool {
        let diff = self.difference();
        diff >= -3.0 * self.combined_se && diff <= self.pr_t_complement + 3.0 * self.combined_se
    }
}

pub fn gate_bound_check(
    point: &SlopePoint,
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<GateBoundCheck> {
    let s = gate_split(point, geom, cfg, runs, seed)?;
    let m = runs as f64;
    let pr_s = s.covered as f64 / m;
    let pr_st = s.covered_and_gate as f64 / m;
    let pr_tc = s.gate_fails as f64 / m;
    let diff = pr_s - pr_st;
    let var = |p: f64| p * (1.0 - p) / m;
    Ok(GateBoundCheck {
        point: point.values().to_vec(),
        runs,
        pr_s,
        pr_s_and_t: pr_st,
        pr_t_complement: pr_tc,
        combined_se: (var(diff) + var(pr_tc)).sqrt(),
    })
}

/// A gate probability at the least-rejecting point of one face of the
/// search region, with the exact noncentral-F value alongside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateDiagnostic {
    /// `"tau"` or `"xi"`.
    pub gate: String,
    pub face: String,
    pub point: Vec<f64>,
    pub noncentrality: f64,
    /// Monte Carlo `Pr(F ≤ ℓ)`.
    pub accept_mc: CoverageEstimate,
    /// Noncentral-F `Pr(F ≤ ℓ)`.
    pub accept_exact: f64,
    /// Set when `1 − accept_exact < 0.99`.
    pub warning: bool,
}

/// Minimizes `xᵀAx` over the box `[lo, hi]^d` with coordinate `fixed`
/// pinned to `value`, by cyclic coordinate descent.
fn min_quadratic_on_face(a: &DMatrix<f64>, lo: f64, hi: f64, fixed: usize, value: f64) -> Vec<f64> {
    let d = a.nrows();
    let mut x = vec![0.0; d];
    x[fixed] = value;
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in (0..d).filter(|&i| i != fixed) {
            let off: f64 = (0..d).filter(|&j| j != i).map(|j| a[(i, j)] * x[j]).sum();
            let new = (-off / a[(i, i)]).clamp(lo, hi);
            moved = moved.max((new - x[i]).abs());
            x[i] = new;
        }
        if moved < 1e-15 {
            break;
        }
    }
    x
}

fn quad(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_column_slice(x);
    (v.transpose() * a * &v)[(0, 0)]
}

/// `F_τ` gate on each face of the cube `bounds^k`.
pub fn cube_gate_diagnostics(
    bounds: (f64, f64),
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<Vec<GateDiagnostic>> {
    let (k, m) = (geom.k, geom.m as f64);
    let mut out = Vec::new();
    for axis in 0..k {
        for (side, value) in [("lo", bounds.0), ("hi", bounds.1)] {
            let point = min_quadratic_on_face(&geom.v22_inv, bounds.0, bounds.1, axis, value);
            let lambda = quad(&geom.v22_inv, &point);
            let exact = noncentral_f_cdf(cfg.l_tau, k as f64, m, lambda);
            let mc = gate_probability(&SlopePoint::new(point.clone())?, geom, cfg, Gate::Tau, runs, seed)?;
            out.push(GateDiagnostic {
                gate: "tau".into(),
                face: format!("gamma_{} = {side}", axis + 1),
                point,
                noncentrality: lambda,
                accept_mc: mc,
                accept_exact: exact,
                warning: 1.0 - exact < 0.99,
            });
        }
    }
    Ok(out)
}

/// `F_ξ` gate on each edge of the square `bounds^{k−1}` of slope
/// differences `γ_j − γ_1`.
pub fn square_gate_diagnostics(
    bounds: (f64, f64),
    geom: &GeometryBundle,
    cfg: &TwoStageConfig,
    runs: usize,
    seed: u64,
) -> Result<Vec<GateDiagnostic>> {
    let (k, m) = (geom.k, geom.m as f64);
    let mut out = Vec::new();
    // ξ = −δ, so the quadratic form in δ is the same as in ξ
    for axis in 0..k - 1 {
        for (side, value) in [("lo", bounds.0), ("hi", bounds.1)] {
            let deltas = min_quadratic_on_face(&geom.w22_inv, bounds.0, bounds.1, axis, value);
            let lambda = quad(&geom.w22_inv, &deltas);
            let exact = noncentral_f_cdf(cfg.l_xi, (k - 1) as f64, m, lambda);
            let slopes: Vec<f64> = std::iter::once(0.0).chain(deltas.iter().copied()).collect();
            let mc = gate_probability(&SlopePoint::new(slopes.clone())?, geom, cfg, Gate::Xi, runs, seed)?;
            out.push(GateDiagnostic {
                gate: "xi".into(),
                face: format!("gamma_{} - gamma_1 = {side}", axis + 2),
                point: slopes,
                noncentrality: lambda,
                accept_mc: mc,
                accept_exact: exact,
                warning: 1.0 - exact < 0.99,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinSearchConfig {
    pub cube: GridSpec,
    pub estimator: Estimator,
    pub threshold: f64,
    pub profile_points: usize,
    /// Fraction of a cluster's `c` span added on each side of its profile.
    pub profile_margin: f64,
    pub square: GridSpec,
    pub offset: f64,
    pub gate_runs: usize,
}

impl Default for MinSearchConfig {
    fn default() -> Self {
        Self {
            cube: GridSpec::default(),
            estimator: Estimator::Conditioned,
            threshold: 0.6,
            profile_points: 41,
            profile_margin: 0.5,
            square: GridSpec {
                bounds: (-0.2, 0.2),
                ..GridSpec::default()
            },
            offset: 1000.0,
            gate_runs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinSearchReport {
    pub min1: CoverageEstimate,
    pub min2: CoverageEstimate,
    pub overall: CoverageEstimate,
    pub argmin: Vec<f64>,
    /// `"cube"` or `"square"`.
    pub argmin_region: String,
    pub grid: Vec<CoverageEstimate>,
    pub grid_min: CoverageEstimate,
    pub lines: Option<(LineLocus, LineLocus)>,
    /// Why no lines were fitted, when they were not.
    pub line_error: Option<String>,
    pub profiles: Vec<LineProfile>,
    pub square: Vec<CoverageEstimate>,
    pub diagnostics: Vec<GateDiagnostic>,
}

impl MinSearchReport {
    pub fn warnings(&self) -> impl Iterator<Item = &GateDiagnostic> {
        self.diagnostics.iter().filter(|d| d.warning)
    }
}

pub fn min_cp_search(config: &MinSearchConfig, geom: &GeometryBundle, cfg: &TwoStageConfig) -> Result<MinSearchReport> {
    config.square.validate()?;
    let grid = grid_eval(&config.cube, config.estimator, geom, cfg)?;
    let grid_min = table_minimum(&grid).expect("nonempty grid").clone();

    let (lines, line_error) = match fit_low_cp_lines(&grid, config.threshold) {
        Ok(l) => (Some(l), None),
        Err(e @ Error::InsufficientLowCpPoints { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let mut profiles = Vec::new();
    if let Some((l1, l2)) = &lines {
        for line in [l1, l2] {
            let (lo, hi) = line.c_range;
            let pad = (config.profile_margin * (hi - lo)).max(config.cube.axis()[1] - config.cube.axis()[0]);
            let widened = LineLocus {
                c_range: (lo - pad, hi + pad),
                ..line.clone()
            };
            profiles.push(line_profile(
                &widened,
                config.profile_points,
                config.estimator,
                geom,
                cfg,
                config.cube.runs,
                config.cube.seed,
            )?);
        }
    }
    let min1 = profiles
        .iter()
        .map(|p| &p.cp_min)
        .fold(&grid_min, |b, e| if e.estimate < b.estimate { e } else { b })
        .clone();

    let square: Vec<CoverageEstimate> = config
        .square
        .points(geom.k - 1)
        .into_par_iter()
        .map(|d| {
            second_test_only_cp(&d, config.offset, config.estimator, geom, cfg, config.square.runs, config.square.seed)
        })
        .collect::<Result<_>>()?;
    let min2 = table_minimum(&square).expect("nonempty square").clone();

    let mut diagnostics = cube_gate_diagnostics(config.cube.bounds, geom, cfg, config.gate_runs, config.cube.seed)?;
    diagnostics.extend(square_gate_diagnostics(
        config.square.bounds,
        geom,
        cfg,
        config.gate_runs,
        config.square.seed,
    )?);

    let (overall, region) = if min1.estimate <= min2.estimate {
        (min1.clone(), "cube")
    } else {
        (min2.clone(), "square")
    };
    Ok(MinSearchReport {
        argmin: overall.point.values().to_vec(),
        argmin_region: region.into(),
        overall,
        min1,
        min2,
        grid,
        grid_min,
        lines,
        line_error,
        profiles,
        square,
        diagnostics,
    })
}
