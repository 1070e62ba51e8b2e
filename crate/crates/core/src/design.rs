//! ANCOVA layout, design matrix, and every design-derived quantity used by
//! the preliminary tests, the confidence intervals, and the conditional
//! coverage formulas.
//!
//! Parameters are ordered `β = (a_1, …, a_k, b_1, …, b_k)`: treatment
//! intercepts first, then the treatment slopes on the grand-mean-centred
//! covariate.

use nalgebra::{DMatrix, DVector};

use crate::dist;
use crate::error::{Error, Result};

/// Treatments, replicate counts and covariate values of a one-way ANCOVA.
#[derive(Debug, Clone, PartialEq)]
pub struct AncovaLayout {
    n: Vec<usize>,
    x: Vec<Vec<f64>>,
}

impl AncovaLayout {
    /// Builds a layout from covariate values grouped by treatment.
    pub fn new(x: Vec<Vec<f64>>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidLayout("at least one treatment is required".into()));
        }
        if let Some(i) = x.iter().position(|g| g.is_empty()) {
            return Err(Error::InvalidLayout(format!("treatment {} has no replicates", i + 1)));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLayout("covariate values must be finite".into()));
        }
        let n = x.iter().map(Vec::len).collect();
        Ok(Self { n, x })
    }

    /// Builds a layout and checks the declared `k` and `n` against `x`.
    pub fn from_parts(k: usize, n: Vec<usize>, x: Vec<Vec<f64>>) -> Result<Self> {
        if n.len() != k || x.len() != k {
            return Err(Error::InvalidLayout(format!(
                "k = {k} but n has {} entries and x has {} groups",
                n.len(),
                x.len()
            )));
        }
        for (i, (ni, xi)) in n.iter().zip(&x).enumerate() {
            if *ni != xi.len() {
                return Err(Error::InvalidLayout(format!(
                    "treatment {}: n = {ni} but {} covariate values",
                    i + 1,
                    xi.len()
                )));
            }
        }
        Self::new(x)
    }

    pub fn k(&self) -> usize {
        self.n.len()
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn n_total(&self) -> usize {
        self.n.iter().sum()
    }

    /// Residual degrees of freedom `m = n − 2k` (may be non-positive for
    /// layouts that cannot support the tests).
    pub fn residual_df(&self) -> i64 {
        self.n_total() as i64 - 2 * self.k() as i64
    }

    /// Grand mean of the covariate over all observations.
    pub fn grand_mean(&self) -> f64 {
        self.x.iter().flatten().sum::<f64>() / self.n_total() as f64
    }

    /// `max |x_ij − x̄|` over all observations.
    pub fn max_abs_centered(&self) -> f64 {
        let xbar = self.grand_mean();
        self.x.iter().flatten().map(|v| (v - xbar).abs()).fold(0.0, f64::max)
    }
}

/// Coefficients `a` of the contrast `θ = aᵀβ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSpec {
    a: Vec<f64>,
}

impl ContrastSpec {
    pub fn new(a: Vec<f64>, k: usize) -> Result<Self> {
        if a.len() != 2 * k {
            return Err(Error::InvalidLayout(format!(
                "contrast needs 2k = {} coefficients, got {}",
                2 * k,
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLayout("contrast coefficients must be finite".into()));
        }
        Ok(Self { a })
    }

    /// Difference of expected responses of treatments `i` and `j` (0-based)
    /// at a covariate value `x*` with centred value `x* − x̄ = centered`:
    /// `a = e_i − e_j + centered·(e_{k+i} − e_{k+j})`.
    pub fn treatment_difference(k: usize, i: usize, j: usize, centered: f64) -> Result<Self> {
        if i >= k || j >= k || i == j {
            return Err(Error::InvalidLayout(format!(
                "treatment difference needs distinct indices below k = {k}, got ({i}, {j})"
            )));
        }
        let mut a = vec![0.0; 2 * k];
        a[i] = 1.0;
        a[j] = -1.0;
        a[k + i] = centered;
        a[k + j] = -centered;
        Self::new(a, k)
    }

    /// [`Self::treatment_difference`] at the covariate value farthest from
    /// the grand mean, `c* = max |x_ij − x̄|`.
    pub fn difference_at_extreme(layout: &AncovaLayout, i: usize, j: usize) -> Result<Self> {
        Self::treatment_difference(layout.k(), i, j, layout.max_abs_centered())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// `n × 2k` design matrix: row `(i, j)` has 1 in column `i` and
/// `x_ij − x̄` in column `k + i`.
pub fn build_design(layout: &AncovaLayout) -> Result<DMatrix<f64>> {
    let k = layout.k();
    let xbar = layout.grand_mean();
    let mut x = DMatrix::zeros(layout.n_total(), 2 * k);
    let mut row = 0;
    for (i, group) in layout.x().iter().enumerate() {
        for &v in group {
            x[(row, i)] = 1.0;
            x[(row, k + i)] = v - xbar;
            row += 1;
        }
    }
    if x.nrows() < x.ncols() || (x.transpose() * &x).cholesky().is_none() {
        return Err(Error::SingularDesign);
    }
    Ok(x)
}

/// `C_τ`: the `2k × k` selector with `C_τᵀβ = (b_1, …, b_k)`.
pub fn slope_selector(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * k, k, |r, c| if r == k + c { 1.0 } else { 0.0 })
}

/// `U = [1 | −I_{k−1}]`, so that `ξ = Uτ`.
pub fn differencing_matrix(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k.saturating_sub(1), k, |r, c| {
        if c == 0 {
            1.0
        } else if c == r + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `C_ξ`: the `2k × (k−1)` selector with `C_ξᵀβ = (b_1 − b_2, …, b_1 − b_k)`.
pub fn difference_selector(k: usize) -> DMatrix<f64> {
    slope_selector(k) * differencing_matrix(k).transpose()
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::ConditioningFailure(format!("{what} is not positive definite")))
}

/// Design-derived matrices and scalars for a layout and a contrast.
///
/// All covariances are in units of `σ²`.
#[derive(Debug, Clone)]
pub struct GeometryBundle {
    /// Design matrix, when built from a layout.
    pub design: Option<DMatrix<f64>>,
    pub xtx_inv: DMatrix<f64>,
    pub c_tau: DMatrix<f64>,
    pub c_xi: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v22: DMatrix<f64>,
    pub w22: DMatrix<f64>,
    pub v21: DVector<f64>,
    pub w21: DVector<f64>,
    pub v11: f64,
    pub v_star: f64,
    pub w_star: f64,
    pub s21: DVector<f64>,
    pub g_tau: DMatrix<f64>,
    pub g_xi: DMatrix<f64>,
    pub m: usize,
    pub k: usize,
    /// Contrast coefficients `a`.
    pub a: DVector<f64>,

    pub v22_inv: DMatrix<f64>,
    pub w22_inv: DMatrix<f64>,
    /// Lower Cholesky factor of `(XᵀX)⁻¹`.
    pub xtx_inv_chol: DMatrix<f64>,
    /// Lower Cholesky factor of `V₂₂`.
    pub v22_chol: DMatrix<f64>,
    /// `G_τᵀa`, so that `aᵀG_τγ̂ = a_g_tau · γ̂`.
    pub a_g_tau: DVector<f64>,
    /// `G_ξᵀa`.
    pub a_g_xi: DVector<f64>,
    /// `V₂₂⁻¹v₂₁`.
    pub h_tau: DVector<f64>,
    /// `W₂₂⁻¹w₂₁`.
    pub h_xi: DVector<f64>,
    /// `V₂₂⁻¹s₂₁`.
    pub h_s: DVector<f64>,
    /// `w* − s₂₁ᵀV₂₂⁻¹s₂₁`, the conditional variance of `aᵀG_ξγ̂` given `Q`.
    pub cond_var_xi: f64,
}

/// Builds the design matrix and the full geometry for `layout` and `contrast`.
pub fn build_geometry(layout: &AncovaLayout, contrast: &ContrastSpec) -> Result<GeometryBundle> {
    let k = layout.k();
    if contrast.len() != 2 * k {
        return Err(Error::InvalidLayout(format!(
            "contrast has {} coefficients but the layout needs 2k = {}",
            contrast.len(),
            2 * k
        )));
    }
    let m = layout.residual_df();
    if m < 1 {
        return Err(Error::Domain(format!(
            "residual degrees of freedom n − 2k = {m}; at least 1 is required"
        )));
    }
    let x = build_design(layout)?;
    let xtx = x.transpose() * &x;
    let mut geom = GeometryBundle::from_gram(&xtx, contrast.coefficients(), m as usize)?;
    geom.design = Some(x);
    Ok(geom)
}

impl GeometryBundle {
    /// Geometry from a Gram matrix `XᵀX` directly (no design matrix kept).
    pub fn from_gram(xtx: &DMatrix<f64>, a: &[f64], m: usize) -> Result<Self> {
        let p = xtx.nrows();
        if p != xtx.ncols() || !p.is_multiple_of(2) || p < 4 {
            return Err(Error::Domain(format!(
                "Gram matrix must be 2k × 2k with k ≥ 2, got {} × {}",
                xtx.nrows(),
                xtx.ncols()
            )));
        }
        if a.len() != p {
            return Err(Error::InvalidLayout(format!(
                "contrast has {} coefficients, expected {p}",
                a.len()
            )));
        }
        if m == 0 {
            return Err(Error::Domain("residual degrees of freedom must be ≥ 1".into()));
        }
        let k = p / 2;
        let xtx_inv = xtx.clone().cholesky().ok_or(Error::SingularDesign)?.inverse();
        let a = DVector::from_column_slice(a);

        let c_tau = slope_selector(k);
        let c_xi = difference_selector(k);
        let u = differencing_matrix(k);

        let v22 = c_tau.transpose() * &xtx_inv * &c_tau;
        let w22 = c_xi.transpose() * &xtx_inv * &c_xi;
        let v22_inv = spd_inverse(&v22, "V22")?;
        let w22_inv = spd_inverse(&w22, "W22")?;

        let v11 = (a.transpose() * &xtx_inv * &a)[(0, 0)];
        let v21 = c_tau.transpose() * &xtx_inv * &a;
        let w21 = c_xi.transpose() * &xtx_inv * &a;
        let h_tau = &v22_inv * &v21;
        let h_xi = &w22_inv * &w21;
        let v_star = v11 - v21.dot(&h_tau);
        let w_star = v11 - w21.dot(&h_xi);

        let s21 = &v21 - c_tau.transpose() * &xtx_inv * &c_xi * &h_xi;
        let h_s = &v22_inv * &s21;
        let cond_var_xi = w_star - s21.dot(&h_s);

        let eye = DMatrix::<f64>::identity(p, p);
        let g_tau = &eye - &xtx_inv * &c_tau * &v22_inv * c_tau.transpose();
        let g_xi = &eye - &xtx_inv * &c_xi * &w22_inv * c_xi.transpose();
        let a_g_tau = g_tau.transpose() * &a;
        let a_g_xi = g_xi.transpose() * &a;

        let scale_tol = 1e-12 * v11.max(f64::MIN_POSITIVE);
        if !(v11 > 0.0) {
            return Err(Error::ConditioningFailure("contrast variance v11 is zero".into()));
        }
        if v_star <= scale_tol {
            return Err(Error::ConditioningFailure(format!(
                "v* = {v_star:e}: the contrast is determined by the slope estimates"
            )));
        }
        if w_star <= scale_tol {
            return Err(Error::ConditioningFailure(format!("w* = {w_star:e} is not positive")));
        }

        let xtx_inv_chol = xtx_inv
            .clone()
            .cholesky()
            .ok_or_else(|| Error::ConditioningFailure("(X'X)^-1 is not positive definite".into()))?
            .l();
        let v22_chol = v22
            .clone()
            .cholesky()
            .ok_or_else(|| Error::ConditioningFailure("V22 is not positive definite".into()))?
            .l();

        Ok(Self {
            design: None,
            xtx_inv,
            c_tau,
            c_xi,
            u,
            v22,
            w22,
            v21,
            w21,
            v11,
            v_star,
            w_star,
            s21,
            g_tau,
            g_xi,
            m,
            k,
            a,
            v22_inv,
            w22_inv,
            xtx_inv_chol,
            v22_chol,
            a_g_tau,
            a_g_xi,
            h_tau,
            h_xi,
            h_s,
            cond_var_xi,
        })
    }

    /// `qᵀV₂₂⁻¹q`.
    #[inline]
    pub fn tau_form(&self, q: &[f64]) -> f64 {
        quad_form(&self.v22_inv, q)
    }

    /// `(Uq)ᵀW₂₂⁻¹(Uq)`.
    #[inline]
    pub fn xi_form(&self, q: &[f64]) -> f64 {
        let k1 = self.k - 1;
        let mut acc = 0.0;
        for r in 0..k1 {
            let ur = q[0] - q[r + 1];
            let mut row = 0.0;
            for c in 0..k1 {
                row += self.w22_inv[(r, c)] * (q[0] - q[c + 1]);
            }
            acc += ur * row;
        }
        acc
    }

    /// `Uq`: `(q_1 − q_2, …, q_1 − q_k)`.
    pub fn differences(&self, q: &[f64]) -> Vec<f64> {
        q[1..].iter().map(|v| q[0] - v).collect()
    }
}

#[inline]
fn quad_form(m: &DMatrix<f64>, q: &[f64]) -> f64 {
    let n = q.len();
    let mut acc = 0.0;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += m[(r, c)] * q[c];
        }
        acc += q[r] * row;
    }
    acc
}

/// Critical values of the two preliminary F tests and the t quantiles of
/// the three intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageConfig {
    pub alpha: f64,
    /// Null rejection probability of the Stage-1 test, `Pr(F(k, m) > ℓ_τ)`.
    pub sig_tau: f64,
    /// Null rejection probability of the Stage-2 test, `Pr(F(k−1, m) > ℓ_ξ)`.
    pub sig_xi: f64,
    pub l_tau: f64,
    pub l_xi: f64,
    /// `t(m)`
    pub t_m: f64,
    /// `t(m + k)`
    pub t_mk: f64,
    /// `t(m + k − 1)`
    pub t_mk1: f64,
    pub k: usize,
    pub m: usize,
}

/// Critical values for `layout` at CI level `1 − alpha` and test sizes
/// `sig_tau`, `sig_xi`.
pub fn critical_values(
    layout: &AncovaLayout,
    alpha: f64,
    sig_tau: f64,
    sig_xi: f64,
) -> Result<TwoStageConfig> {
    let m = layout.residual_df();
    if m < 1 {
        return Err(Error::Domain(format!(
            "residual degrees of freedom n − 2k = {m}; at least 1 is required"
        )));
    }
    TwoStageConfig::from_levels(layout.k(), m as usize, alpha, sig_tau, sig_xi)
}

impl TwoStageConfig {
    pub fn from_levels(k: usize, m: usize, alpha: f64, sig_tau: f64, sig_xi: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("the two-stage procedure needs k ≥ 2, got {k}")));
        }
        if m < 1 {
            return Err(Error::Domain("residual degrees of freedom must be ≥ 1".into()));
        }
        let (kf, mf) = (k as f64, m as f64);
        Ok(Self {
            alpha,
            sig_tau,
            sig_xi,
            l_tau: dist::f_upper_quantile(sig_tau, kf, mf)?,
            l_xi: dist::f_upper_quantile(sig_xi, kf - 1.0, mf)?,
            t_m: dist::t_two_sided_quantile(alpha, mf)?,
            t_mk: dist::t_two_sided_quantile(alpha, mf + kf)?,
            t_mk1: dist::t_two_sided_quantile(alpha, mf + kf - 1.0)?,
            k,
            m,
        })
    }

    /// Replaces the F thresholds. `0` makes a test always reject, `∞` never.
    /// The recorded sizes become the implied null rejection probabilities.
    pub fn with_thresholds(mut self, l_tau: f64, l_xi: f64) -> Result<Self> {
        if l_tau.is_nan() || l_xi.is_nan() || l_tau < 0.0 || l_xi < 0.0 {
            return Err(Error::Domain(format!(
                "F thresholds must be non-negative, got ({l_tau}, {l_xi})"
            )));
        }
        let (kf, mf) = (self.k as f64, self.m as f64);
        self.l_tau = l_tau;
        self.l_xi = l_xi;
        self.sig_tau = dist::f_sf(l_tau, kf, mf);
        self.sig_xi = dist::f_sf(l_xi, kf - 1.0, mf);
        Ok(self)
    }

    /// Both thresholds at zero: the full-model interval is always used.
    pub fn always_full(self) -> Self {
        self.with_thresholds(0.0, 0.0).expect("zero thresholds are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn balanced3() -> AncovaLayout {
        AncovaLayout::new(vec![
            vec![1.0, 2.0, 4.0, 7.0],
            vec![0.0, 3.0, 3.5, 6.0],
            vec![2.0, 2.5, 5.0, 8.0],
        ])
        .unwrap()
    }

    #[test]
    fn k1_design_rows() {
        let layout = AncovaLayout::new(vec![vec![0.0, 2.0]]).unwrap();
        let x = build_design(&layout).unwrap();
        assert_eq!(x.shape(), (2, 2));
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0]);
        assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let layout = AncovaLayout::new(vec![vec![0.0], vec![0.0]]).unwrap();
        assert!(matches!(build_design(&layout), Err(Error::SingularDesign)));
        let layout = AncovaLayout::new(vec![vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 5.0]]).unwrap();
        assert!(matches!(build_design(&layout), Err(Error::SingularDesign)));
    }

    #[test]
    fn layout_validation() {
        assert!(AncovaLayout::new(vec![]).is_err());
        assert!(AncovaLayout::new(vec![vec![1.0], vec![]]).is_err());
        assert!(AncovaLayout::from_parts(2, vec![2, 3], vec![vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(AncovaLayout::from_parts(3, vec![2, 2], vec![vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(AncovaLayout::new(vec![vec![f64::NAN, 1.0]]).is_err());
        assert!(ContrastSpec::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(ContrastSpec::treatment_difference(3, 1, 1, 1.0).is_err());
        assert!(ContrastSpec::treatment_difference(3, 0, 3, 1.0).is_err());
    }

    #[test]
    fn too_few_residual_df() {
        let layout = AncovaLayout::new(vec![vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let a = ContrastSpec::treatment_difference(2, 0, 1, 1.0).unwrap();
        assert!(matches!(build_geometry(&layout, &a), Err(Error::Domain(_))));
        assert!(critical_values(&layout, 0.05, 0.1, 0.1).is_err());
    }

    #[test]
    fn identity_gram() {
        let k = 3;
        let eye = DMatrix::<f64>::identity(2 * k, 2 * k);
        let a = [1.0, -1.0, 0.0, 0.5, -0.5, 0.0];
        let g = GeometryBundle::from_gram(&eye, &a, 10).unwrap();
        assert_relative_eq!(g.v22, DMatrix::identity(k, k), epsilon = 1e-14);
        let u = differencing_matrix(k);
        assert_relative_eq!(g.w22, &u * u.transpose(), epsilon = 1e-14);
        let mut expected = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            expected[(i, i)] = 1.0;
        }
        assert_relative_eq!(g.g_tau, expected, epsilon = 1e-14);
        // v11 = |a|^2, v* = intercept part of |a|^2
        assert_relative_eq!(g.v11, 2.5, epsilon = 1e-14);
        assert_relative_eq!(g.v_star, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn selector_relationships() {
        let k = 4;
        let c_xi = difference_selector(k);
        let u = differencing_matrix(k);
        let c_tau = slope_selector(k);
        assert_eq!(c_xi.transpose(), &u * c_tau.transpose());
        let beta = DVector::from_vec(vec![9.0, 9.0, 9.0, 9.0, 1.0, 2.0, 4.0, 8.0]);
        let xi = c_xi.transpose() * beta;
        assert_eq!(xi.as_slice(), &[-1.0, -3.0, -7.0]);
    }

    #[test]
    fn geometry_invariants_on_small_layout() {
        let layout = balanced3();
        let a = ContrastSpec::difference_at_extreme(&layout, 0, 1).unwrap();
        let g = build_geometry(&layout, &a).unwrap();
        assert_eq!(g.m, 6);
        assert!(g.v_star > 0.0 && g.v_star <= g.v11);
        assert!(g.w_star > 0.0 && g.w_star <= g.v11);
        assert!(g.cond_var_xi > 0.0);
        assert_relative_eq!(&g.g_tau * &g.g_tau, g.g_tau.clone(), epsilon = 1e-10);
        assert_relative_eq!(&g.g_xi * &g.g_xi, g.g_xi.clone(), epsilon = 1e-10);
        let kill = &g.g_tau * &g.xtx_inv * &g.c_tau;
        assert!(kill.amax() < 1e-10);
        let kill = &g.g_xi * &g.xtx_inv * &g.c_xi;
        assert!(kill.amax() < 1e-10);
        // the cached forms agree with the matrix definitions
        let q = [0.3, -1.2, 0.7];
        let qv = DVector::from_column_slice(&q);
        assert_relative_eq!(g.tau_form(&q), (qv.transpose() * &g.v22_inv * &qv)[(0, 0)], epsilon = 1e-12);
        let uq = &g.u * &qv;
        assert_relative_eq!(g.xi_form(&q), (uq.transpose() * &g.w22_inv * &uq)[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn slope_only_contrast_is_rejected() {
        let layout = balanced3();
        let a = ContrastSpec::new(vec![0.0, 0.0, 0.0, 1.0, -1.0, 0.0], 3).unwrap();
        assert!(matches!(build_geometry(&layout, &a), Err(Error::ConditioningFailure(_))));
    }

    #[test]
    fn thresholds_are_monotone_in_level() {
        let layout = balanced3();
        let loose = critical_values(&layout, 0.05, 0.2, 0.2).unwrap();
        let strict = critical_values(&layout, 0.05, 0.05, 0.05).unwrap();
        assert!(loose.l_tau < strict.l_tau);
        assert!(loose.l_xi < strict.l_xi);
        assert!(critical_values(&layout, 1.0, 0.1, 0.1).is_err());
        assert!(critical_values(&layout, 0.05, 0.0, 0.1).is_err());
    }

    #[test]
    fn with_thresholds_records_implied_sizes() {
        let layout = balanced3();
        let cfg = critical_values(&layout, 0.05, 0.1, 0.1).unwrap();
        let off = cfg.always_full();
        assert_eq!(off.sig_tau, 1.0);
        let never = cfg.with_thresholds(f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!(never.sig_tau, 0.0);
        let same = cfg.with_thresholds(cfg.l_tau, cfg.l_xi).unwrap();
        assert!((same.sig_tau - 0.1).abs() < 1e-12);
        assert!(cfg.with_thresholds(-1.0, 0.0).is_err());
    }
}
