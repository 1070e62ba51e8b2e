//! The closed-form conditional probabilities against brute force: draw the
//! intercept estimates from their conditional normal given the slope
//! estimates `Q = q`, evaluate the coverage events directly, and average.

use ancova_cp::design::build_design;
use ancova_cp::selection::{coverage_indicator, select_region};
use ancova_cp::{build_geometry, critical_values, ConditionalKernel, DesignFile, Region, ScaledSufficientStats};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DRAWS: usize = 100_000;

fn brute_force(gamma: &[f64], q: &[f64], d: f64, seed: u64) -> (Region, f64) {
    let design = DesignFile::reference();
    let geom = build_geometry(&design.layout, &design.contrast).unwrap();
    let cfg = critical_values(&design.layout, 0.05, 0.1, 0.1).unwrap();
    let x = build_design(&design.layout).unwrap();
    let sigma = (x.transpose() * &x).lu().try_inverse().unwrap();
    let k = 3;
    let s_ii = sigma.view((0, 0), (k, k)).into_owned();
    let s_is = sigma.view((0, k), (k, k)).into_owned();
    let s_ss = sigma.view((k, k), (k, k)).into_owned();
    let s_ss_inv = s_ss.lu().try_inverse().unwrap();
    let gi = DVector::from_column_slice(&gamma[..k]);
    let shift = DVector::from_column_slice(q) - DVector::from_column_slice(&gamma[k..]);
    let mean = gi + &s_is * &s_ss_inv * shift;
    let cov: DMatrix<f64> = &s_ii - &s_is * &s_ss_inv * s_is.transpose();
    let l = cov.cholesky().unwrap().l();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut region = None;
    for _ in 0..DRAWS {
        let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)));
        let int = &mean + &l * z;
        let gamma_hat: Vec<f64> = int.iter().copied().chain(q.iter().copied()).collect();
        let stats = ScaledSufficientStats::new(gamma_hat, d).unwrap();
        region.get_or_insert(select_region(&stats, &geom, &cfg).unwrap().region);
        hits += coverage_indicator(&stats, &geom, &cfg, gamma).unwrap() as usize;
    }
    (region.unwrap(), hits as f64 / DRAWS as f64)
}

fn check(gamma: &[f64], q: &[f64], d: f64, expected_region: Region, seed: u64) {
    let design = DesignFile::reference();
    let geom = build_geometry(&design.layout, &design.contrast).unwrap();
    let cfg = critical_values(&design.layout, 0.05, 0.1, 0.1).unwrap();
    let kernel = ConditionalKernel::new(&geom, &cfg, &gamma[3..]).unwrap();
    let p = match expected_region {
        Region::A => kernel.p_tau(q, d).unwrap(),
        Region::B => kernel.p_xi(q, d).unwrap(),
        Region::C => kernel.p_full(q, d).unwrap(),
    };
    assert_eq!(p, kernel.conditional_cp(q, d).unwrap());
    let (region, freq) = brute_force(gamma, q, d, seed);
    assert_eq!(region, expected_region);
    let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * se, "region {region}: closed form {p}, brute force {freq}, se {se}");
}

#[test]
fn region_a() {
    check(&[1.0, -2.0, 0.5, 0.04, -0.03, 0.05], &[0.02, 0.01, -0.03], 15.0, Region::A, 1);
    check(&[0.0, 0.0, 0.0, 0.1, 0.0, -0.1], &[0.05, -0.02, 0.0], 22.0, Region::A, 2);
}

#[test]
fn region_b() {
    check(&[0.3, 0.3, -1.0, 0.2, 0.15, 0.25], &[0.22, 0.2, 0.21], 16.0, Region::B, 3);
    check(&[0.0, 0.0, 0.0, 0.0, 0.1, 0.05], &[0.3, 0.32, 0.29], 19.0, Region::B, 4);
}

#[test]
fn region_c() {
    check(&[2.0, 1.0, 0.0, 0.05, -0.1, 0.0], &[0.2, -0.2, 0.1], 17.0, Region::C, 5);
    check(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.25, -0.25, 0.0], 14.0, Region::C, 6);
}
