//! Analytic gradients and Hessians against central finite differences.

use modeclust::density::{DensityModel, GaussianMixture, KernelDensityEstimate};
use modeclust::linalg::{random_rotation, Point};
use modeclust::rng::{RngStream, StreamKey};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn step(x: &Point) -> f64 {
    1e-5 * (1.0 + x.norm())
}

fn fd_gradient(m: &dyn DensityModel, x: &Point) -> Point {
    let s = step(x);
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += s;
            b[i] -= s;
            (m.density(&a) - m.density(&b)) / (2.0 * s)
        }),
    )
}

fn fd_hessian(m: &dyn DensityModel, x: &Point) -> DMatrix<f64> {
    let s = step(x);
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += s;
        b[i] -= s;
        let col = (m.gradient(&a).1 - m.gradient(&b).1) / (2.0 * s);
        h.set_column(i, &col);
    }
    h
}

fn rel(a: f64, b: f64) -> f64 {
    a / b.max(f64::MIN_POSITIVE)
}

fn random_mixture(d: usize, rng: &mut RngStream) -> GaussianMixture {
    let k = 3;
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for _ in 0..k {
        means.push(DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)));
        let q = random_rotation(d, rng);
        let eig = DVector::from_fn(d, |_, _| rng.random_range(0.4..1.6));
        let c = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        covs.push((&c + c.transpose()) * 0.5);
    }
    GaussianMixture::new(vec![0.5, 0.3, 0.2], means, covs).unwrap()
}

fn check_model(m: &dyn DensityModel, points: &[Point]) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for x in points {
        let e = m.eval(x);
        let g = fd_gradient(m, x);
        let h = fd_hessian(m, x);
        worst.0 = worst.0.max(rel((&e.gradient - &g).norm(), e.gradient.norm()));
        worst.1 = worst.1.max(rel((&e.hessian - &h).norm(), e.hessian.norm()));
    }
    worst
}

#[test]
fn mixture_and_kde_derivatives_match_finite_differences() {
    for d in [1, 2, 5, 10] {
        let mut rng = RngStream::derive(7, StreamKey::new(d as u64, "fd"));
        let gm = random_mixture(d, &mut rng);
        let data = gm.sample(40, &mut rng);
        let kde = KernelDensityEstimate::new(data, 0.8).unwrap();
        let points = gm.sample(20, &mut rng);
        let (g, h) = check_model(&gm, &points);
        assert!(g < 1e-6 && h < 1e-4, "mixture d={d}: gradient {g:e}, hessian {h:e}");
        let (g, h) = check_model(&kde, &points);
        assert!(g < 1e-6 && h < 1e-4, "kde d={d}: gradient {g:e}, hessian {h:e}");
    }
}

#[test]
fn log_space_gradient_is_consistent() {
    let mut rng = RngStream::derive(3, StreamKey::new(0, "log"));
    let gm = random_mixture(3, &mut rng);
    for x in gm.sample(10, &mut rng) {
        let (p, g) = gm.gradient(&x);
        let (lp, lg) = gm.log_gradient(&x);
        assert!((lp.exp() - p).abs() <= 1e-14 * p);
        assert!((lg * p - &g).norm() <= 1e-12 * g.norm().max(p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kde_gradient_matches_fd(seed in 0u64..1000, h in 0.3f64..2.0, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
        let mut rng = RngStream::derive(seed, StreamKey::new(0, "prop-fd"));
        let data: Vec<Point> = (0..15).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0))).collect();
        let kde = KernelDensityEstimate::new(data, h).unwrap();
        let x = DVector::from_vec(vec![x0, x1]);
        let (_, g) = kde.gradient(&x);
        let fd = fd_gradient(&kde, &x);
        // absolute floor for points where the gradient nearly vanishes
        prop_assert!((&g - &fd).norm() <= 1e-6 * g.norm() + 1e-12);
    }
}
