use modeclust::density::{DensityModel, KernelDensityEstimate};
use modeclust::experiments::basins2d_mixture;
use modeclust::linalg::{dist, Point};
use modeclust::mean_shift::{cluster_samples, mean_shift_step, run_mean_shift, MeanShiftConfig};
use modeclust::morse::{cross_check_kde_modes, default_seeds, find_critical_points, NewtonConfig};
use modeclust::rng::{RngStream, StreamKey};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn sample_kde(seed: u64, n: usize, h: f64) -> KernelDensityEstimate {
    let mut rng = RngStream::derive(seed, StreamKey::new(0, "ms"));
    KernelDensityEstimate::new(basins2d_mixture().sample(n, &mut rng), h).unwrap()
}

#[test]
fn shift_identity() {
    let kde = sample_kde(1, 300, 0.7);
    let h2 = kde.bandwidth().powi(2);
    let mut rng = RngStream::derive(1, StreamKey::new(1, "points"));
    for _ in 0..100 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
        let step = mean_shift_step(&kde, &x).unwrap().point;
        let (_, glog) = kde.log_gradient(&x);
        let expected = glog * h2;
        let got = &step - &x;
        assert!((&got - &expected).norm() <= 1e-10 * expected.norm().max(1e-300), "{got} vs {expected}");
    }
}

#[test]
fn density_never_decreases_along_trajectories() {
    let kde = sample_kde(2, 200, 0.6);
    let cfg = MeanShiftConfig { record_trajectories: true, ..MeanShiftConfig::new(0.6) };
    let out = cluster_samples(&kde, &cfg).unwrap();
    for t in out.trajectories.unwrap() {
        for w in t.windows(2) {
            let (a, b) = (kde.density(&w[0]), kde.density(&w[1]));
            assert!(b >= a - 1e-12 * a, "{a} -> {b}");
        }
    }
}

#[test]
fn output_invariants() {
    let kde = sample_kde(3, 250, 0.5);
    let cfg = MeanShiftConfig::new(0.5);
    let out = cluster_samples(&kde, &cfg).unwrap();
    let m = &out.mode_set.modes;
    for i in 0..m.len() {
        assert!(kde.gradient(&m[i]).1.norm() < cfg.grad_tol);
        for j in (i + 1)..m.len() {
            assert!(dist(&m[i], &m[j]) > cfg.merge_tol);
        }
    }
    for ((l, e), c) in out.labels.iter().zip(&out.endpoints).zip(&out.converged) {
        if *c {
            assert!(dist(&m[l.unwrap()], e) <= cfg.merge_tol);
        }
    }
}

#[test]
fn kde_modes_from_newton_are_mean_shift_fixed_points() {
    let kde = sample_kde(4, 150, 0.8);
    let seeds = default_seeds(kde.samples(), &[], 1.0);
    let crit = find_critical_points(&kde, &seeds, &NewtonConfig::default());
    let moves = cross_check_kde_modes(&kde, &crit);
    assert!(!moves.is_empty());
    for (cp, mv) in crit.iter().filter(|c| c.is_mode()).zip(&moves) {
        assert!(kde.gradient(&cp.location).1.norm() < 1e-8);
        assert!(*mv < 1e-8, "mode moved by {mv}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mirrored_data_gives_mirrored_modes(seed in 0u64..500, h in 0.4f64..1.2) {
        let mut rng = RngStream::derive(seed, StreamKey::new(0, "mirror"));
        let data: Vec<Point> = (0..40).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0))).collect();
        let flipped: Vec<Point> = data.iter().map(|x| -x).collect();
        let cfg = MeanShiftConfig::new(h);
        let a = run_mean_shift(&KernelDensityEstimate::new(data.clone(), h).unwrap(), &data, &cfg).unwrap();
        let b = run_mean_shift(&KernelDensityEstimate::new(flipped.clone(), h).unwrap(), &flipped, &cfg).unwrap();
        prop_assert_eq!(a.mode_set.len(), b.mode_set.len());
        for m in &a.mode_set.modes {
            let (_, d) = b.mode_set.nearest(&-m).unwrap();
            prop_assert!(d < 1e-8, "mirrored mode off by {}", d);
        }
    }

    #[test]
    fn single_step_ascends(seed in 0u64..500, x0 in -4.0f64..4.0, x1 in -4.0f64..4.0) {
        let kde = sample_kde(seed, 60, 0.7);
        let x = DVector::from_vec(vec![x0, x1]);
        let y = mean_shift_step(&kde, &x).unwrap().point;
        let (a, b) = (kde.density(&x), kde.density(&y));
        prop_assert!(b >= a - 1e-12 * a);
    }
}
