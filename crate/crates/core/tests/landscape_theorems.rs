//! Core geometry: distance of core points to the boundary, label agreement
//! of core pairs under a perturbed flow, and core mass.

use modeclust::density::{sup_discrepancy, DensityModel, GaussianMixture};
use modeclust::flow::FlowConfig;
use modeclust::linalg::{dist, Point};
use modeclust::morse::{core_membership, default_seeds, CoreSpec, GridSpec, Landscape, NewtonConfig};
use modeclust::rng::{RngStream, StreamKey};
use nalgebra::dvector;

fn landscape(gm: GaussianMixture) -> Landscape<GaussianMixture> {
    let seeds = default_seeds(&[], &gm.means(), 2.0);
    Landscape::analyze(gm, &seeds, &NewtonConfig::default(), FlowConfig::default())
}

#[test]
fn core_points_keep_their_distance_from_the_boundary() {
    let land = landscape(GaussianMixture::symmetric_pair(2, 5.0).unwrap());
    let spec = GridSpec { lo: vec![-6.0, -5.0], hi: vec![6.0, 5.0], per_axis: 81 };
    let grid = land.boundary_grid(&spec).unwrap();
    let xis: Vec<f64> = land.boundary_levels(Some(&grid)).unwrap().iter().map(|b| b.xi).collect();
    let probe = modeclust::density::grid_points(&spec.lo, &spec.hi, 121);
    let c_g = land.stats(&probe).unwrap().c_g;
    let a = 0.01;
    let mut rng = RngStream::derive(12, StreamKey::new(0, "core-dist"));
    let mut seen = 0;
    while seen < 100 {
        let x = land.model.sample(1, &mut rng).pop().unwrap();
        let Some(j) = land.label(&x) else { continue };
        if !core_membership(&land.model, &CoreSpec { cluster_index: j, xi: xis[j], offset: a }, &x, j) {
            continue;
        }
        seen += 1;
        let d = grid.distance_to_boundary(j, &x);
        assert!(d >= a / c_g, "distance {d} < a/C_g = {}", a / c_g);
    }
}

#[test]
fn core_pairs_agree_under_smoothed_flow() {
    let gm = GaussianMixture::symmetric_pair(2, 5.0).unwrap();
    let smooth = gm.smooth(0.1).unwrap();
    let p = landscape(gm);
    let q = landscape(smooth);
    assert_eq!(p.num_modes(), q.num_modes());
    let probe = modeclust::density::grid_points(&[-6.0, -5.0], &[6.0, 5.0], 121);
    let eta0 = sup_discrepancy(&p.model, &q.model, &probe).unwrap().eta0;
    let c_g = p.stats(&probe).unwrap().c_g;
    let shift =
        p.modes.modes.iter().map(|m| q.modes.modes.iter().map(|n| dist(m, n)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    let a = c_g * shift + 2.0 * eta0;
    let xis: Vec<f64> = p.boundary_levels(None).unwrap().iter().map(|b| b.xi).collect();

    let mut rng = RngStream::derive(13, StreamKey::new(0, "core-pairs"));
    let pts = p.model.sample(400, &mut rng);
    let tp = p.labels(&pts).unwrap().labels;
    let tq = q.labels(&pts).unwrap().labels;
    let core: Vec<usize> = p.core_flags(&pts, &tp, &xis, a).iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| i).collect();
    assert!(core.len() >= 40);
    let mut pairs = 0;
    let mut disagreements = 0;
    'outer: for (k, &i) in core.iter().enumerate() {
        for &j in &core[k + 1..] {
            if pairs == 200 {
                break 'outer;
            }
            pairs += 1;
            if (tp[i] == tp[j]) != (tq[i] == tq[j]) {
                disagreements += 1;
            }
        }
    }
    assert_eq!(pairs, 200);
    assert_eq!(disagreements, 0);
}

#[test]
fn core_fraction_matches_direct_monte_carlo() {
    let gm =
        GaussianMixture::new(vec![0.5, 0.5], vec![dvector![-2.0], dvector![2.0]], vec![nalgebra::DMatrix::identity(1, 1); 2])
            .unwrap();
    let land = landscape(gm.clone());
    let xis: Vec<f64> = land.boundary_levels(None).unwrap().iter().map(|b| b.xi).collect();
    let a = 0.02;
    let n = 10_000;
    let mut rng = RngStream::derive(14, StreamKey::new(0, "core-frac"));
    let pts = gm.sample(n, &mut rng);
    let labels = land.labels(&pts).unwrap().labels;
    let frac = land.core_flags(&pts, &labels, &xis, a).iter().filter(|c| **c).count() as f64 / n as f64;

    // oracle: basins are the half-lines, the boundary level is p(0)
    let xi = gm.density(&dvector![0.0]);
    let mut rng = RngStream::derive(14, StreamKey::new(1, "core-frac-oracle"));
    let other: Vec<Point> = gm.sample(n, &mut rng);
    let direct = other.iter().filter(|x| x[0] != 0.0 && gm.density(x) >= xi + a).count() as f64 / n as f64;
    let se = (direct * (1.0 - direct) * 2.0 / n as f64).sqrt();
    assert!((frac - direct).abs() <= 3.0 * se, "{frac} vs {direct} (se {se})");
}
