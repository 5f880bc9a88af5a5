//! Mean-shift mode seeking on a Gaussian-kernel density estimate.
//!
//! Each seed is moved to the kernel-weighted mean of the samples until the
//! step length drops below `step_tol`. Converged endpoints are merged by
//! single linkage at `merge_tol`; every merged group is then polished with a
//! few Newton steps on `grad log p` so the reported mode is a stationary
//! point to working precision.

use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;

use crate::density::{DensityModel, KernelDensityEstimate, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, lex_cmp, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub max_iters: usize,
    pub step_tol: f64,
    pub merge_tol: f64,
    pub grad_tol: f64,
    /// Keep every iterate of every seed.
    pub record_trajectories: bool,
}

impl MeanShiftConfig {
    pub fn new(bandwidth: f64) -> Self {
        Self { bandwidth, max_iters: 500, step_tol: 1e-7, merge_tol: 0.1 * bandwidth, grad_tol: 1e-8, record_trajectories: false }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.bandwidth) {
            return Err(Error::invalid("mean shift bandwidth must be positive"));
        }
        if !(positive(self.step_tol) && positive(self.merge_tol) && positive(self.grad_tol)) {
            return Err(Error::invalid("mean shift tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Distinct modes with their density values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModeSet {
    pub modes: Vec<Point>,
    pub densities: Vec<f64>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the mode nearest to `x`.
    pub fn nearest(&self, x: &Point) -> Option<(usize, f64)> {
        self.modes.iter().enumerate().map(|(i, m)| (i, dist(m, x))).min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Per-point cluster labels shared by mean shift (estimate) and the flow
/// oracle (truth). A `None` label marks a point without a usable destination.
#[derive(Clone, Debug, Default)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub mode_set: ModeSet,
    pub endpoints: Vec<Point>,
    pub trajectories: Option<Vec<Vec<Point>>>,
    /// Mean-shift iterations, or field evaluations for flows.
    pub iterations: Vec<usize>,
    /// False for non-converged seeds and unresolved flows.
    pub converged: Vec<bool>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.mode_set.len()
    }

    pub fn num_unconverged(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// Labels with non-converged points masked out.
    pub fn strict_labels(&self) -> Vec<Option<usize>> {
        self.labels.iter().zip(&self.converged).map(|(l, c)| if *c { *l } else { None }).collect()
    }
}

/// One mean-shift update.
#[derive(Clone, Debug)]
pub struct ShiftStep {
    pub point: Point,
    /// Set when the density at the input is below the numerical floor; the
    /// point is returned unchanged.
    pub underflow: bool,
}

/// Kernel-weighted mean of the samples as seen from `x`.
pub fn mean_shift_step(kde: &KernelDensityEstimate, x: &Point) -> Result<ShiftStep> {
    if x.len() != kde.dim() {
        return Err(Error::DimensionMismatch { expected: kde.dim(), got: x.len() });
    }
    if !all_finite(x.as_slice()) {
        return Err(Error::NonFinite("mean shift point".into()));
    }
    Ok(step(kde, x))
}

fn step(kde: &KernelDensityEstimate, x: &Point) -> ShiftStep {
    let d = kde.dim();
    let xs = x.as_slice();
    let logs = kde.log_kernels(xs);
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut shift = vec![0.0; d];
    for (l, row) in logs.iter().zip(kde.rows()) {
        let w = (l - max).exp();
        if w == 0.0 {
            continue;
        }
        sum += w;
        for k in 0..d {
            shift[k] += w * (row[k] - xs[k]);
        }
    }
    let log_p = kde.log_norm() + max + sum.ln();
    if !(log_p >= DENSITY_FLOOR.ln()) || sum == 0.0 {
        return ShiftStep { point: x.clone(), underflow: true };
    }
    let point = DVector::from_iterator(d, xs.iter().zip(&shift).map(|(a, s)| a + s / sum));
    ShiftStep { point, underflow: false }
}

struct SeedRun {
    endpoint: Point,
    iterations: usize,
    converged: bool,
    path: Option<Vec<Point>>,
}

fn iterate_seed(kde: &KernelDensityEstimate, seed: &Point, cfg: &MeanShiftConfig) -> SeedRun {
    let mut x = seed.clone();
    let mut path = cfg.record_trajectories.then(|| vec![x.clone()]);
    for it in 1..=cfg.max_iters {
        let s = step(kde, &x);
        if s.underflow {
            return SeedRun { endpoint: x, iterations: it, converged: false, path };
        }
        let moved = dist(&s.point, &x);
        x = s.point;
        if let Some(p) = path.as_mut() {
            p.push(x.clone());
        }
        if moved < cfg.step_tol {
            return SeedRun { endpoint: x, iterations: it, converged: true, path };
        }
    }
    SeedRun { endpoint: x, iterations: cfg.max_iters, converged: false, path }
}

/// Newton polish of a mean-shift endpoint on `grad log p`, falling back to
/// plain mean-shift steps where the Hessian is not negative definite.
fn polish(kde: &KernelDensityEstimate, start: &Point, cfg: &MeanShiftConfig) -> Point {
    let radius = 0.5 * cfg.merge_tol;
    let mut x = start.clone();
    for _ in 0..100 {
        let le = kde.log_eval(&x);
        let gnorm = le.gradient.norm();
        if le.log_density.exp() * gnorm < 1e-3 * cfg.grad_tol || gnorm < 1e-13 {
            break;
        }
        let neg = -&le.hessian;
        let candidate = match Cholesky::<f64, Dyn>::new(neg) {
            Some(ch) => &x + ch.solve(&le.gradient),
            None => step(kde, &x).point,
        };
        if dist(&candidate, start) > radius || kde.log_gradient(&candidate).1.norm() >= gnorm {
            // Newton left the basin or stalled: finish with mean shift
            let s = step(kde, &x).point;
            if dist(&s, &x) < 1e-15 {
                break;
            }
            x = s;
            continue;
        }
        x = candidate;
    }
    x
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage groups of `points` at distance `tol`, each group listed by
/// member index.
pub(crate) fn single_linkage(points: &[Point], tol: f64) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(points.len());
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if dist(&points[i], &points[j]) <= tol {
                uf.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; points.len()];
    for i in 0..points.len() {
        let r = uf.find(i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups
}

/// Runs mean shift from every seed and assigns each seed to a mode.
pub fn run_mean_shift(kde: &KernelDensityEstimate, seeds: &[Point], cfg: &MeanShiftConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::invalid("mean shift needs at least one seed"));
    }
    if (cfg.bandwidth - kde.bandwidth()).abs() > 1e-12 * kde.bandwidth() {
        return Err(Error::invalid(format!("config bandwidth {} differs from KDE bandwidth {}", cfg.bandwidth, kde.bandwidth())));
    }
    for s in seeds {
        if s.len() != kde.dim() {
            return Err(Error::DimensionMismatch { expected: kde.dim(), got: s.len() });
        }
        if !all_finite(s.as_slice()) {
            return Err(Error::NonFinite("mean shift seed".into()));
        }
    }

    let runs: Vec<SeedRun> = seeds.par_iter().map(|s| iterate_seed(kde, s, cfg)).collect();
    let converged: Vec<bool> = runs.iter().map(|r| r.converged).collect();
    let endpoints: Vec<Point> = runs.iter().map(|r| r.endpoint.clone()).collect();

    let mut members: Vec<usize> = (0..runs.len()).filter(|&i| converged[i]).collect();
    if members.is_empty() {
        log::warn!("no mean-shift seed converged; building modes from raw endpoints");
        members = (0..runs.len()).collect();
    }
    let unconverged = runs.len() - converged.iter().filter(|c| **c).count();
    if unconverged > 0 {
        log::warn!("{unconverged} of {} mean-shift seeds did not converge", runs.len());
    }

    // merge endpoints, polish one representative per group, then merge again
    // in case two chains polished onto the same mode
    let member_points: Vec<Point> = members.iter().map(|&i| endpoints[i].clone()).collect();
    let groups = single_linkage(&member_points, cfg.merge_tol);
    let reps: Vec<Point> = groups
        .par_iter()
        .map(|g| {
            let best = g
                .iter()
                .map(|&k| (k, kde.log_density(&member_points[k])))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .unwrap_or(g[0]);
            polish(kde, &member_points[best], cfg)
        })
        .collect();
    let regroups = single_linkage(&reps, cfg.merge_tol);

    let mut modes: Vec<(Point, f64, Vec<usize>)> = regroups
        .iter()
        .map(|rg| {
            let (mode, logp) = rg
                .iter()
                .map(|&g| (reps[g].clone(), kde.log_density(&reps[g])))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty group");
            let seeds_in: Vec<usize> = rg.iter().flat_map(|&g| groups[g].iter().map(|&k| members[k])).collect();
            (mode, logp.exp(), seeds_in)
        })
        .collect();
    modes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| lex_cmp(&a.0, &b.0)));

    let mut labels = vec![None; runs.len()];
    for (idx, (_, _, seeds_in)) in modes.iter().enumerate() {
        for &s in seeds_in {
            labels[s] = Some(idx);
        }
    }
    let mode_set = ModeSet { modes: modes.iter().map(|m| m.0.clone()).collect(), densities: modes.iter().map(|m| m.1).collect() };
    for (i, l) in labels.iter_mut().enumerate() {
        if l.is_none() {
            *l = mode_set.nearest(&endpoints[i]).map(|(k, _)| k);
        }
    }

    let iterations = runs.iter().map(|r| r.iterations).collect();
    let trajectories = cfg.record_trajectories.then(|| runs.into_iter().map(|r| r.path.unwrap_or_default()).collect());
    Ok(ClusterAssignment { labels, mode_set, endpoints, trajectories, iterations, converged })
}

/// Mean shift seeded at the KDE's own samples.
pub fn cluster_samples(kde: &KernelDensityEstimate, cfg: &MeanShiftConfig) -> Result<ClusterAssignment> {
    let seeds = kde.samples().to_vec();
    run_mean_shift(kde, &seeds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianMixture;
    use crate::linalg::sym_eigenvalues;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn kde(points: &[f64], h: f64) -> KernelDensityEstimate {
        KernelDensityEstimate::new(points.iter().map(|v| dvector![*v]).collect(), h).unwrap()
    }

    #[test]
    fn single_sample_pulls_everything_to_it() {
        let k = kde(&[0.0], 1.0);
        for x in [-3.0, 0.2, 5.0] {
            let s = mean_shift_step(&k, &dvector![x]).unwrap();
            assert_abs_diff_eq!(s.point[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_point_weighted_mean() {
        let k = kde(&[-1.0, 1.0], 1.0);
        let s = mean_shift_step(&k, &dvector![0.5]).unwrap();
        let (a, b) = ((-1.125f64).exp(), (-0.125f64).exp());
        let expected = (-a + b) / (a + b);
        assert_abs_diff_eq!(s.point[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.462_117_157_260_009_8, epsilon = 1e-12);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let k = kde(&[-1.0, 1.0], 1.0);
        let s = mean_shift_step(&k, &dvector![0.0]).unwrap();
        assert_abs_diff_eq!(s.point[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn far_point_flags_underflow() {
        let k = kde(&[0.0], 0.01);
        let s = mean_shift_step(&k, &dvector![100.0]).unwrap();
        assert!(s.underflow);
        assert_eq!(s.point[0], 100.0);
    }

    #[test]
    fn two_groups_two_modes() {
        let mut rng = RngStream::from_seed(2);
        let mut pts = Vec::new();
        for _ in 0..50 {
            pts.push(-5.0 + 0.3 * (rng.uniform() - 0.5));
            pts.push(5.0 + 0.3 * (rng.uniform() - 0.5));
        }
        let k = kde(&pts, 1.0);
        let out = cluster_samples(&k, &MeanShiftConfig::new(1.0)).unwrap();
        assert_eq!(out.num_clusters(), 2);
        // oracle: each mode is a root of the 1-d KDE derivative near ±5
        for m in &out.mode_set.modes {
            assert!((m[0].abs() - 5.0).abs() < 0.2);
            assert!(k.gradient(m).1.norm() < 1e-8);
        }
        let pos = out.labels[pts.iter().position(|v| *v > 0.0).unwrap()];
        for (v, l) in pts.iter().zip(&out.labels) {
            assert_eq!(*v > 0.0, *l == pos);
        }
    }

    #[test]
    fn unimodal_gaussian_sample() {
        let gm = GaussianMixture::spherical(vec![1.0], vec![dvector![0.0, 0.0]], 1.0).unwrap();
        let xs = gm.sample(200, &mut RngStream::from_seed(9));
        let k = KernelDensityEstimate::new(xs, 1.5).unwrap();
        let out = cluster_samples(&k, &MeanShiftConfig::new(1.5)).unwrap();
        assert_eq!(out.num_clusters(), 1);
        assert!(out.mode_set.modes[0].norm() < 0.5);
        let le = k.eval(&out.mode_set.modes[0]);
        assert!(le.gradient.norm() < 1e-8);
        assert!(sym_eigenvalues(&le.hessian).iter().all(|v| *v < 0.0));
    }

    #[test]
    fn rejects_bad_config_and_seeds() {
        let k = kde(&[0.0, 1.0], 1.0);
        assert!(run_mean_shift(&k, &[], &MeanShiftConfig::new(1.0)).is_err());
        let mut cfg = MeanShiftConfig::new(1.0);
        cfg.max_iters = 0;
        assert!(run_mean_shift(&k, &[dvector![0.0]], &cfg).is_err());
        assert!(run_mean_shift(&k, &[dvector![0.0, 1.0]], &MeanShiftConfig::new(1.0)).is_err());
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let k = kde(&[-1.0, 0.0, 3.0], 0.5);
        let mut cfg = MeanShiftConfig::new(0.5);
        cfg.max_iters = 1;
        let out = run_mean_shift(&k, &[dvector![1.2]], &cfg).unwrap();
        assert!(!out.converged[0]);
        assert!(out.labels[0].is_some());
    }
}
