//! Critical points, basin boundaries and cluster cores of a density.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::density::{bounding_box, grid_points, DensityModel, KernelDensityEstimate};
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, true_labels, DestKind, FlowConfig};
use crate::linalg::{dist, lex_cmp, sym_spectral_norm, Point};
use crate::mean_shift::{mean_shift_step, ClusterAssignment, ModeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticalKind {
    Mode,
    Saddle,
    Minimum,
}

impl CriticalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticalKind::Mode => "mode",
            CriticalKind::Saddle => "saddle",
            CriticalKind::Minimum => "minimum",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub location: Point,
    pub value: f64,
    /// Number of negative Hessian eigenvalues.
    pub morse_index: usize,
    /// Eigenvalues of the Hessian of `p`, ascending.
    pub hessian_eigenvalues: Vec<f64>,
    /// Some eigenvalue of the Hessian of `log p` is within the degeneracy
    /// threshold of zero.
    pub degenerate: bool,
    /// `|grad p|` at the location.
    pub gradient_norm: f64,
}

impl CriticalPoint {
    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn kind(&self) -> CriticalKind {
        if self.morse_index == self.dim() {
            CriticalKind::Mode
        } else if self.morse_index == 0 {
            CriticalKind::Minimum
        } else {
            CriticalKind::Saddle
        }
    }

    pub fn is_mode(&self) -> bool {
        self.kind() == CriticalKind::Mode
    }

    /// One report line: kind, Morse index, density, coordinates.
    pub fn report_line(&self) -> String {
        let coords: Vec<String> = self.location.iter().map(|v| format!("{v:.10e}")).collect();
        format!("{},{},{:.10e},{}", self.kind().as_str(), self.morse_index, self.value, coords.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|grad log p|`.
    pub tol: f64,
    pub dedup_tol: f64,
    pub degeneracy_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-11, dedup_tol: 1e-6, degeneracy_tol: 1e-10 }
    }
}

/// Damped Newton on `grad log p` (same roots as `grad p` where `p > 0`),
/// backtracking on the residual norm.
fn newton_root(model: &dyn DensityModel, seed: &Point, cfg: &NewtonConfig) -> Option<Point> {
    let mut x = seed.clone();
    let mut le = model.log_eval(&x);
    let mut r = le.gradient.norm();
    for _ in 0..cfg.max_iters {
        if !r.is_finite() {
            return None;
        }
        if r < cfg.tol {
            return Some(x);
        }
        let step = le.hessian.clone().lu().solve(&(-&le.gradient))?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x + &step * alpha;
            let g = model.log_gradient(&trial).1.norm();
            if g.is_finite() && g < (1.0 - 1e-4 * alpha) * r {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // roundoff floor near a root
            return (r < 1e3 * cfg.tol).then_some(x);
        }
        le = model.log_eval(&x);
        r = le.gradient.norm();
    }
    (r < cfg.tol).then_some(x)
}

/// Length of the Newton step at `x`; an estimate of the distance to the root
/// that stays large near degenerate roots.
fn newton_step_len(model: &dyn DensityModel, x: &Point) -> f64 {
    let le = model.log_eval(x);
    le.hessian.lu().solve(&le.gradient).map_or(f64::INFINITY, |s| s.norm())
}

fn classify(model: &dyn DensityModel, x: Point, step: f64, cfg: &NewtonConfig) -> CriticalPoint {
    let le = model.log_eval(&x);
    let p = le.log_density.exp();
    let eig = SymmetricEigen::new(le.hessian.clone());
    let log_ev = eig.eigenvalues.clone();
    let degenerate = log_ev.iter().any(|v| v.abs() < cfg.degeneracy_tol) || step > cfg.dedup_tol;
    let morse_index = if degenerate {
        // curvature signs are unreliable here; use second differences of
        // log p along the eigenvectors instead
        const R: f64 = 1e-2;
        eig.eigenvectors
            .column_iter()
            .filter(|v| {
                let v = v.clone_owned() * R;
                model.log_density(&(&x + &v)) + model.log_density(&(&x - &v)) < 2.0 * le.log_density
            })
            .count()
    } else {
        log_ev.iter().filter(|v| **v < 0.0).count()
    };
    // at a critical point hess p = p * hess log p
    let mut hessian_eigenvalues: Vec<f64> = log_ev.iter().map(|v| v * p).collect();
    hessian_eigenvalues.sort_by(|a, b| a.total_cmp(b));
    CriticalPoint { value: p, morse_index, hessian_eigenvalues, degenerate, gradient_norm: le.gradient.norm() * p, location: x }
}

/// Multi-start Newton search for critical points, deduplicated and sorted by
/// decreasing density.
pub fn find_critical_points(model: &dyn DensityModel, seeds: &[Point], cfg: &NewtonConfig) -> Vec<CriticalPoint> {
    let roots: Vec<Point> =
        seeds.par_iter().filter(|s| s.len() == model.dim()).filter_map(|s| newton_root(model, s, cfg)).collect();
    // roots near a degenerate critical point scatter by about their Newton
    // step, so the merge radius grows with it
    let mut found: Vec<(Point, f64, f64)> = Vec::new();
    for r in roots {
        let res = model.log_gradient(&r).1.norm();
        let step = newton_step_len(model, &r);
        match found.iter_mut().find(|(p, _, s)| dist(p, &r) < cfg.dedup_tol.max(10.0 * (s + step))) {
            Some(existing) => {
                if res < existing.1 {
                    *existing = (r, res, step.max(existing.2));
                } else {
                    existing.2 = existing.2.max(step);
                }
            }
            None => found.push((r, res, step)),
        }
    }
    let mut cps: Vec<CriticalPoint> = found.into_iter().map(|(x, _, step)| classify(model, x, step, cfg)).collect();
    for c in cps.iter().filter(|c| c.degenerate) {
        log::warn!("degenerate critical point at {:?}: density is not Morse there", c.location.as_slice());
    }
    cps.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| lex_cmp(&a.location, &b.location)));
    cps
}

/// Default Newton seeds: data, mixture means, points on segments between
/// means and, for `d <= 3`, a grid over the padded bounding box.
pub fn default_seeds(data: &[Point], means: &[Point], pad: f64) -> Vec<Point> {
    let mut seeds: Vec<Point> = data.iter().chain(means).cloned().collect();
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            for k in 1..20 {
                let t = k as f64 / 20.0;
                seeds.push(&means[i] * (1.0 - t) + &means[j] * t);
            }
        }
    }
    if let Some(d) = seeds.first().map(|s| s.len()) {
        let per_axis = match d {
            1 => 200,
            2 => 40,
            3 => 12,
            _ => 0,
        };
        if per_axis > 0 {
            let (lo, hi) = bounding_box(&seeds);
            let lo: Vec<f64> = lo.iter().map(|v| v - pad).collect();
            let hi: Vec<f64> = hi.iter().map(|v| v + pad).collect();
            seeds.extend(grid_points(&lo, &hi, per_axis));
        }
    }
    seeds
}

/// The modes among `critical`, in the same order.
pub fn mode_set(model: &dyn DensityModel, critical: &[CriticalPoint]) -> ModeSet {
    let modes: Vec<Point> = critical.iter().filter(|c| c.is_mode()).map(|c| c.location.clone()).collect();
    let densities = modes.iter().map(|m| model.density(m)).collect();
    ModeSet { modes, densities }
}

/// Mean-shift displacement at each KDE mode; every mode of the estimate must
/// be a fixed point of the mean-shift map.
pub fn cross_check_kde_modes(kde: &KernelDensityEstimate, critical: &[CriticalPoint]) -> Vec<f64> {
    critical
        .iter()
        .filter(|c| c.is_mode())
        .map(|c| mean_shift_step(kde, &c.location).map_or(f64::INFINITY, |s| dist(&s.point, &c.location)))
        .collect()
}

/// Regular grid for boundary extraction (`d <= 2`).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
}

impl GridSpec {
    pub fn around(points: &[Point], pad: f64, per_axis: usize) -> Self {
        let (lo, hi) = bounding_box(points);
        Self { lo: lo.iter().map(|v| v - pad).collect(), hi: hi.iter().map(|v| v + pad).collect(), per_axis }
    }

    fn spacing(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) / (self.per_axis - 1) as f64).fold(0.0, f64::max)
    }

    /// Index pairs of axis-neighbors (4-neighborhood in 2-d).
    fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.per_axis;
        match self.lo.len() {
            1 => (0..n - 1).map(|i| (i, i + 1)).collect(),
            _ => {
                let mut e = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let id = i * n + j;
                        if j + 1 < n {
                            e.push((id, id + 1));
                        }
                        if i + 1 < n {
                            e.push((id, id + n));
                        }
                    }
                }
                e
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryFlag {
    Ok,
    /// No boundary found; the cluster is alone.
    NoBoundary,
    /// The critical-point and grid estimates differ by more than the grid
    /// resolution.
    GridDisagrees,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLevel {
    pub xi: f64,
    pub from_critical: Option<f64>,
    pub from_grid: Option<f64>,
    pub flag: BoundaryFlag,
}

/// Grid labels plus crossing points where the label changes along an edge.
#[derive(Clone, Debug)]
pub struct BoundaryGrid {
    pub spec: GridSpec,
    pub points: Vec<Point>,
    pub labels: Vec<Option<usize>>,
    /// `(label a, label b, point on the boundary)` for every mixed edge.
    pub crossings: Vec<(Option<usize>, Option<usize>, Point)>,
}

impl BoundaryGrid {
    /// Boundary points adjacent to cluster `j`.
    pub fn boundary_of(&self, j: usize) -> Vec<Point> {
        self.crossings.iter().filter(|(a, b, _)| *a == Some(j) || *b == Some(j)).map(|(_, _, p)| p.clone()).collect()
    }

    /// Distance from `x` to the nearest boundary point of cluster `j`.
    pub fn distance_to_boundary(&self, j: usize, x: &Point) -> f64 {
        self.crossings
            .iter()
            .filter(|(a, b, _)| *a == Some(j) || *b == Some(j))
            .map(|(_, _, p)| dist(p, x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Probe-set landscape constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandscapeStats {
    /// Max of `|grad p|`.
    pub c_g: f64,
    /// Min pairwise distance between critical points (`+inf` with fewer than two).
    pub sigma_n: f64,
    /// Max spectral norm of the Hessian.
    pub kappa2: f64,
}

/// Which cluster core a point may belong to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreSpec {
    pub cluster_index: usize,
    pub xi: f64,
    pub offset: f64,
}

/// `x` is in core `j` iff its true label is `j` and `p(x) >= xi_j + a`.
pub fn core_membership(model: &dyn DensityModel, spec: &CoreSpec, x: &Point, label: usize) -> bool {
    label == spec.cluster_index && model.density(x) >= spec.xi + spec.offset
}

pub fn landscape_stats(model: &dyn DensityModel, probe: &[Point], critical: &[CriticalPoint]) -> Result<LandscapeStats> {
    if probe.is_empty() {
        return Err(Error::invalid("probe set is empty"));
    }
    let (c_g, kappa2) = probe
        .par_iter()
        .map(|x| {
            let e = model.eval(x);
            (e.gradient.norm(), sym_spectral_norm(&e.hessian))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let mut sigma_n = f64::INFINITY;
    for i in 0..critical.len() {
        for j in (i + 1)..critical.len() {
            sigma_n = sigma_n.min(dist(&critical[i].location, &critical[j].location));
        }
    }
    Ok(LandscapeStats { c_g, sigma_n, kappa2 })
}

/// A density together with its critical points and the flow settings used to
/// assign basins.
#[derive(Clone, Debug)]
pub struct Landscape<M: DensityModel> {
    pub model: M,
    pub critical: Vec<CriticalPoint>,
    pub modes: ModeSet,
    pub flow: FlowConfig,
}

impl<M: DensityModel> Landscape<M> {
    pub fn analyze(model: M, seeds: &[Point], newton: &NewtonConfig, flow: FlowConfig) -> Self {
        let critical = find_critical_points(&model, seeds, newton);
        let modes = mode_set(&model, &critical);
        Self { model, critical, modes, flow }
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Basin label of a single point.
    pub fn label(&self, x: &Point) -> Option<usize> {
        let r = integrate_flow(&self.model, x, &self.flow, &self.critical).ok()?;
        (r.dest_kind == DestKind::Mode)
            .then(|| self.modes.nearest(&r.destination))
            .flatten()
            .filter(|(_, d)| *d <= self.flow.snap_tol)
            .map(|(i, _)| i)
    }

    pub fn labels(&self, points: &[Point]) -> Result<ClusterAssignment> {
        true_labels(&self.model, points, &self.modes, &self.critical, &self.flow)
    }

    /// Modes reached by ascending from a non-mode critical point along each
    /// of its ascending eigen-directions.
    pub fn adjacent_modes(&self, cp: &CriticalPoint) -> Vec<usize> {
        let le = self.model.log_eval(&cp.location);
        let eig = SymmetricEigen::new(le.hessian);
        let mut out = Vec::new();
        let eps = 1e-3;
        for (k, v) in eig.eigenvalues.iter().enumerate() {
            if *v <= 0.0 {
                continue;
            }
            let dir: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            for sign in [-1.0, 1.0] {
                if let Some(l) = self.label(&(&cp.location + &dir * (sign * eps))) {
                    if !out.contains(&l) {
                        out.push(l);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Labels a grid and locates label changes along grid edges by bisection.
    pub fn boundary_grid(&self, spec: &GridSpec) -> Result<BoundaryGrid> {
        let d = self.dim();
        if d > 2 || spec.lo.len() != d || spec.hi.len() != d {
            return Err(Error::Unsupported(format!("boundary grid needs d <= 2, got d = {d}")));
        }
        if spec.per_axis < 2 {
            return Err(Error::invalid("grid needs at least 2 points per axis"));
        }
        let points = grid_points(&spec.lo, &spec.hi, spec.per_axis);
        let labels: Vec<Option<usize>> = points.par_iter().map(|x| self.label(x)).collect();
        let mixed: Vec<(usize, usize)> = spec.edges().into_iter().filter(|(a, b)| labels[*a] != labels[*b]).collect();
        let crossings = mixed
            .par_iter()
            .map(|&(a, b)| {
                let (mut lo, mut hi) = (points[a].clone(), points[b].clone());
                let la = labels[a];
                for _ in 0..20 {
                    let mid = (&lo + &hi) * 0.5;
                    if self.label(&mid) == la {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (labels[a], labels[b], (lo + hi) * 0.5)
            })
            .collect();
        Ok(BoundaryGrid { spec: spec.clone(), points, labels, crossings })
    }

    /// Boundary level of cluster `j`: the larger of the best non-mode critical
    /// value on the basin closure and, when a grid is given, the best density
    /// over located boundary points.
    pub fn boundary_level(&self, j: usize, grid: Option<&BoundaryGrid>) -> Result<BoundaryLevel> {
        if j >= self.num_modes() {
            return Err(Error::invalid(format!("cluster {j} does not exist ({} modes)", self.num_modes())));
        }
        let from_critical = self
            .critical
            .iter()
            .filter(|c| !c.is_mode())
            .filter(|c| self.adjacent_modes(c).contains(&j))
            .map(|c| c.value)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        let from_grid = grid.and_then(|g| {
            g.boundary_of(j)
                .iter()
                .map(|p| self.model.density(p))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        });
        let (xi, mut flag) = match (from_critical, from_grid) {
            (None, None) => (0.0, BoundaryFlag::NoBoundary),
            (a, b) => (a.unwrap_or(0.0).max(b.unwrap_or(0.0)), BoundaryFlag::Ok),
        };
        if let (Some(a), Some(b), Some(g)) = (from_critical, from_grid, grid) {
            let spacing = g.spec.spacing();
            let slope = g.boundary_of(j).iter().map(|p| self.model.gradient(p).1.norm()).fold(0.0, f64::max);
            let resolution = slope * spacing + 1e-12;
            if (a - b).abs() > resolution {
                flag = BoundaryFlag::GridDisagrees;
                log::warn!("boundary level of cluster {j}: critical {a:e} vs grid {b:e}");
            }
        }
        Ok(BoundaryLevel { xi, from_critical, from_grid, flag })
    }

    /// Boundary levels for every cluster.
    pub fn boundary_levels(&self, grid: Option<&BoundaryGrid>) -> Result<Vec<BoundaryLevel>> {
        (0..self.num_modes()).map(|j| self.boundary_level(j, grid)).collect()
    }

    pub fn stats(&self, probe: &[Point]) -> Result<LandscapeStats> {
        landscape_stats(&self.model, probe, &self.critical)
    }

    /// Core flags for labelled points given per-cluster boundary levels and a
    /// common offset.
    pub fn core_flags(&self, points: &[Point], labels: &[Option<usize>], xis: &[f64], offset: f64) -> Vec<bool> {
        points
            .iter()
            .zip(labels)
            .map(|(x, l)| match l {
                Some(j) => core_membership(&self.model, &CoreSpec { cluster_index: *j, xi: xis[*j], offset }, x, *j),
                None => false,
            })
            .collect()
    }
}

/// Hessian of `p` at `x` (convenience for reports).
pub fn hessian_at(model: &dyn DensityModel, x: &Point) -> DMatrix<f64> {
    model.eval(x).hessian
}
