//! Ground-truth clustering by integrating the gradient-ascent flow.
//!
//! The integrator is an adaptive Dormand–Prince 5(4) pair. Destinations are
//! computed on `grad log p`, which has the same orbits as `grad p` (the two
//! fields differ by the positive factor `p`) but is well scaled in the tails
//! and in high dimension. Time-parametrized quantities use `grad p` itself.

use rayon::prelude::*;

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, sym_eigenvalues, Point};
use crate::mean_shift::{ClusterAssignment, ModeSet};
use crate::morse::{CriticalKind, CriticalPoint};

/// Which vector field is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowField {
    /// `x' = grad p(x)`, the time-parametrized flow.
    Gradient,
    /// `x' = grad log p(x)`: same orbits, reparametrized time.
    LogGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub field: FlowField,
    pub rtol: f64,
    pub atol: f64,
    /// Terminal condition on the norm of the integrated field.
    pub grad_tol: f64,
    /// Endpoints this close to a known critical point snap onto it.
    pub snap_tol: f64,
    pub max_evals: usize,
    pub record_path: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            field: FlowField::LogGradient,
            rtol: 1e-8,
            atol: 1e-10,
            grad_tol: 1e-9,
            snap_tol: 1e-4,
            max_evals: 1_000_000,
            record_path: false,
        }
    }
}

impl FlowConfig {
    /// Time-parametrized flow on `grad p`.
    pub fn time_flow() -> Self {
        Self { field: FlowField::Gradient, ..Self::default() }
    }

    /// Every tolerance divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self { rtol: self.rtol / factor, atol: self.atol / factor, grad_tol: self.grad_tol / factor, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DestKind {
    Mode,
    Saddle,
    Minimum,
    Unresolved,
}

#[derive(Clone, Debug)]
pub struct FlowResult {
    pub destination: Point,
    pub dest_kind: DestKind,
    /// Index into the known critical points when the endpoint snapped.
    pub critical_index: Option<usize>,
    pub path: Option<Vec<(f64, Point)>>,
    pub terminal_gradient_norm: f64,
    pub time: f64,
    pub evaluations: usize,
}

// Dormand–Prince 5(4) tableau; the field is autonomous so the nodes are unused
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

fn stage_point(y: &Point, k: &[Point], row: &[f64; 6], upto: usize, h: f64) -> Point {
    let mut yi = y.clone();
    for (a, kj) in row.iter().zip(k).take(upto) {
        if *a != 0.0 {
            yi.axpy(h * a, kj, 1.0);
        }
    }
    yi
}

/// Integrator state after an accepted step.
#[derive(Clone, Debug)]
pub(crate) struct FlowState {
    pub t: f64,
    pub y: Point,
    /// Field value (the ODE right-hand side) at `y`.
    pub f: Point,
    /// Density at `y`.
    pub density: f64,
    /// `|grad p(y)|`, whichever field is integrated.
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stop {
    Converged,
    ReachedTime,
    Observer,
    Budget,
    StepUnderflow,
}

pub(crate) struct Integrator<'a> {
    model: &'a dyn DensityModel,
    cfg: &'a FlowConfig,
    pub evals: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a dyn DensityModel, cfg: &'a FlowConfig) -> Self {
        Self { model, cfg, evals: 0 }
    }

    /// Returns `(monotone value, field, density, |grad p|)`. The monotone value
    /// is `p` for the gradient field and `log p` for the log field.
    fn field(&mut self, y: &Point) -> (f64, Point, f64, f64) {
        self.evals += 1;
        let (lp, g) = self.model.log_gradient(y);
        let p = lp.exp();
        let gnorm = g.norm() * p;
        match self.cfg.field {
            FlowField::Gradient => (p, g * p, p, gnorm),
            FlowField::LogGradient => (lp, g, p, gnorm),
        }
    }

    pub fn start(&mut self, y: Point) -> (FlowState, f64) {
        let (v, f, density, grad_norm) = self.field(&y);
        (FlowState { t: 0.0, y, f, density, grad_norm }, v)
    }

    /// Integrates from `state` until the field norm drops below `grad_tol`,
    /// `t_end` is reached, the budget runs out, or `observer` returns true
    /// after an accepted step (it sees the previous and the new state).
    pub fn run(
        &mut self,
        mut state: FlowState,
        mut value: f64,
        t_end: Option<f64>,
        mut observer: impl FnMut(&FlowState, &FlowState) -> bool,
    ) -> (FlowState, Stop) {
        let cfg = self.cfg;
        let d = state.y.len();
        if t_end.is_none() && state.f.norm() < cfg.grad_tol {
            return (state, Stop::Converged);
        }
        if t_end.is_some_and(|te| state.t >= te) {
            return (state, Stop::ReachedTime);
        }
        let mut h = {
            let sc = |v: f64| cfg.atol + cfg.rtol * v.abs();
            let d0 = (state.y.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / d as f64).sqrt();
            let d1 = (state.f.iter().zip(state.y.iter()).map(|(f, v)| (f / sc(*v)).powi(2)).sum::<f64>() / d as f64).sqrt();
            if d0 < 1e-5 || d1 < 1e-5 {
                1e-6
            } else {
                0.01 * d0 / d1
            }
        };
        let mut k: Vec<Point> = vec![state.f.clone(); 7];
        let mut reject_streak = 0usize;
        loop {
            if self.evals >= cfg.max_evals {
                return (state, Stop::Budget);
            }
            let mut last = false;
            if let Some(te) = t_end {
                if state.t + h >= te {
                    h = te - state.t;
                    last = true;
                }
            }
            if h <= 1e-13 * state.t.abs().max(1.0) && !last {
                return (state, Stop::StepUnderflow);
            }
            k[0] = state.f.clone();
            for s in 1..6 {
                let yi = stage_point(&state.y, &k, &A[s], s, h);
                k[s] = self.field(&yi).1;
            }
            // the 7th stage sits at the 5th-order solution (FSAL)
            let y_new = stage_point(&state.y, &k, &A[6], 6, h);
            let (v, f, density, grad_norm) = self.field(&y_new);
            k[6] = f.clone();
            let mut err_sq = 0.0;
            for i in 0..d {
                let e: f64 = E.iter().zip(&k).map(|(ej, kj)| ej * kj[i]).sum();
                let sc = cfg.atol + cfg.rtol * state.y[i].abs().max(y_new[i].abs());
                err_sq += (h * e / sc).powi(2);
            }
            let err = (err_sq / d as f64).sqrt();
            let finite = all_finite(y_new.as_slice()) && v.is_finite();
            let slack = match cfg.field {
                FlowField::Gradient => 1e-13 * value.abs(),
                FlowField::LogGradient => 1e-13 * value.abs().max(1.0),
            };
            if finite && err <= 1.0 && v >= value - slack {
                let t = if last { t_end.unwrap_or(state.t + h) } else { state.t + h };
                let next = FlowState { t, y: y_new, f, density, grad_norm };
                let stop = observer(&state, &next);
                state = next;
                value = v;
                reject_streak = 0;
                if stop {
                    return (state, Stop::Observer);
                }
                if last {
                    return (state, Stop::ReachedTime);
                }
                if t_end.is_none() && state.f.norm() < cfg.grad_tol {
                    return (state, Stop::Converged);
                }
                h *= if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            } else {
                reject_streak += 1;
                h *= if finite && err > 1.0 { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.25 };
                if reject_streak > 200 {
                    return (state, Stop::StepUnderflow);
                }
            }
        }
    }
}

/// Hermite cubic between two accepted states at fraction `theta` in [0, 1].
pub(crate) fn hermite(a: &FlowState, b: &FlowState, theta: f64) -> Point {
    let h = b.t - a.t;
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    &a.y * h00 + &a.f * (h10 * h) + &b.y * h01 + &b.f * (h11 * h)
}

/// `|grad log p|` below which the flow hands over to Newton iterations.
const NEWTON_FINISH: f64 = 1e-6;

/// Accepted steps allowed after a failed Newton finish. Near a degenerate
/// critical point the remaining approach is algebraically slow and stiff;
/// such flows end unresolved instead of exhausting the budget.
const DEGENERATE_TAIL_STEPS: usize = 500;

/// Newton iterations on `grad log p` from a point already deep in the
/// quadratic region of a critical point. Explicit steps stall there at the
/// integrator's tolerance; Newton converges to the same limit point. Gives up
/// if the iterates wander more than `snap_tol / 10`.
fn newton_finish(model: &dyn DensityModel, y0: &Point, cfg: &FlowConfig) -> Option<Point> {
    let mut y = y0.clone();
    for _ in 0..30 {
        let le = model.log_eval(&y);
        if le.gradient.norm() < cfg.grad_tol {
            return Some(y);
        }
        let step = le.hessian.lu().solve(&(-&le.gradient))?;
        y += step;
        if !all_finite(y.as_slice()) || dist(&y, y0) > 0.1 * cfg.snap_tol {
            return None;
        }
    }
    None
}

fn classify_endpoint(model: &dyn DensityModel, y: &Point) -> DestKind {
    let hess = model.log_eval(y).hessian;
    let ev = sym_eigenvalues(&hess);
    if ev.iter().all(|v| *v < 0.0) {
        DestKind::Mode
    } else if ev.iter().all(|v| *v > 0.0) {
        DestKind::Minimum
    } else {
        DestKind::Saddle
    }
}

fn kind_of(cp: &CriticalPoint) -> DestKind {
    match cp.kind() {
        CriticalKind::Mode => DestKind::Mode,
        CriticalKind::Saddle => DestKind::Saddle,
        CriticalKind::Minimum => DestKind::Minimum,
    }
}

/// Integrates the ascent flow from `x` to its destination.
///
/// The endpoint snaps onto the nearest of `known` within `snap_tol`; without
/// a nearby known critical point it is classified from the Hessian there.
pub fn integrate_flow(model: &dyn DensityModel, x: &Point, cfg: &FlowConfig, known: &[CriticalPoint]) -> Result<FlowResult> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    if !all_finite(x.as_slice()) {
        return Err(Error::NonFinite("flow start".into()));
    }
    let mut integ = Integrator::new(model, cfg);
    let (s0, v0) = integ.start(x.clone());
    let mut path = cfg.record_path.then(|| vec![(0.0, x.clone())]);
    let near = |s: &FlowState| s.grad_norm < NEWTON_FINISH * s.density;
    let (mut end, mut stop) = if s0.f.norm() < cfg.grad_tol {
        (s0, Stop::Converged)
    } else if near(&s0) {
        (s0, Stop::Observer)
    } else {
        integ.run(s0, v0, None, |_, next| {
            if let Some(p) = path.as_mut() {
                p.push((next.t, next.y.clone()));
            }
            near(next)
        })
    };
    if stop == Stop::Observer {
        match newton_finish(model, &end.y, cfg) {
            Some(y) => {
                let (_, f, density, grad_norm) = integ.field(&y);
                if let Some(p) = path.as_mut() {
                    p.push((end.t, y.clone()));
                }
                end = FlowState { t: end.t, y, f, density, grad_norm };
                stop = Stop::Converged;
            }
            None => {
                let v = match cfg.field {
                    FlowField::Gradient => end.density,
                    FlowField::LogGradient => end.density.ln(),
                };
                let mut steps = 0;
                (end, stop) = integ.run(end, v, None, |_, next| {
                    if let Some(p) = path.as_mut() {
                        p.push((next.t, next.y.clone()));
                    }
                    steps += 1;
                    steps > DEGENERATE_TAIL_STEPS
                });
                if stop == Stop::Observer {
                    stop = Stop::Budget;
                }
            }
        }
    }
    let evaluations = integ.evals;
    let terminal_gradient_norm = end.grad_norm;
    if stop != Stop::Converged {
        return Ok(FlowResult {
            destination: end.y,
            dest_kind: DestKind::Unresolved,
            critical_index: None,
            path,
            terminal_gradient_norm,
            time: end.t,
            evaluations,
        });
    }
    let snapped = known
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist(&c.location, &end.y)))
        .filter(|(_, d)| *d <= cfg.snap_tol)
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (destination, dest_kind, critical_index) = match snapped {
        Some((i, _)) => (known[i].location.clone(), kind_of(&known[i]), Some(i)),
        None => {
            let kind = classify_endpoint(model, &end.y);
            (end.y, kind, None)
        }
    };
    Ok(FlowResult { destination, dest_kind, critical_index, path, terminal_gradient_norm, time: end.t, evaluations })
}

/// Position of the time-parametrized flow `x' = grad p` at each of `times`
/// (ascending, non-negative).
pub fn flow_positions(model: &dyn DensityModel, x: &Point, times: &[f64], cfg: &FlowConfig) -> Result<Vec<Point>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("flow times must be finite, non-negative and ascending"));
    }
    let cfg = FlowConfig { field: FlowField::Gradient, ..cfg.clone() };
    let mut integ = Integrator::new(model, &cfg);
    let (mut state, mut value) = integ.start(x.clone());
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let (next, stop) = integ.run(state, value, Some(t), |_, _| false);
        if !matches!(stop, Stop::ReachedTime) {
            return Err(Error::Numerical(format!("time flow stopped early ({stop:?}) before t={t}")));
        }
        value = next.density;
        out.push(next.y.clone());
        state = next;
    }
    Ok(out)
}

/// Ground-truth labels: each point gets the index (in `mode_set`) of the mode
/// its flow reaches. Points ending at non-mode critical points, at modes not
/// in `mode_set`, or not converging are left unlabeled.
pub fn true_labels(
    model: &dyn DensityModel,
    points: &[Point],
    mode_set: &ModeSet,
    known: &[CriticalPoint],
    cfg: &FlowConfig,
) -> Result<ClusterAssignment> {
    let results: Vec<FlowResult> = points.par_iter().map(|x| integrate_flow(model, x, cfg, known)).collect::<Result<_>>()?;
    let mut labels = Vec::with_capacity(points.len());
    let mut converged = Vec::with_capacity(points.len());
    for r in &results {
        let label = match r.dest_kind {
            DestKind::Mode => mode_set.nearest(&r.destination).filter(|(_, d)| *d <= cfg.snap_tol).map(|(i, _)| i),
            _ => None,
        };
        converged.push(label.is_some());
        labels.push(label);
    }
    Ok(ClusterAssignment {
        labels,
        mode_set: mode_set.clone(),
        endpoints: results.iter().map(|r| r.destination.clone()).collect(),
        trajectories: cfg
            .record_path
            .then(|| results.iter().map(|r| r.path.iter().flatten().map(|(_, p)| p.clone()).collect()).collect()),
        iterations: results.iter().map(|r| r.evaluations).collect(),
        converged,
    })
}

/// `Some(true)` iff points `i` and `j` share a cluster; `None` when either is
/// unresolved.
pub fn clustering_function(assignment: &ClusterAssignment, i: usize, j: usize) -> Option<bool> {
    let a = (*assignment.labels.get(i)?)?;
    let b = (*assignment.labels.get(j)?)?;
    if !(assignment.converged[i] && assignment.converged[j]) {
        return None;
    }
    Some(a == b)
}
