//! Numerical checks of the quantitative lemmas: flow perturbation, Gaussian
//! low-density mass, chi-square tails and the gradient profile near basin
//! boundaries.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::density::{sup_discrepancy, DensityModel, GaussianMixture, LN_2PI};
use crate::error::{Error, Result};
use crate::flow::{flow_positions, hermite, FlowConfig, FlowState, Integrator, Stop};
use crate::linalg::{dist, Point};
use crate::morse::{landscape_stats, BoundaryFlag, BoundaryGrid, Landscape};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckCase {
    pub case_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub violation: bool,
    /// Raw Monte Carlo estimate when `lhs` is a confidence limit.
    pub estimate: Option<f64>,
    /// One-sided 99% upper confidence limit of a Monte Carlo probability.
    pub upper99: Option<f64>,
}

impl CheckCase {
    pub fn plain(case_id: String, lhs: f64, rhs: f64) -> Self {
        Self { case_id, lhs, rhs, violation: false, estimate: None, upper99: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckStatus {
    Evaluated,
    /// The lemma's hypotheses do not hold; nothing was tested.
    PreconditionFailed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub checked: usize,
    pub violations: usize,
    /// Cases that could not be evaluated (e.g. an unresolved flow).
    pub skipped: usize,
    /// Largest `lhs / (rhs (1 + slack))`.
    pub max_slack_ratio: f64,
    pub slack: f64,
    pub details: Vec<CheckCase>,
}

impl BoundCheckResult {
    /// Marks `lhs > rhs (1 + slack)` as a violation.
    pub fn from_cases(name: &str, mut details: Vec<CheckCase>, skipped: usize, slack: f64) -> Self {
        let mut max_ratio = 0.0f64;
        for c in &mut details {
            let allowed = c.rhs * (1.0 + slack);
            c.violation = c.violation || !(c.lhs <= allowed);
            let ratio = if c.lhs == 0.0 { 0.0 } else { c.lhs / allowed };
            max_ratio = max_ratio.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
        }
        Self {
            name: name.to_string(),
            status: CheckStatus::Evaluated,
            checked: details.len(),
            violations: details.iter().filter(|c| c.violation).count(),
            skipped,
            max_slack_ratio: max_ratio,
            slack,
            details,
        }
    }

    pub fn precondition_failed(name: &str, reason: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::PreconditionFailed(reason.into()),
            checked: 0,
            violations: 0,
            skipped: 0,
            max_slack_ratio: 0.0,
            slack: 0.0,
            details: Vec::new(),
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.status == CheckStatus::Evaluated
    }

    pub fn passed(&self) -> bool {
        self.is_evaluated() && self.violations == 0
    }
}

pub const CHECKS_HEADER: &str = "check,case,lhs,rhs,violation,estimate,upper99,status";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.10e}"))
}

/// One CSV row per case; a result without cases (precondition failure)
/// still gets one row.
pub fn checks_csv(results: &[BoundCheckResult]) -> String {
    let mut out = String::from(CHECKS_HEADER);
    out.push('\n');
    for r in results {
        let status = match &r.status {
            CheckStatus::Evaluated => "evaluated".to_string(),
            CheckStatus::PreconditionFailed(why) => format!("precondition_failed: {}", why.replace(',', ";")),
        };
        if r.details.is_empty() {
            let _ = writeln!(out, "{},,,,,,,{}", r.name, status);
        }
        for c in &r.details {
            let _ = writeln!(
                out,
                "{},{},{:.10e},{:.10e},{},{},{},{}",
                r.name,
                c.case_id,
                c.lhs,
                c.rhs,
                u8::from(c.violation),
                opt(c.estimate),
                opt(c.upper99),
                status
            );
        }
    }
    out
}

/// Exact one-sided Clopper–Pearson limits `(lower, upper)` at the given
/// confidence for `k` events out of `n`.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n || !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::invalid(format!("bad Clopper-Pearson input k={k} n={n} confidence={confidence}")));
    }
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 {
        0.0
    } else if k == n {
        alpha.powf(1.0 / nf)
    } else {
        Beta::new(kf, nf - kf + 1.0).map_err(|e| Error::Numerical(e.to_string()))?.inverse_cdf(alpha)
    };
    let upper = if k == n {
        1.0
    } else if k == 0 {
        1.0 - alpha.powf(1.0 / nf)
    } else {
        Beta::new(kf + 1.0, nf - kf).map_err(|e| Error::Numerical(e.to_string()))?.inverse_cdf(confidence)
    };
    Ok((lower, upper))
}

/// Flow-perturbation bound `|q-flow(t) - p-flow(t)| <= eta1 / (k sqrt d) exp(k sqrt d t)`
/// with `eta1` the gradient discrepancy and `k` the Hessian bound of `p`.
/// Both are probe-set maxima; on a violation the probe is refined with
/// points along both flows and the check is repeated (at most twice).
pub fn check_flow_perturbation(
    p: &dyn DensityModel,
    q: &dyn DensityModel,
    starts: &[Point],
    times: &[f64],
    probe: &[Point],
    slack: f64,
) -> Result<BoundCheckResult> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    if probe.is_empty() || starts.is_empty() || times.is_empty() {
        return Err(Error::invalid("starts, times and probe must be non-empty"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let t_max = sorted.last().copied().unwrap_or(0.0);
    let dense: Vec<f64> = (0..=32).map(|k| t_max * k as f64 / 32.0).collect();
    let cfg = FlowConfig::time_flow();
    // positions under p and q at the check times, plus a dense path for the probe
    type Flows = (Vec<Point>, Vec<Point>, Vec<Point>);
    let flows: Vec<Option<Flows>> = starts
        .par_iter()
        .map(|x| {
            let a = flow_positions(p, x, &sorted, &cfg).ok()?;
            let b = flow_positions(q, x, &sorted, &cfg).ok()?;
            let mut path = flow_positions(p, x, &dense, &cfg).ok()?;
            path.extend(flow_positions(q, x, &dense, &cfg).ok()?);
            Some((a, b, path))
        })
        .collect();
    let skipped = flows.iter().filter(|f| f.is_none()).count() * times.len();
    let sqrt_d = (p.dim() as f64).sqrt();
    let mut probe = probe.to_vec();
    let mut result = None;
    for round in 0..3 {
        let eta1 = sup_discrepancy(p, q, &probe)?.eta1;
        let kappa2 = landscape_stats(p, &probe, &[])?.kappa2;
        if !(kappa2 > 0.0) {
            return Err(Error::Numerical("Hessian bound over the probe set is zero".into()));
        }
        let l = kappa2 * sqrt_d;
        let mut cases = Vec::new();
        for (si, f) in flows.iter().enumerate() {
            let Some((a, b, _)) = f else { continue };
            for (k, &ti) in order.iter().enumerate() {
                let t = times[ti];
                cases.push(CheckCase::plain(format!("start{si}_t{t}"), dist(&a[k], &b[k]), eta1 / l * (l * t).exp()));
            }
        }
        let r = BoundCheckResult::from_cases("flow_perturbation", cases, skipped, slack);
        let done = r.violations == 0 || round == 2;
        result = Some(r);
        if done {
            break;
        }
        log::info!("flow perturbation: refining probe set (round {})", round + 1);
        for (_, _, path) in flows.iter().flatten() {
            probe.extend(path.iter().cloned());
            probe.extend(path.windows(2).map(|w| (&w[0] + &w[1]) * 0.5));
        }
    }
    Ok(result.expect("at least one round"))
}

/// Largest `eps` allowed by the low-density lemma:
/// `min_j (pi_j^(1/d) / (sqrt(2 pi) sigma e^16))^d`.
pub fn low_density_eps_cap(weights: &[f64], sigma: f64, d: usize) -> f64 {
    let df = d as f64;
    weights.iter().map(|w| (w.ln() - df * (0.5 * LN_2PI + sigma.ln() + 16.0)).exp()).fold(f64::INFINITY, f64::min)
}

/// Minimal mean separation required by the low-density lemma at `eps`.
pub fn low_density_separation(weights: &[f64], sigma: f64, d: usize, eps: f64) -> f64 {
    let df = d as f64;
    let inner = weights
        .iter()
        .map(|w| {
            2.0 * df * (1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt())).ln() + 2.0 * (1.0 / eps).ln() - 2.0 * (1.0 / w).ln()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    2.0 * sigma * inner.max(0.0).sqrt()
}

fn min_mean_separation(gm: &GaussianMixture) -> f64 {
    let m = gm.means();
    let mut best = f64::INFINITY;
    for i in 0..m.len() {
        for j in (i + 1)..m.len() {
            best = best.min(dist(&m[i], &m[j]));
        }
    }
    best
}

/// Monte Carlo check of `P(p(X) < eps) <= e^(-8d)` for a spherical mixture,
/// after verifying the lemma's conditions on `eps` and the separation.
pub fn check_gaussian_low_density<R: Rng + ?Sized>(
    gm: &GaussianMixture,
    eps: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundCheckResult> {
    const NAME: &str = "gaussian_low_density";
    let sigma = gm.spherical_sigma().ok_or_else(|| Error::invalid("low-density check needs a common spherical covariance"))?;
    if !(eps >= 0.0) || n_mc == 0 {
        return Err(Error::invalid(format!("need eps >= 0 and n_mc > 0, got eps={eps}, n_mc={n_mc}")));
    }
    let d = gm.dim();
    let rhs = (-8.0 * d as f64).exp();
    if eps == 0.0 {
        // a Gaussian mixture density is positive everywhere
        return Ok(BoundCheckResult::from_cases(NAME, vec![CheckCase::plain("eps0".into(), 0.0, rhs)], 0, 0.0));
    }
    let w = gm.weights();
    let cap = low_density_eps_cap(&w, sigma, d);
    if eps > cap {
        return Ok(BoundCheckResult::precondition_failed(NAME, format!("eps {eps:e} exceeds cap {cap:e}")));
    }
    let need = low_density_separation(&w, sigma, d, eps);
    let have = min_mean_separation(gm);
    if !(have > need) {
        return Ok(BoundCheckResult::precondition_failed(NAME, format!("separation {have} not above {need}")));
    }
    let samples: Vec<Point> = (0..n_mc).map(|_| gm.sample_one(rng).1).collect();
    let ln_eps = eps.ln();
    let events = samples.par_iter().filter(|x| gm.log_density(x) < ln_eps).count() as u64;
    let (lower, upper) = clopper_pearson(events, n_mc as u64, 0.99)?;
    let mut case = CheckCase::plain(format!("d{d}_eps{eps:e}_n{n_mc}"), lower, rhs);
    case.estimate = Some(events as f64 / n_mc as f64);
    case.upper99 = Some(upper);
    Ok(BoundCheckResult::from_cases(NAME, vec![case], 0, 0.0))
}

/// Laurent–Massart bound on `P(chi2_d > t)` for `t >= 2d`, with the simpler
/// `e^(-t/4)` when `t >= 32d`.
pub fn chi_square_tail_bound(t: f64, d: usize) -> Result<(f64, Option<f64>)> {
    let df = d as f64;
    if d == 0 || !t.is_finite() || t < 2.0 * df {
        return Err(Error::OutOfDomain(format!("chi-square bound needs t >= 2d, got t={t}, d={d}")));
    }
    let main = (-(t / 2.0) * (1.0 - 2.0 * (2.0 * df / t).sqrt())).exp();
    let simple = (t >= 32.0 * df).then(|| (-t / 4.0).exp());
    Ok((main, simple))
}

/// Compares the main bound with the 99% lower confidence limit of a Monte
/// Carlo tail estimate at each `(d, t)`.
pub fn check_chi_square_tail<R: Rng + ?Sized>(cases: &[(usize, f64)], draws: usize, rng: &mut R) -> Result<BoundCheckResult> {
    let mut out = Vec::with_capacity(cases.len());
    for &(d, t) in cases {
        let (bound, _) = chi_square_tail_bound(t, d)?;
        let dist = ChiSquared::new(d as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let hits = (0..draws).filter(|_| dist.sample(rng) > t).count() as u64;
        let (lower, upper) = clopper_pearson(hits, draws as u64, 0.99)?;
        let mut c = CheckCase::plain(format!("d{d}_t{t}"), lower, bound);
        c.estimate = Some(hits as f64 / draws as f64);
        c.upper99 = Some(upper);
        out.push(c);
    }
    Ok(BoundCheckResult::from_cases("chi_square_tail", out, 0, 0.0))
}

/// Empirical low-noise exponent: log–log slope of Monte Carlo
/// `P(p(X) < eps)` against `eps`. `None` if fewer than two levels have events.
pub fn low_noise_exponent<R: Rng + ?Sized>(gm: &GaussianMixture, epsilons: &[f64], n_mc: usize, rng: &mut R) -> Option<f64> {
    let logp: Vec<f64> = (0..n_mc).map(|_| gm.log_density(&gm.sample_one(rng).1)).collect();
    let pts: Vec<(f64, f64)> = epsilons
        .iter()
        .filter(|e| **e > 0.0)
        .filter_map(|e| {
            let k = logp.iter().filter(|lp| **lp < e.ln()).count();
            (k > 0).then(|| (e.ln(), (k as f64 / n_mc as f64).ln()))
        })
        .collect();
    slope(&pts)
}

/// Least-squares slope.
pub fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaConfig {
    pub deltas: Vec<f64>,
    pub points_per_delta: usize,
    /// Core offset `a`.
    pub offset: f64,
}

/// The ascent flow from one start until it enters the core.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreEntry {
    pub start: Point,
    pub delta: f64,
    /// Flow time to reach the core, `t(x)`.
    pub time: f64,
    /// Smallest `|grad p|` along the flow up to `t(x)`.
    pub min_gradient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRow {
    pub delta: f64,
    pub points: usize,
    pub min_gradient: f64,
    pub max_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaProfile {
    pub cluster: usize,
    pub xi: f64,
    pub mode_density: f64,
    pub rows: Vec<DeltaRow>,
    pub entries: Vec<CoreEntry>,
    /// Log–log slope of the row minima against delta.
    pub gamma: Option<f64>,
    /// Row minima are non-decreasing in delta.
    pub monotone: bool,
    /// `t(x) * min_gradient^2 <= p(m) + 1e-6` for every flow.
    pub time_bound: BoundCheckResult,
}

/// Integrates the time flow on `grad p` from `x` until `p >= level`,
/// locating the crossing on the cubic interpolant. `None` if the flow stops
/// before entering.
pub fn flow_to_level(model: &dyn DensityModel, x: &Point, level: f64) -> Option<(f64, f64)> {
    let cfg = FlowConfig::time_flow();
    let mut integ = Integrator::new(model, &cfg);
    let (s0, v0) = integ.start(x.clone());
    if s0.density >= level {
        return Some((0.0, s0.grad_norm));
    }
    let mut min_g = s0.grad_norm;
    let mut hit = None;
    let grad_at = |y: &Point| model.gradient(y).1.norm();
    let (_, stop) = integ.run(s0, v0, None, |a: &FlowState, b: &FlowState| {
        if b.density < level {
            min_g = min_g.min(b.grad_norm);
            for k in 1..4 {
                min_g = min_g.min(grad_at(&hermite(a, b, k as f64 / 4.0)));
            }
            return false;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if model.density(&hermite(a, b, mid)) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        for k in 1..=4 {
            min_g = min_g.min(grad_at(&hermite(a, b, hi * k as f64 / 4.0)));
        }
        hit = Some(a.t + hi * (b.t - a.t));
        true
    });
    (stop == Stop::Observer).then(|| (hit.unwrap_or(f64::NAN), min_g))
}

/// Gradient profile near the boundary of `cluster`: for each delta, starts
/// at distance delta from the extracted boundary are flowed into the core
/// `p >= xi + a`, recording `t(x)` and the smallest gradient on the way.
pub fn delta_profile<M: DensityModel>(
    land: &Landscape<M>,
    cluster: usize,
    grid: &BoundaryGrid,
    cfg: &DeltaConfig,
) -> Result<DeltaProfile> {
    if land.dim() > 2 {
        return Err(Error::Unsupported(format!("delta profile needs an extracted boundary (d <= 2), got d = {}", land.dim())));
    }
    let level = land.boundary_level(cluster, Some(grid))?;
    if level.flag == BoundaryFlag::NoBoundary || grid.boundary_of(cluster).is_empty() {
        return Err(Error::Unsupported(format!("cluster {cluster} has no extracted boundary")));
    }
    if cfg.deltas.iter().any(|d| !(*d > 0.0)) || cfg.points_per_delta == 0 {
        return Err(Error::invalid("deltas must be positive and points_per_delta at least 1"));
    }
    let threshold = level.xi + cfg.offset;
    let mode_density = land.modes.densities[cluster];
    if !(threshold < mode_density) {
        return Err(Error::invalid(format!("core is empty: xi + a = {threshold} >= p(m) = {mode_density}")));
    }
    let boundary = grid.boundary_of(cluster);
    let nearest = |x: &Point| {
        boundary
            .iter()
            .map(|b| (dist(b, x), b))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(d, b)| (d, b.clone()))
            .expect("non-empty boundary")
    };
    let interior: Vec<(Point, f64, Point)> = grid
        .points
        .iter()
        .zip(&grid.labels)
        .filter(|(_, l)| **l == Some(cluster))
        .map(|(g, _)| {
            let (d, b) = nearest(g);
            (g.clone(), d, b)
        })
        .collect();
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(|a, b| a.total_cmp(b));
    for &delta in &deltas {
        let cands: Vec<&(Point, f64, Point)> = interior.iter().filter(|(_, d, _)| *d >= delta).collect();
        if cands.is_empty() {
            continue;
        }
        let picks = cfg.points_per_delta.min(cands.len());
        let starts: Vec<Point> = (0..picks)
            .map(|k| {
                let (g, gd, b) = cands[k * cands.len() / picks];
                let u = (g - b) / *gd;
                let (mut lo, mut hi) = (0.0, *gd);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if nearest(&(b + &u * mid)).0 < delta {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                b + &u * hi
            })
            .filter(|x| land.label(x) == Some(cluster))
            .collect();
        let flows: Vec<Option<CoreEntry>> = starts
            .par_iter()
            .map(|x| {
                let (time, min_gradient) = flow_to_level(&land.model, x, threshold)?;
                Some(CoreEntry { start: x.clone(), delta, time, min_gradient })
            })
            .collect();
        let got: Vec<CoreEntry> = flows.into_iter().flatten().collect();
        if got.is_empty() {
            continue;
        }
        rows.push(DeltaRow {
            delta,
            points: got.len(),
            min_gradient: got.iter().map(|e| e.min_gradient).fold(f64::INFINITY, f64::min),
            max_time: got.iter().map(|e| e.time).fold(0.0, f64::max),
        });
        entries.extend(got);
    }
    let fit: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.min_gradient > 0.0).map(|r| (r.delta.ln(), r.min_gradient.ln())).collect();
    let gamma = slope(&fit);
    let monotone = rows.windows(2).all(|w| w[1].min_gradient >= w[0].min_gradient);
    let cases = entries
        .iter()
        .enumerate()
        .map(|(i, e)| CheckCase::plain(format!("delta{}_{i}", e.delta), e.time * e.min_gradient.powi(2), mode_density + 1e-6))
        .collect();
    let time_bound = BoundCheckResult::from_cases("core_entry_time", cases, 0, 0.0);
    Ok(DeltaProfile { cluster, xi: level.xi, mode_density, rows, entries, gamma, monotone, time_bound })
}
