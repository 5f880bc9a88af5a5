//! The three simulation experiments and a custom pipeline.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::density::{probe_set, total_variation_mc, DensityModel, GaussianMixture, KernelDensityEstimate};
use crate::error::{Error, Result};
use crate::flow::{true_labels, FlowConfig};
use crate::io::{fmt_f, fmt_opt, read_dataset};
use crate::linalg::{random_rotation, Point};
use crate::mean_shift::{cluster_samples, run_mean_shift, ClusterAssignment, MeanShiftConfig, ModeSet};
use crate::morse::{default_seeds, BoundaryFlag, CriticalPoint, Landscape, NewtonConfig};
use crate::risk::{core_risk_decomposition, mean_stderr, pairwise_loss_masked, RiskReport, UNRESOLVED_RERUN};
use crate::rng::{RngStream, StreamKey};

/// Grid resolution per axis for the probe sets used in sweeps.
const SWEEP_PROBE_AXIS: usize = 30;

/// Ground truth for one density: critical points, boundary levels and the
/// gradient bound.
#[derive(Clone, Debug)]
pub struct Truth {
    pub landscape: Landscape<GaussianMixture>,
    /// Boundary level of each true cluster (0 for a lone cluster).
    pub xis: Vec<f64>,
    pub c_g: f64,
}

impl Truth {
    /// `seed_points` should cover the bulk of the density; Newton seeds add
    /// the means, points between them and (d <= 3) a grid.
    pub fn build(gm: GaussianMixture, seed_points: &[Point]) -> Result<Self> {
        let seeds = default_seeds(seed_points, &gm.means(), 3.0);
        let landscape = Landscape::analyze(gm, &seeds, &NewtonConfig::default(), FlowConfig::default());
        if landscape.num_modes() == 0 {
            return Err(Error::Numerical("no modes found for the true density".into()));
        }
        let xis = landscape
            .boundary_levels(None)?
            .into_iter()
            .map(|b| if b.flag == BoundaryFlag::NoBoundary { 0.0 } else { b.xi })
            .collect();
        let probe = probe_set(seed_points, &landscape.model.means(), 1.0, SWEEP_PROBE_AXIS);
        let c_g = landscape.stats(&probe)?.c_g;
        Ok(Self { landscape, xis, c_g })
    }

    pub fn gm(&self) -> &GaussianMixture {
        &self.landscape.model
    }

    /// Flow labels; more than 1% unresolved triggers one rerun with tighter
    /// tolerances. The flag reports whether that was still not enough.
    pub fn labels(&self, data: &[Point]) -> Result<(ClusterAssignment, bool)> {
        let over =
            |a: &ClusterAssignment| a.labels.iter().filter(|l| l.is_none()).count() as f64 > UNRESOLVED_RERUN * a.len() as f64;
        let first = self.landscape.labels(data)?;
        if !over(&first) {
            return Ok((first, false));
        }
        let lm = &self.landscape;
        let second = true_labels(&lm.model, data, &lm.modes, &lm.critical, &lm.flow.tightened(10.0))?;
        let bad = over(&second);
        Ok((second, bad))
    }

    /// Core offset `a = C_g D + 2 eta0`, with `D` the largest distance from a
    /// true mode to its nearest estimated mode (standing in for `A eta`) and
    /// `eta0` the value discrepancy between the estimate and the truth over a
    /// probe set. Infinite when some true mode has no estimate.
    pub fn core_offset(&self, kde: &KernelDensityEstimate, estimated: &ModeSet) -> Result<f64> {
        let modes = &self.landscape.modes.modes;
        let displacement = modes.iter().map(|m| estimated.nearest(m).map_or(f64::INFINITY, |(_, d)| d)).fold(0.0, f64::max);
        if !displacement.is_finite() {
            return Ok(f64::INFINITY);
        }
        let mut extra = modes.clone();
        extra.extend(estimated.modes.iter().cloned());
        let probe = probe_set(kde.samples(), &extra, kde.bandwidth(), SWEEP_PROBE_AXIS);
        let eta0 = crate::density::sup_discrepancy(self.gm(), kde, &probe)?.eta0;
        Ok(self.c_g * displacement + 2.0 * eta0)
    }

    pub fn core_flags(&self, data: &[Point], labels: &[Option<usize>], offset: f64) -> Vec<bool> {
        if !offset.is_finite() {
            return vec![false; data.len()];
        }
        self.landscape.core_flags(data, labels, &self.xis, offset)
    }
}

/// Outcome of clustering one sample at one bandwidth.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub report: RiskReport,
    pub estimate: ClusterAssignment,
    pub core_flags: Vec<bool>,
    pub offset: f64,
}

/// Mean shift at bandwidth `h` scored against precomputed truth labels.
pub fn score_bandwidth(truth: &Truth, data: &[Point], labels: &[Option<usize>], h: f64) -> Result<CellOutcome> {
    let kde = KernelDensityEstimate::new(data.to_vec(), h)?;
    let estimate = cluster_samples(&kde, &MeanShiftConfig::new(h))?;
    let offset = truth.core_offset(&kde, &estimate.mode_set)?;
    let core_flags = truth.core_flags(data, labels, offset);
    let report = if data.len() < 2 {
        RiskReport {
            loss: 0.0,
            rand_index: 1.0,
            n_points: data.len(),
            n_pairs: 0,
            core_loss: None,
            core_fraction: 0.0,
            excluded: 0,
        }
    } else {
        match core_risk_decomposition(labels, &estimate.labels, &core_flags) {
            Ok(r) => r,
            // fewer than two labelled points: nothing to compare
            Err(Error::InvalidArgument(_)) => RiskReport {
                loss: 0.0,
                rand_index: 1.0,
                n_points: 0,
                n_pairs: 0,
                core_loss: None,
                core_fraction: 0.0,
                excluded: data.len(),
            },
            Err(e) => return Err(e),
        }
    };
    Ok(CellOutcome { report, estimate, core_flags, offset })
}

/// Two equal-weight components with means `-sep/2 e1` and `+sep/2 e1` and
/// covariances with eigenvalues uniform in `eig_range` and Haar-random
/// eigenvectors.
pub fn random_pair<R: Rng + ?Sized>(dim: usize, separation: f64, eig_range: (f64, f64), rng: &mut R) -> Result<GaussianMixture> {
    let mut means = Vec::with_capacity(2);
    let mut covs = Vec::with_capacity(2);
    for sign in [-1.0, 1.0] {
        let mut m = Point::zeros(dim);
        m[0] = sign * separation / 2.0;
        means.push(m);
        let q = random_rotation(dim, rng);
        let eig: Vec<f64> = (0..dim).map(|_| rng.random_range(eig_range.0..=eig_range.1)).collect();
        let c = &q * DMatrix::from_diagonal(&Point::from_vec(eig)) * q.transpose();
        covs.push((&c + c.transpose()) * 0.5);
    }
    GaussianMixture::new(vec![0.5, 0.5], means, covs)
}

/// Unit-covariance equal-weight pair at the given separation.
pub fn unit_pair(dim: usize, separation: f64) -> Result<GaussianMixture> {
    GaussianMixture::symmetric_pair(dim, separation)
}

fn sample_stream(seed: u64, rep: usize, n: usize) -> RngStream {
    RngStream::derive(seed, StreamKey::new(rep as u64, "sample").with_extra(n as u64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepRow {
    pub n: usize,
    pub h: f64,
    pub separation: f64,
    pub rep: usize,
    pub loss: f64,
    pub core_loss: Option<f64>,
    pub core_fraction: f64,
    pub unresolved: usize,
    pub estimated_modes: usize,
    pub truth_flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub h: f64,
    pub separation: f64,
    pub replications: usize,
    pub mean_loss: f64,
    pub stderr: Option<f64>,
    /// Mean over replications where the core loss is defined.
    pub core_loss: Option<f64>,
    /// Replications with a defined core loss equal to zero.
    pub core_exact: usize,
    pub core_defined: usize,
    pub mean_unresolved_fraction: f64,
    pub mean_estimated_modes: f64,
    /// More than 10% of ground-truth labels unresolved on average.
    pub flagged: bool,
    /// Summed worker time over replications.
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub rows: Vec<SweepRow>,
    pub reps: Vec<RepRow>,
}

pub const RESULTS_HEADER: &str =
    "experiment,n,h,separation,replications,mean_loss,stderr,core_loss,core_exact,core_defined,unresolved_fraction,estimated_modes,flagged";

impl SweepResult {
    /// Deterministic results table (no timings).
    pub fn results_csv(&self) -> String {
        let mut out = format!("{RESULTS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.experiment.as_str(),
                r.n,
                fmt_f(r.h),
                fmt_f(r.separation),
                r.replications,
                fmt_f(r.mean_loss),
                fmt_opt(r.stderr),
                fmt_opt(r.core_loss),
                r.core_exact,
                r.core_defined,
                fmt_f(r.mean_unresolved_fraction),
                fmt_f(r.mean_estimated_modes),
                u8::from(r.flagged)
            );
        }
        out
    }

    pub fn replications_csv(&self) -> String {
        let mut out = String::from("n,h,separation,rep,loss,core_loss,core_fraction,unresolved,estimated_modes,truth_flagged\n");
        for r in &self.reps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n,
                fmt_f(r.h),
                fmt_f(r.separation),
                r.rep,
                fmt_f(r.loss),
                fmt_opt(r.core_loss),
                fmt_f(r.core_fraction),
                r.unresolved,
                r.estimated_modes,
                u8::from(r.truth_flagged)
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("n,h,separation,runtime_seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.n, fmt_f(r.h), fmt_f(r.separation), r.runtime_seconds);
        }
        out
    }

    /// Row with the smallest mean loss at sample size `n` and separation `s`.
    pub fn best_h(&self, n: usize, separation: f64) -> Option<&SweepRow> {
        self.rows.iter().filter(|r| r.n == n && r.separation == separation).min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss))
    }

    pub fn row(&self, n: usize, h: f64, separation: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n && r.h == h && r.separation == separation)
    }
}

/// How each replication obtains its true density.
enum Source<'a> {
    /// One density per separation, shared by all replications.
    Fixed(Vec<Truth>),
    /// A fresh density per (separation, replication).
    PerRep(&'a (dyn Fn(f64, usize) -> Result<GaussianMixture> + Sync)),
}

fn seed_points(gm: &GaussianMixture, seed: u64, rep: usize) -> Vec<Point> {
    let mut rng = RngStream::derive(seed, StreamKey::new(rep as u64, "newton-seeds"));
    gm.sample(200, &mut rng)
}

fn run_sweep(cfg: &ExperimentConfig, separations: &[f64], source: Source<'_>) -> Result<SweepResult> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = (0..separations.len()).flat_map(|s| (0..cfg.replications).map(move |r| (s, r))).collect();
    let per_unit: Vec<Vec<(RepRow, f64)>> = units
        .par_iter()
        .map(|&(si, rep)| {
            let sep = separations[si];
            let start = Instant::now();
            let owned;
            let truth = match &source {
                Source::Fixed(t) => &t[si],
                Source::PerRep(make) => {
                    let gm = make(sep, rep)?;
                    let pts = seed_points(&gm, cfg.master_seed, rep);
                    owned = Truth::build(gm, &pts)?;
                    &owned
                }
            };
            let setup = start.elapsed().as_secs_f64();
            let mut rows = Vec::new();
            for &n in &cfg.n_grid {
                let t0 = Instant::now();
                let data = truth.gm().sample(n, &mut sample_stream(cfg.master_seed, rep, n));
                let (assign, truth_flagged) = truth.labels(&data)?;
                let shared = t0.elapsed().as_secs_f64() + setup / cfg.n_grid.len() as f64;
                for &h in &cfg.h_grid {
                    let t1 = Instant::now();
                    let cell = score_bandwidth(truth, &data, &assign.labels, h)?;
                    let secs = t1.elapsed().as_secs_f64() + shared / cfg.h_grid.len() as f64;
                    rows.push((
                        RepRow {
                            n,
                            h,
                            separation: sep,
                            rep,
                            loss: cell.report.loss,
                            core_loss: cell.report.core_loss,
                            core_fraction: cell.report.core_fraction,
                            unresolved: assign.labels.iter().filter(|l| l.is_none()).count(),
                            estimated_modes: cell.estimate.num_clusters(),
                            truth_flagged,
                        },
                        secs,
                    ));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<(RepRow, f64)> = per_unit.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        (a.0.n, a.0.h, a.0.separation, a.0.rep).partial_cmp(&(b.0.n, b.0.h, b.0.separation, b.0.rep)).expect("finite grid values")
    });
    let mut rows = Vec::new();
    for chunk in all.chunk_by(|a, b| a.0.n == b.0.n && a.0.h == b.0.h && a.0.separation == b.0.separation) {
        let losses: Vec<f64> = chunk.iter().map(|r| r.0.loss).collect();
        let (mean_loss, stderr) = mean_stderr(&losses);
        let cores: Vec<f64> = chunk.iter().filter_map(|r| r.0.core_loss).collect();
        let (core_loss, _) = if cores.is_empty() { (f64::NAN, None) } else { mean_stderr(&cores) };
        let k = chunk.len() as f64;
        let unresolved = chunk.iter().map(|r| r.0.unresolved as f64 / r.0.n as f64).sum::<f64>() / k;
        let first = &chunk[0].0;
        rows.push(SweepRow {
            n: first.n,
            h: first.h,
            separation: first.separation,
            replications: chunk.len(),
            mean_loss,
            stderr,
            core_loss: (!cores.is_empty()).then_some(core_loss),
            core_exact: cores.iter().filter(|c| **c == 0.0).count(),
            core_defined: cores.len(),
            mean_unresolved_fraction: unresolved,
            mean_estimated_modes: chunk.iter().map(|r| r.0.estimated_modes as f64).sum::<f64>() / k,
            flagged: unresolved > 0.10,
            runtime_seconds: chunk.iter().map(|r| r.1).sum::<f64>().max(f64::MIN_POSITIVE),
        });
    }
    let reps = all.into_iter().map(|(r, _)| r).collect();
    Ok(SweepResult { experiment: cfg.experiment, rows, reps })
}

/// Loss over an `n_grid x h_grid` grid for a fresh random pair per
/// replication (separation `cfg.separation`, eigenvalues in `cfg.eig_range`).
pub fn run_highdim_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let make = |sep: f64, rep: usize| {
        let mut rng = RngStream::derive(cfg.master_seed, StreamKey::new(rep as u64, "mixture"));
        random_pair(cfg.dim, sep, cfg.eig_range, &mut rng)
    };
    run_sweep(cfg, &[cfg.separation], Source::PerRep(&make))
}

/// Loss of unit-covariance pairs across `cfg.separations`.
pub fn run_separation_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let truths = cfg
        .separations
        .par_iter()
        .map(|&s| {
            let gm = unit_pair(cfg.dim, s)?;
            let pts = seed_points(&gm, cfg.master_seed, 0);
            Truth::build(gm, &pts)
        })
        .collect::<Result<Vec<_>>>()?;
    run_sweep(cfg, &cfg.separations, Source::Fixed(truths))
}

/// Replicated risk for a given mixture over `n_grid x h_grid`.
pub fn run_mixture_risk(cfg: &ExperimentConfig, gm: &GaussianMixture) -> Result<SweepResult> {
    let pts = seed_points(gm, cfg.master_seed, 0);
    let truth = Truth::build(gm.clone(), &pts)?;
    run_sweep(cfg, &[0.0], Source::Fixed(vec![truth]))
}

/// Two rotated anisotropic Gaussians whose shared basin boundary is curved.
pub fn basins2d_mixture() -> GaussianMixture {
    let rot = |deg: f64, a: f64, b: f64| {
        let (s, c) = deg.to_radians().sin_cos();
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let c = &q * DMatrix::from_diagonal(&Point::from_vec(vec![a, b])) * q.transpose();
        (&c + c.transpose()) * 0.5
    };
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![Point::from_vec(vec![-2.8, 0.0]), Point::from_vec(vec![2.8, 0.0])],
        vec![rot(55.0, 3.2, 0.35), rot(-55.0, 3.2, 0.35)],
    )
    .expect("valid built-in mixture")
}

#[derive(Clone, Debug)]
pub struct Basins2dReport {
    pub n: usize,
    pub h: f64,
    pub data: Vec<Point>,
    pub truth: ClusterAssignment,
    pub estimate: ClusterAssignment,
    pub report: RiskReport,
    pub tv: f64,
    pub tv_stderr: f64,
    pub critical: Vec<CriticalPoint>,
    pub misclustered: Vec<usize>,
}

pub const BASINS_HEADER: &str = "experiment,n,h,loss,rand_index,tv,tv_stderr,true_modes,estimated_modes,misclustered,excluded";

impl Basins2dReport {
    pub fn results_csv(&self) -> String {
        format!(
            "{BASINS_HEADER}\nbasins2d,{},{},{},{},{},{},{},{},{},{}\n",
            self.n,
            fmt_f(self.h),
            fmt_f(self.report.loss),
            fmt_f(self.report.rand_index),
            fmt_f(self.tv),
            fmt_f(self.tv_stderr),
            self.truth.mode_set.len(),
            self.estimate.num_clusters(),
            self.misclustered.len(),
            self.report.excluded
        )
    }
}

/// Indices whose estimated label disagrees with the truth after matching
/// labels greedily by overlap.
pub fn misclustered(truth: &[Option<usize>], estimate: &[Option<usize>]) -> Vec<usize> {
    let kt = truth.iter().flatten().max().map_or(0, |m| m + 1);
    let ke = estimate.iter().flatten().max().map_or(0, |m| m + 1);
    let mut overlap = vec![vec![0usize; ke]; kt];
    for (t, e) in truth.iter().zip(estimate) {
        if let (Some(t), Some(e)) = (t, e) {
            overlap[*t][*e] += 1;
        }
    }
    let mut cells: Vec<(usize, usize, usize)> =
        (0..kt).flat_map(|t| (0..ke).map(move |e| (t, e))).map(|(t, e)| (overlap[t][e], t, e)).collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut map = vec![None; ke];
    let mut used = vec![false; kt];
    for (c, t, e) in cells {
        if c > 0 && map[e].is_none() && !used[t] {
            map[e] = Some(t);
            used[t] = true;
        }
    }
    truth
        .iter()
        .zip(estimate)
        .enumerate()
        .filter(|(_, (t, e))| matches!((t, e), (Some(t), Some(e)) if map[*e] != Some(*t)))
        .map(|(i, _)| i)
        .collect()
}

/// Curved-basin example: mean shift at `h` on `n` draws from the configured
/// (or built-in) mixture, scored against flow labels, plus the Monte Carlo
/// total variation distance between the truth and the estimate.
pub fn run_basins2d(cfg: &ExperimentConfig) -> Result<Basins2dReport> {
    cfg.validate()?;
    let gm = cfg.mixture.clone().unwrap_or_else(basins2d_mixture);
    if gm.dim() != 2 {
        return Err(Error::invalid(format!("basins2d needs a 2-d mixture, got d = {}", gm.dim())));
    }
    let (n, h) = (cfg.n_grid[0], cfg.h_grid[0]);
    let data = gm.sample(n, &mut sample_stream(cfg.master_seed, 0, n));
    let pts = seed_points(&gm, cfg.master_seed, 0);
    let truth = Truth::build(gm, &pts)?;
    let (assign, flagged) = truth.labels(&data)?;
    if flagged {
        log::warn!("more than 1% of ground-truth labels unresolved");
    }
    let kde = KernelDensityEstimate::new(data.clone(), h)?;
    let estimate = cluster_samples(&kde, &MeanShiftConfig::new(h))?;
    if estimate.num_clusters() != truth.landscape.num_modes() {
        log::warn!("estimate has {} modes, truth has {}", estimate.num_clusters(), truth.landscape.num_modes());
    }
    let report = core_risk_decomposition(&assign.labels, &estimate.labels, &vec![false; n])?;
    let mut rng = RngStream::derive(cfg.master_seed, StreamKey::new(0, "tv"));
    let (tv, tv_stderr) = total_variation_mc(truth.gm(), &kde, cfg.tv_draws, &mut rng);
    let misclustered = misclustered(&assign.labels, &estimate.labels);
    Ok(Basins2dReport {
        n,
        h,
        data,
        truth: assign,
        estimate,
        report,
        tv,
        tv_stderr,
        critical: truth.landscape.critical.clone(),
        misclustered,
    })
}

#[derive(Clone, Debug)]
pub struct CustomReport {
    pub data: Vec<Point>,
    pub bandwidth: f64,
    pub estimate: ClusterAssignment,
    /// Flow labels, loss and critical points when a mixture is known.
    pub truth: Option<(ClusterAssignment, RiskReport, Vec<CriticalPoint>)>,
}

pub const CUSTOM_HEADER: &str = "experiment,n,h,estimated_modes,unconverged,loss,rand_index,true_modes,excluded";

impl CustomReport {
    /// One-row summary; risk columns are empty without a known mixture.
    pub fn results_csv(&self) -> String {
        let (loss, ri, modes, excl) = match &self.truth {
            Some((a, r, _)) => (fmt_f(r.loss), fmt_f(r.rand_index), a.mode_set.len().to_string(), r.excluded.to_string()),
            None => Default::default(),
        };
        format!(
            "{CUSTOM_HEADER}\ncustom,{},{},{},{},{loss},{ri},{modes},{excl}\n",
            self.data.len(),
            fmt_f(self.bandwidth),
            self.estimate.num_clusters(),
            self.estimate.num_unconverged()
        )
    }
}

/// Clusters a dataset (or a sample from the configured mixture) at the first
/// bandwidth; scores it when the mixture is known.
pub fn run_custom(cfg: &ExperimentConfig) -> Result<CustomReport> {
    cfg.validate()?;
    let h = cfg.h_grid[0];
    let data = match (&cfg.dataset, &cfg.mixture) {
        (Some(path), _) => read_dataset(path)?,
        (None, Some(gm)) => gm.sample(cfg.n_grid[0], &mut sample_stream(cfg.master_seed, 0, cfg.n_grid[0])),
        (None, None) => return Err(Error::invalid("custom experiment needs a mixture or a dataset_file")),
    };
    if data[0].len() != cfg.dim && cfg.mixture.is_some() {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: data[0].len() });
    }
    let kde = KernelDensityEstimate::new(data.clone(), h)?;
    let estimate = run_mean_shift(&kde, &data, &MeanShiftConfig::new(h))?;
    let truth = match &cfg.mixture {
        None => None,
        Some(gm) => {
            let pts = seed_points(gm, cfg.master_seed, 0);
            let t = Truth::build(gm.clone(), &pts)?;
            let (assign, _) = t.labels(&data)?;
            let report = if data.len() >= 2 {
                let m = pairwise_loss_masked(&assign.labels, &estimate.labels)?;
                RiskReport {
                    loss: m.loss,
                    rand_index: 1.0 - m.loss,
                    n_points: m.n_points,
                    n_pairs: m.n_pairs,
                    core_loss: None,
                    core_fraction: 0.0,
                    excluded: m.excluded,
                }
            } else {
                return Err(Error::invalid("need at least 2 points to score a clustering"));
            };
            Some((assign, report, t.landscape.critical.clone()))
        }
    };
    Ok(CustomReport { data, bandwidth: h, estimate, truth })
}

/// Mean shift on the given mixture's own sample, as the library pipeline
/// does it; used to cross-check the CLI.
pub fn direct_pipeline(gm: &GaussianMixture, n: usize, h: f64, seed: u64) -> Result<(Vec<Point>, ClusterAssignment)> {
    let data = gm.sample(n, &mut sample_stream(seed, 0, n));
    let kde = KernelDensityEstimate::new(data.clone(), h)?;
    let est = cluster_samples(&kde, &MeanShiftConfig::new(h))?;
    Ok((data, est))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
