//! Pairwise clustering loss (one minus the Rand index) and its core/non-core
//! decomposition.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;

use crate::density::{DensityModel, KernelDensityEstimate};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::linalg::Point;
use crate::mean_shift::{cluster_samples, ClusterAssignment, MeanShiftConfig};
use crate::morse::Landscape;

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Number of unordered pairs on which co-membership differs, from the
/// contingency table.
pub fn pairwise_disagreements<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<u64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    let mut cells: HashMap<(&A, &B), u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
        *cells.entry((x, y)).or_default() += 1;
    }
    let sa: u64 = rows.values().map(|&c| pairs(c)).sum();
    let sb: u64 = cols.values().map(|&c| pairs(c)).sum();
    let sab: u64 = cells.values().map(|&c| pairs(c)).sum();
    Ok(sa + sb - 2 * sab)
}

/// Fraction of the `n(n-1)/2` pairs whose co-membership disagrees. Labels are
/// opaque identifiers.
pub fn pairwise_loss<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::invalid(format!("pairwise loss needs at least 2 points, got {}", a.len())));
    }
    let dis = pairwise_disagreements(a, b)?;
    Ok(dis as f64 / pairs(a.len() as u64) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedLoss {
    pub loss: f64,
    pub n_points: usize,
    pub n_pairs: u64,
    /// Points dropped because either label is missing.
    pub excluded: usize,
}

/// Loss over the points labelled in both assignments.
pub fn pairwise_loss_masked<A: Hash + Eq, B: Hash + Eq>(a: &[Option<A>], b: &[Option<B>]) -> Result<MaskedLoss> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (ka, kb): (Vec<&A>, Vec<&B>) = a.iter().zip(b).filter_map(|(x, y)| Some((x.as_ref()?, y.as_ref()?))).unzip();
    let excluded = a.len() - ka.len();
    if ka.len() < 2 {
        return Err(Error::invalid(format!(
            "pairwise loss needs at least 2 labelled points ({} of {} excluded)",
            excluded,
            a.len()
        )));
    }
    Ok(MaskedLoss { loss: pairwise_loss(&ka, &kb)?, n_points: ka.len(), n_pairs: pairs(ka.len() as u64), excluded })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskReport {
    pub loss: f64,
    pub rand_index: f64,
    pub n_points: usize,
    pub n_pairs: u64,
    /// Loss over core–core pairs; `None` when there are fewer than two core
    /// points.
    pub core_loss: Option<f64>,
    pub core_fraction: f64,
    pub excluded: usize,
}

/// Overall loss, core-restricted loss and core fraction. Core flags refer to
/// the same points; the core fraction is over labelled points.
pub fn core_risk_decomposition(truth: &[Option<usize>], estimate: &[Option<usize>], core: &[bool]) -> Result<RiskReport> {
    if core.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: core.len() });
    }
    let overall = pairwise_loss_masked(truth, estimate)?;
    let keep = |i: usize| truth[i].is_some() && estimate[i].is_some();
    let core_idx: Vec<usize> = (0..truth.len()).filter(|&i| keep(i) && core[i]).collect();
    let core_loss = if core_idx.len() >= 2 {
        let a: Vec<usize> = core_idx.iter().map(|&i| truth[i].unwrap()).collect();
        let b: Vec<usize> = core_idx.iter().map(|&i| estimate[i].unwrap()).collect();
        Some(pairwise_loss(&a, &b)?)
    } else {
        None
    };
    Ok(RiskReport {
        loss: overall.loss,
        rand_index: 1.0 - overall.loss,
        n_points: overall.n_points,
        n_pairs: overall.n_pairs,
        core_loss,
        core_fraction: core_idx.len() as f64 / overall.n_points as f64,
        excluded: overall.excluded,
    })
}

/// What one replication of a pipeline produced.
#[derive(Clone, Debug)]
pub struct Replicate {
    pub report: RiskReport,
    /// Points whose ground-truth flow did not reach a known mode.
    pub truth_unresolved: usize,
    pub n_estimated_modes: usize,
}

#[derive(Clone, Debug)]
pub struct ReplicateSummary {
    pub mean_loss: f64,
    /// `None` with a single replication.
    pub stderr: Option<f64>,
    pub losses: Vec<f64>,
    pub replicates: Vec<Replicate>,
    /// Replications still above the unresolved threshold after a rerun.
    pub flagged: Vec<usize>,
    /// Mean core loss over replications where it is defined.
    pub mean_core_loss: Option<f64>,
}

/// Fraction of unresolved ground-truth labels that triggers a rerun.
pub const UNRESOLVED_RERUN: f64 = 0.01;

/// Runs `pipeline(rep, flow)` for every replication in parallel. A
/// replication with more than 1% unresolved ground truth is rerun once with
/// tolerances tightened tenfold and flagged if that does not help.
pub fn replicate_risk<F>(replications: usize, flow: &FlowConfig, pipeline: F) -> Result<ReplicateSummary>
where
    F: Fn(usize, &FlowConfig) -> Result<Replicate> + Sync,
{
    if replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    let tight = flow.tightened(10.0);
    let too_many = |r: &Replicate| r.truth_unresolved as f64 > UNRESOLVED_RERUN * (r.report.n_points + r.report.excluded) as f64;
    let outcomes: Vec<(Replicate, bool)> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let first = pipeline(rep, flow)?;
            if !too_many(&first) {
                return Ok((first, false));
            }
            log::warn!("replication {rep}: {} unresolved ground-truth labels, rerunning", first.truth_unresolved);
            let second = pipeline(rep, &tight)?;
            let bad = too_many(&second);
            Ok((second, bad))
        })
        .collect::<Result<_>>()?;
    let flagged = outcomes.iter().enumerate().filter(|(_, (_, b))| *b).map(|(i, _)| i).collect();
    let replicates: Vec<Replicate> = outcomes.into_iter().map(|(r, _)| r).collect();
    let losses: Vec<f64> = replicates.iter().map(|r| r.report.loss).collect();
    let (mean_loss, stderr) = mean_stderr(&losses);
    let core: Vec<f64> = replicates.iter().filter_map(|r| r.report.core_loss).collect();
    let mean_core_loss = (!core.is_empty()).then(|| core.iter().sum::<f64>() / core.len() as f64);
    Ok(ReplicateSummary { mean_loss, stderr, losses, replicates, flagged, mean_core_loss })
}

/// Mean and standard error; the latter is `None` for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Core definition used when decomposing risk: per-cluster boundary levels and
/// a common offset.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreLevels {
    pub xis: Vec<f64>,
    pub offset: f64,
}

/// One replication's full output.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub truth: ClusterAssignment,
    pub estimate: ClusterAssignment,
    pub core_flags: Vec<bool>,
    pub report: RiskReport,
}

impl PipelineOutput {
    pub fn replicate(&self) -> Replicate {
        Replicate {
            report: self.report,
            truth_unresolved: self.truth.labels.iter().filter(|l| l.is_none()).count(),
            n_estimated_modes: self.estimate.num_clusters(),
        }
    }
}

/// Sample → mean shift → flow ground truth → loss, for data already drawn.
pub fn run_pipeline<M: DensityModel>(
    landscape: &Landscape<M>,
    data: &[Point],
    bandwidth: f64,
    cores: Option<&CoreLevels>,
    flow: &FlowConfig,
) -> Result<PipelineOutput> {
    let kde = KernelDensityEstimate::new(data.to_vec(), bandwidth)?;
    let estimate = cluster_samples(&kde, &MeanShiftConfig::new(bandwidth))?;
    let truth = crate::flow::true_labels(&landscape.model, data, &landscape.modes, &landscape.critical, flow)?;
    let core_flags = match cores {
        Some(c) => landscape.core_flags(data, &truth.labels, &c.xis, c.offset),
        None => vec![false; data.len()],
    };
    let report = core_risk_decomposition(&truth.labels, &estimate.labels, &core_flags)?;
    Ok(PipelineOutput { truth, estimate, core_flags, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(a: &[usize], b: &[usize]) -> u64 {
        let mut dis = 0;
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                if (a[i] == a[j]) != (b[i] == b[j]) {
                    dis += 1;
                }
            }
        }
        dis
    }

    #[test]
    fn small_cases() {
        assert_eq!(pairwise_loss(&[1, 1, 2], &[1, 1, 2]).unwrap(), 0.0);
        assert_eq!(pairwise_loss(&[1, 1, 2], &[1, 1, 1]).unwrap(), 2.0 / 3.0);
        assert_eq!(pairwise_loss(&["a", "a", "b"], &[7, 7, 9]).unwrap(), 0.0);
        assert!(pairwise_loss(&[1], &[1]).is_err());
        assert!(pairwise_loss(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn masked_loss_drops_missing_labels() {
        let t = [Some(0), Some(0), None, Some(1)];
        let e = [Some(5), Some(5), Some(5), Some(5)];
        let m = pairwise_loss_masked(&t, &e).unwrap();
        assert_eq!(m.excluded, 1);
        assert_eq!(m.n_pairs, 3);
        assert_eq!(m.loss, 2.0 / 3.0);
        assert!(pairwise_loss_masked(&[Some(1), None], &[Some(1), Some(2)]).is_err());
    }

    #[test]
    fn decomposition_cases() {
        let lab: Vec<Option<usize>> = (0..10).map(|i| Some(i / 5)).collect();
        let r = core_risk_decomposition(&lab, &lab, &[true; 10]).unwrap();
        assert_eq!((r.loss, r.core_loss, r.core_fraction), (0.0, Some(0.0), 1.0));
        assert_eq!(r.loss + r.rand_index, 1.0);
        let r = core_risk_decomposition(&lab, &lab, &[false; 10]).unwrap();
        assert_eq!(r.core_loss, None);
        assert_eq!(r.core_fraction, 0.0);
    }

    #[test]
    fn planted_errors_outside_cores() {
        // 100 points, two clusters of 50; the last 5 of each are non-core and
        // 10 points in total get the other cluster's label.
        let truth: Vec<Option<usize>> = (0..100).map(|i| Some(i / 50)).collect();
        let core: Vec<bool> = (0..100).map(|i| i % 50 < 45).collect();
        let mut est = truth.clone();
        for i in 0..100 {
            if !core[i] {
                est[i] = Some(1 - truth[i].unwrap());
            }
        }
        let r = core_risk_decomposition(&truth, &est, &core).unwrap();
        assert_eq!(r.core_loss, Some(0.0));
        // a flipped point disagrees with all 90 core points and agrees with
        // every other flipped point
        let expected = (10 * 90) as f64 / 4950.0;
        let t: Vec<usize> = truth.iter().map(|x| x.unwrap()).collect();
        let e: Vec<usize> = est.iter().map(|x| x.unwrap()).collect();
        assert_eq!(brute(&t, &e), 900);
        assert_eq!(r.loss, expected);
    }

    #[test]
    fn replicate_summary() {
        let flow = FlowConfig::default();
        let make = |rep: usize, _: &FlowConfig| {
            let l = 0.1 * rep as f64;
            Ok(Replicate {
                report: RiskReport {
                    loss: l,
                    rand_index: 1.0 - l,
                    n_points: 10,
                    n_pairs: 45,
                    core_loss: None,
                    core_fraction: 0.0,
                    excluded: 0,
                },
                truth_unresolved: 0,
                n_estimated_modes: 1,
            })
        };
        let s = replicate_risk(1, &flow, make).unwrap();
        assert_eq!(s.stderr, None);
        let s = replicate_risk(3, &flow, make).unwrap();
        assert_eq!(s.losses, vec![0.0, 0.1, 0.2]);
        assert!((s.mean_loss - 0.1).abs() < 1e-15);
        assert!((s.stderr.unwrap() - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        assert!(replicate_risk(0, &flow, make).is_err());
    }

    #[test]
    fn unresolved_replications_are_rerun_then_flagged() {
        let flow = FlowConfig::default();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let s = replicate_risk(2, &flow, |rep, cfg| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let tight = cfg.rtol < flow.rtol;
            Ok(Replicate {
                report: RiskReport {
                    loss: 0.0,
                    rand_index: 1.0,
                    n_points: 100,
                    n_pairs: 4950,
                    core_loss: None,
                    core_fraction: 0.0,
                    excluded: 0,
                },
                truth_unresolved: if rep == 0 && !tight {
                    5
                } else if rep == 1 {
                    3
                } else {
                    0
                },
                n_estimated_modes: 2,
            })
        })
        .unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 4);
        assert_eq!(s.flagged, vec![1]);
    }

    proptest! {
        #[test]
        fn contingency_matches_brute_force(
            labels in (2usize..200).prop_flat_map(|n| (
                proptest::collection::vec(0usize..6, n),
                proptest::collection::vec(0usize..6, n),
            ))
        ) {
            let (a, b) = labels;
            let n = a.len() as u64;
            prop_assert_eq!(pairwise_disagreements(&a, &b).unwrap(), brute(&a, &b));
            let l = pairwise_loss(&a, &b).unwrap();
            prop_assert_eq!(l, brute(&a, &b) as f64 / (n * (n - 1) / 2) as f64);
            prop_assert_eq!(l, pairwise_loss(&b, &a).unwrap());
            prop_assert_eq!(pairwise_loss(&a, &a).unwrap(), 0.0);
            prop_assert!((0.0..=1.0).contains(&l));
            prop_assert_eq!(l + (1.0 - l), 1.0);
        }

        #[test]
        fn loss_ignores_label_names_and_point_order(
            a in proptest::collection::vec(0usize..5, 2..80),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|x| (x * 7 + 3) % 5).collect();
            let renamed: Vec<usize> = b.iter().map(|x| 100 - x).collect();
            prop_assert_eq!(pairwise_loss(&a, &b).unwrap(), pairwise_loss(&a, &renamed).unwrap());
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.shuffle(&mut rng);
            let pa: Vec<usize> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<usize> = idx.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(pairwise_loss(&a, &b).unwrap(), pairwise_loss(&pa, &pb).unwrap());
        }
    }
}
