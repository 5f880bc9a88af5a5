//! The fixed battery of bound checks behind the `check` command.

use nalgebra::DVector;

use crate::density::{grid_points, GaussianMixture};
use crate::error::Result;
use crate::experiments::basins2d_mixture;
use crate::flow::FlowConfig;
use crate::morse::{default_seeds, GridSpec, Landscape, NewtonConfig};
use crate::rng::{RngStream, StreamKey};
use crate::theory::{
    check_chi_square_tail, check_flow_perturbation, check_gaussian_low_density, delta_profile, low_density_eps_cap,
    BoundCheckResult, DeltaConfig,
};

pub const SMOOTHING_LEVELS: [f64; 3] = [0.05, 0.1, 0.15];
pub const FLOW_TIMES: [f64; 3] = [0.5, 1.0, 2.0];
pub const CHI_SQUARE_CASES: [(usize, f64); 3] = [(1, 4.0), (3, 96.0), (10, 320.0)];
/// Integrator slack allowed on the flow-perturbation bound.
pub const FLOW_SLACK: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct BatteryConfig {
    pub seed: u64,
    pub flow_starts: usize,
    pub mc_draws: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self { seed: 20_240_601, flow_starts: 50, mc_draws: 1_000_000 }
    }
}

/// Flow of the curved 2-d test mixture against its Gaussian smoothings, one
/// result per smoothing level.
pub fn flow_perturbation_checks(cfg: &BatteryConfig) -> Result<Vec<BoundCheckResult>> {
    let gm = basins2d_mixture();
    let mut rng = RngStream::derive(cfg.seed, StreamKey::new(0, "flow-starts"));
    let starts = gm.sample(cfg.flow_starts, &mut rng);
    let mut probe = grid_points(&[-8.0, -6.0], &[8.0, 6.0], 60);
    probe.extend(starts.iter().cloned());
    SMOOTHING_LEVELS
        .iter()
        .map(|&h| {
            let q = gm.smooth(h)?;
            let mut r = check_flow_perturbation(&gm, &q, &starts, &FLOW_TIMES, &probe, FLOW_SLACK)?;
            r.name = format!("flow_perturbation_h{h}");
            Ok(r)
        })
        .collect()
}

pub fn chi_square_checks(cfg: &BatteryConfig) -> Result<BoundCheckResult> {
    let mut rng = RngStream::derive(cfg.seed, StreamKey::new(0, "chi-square"));
    check_chi_square_tail(&CHI_SQUARE_CASES, cfg.mc_draws, &mut rng)
}

/// Spherical pair with `sigma = 0.5` in 2-d at the given mean separation.
pub fn low_density_mixture(separation: f64) -> Result<GaussianMixture> {
    let a = DVector::from_vec(vec![-separation / 2.0, 0.0]);
    GaussianMixture::spherical(vec![0.5, 0.5], vec![a.clone(), -a], 0.5)
}

/// Low-density lemma at the largest admissible `eps`: once with separation
/// 10 (conditions hold) and once with separation 6 (conditions fail).
pub fn low_density_checks(cfg: &BatteryConfig) -> Result<(BoundCheckResult, BoundCheckResult)> {
    let eps = low_density_eps_cap(&[0.5, 0.5], 0.5, 2);
    let mut rng = RngStream::derive(cfg.seed, StreamKey::new(0, "low-density"));
    let mut ok = check_gaussian_low_density(&low_density_mixture(10.0)?, eps, cfg.mc_draws, &mut rng)?;
    ok.name = "gaussian_low_density_sep10".into();
    let mut narrow = check_gaussian_low_density(&low_density_mixture(6.0)?, eps, cfg.mc_draws, &mut rng)?;
    narrow.name = "gaussian_low_density_sep6".into();
    Ok((ok, narrow))
}

/// `t(x) Delta(x)^2 <= p(m)` along flows into each cluster core of two 2-d
/// landscapes (unit pair at separation 5, curved test mixture).
pub fn delta_profile_checks() -> Result<Vec<BoundCheckResult>> {
    let cases: [(&str, GaussianMixture, GridSpec); 2] = [
        ("pair", GaussianMixture::symmetric_pair(2, 5.0)?, GridSpec { lo: vec![-5.5, -4.0], hi: vec![5.5, 4.0], per_axis: 61 }),
        ("curved", basins2d_mixture(), GridSpec { lo: vec![-8.0, -6.0], hi: vec![8.0, 6.0], per_axis: 81 }),
    ];
    let dcfg = DeltaConfig { deltas: vec![0.1, 0.2, 0.4, 0.8], points_per_delta: 10, offset: 0.01 };
    let mut out = Vec::new();
    for (name, gm, spec) in cases {
        let seeds = default_seeds(&[], &gm.means(), 2.0);
        let land = Landscape::analyze(gm, &seeds, &NewtonConfig::default(), FlowConfig::default());
        let grid = land.boundary_grid(&spec)?;
        for j in 0..land.num_modes() {
            let mut r = delta_profile(&land, j, &grid, &dcfg)?.time_bound;
            r.name = format!("core_entry_time_{name}_c{j}");
            out.push(r);
        }
    }
    Ok(out)
}

/// Every check in a fixed order.
pub fn run_battery(cfg: &BatteryConfig) -> Result<Vec<BoundCheckResult>> {
    let mut out = flow_perturbation_checks(cfg)?;
    out.push(chi_square_checks(cfg)?);
    let (ok, narrow) = low_density_checks(cfg)?;
    out.push(ok);
    out.push(narrow);
    out.extend(delta_profile_checks()?);
    Ok(out)
}
