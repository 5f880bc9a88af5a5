//! Experiment configuration in the flat `key = value` format.

use std::path::{Path, PathBuf};

use crate::density::{DensityModel, GaussianMixture};
use crate::error::{Error, Result};
use crate::io::{is_mixture_key, mixture_from_keys, read_mixture, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Basins2d,
    HighdimSweep,
    SeparationSweep,
    Custom,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Basins2d => "basins2d",
            Experiment::HighdimSweep => "highdim_sweep",
            Experiment::SeparationSweep => "separation_sweep",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "basins2d" => Some(Experiment::Basins2d),
            "highdim_sweep" | "highdim" => Some(Experiment::HighdimSweep),
            "separation_sweep" | "separation" => Some(Experiment::SeparationSweep),
            "custom" => Some(Experiment::Custom),
            _ => None,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub const DEFAULT_N_GRID: [usize; 5] = [25, 50, 100, 200, 400];

pub fn default_h_grid() -> Vec<f64> {
    log_space(0.3, 3.0, 8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub dim: usize,
    pub n_grid: Vec<usize>,
    pub h_grid: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    /// Mean separation for the generated two-component mixtures.
    pub separation: f64,
    /// Separation grid of the separation sweep.
    pub separations: Vec<f64>,
    /// Range of covariance eigenvalues for generated mixtures.
    pub eig_range: (f64, f64),
    /// Monte Carlo draws for total variation.
    pub tv_draws: usize,
    /// Explicit mixture (inline keys or `mixture_file`).
    pub mixture: Option<GaussianMixture>,
    pub dataset: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for each named experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            dim: 2,
            n_grid: DEFAULT_N_GRID.to_vec(),
            h_grid: default_h_grid(),
            replications: 1,
            master_seed: 20_240_601,
            separation: 5.0,
            separations: vec![0.0, 1.0, 1.5, 2.5, 3.0, 4.0, 5.0],
            eig_range: (0.5, 2.0),
            tv_draws: 100_000,
            mixture: None,
            dataset: None,
        };
        match experiment {
            Experiment::Basins2d => Self { n_grid: vec![1000], h_grid: vec![1.0], ..base },
            Experiment::HighdimSweep => Self { dim: 10, replications: 75, ..base },
            Experiment::SeparationSweep => {
                Self { n_grid: vec![300], h_grid: vec![SEPARATION_BANDWIDTH], replications: 35, ..base }
            }
            Experiment::Custom => Self { n_grid: vec![200], h_grid: vec![0.5], ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.n_grid.is_empty() || self.h_grid.is_empty() {
            return bad("n_grid and h_grid must be non-empty");
        }
        if self.n_grid.contains(&0) {
            return bad("sample sizes must be positive");
        }
        if self.h_grid.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return bad("bandwidths must be positive and finite");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.eig_range.0 > 0.0 && self.eig_range.0 <= self.eig_range.1 && self.eig_range.1.is_finite()) {
            return bad("eigenvalue range must satisfy 0 < min <= max");
        }
        if self.separations.is_empty() || self.separations.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("separations must be non-empty, finite and non-negative");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and non-negative");
        }
        if let Some(gm) = &self.mixture {
            if gm.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: gm.dim() });
            }
        }
        if self.experiment == Experiment::Custom && self.mixture.is_none() && self.dataset.is_none() {
            return bad("custom experiment needs a mixture or a dataset_file");
        }
        Ok(())
    }

    /// Parses config text. Relative file paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        const KNOWN: [&str; 13] = [
            "experiment",
            "n_grid",
            "h_grid",
            "replications",
            "seed",
            "separation",
            "separations",
            "eig_min",
            "eig_max",
            "tv_draws",
            "mixture_file",
            "dataset_file",
            "bandwidth",
        ];
        for (key, line) in kv.keys() {
            if !KNOWN.contains(&key) && !is_mixture_key(key) && key != "n" {
                return Err(Error::parse(line, format!("unknown key `{key}`")));
            }
        }
        let (exp, exp_line) = kv.required("experiment")?;
        let experiment = Experiment::parse(exp).ok_or_else(|| Error::parse(exp_line, format!("unknown experiment `{exp}`")))?;
        let mut cfg = Self::preset(experiment);
        let inline_mixture = kv.contains("components");
        if let Some(d) = kv.parse_value("dim")? {
            cfg.dim = d;
        }
        if let Some(v) = kv.parse_list("n_grid")? {
            cfg.n_grid = v;
        }
        if let Some(n) = kv.parse_value("n")? {
            if kv.contains("n_grid") {
                return Err(Error::parse(kv.get("n").unwrap().1, "give either `n` or `n_grid`"));
            }
            cfg.n_grid = vec![n];
        }
        if let Some(v) = kv.parse_list("h_grid")? {
            cfg.h_grid = v;
        }
        if let Some(h) = kv.parse_value("bandwidth")? {
            if kv.contains("h_grid") {
                return Err(Error::parse(kv.get("bandwidth").unwrap().1, "give either `bandwidth` or `h_grid`"));
            }
            cfg.h_grid = vec![h];
        }
        if let Some(r) = kv.parse_value("replications")? {
            cfg.replications = r;
        }
        if let Some(s) = kv.parse_value("seed")? {
            cfg.master_seed = s;
        }
        if let Some(s) = kv.parse_value("separation")? {
            cfg.separation = s;
        }
        if let Some(s) = kv.parse_list("separations")? {
            cfg.separations = s;
        }
        if let Some(lo) = kv.parse_value("eig_min")? {
            cfg.eig_range.0 = lo;
        }
        if let Some(hi) = kv.parse_value("eig_max")? {
            cfg.eig_range.1 = hi;
        }
        if let Some(t) = kv.parse_value("tv_draws")? {
            cfg.tv_draws = t;
        }
        match (kv.get("mixture_file"), inline_mixture) {
            (Some((_, line)), true) => return Err(Error::parse(line, "give either `mixture_file` or inline mixture keys")),
            (Some((path, _)), false) => cfg.mixture = Some(read_mixture(&base_dir.join(path))?),
            (None, true) => cfg.mixture = Some(mixture_from_keys(&kv)?),
            (None, false) => {}
        }
        if let Some(gm) = &cfg.mixture {
            if !kv.contains("dim") {
                cfg.dim = gm.dim();
            }
        }
        if let Some((path, _)) = kv.get("dataset_file") {
            cfg.dataset = Some(base_dir.join(path));
        }
        cfg.validate().map_err(|e| Error::parse(exp_line, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Echo of the settings that determine results.
    pub fn echo(&self) -> String {
        let list = |xs: Vec<String>| xs.join(";");
        format!(
            "experiment={} dim={} n_grid={} h_grid={} replications={} seed={}",
            self.experiment.as_str(),
            self.dim,
            list(self.n_grid.iter().map(|n| n.to_string()).collect()),
            list(self.h_grid.iter().map(|h| format!("{h:.6}")).collect()),
            self.replications,
            self.master_seed
        )
    }
}

/// Bandwidth of the separation sweep.
pub const SEPARATION_BANDWIDTH: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_grid() {
        let h = default_h_grid();
        assert_eq!(h.len(), 8);
        assert_relative_eq!(h[0], 0.3);
        assert_relative_eq!(h[7], 3.0, max_relative = 1e-14);
        assert_relative_eq!(h[1] / h[0], h[7] / h[6], max_relative = 1e-12);
    }

    #[test]
    fn parses_sweep_config() {
        let cfg = ExperimentConfig::parse(
            "experiment = highdim_sweep\nn_grid = 5, 50\nh_grid = 0.5, 1\nreplications = 3\nseed = 9\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::HighdimSweep);
        assert_eq!(cfg.dim, 10);
        assert_eq!(cfg.n_grid, vec![5, 50]);
        assert_eq!(cfg.h_grid, vec![0.5, 1.0]);
        assert_eq!((cfg.replications, cfg.master_seed), (3, 9));
    }

    #[test]
    fn inline_mixture() {
        let text = "experiment = custom\ncomponents = 1\ndim = 1\nweight_1 = 1\nmean_1 = 0\ncov_1 = 2\nn = 10\nbandwidth = 0.3\n";
        let cfg = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.mixture.unwrap().covariances()[0][(0, 0)], 2.0);
        assert_eq!((cfg.n_grid.clone(), cfg.h_grid.clone()), (vec![10], vec![0.3]));
    }

    #[test]
    fn rejects_bad_configs() {
        let line = |t: &str| match ExperimentConfig::parse(t, Path::new(".")) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line("experiment = nope\n"), 1);
        assert_eq!(line("experiment = custom\nwhat = 1\n"), 2);
        assert_eq!(line("experiment = basins2d\nreplications = 0\n"), 1);
        assert_eq!(line("experiment = basins2d\nh_grid = 1, -1\n"), 1);
        assert_eq!(line("experiment = basins2d\nn = 4\nn_grid = 1\n"), 2);
        assert_eq!(line("replications = 2\n"), 2);
        assert!(ExperimentConfig::parse("experiment = custom\n", Path::new(".")).is_err());
    }
}
