//! The `modeclust` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use modeclust::battery::{run_battery, BatteryConfig};
use modeclust::config::{Experiment, ExperimentConfig};
use modeclust::error::{Error, Result};
use modeclust::experiments::{run_basins2d, run_custom, run_highdim_sweep, run_mixture_risk, run_separation_sweep, SweepResult};
use modeclust::io::{labels_csv, modes_csv, write_file};
use modeclust::plot::{heatmap_svg, line_svg, scatter_svg};
use modeclust::theory::checks_csv;

#[derive(Parser, Debug)]
#[command(name = "modeclust", version, about = "Mean-shift clustering against gradient-flow ground truth")]
struct Cli {
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    emit_plots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster a dataset (or a sample of the configured mixture).
    Cluster {
        /// Whitespace or comma separated points, one per line.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Replicated risk of mean shift on the configured mixture over n_grid x h_grid.
    Risk,
    /// Grid sweep named by the config (`highdim_sweep` or `separation_sweep`).
    Sweep,
    /// Numerical checks of the flow, low-density and chi-square bounds.
    Check {
        /// Monte Carlo draws for the tail checks.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        /// Flow starts for the perturbation check.
        #[arg(long, default_value_t = 50)]
        starts: usize,
    },
    /// Rerun one of the named simulation experiments.
    Repro {
        #[arg(value_enum)]
        name: ReproName,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReproName {
    Basins2d,
    Highdim,
    Separation,
}

impl ReproName {
    fn experiment(self) -> Experiment {
        match self {
            ReproName::Basins2d => Experiment::Basins2d,
            ReproName::Highdim => Experiment::HighdimSweep,
            ReproName::Separation => Experiment::SeparationSweep,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage or parse error, 2 numerical failure.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return 2;
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(cli: &Cli, default: Option<Experiment>) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, default) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(exp)) => ExperimentConfig::preset(exp),
        (None, None) => return Err(Error::InvalidArgument("this command needs --config".into())),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_path();
    let start = Instant::now();
    match &cli.command {
        Command::Cluster { data, bandwidth } => {
            let mut cfg = match (&cli.config, data) {
                (None, None) => return Err(Error::InvalidArgument("cluster needs --data or --config".into())),
                (None, Some(_)) => ExperimentConfig::preset(Experiment::Custom),
                (Some(_), _) => load_config(cli, None)?,
            };
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            if let Some(path) = data {
                cfg.dataset = Some(path.clone());
            }
            if let Some(h) = bandwidth {
                cfg.h_grid = vec![*h];
            }
            let report = run_custom(&cfg)?;
            let dim = report.data[0].len();
            write_file(out, "results.csv", &report.results_csv())?;
            let truth = report.truth.as_ref();
            write_file(out, "modes.csv", &modes_csv(dim, &report.estimate.mode_set, truth.map_or(&[][..], |t| &t.2)))?;
            let truth_labels = truth.map(|t| t.0.labels.as_slice());
            write_file(out, "labels.csv", &labels_csv(&report.data, &report.estimate.labels, truth_labels))?;
            write_timing(out, "custom", start)?;
            if cli.emit_plots && dim == 2 {
                let svg = scatter_svg(
                    "mean-shift clusters",
                    &report.data,
                    &report.estimate.labels,
                    &[],
                    &report.estimate.mode_set.modes,
                );
                write_file(out, "clusters.svg", &svg)?;
            }
            println!(
                "clustered {} points into {} modes (h = {})",
                report.data.len(),
                report.estimate.num_clusters(),
                report.bandwidth
            );
        }
        Command::Risk => {
            let cfg = load_config(cli, None)?;
            let gm = cfg.mixture.clone().ok_or_else(|| Error::InvalidArgument("risk needs a mixture in the config".into()))?;
            let r = run_mixture_risk(&cfg, &gm)?;
            write_sweep(cli, &r, "risk")?;
        }
        Command::Sweep => {
            let cfg = load_config(cli, Some(Experiment::HighdimSweep))?;
            let r = match cfg.experiment {
                Experiment::HighdimSweep => run_highdim_sweep(&cfg)?,
                Experiment::SeparationSweep => run_separation_sweep(&cfg)?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "sweep runs highdim_sweep or separation_sweep, config has {}",
                        other.as_str()
                    )))
                }
            };
            write_sweep(cli, &r, cfg.experiment.as_str())?;
        }
        Command::Check { draws, starts } => {
            let cfg =
                BatteryConfig { seed: cli.seed.unwrap_or(BatteryConfig::default().seed), flow_starts: *starts, mc_draws: *draws };
            let results = run_battery(&cfg)?;
            write_file(out, "checks.csv", &checks_csv(&results))?;
            write_timing(out, "check", start)?;
            for r in &results {
                let status = if !r.is_evaluated() {
                    "PRECONDITION-FAILED"
                } else if r.passed() {
                    "ok"
                } else {
                    "VIOLATED"
                };
                println!(
                    "{:<32} {status:<20} {}/{} violations, max ratio {:.3}",
                    r.name, r.violations, r.checked, r.max_slack_ratio
                );
            }
        }
        Command::Repro { name } => {
            let exp = name.experiment();
            let cfg = load_config(cli, Some(exp))?;
            if cfg.experiment != exp {
                return Err(Error::InvalidArgument(format!("config is for {}, not {}", cfg.experiment.as_str(), exp.as_str())));
            }
            match exp {
                Experiment::Basins2d => {
                    let r = run_basins2d(&cfg)?;
                    write_file(out, "results.csv", &r.results_csv())?;
                    write_file(out, "modes.csv", &modes_csv(2, &r.estimate.mode_set, &r.critical))?;
                    write_file(out, "labels.csv", &labels_csv(&r.data, &r.estimate.labels, Some(&r.truth.labels)))?;
                    let mis: String = std::iter::once("index".to_string())
                        .chain(r.misclustered.iter().map(|i| i.to_string()))
                        .map(|l| l + "\n")
                        .collect();
                    write_file(out, "misclustered.csv", &mis)?;
                    write_timing(out, "basins2d", start)?;
                    if cli.emit_plots {
                        let svg =
                            scatter_svg("curved basins", &r.data, &r.truth.labels, &r.misclustered, &r.estimate.mode_set.modes);
                        write_file(out, "basins2d.svg", &svg)?;
                    }
                    println!(
                        "basins2d: loss {:.4}, misclustered {} of {}, TV {:.3}",
                        r.report.loss,
                        r.misclustered.len(),
                        r.n,
                        r.tv
                    );
                }
                Experiment::HighdimSweep => write_sweep(cli, &run_highdim_sweep(&cfg)?, "highdim_sweep")?,
                Experiment::SeparationSweep => write_sweep(cli, &run_separation_sweep(&cfg)?, "separation_sweep")?,
                Experiment::Custom => unreachable!("not a repro target"),
            }
        }
    }
    Ok(())
}

fn write_timing(out: &Path, what: &str, start: Instant) -> Result<()> {
    write_file(out, "timing.csv", &format!("command,runtime_seconds\n{what},{:.6}\n", start.elapsed().as_secs_f64()))
}

fn write_sweep(cli: &Cli, r: &SweepResult, what: &str) -> Result<()> {
    let out = cli.out.as_path();
    write_file(out, "results.csv", &r.results_csv())?;
    write_file(out, "replications.csv", &r.replications_csv())?;
    write_file(out, "timing.csv", &r.timing_csv())?;
    let mut ns: Vec<usize> = r.rows.iter().map(|row| row.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut seps: Vec<f64> = r.rows.iter().map(|row| row.separation).collect();
    seps.sort_by(f64::total_cmp);
    seps.dedup();
    for &s in &seps {
        for &n in &ns {
            if let Some(best) = r.best_h(n, s) {
                println!("{what}: n = {n}, separation = {s}: best h = {:.4}, mean loss = {:.4}", best.h, best.mean_loss);
            }
        }
    }
    if r.rows.iter().any(|row| row.flagged) {
        log::warn!("some cells have more than 10% unresolved ground-truth labels (flagged = 1)");
    }
    if cli.emit_plots {
        let mut hs: Vec<f64> = r.rows.iter().map(|row| row.h).collect();
        hs.sort_by(f64::total_cmp);
        hs.dedup();
        if seps.len() == 1 {
            let grid: Vec<Vec<f64>> = ns
                .iter()
                .map(|&n| hs.iter().map(|&h| r.row(n, h, seps[0]).map_or(f64::NAN, |row| row.mean_loss)).collect())
                .collect();
            let svg = heatmap_svg(
                &format!("{what}: mean loss"),
                &ns.iter().map(|n| n.to_string()).collect::<Vec<_>>(),
                &hs.iter().map(|h| format!("{h:.2}")).collect::<Vec<_>>(),
                &grid,
                "bandwidth h",
                "n",
            );
            write_file(out, &format!("{what}.svg"), &svg)?;
        } else {
            let series: Vec<(String, Vec<(f64, f64)>)> = ns
                .iter()
                .flat_map(|&n| hs.iter().map(move |&h| (n, h)))
                .map(|(n, h)| {
                    let pts = seps.iter().filter_map(|&s| r.row(n, h, s).map(|row| (s, row.mean_loss))).collect();
                    (format!("n={n} h={h:.2}"), pts)
                })
                .collect();
            write_file(out, &format!("{what}.svg"), &line_svg(&format!("{what}: mean loss"), &series, "separation", "loss"))?;
        }
    }
    Ok(())
}
