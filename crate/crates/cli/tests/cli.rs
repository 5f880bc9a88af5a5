use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use modeclust::experiments::{direct_pipeline, unit_pair};
use modeclust::io::mixture_to_string;

fn modeclust(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modeclust")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&modeclust(&["--help"], &out)), 0);
    assert_eq!(code(&modeclust(&["frobnicate"], &out)), 1);
    assert_eq!(code(&modeclust(&["repro", "nonsense"], &out)), 1);
    assert_eq!(code(&modeclust(&["risk"], &out)), 1);
    assert_eq!(code(&modeclust(&["--threads", "0", "repro", "basins2d"], &out)), 1);
    assert_eq!(code(&modeclust(&["cluster"], &out)), 1);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "experiment = separation_sweep\nreplications = 0\n").unwrap();
    let o = modeclust(&["--config", cfg.to_str().unwrap(), "sweep"], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("replications"), "{}", stderr(&o));

    fs::write(&cfg, "experiment = basins2d\nwidth = 3\n").unwrap();
    let o = modeclust(&["--config", cfg.to_str().unwrap(), "repro", "basins2d"], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn malformed_datasets_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let data = dir.path().join("empty.csv");
    fs::write(&data, "\n\n").unwrap();
    let o = modeclust(&["cluster", "--data", data.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"));

    fs::write(&data, "0,0\n1,1\n2,x\n").unwrap();
    let o = modeclust(&["cluster", "--data", data.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&data, "0,0\n1,1,1\n").unwrap();
    let o = modeclust(&["cluster", "--data", data.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn two_far_pairs_give_two_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let data = dir.path().join("pairs.csv");
    fs::write(&data, "0,0\n0.1,0\n10,10\n10.1,10\n").unwrap();
    let o = modeclust(&["cluster", "--data", data.to_str().unwrap(), "--bandwidth", "0.5", "--emit-plots"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let row: Vec<&str> = results.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..5], &["custom", "4", "5.0000000000e-1", "2", "0"]);
    assert_eq!(row[5], "");

    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    let est: Vec<&str> = labels.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(est[0], est[1]);
    assert_eq!(est[2], est[3]);
    assert_ne!(est[0], est[2]);
    assert!(out.join("clusters.svg").exists());
    let modes = fs::read_to_string(out.join("modes.csv")).unwrap();
    assert_eq!(modes.lines().filter(|l| l.starts_with("estimated,")).count(), 2);
}

#[test]
fn mixture_config_matches_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let gm = unit_pair(2, 4.0).unwrap();
    let cfg = dir.path().join("mix.cfg");
    fs::write(&cfg, format!("experiment = custom\nn = 150\nbandwidth = 0.7\nseed = 77\n{}", mixture_to_string(&gm))).unwrap();
    let o = modeclust(&["--config", cfg.to_str().unwrap(), "cluster"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let (data, est) = direct_pipeline(&gm, 150, 0.7, 77).unwrap();
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    let mut lines = labels.lines();
    assert_eq!(lines.next().unwrap(), "index,x1,x2,estimated,true");
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], i.to_string());
        assert_eq!(f[1].parse::<f64>().unwrap(), format!("{:.10e}", data[i][0]).parse::<f64>().unwrap());
        assert_eq!(f[3], est.labels[i].map_or_else(String::new, |l| l.to_string()));
    }
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let row: Vec<&str> = results.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], est.num_clusters().to_string());
    let loss: f64 = row[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&loss));
    assert_eq!(row[7], "2");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sep.cfg");
    fs::write(&cfg, "experiment = separation_sweep\nn_grid = 60\nh_grid = 0.5, 0.9\nseparations = 0, 4\nreplications = 2\n")
        .unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = modeclust(&["--config", cfg.to_str().unwrap(), "--seed", seed, "--emit-plots", "sweep"], &out);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (fs::read(out.join("results.csv")).unwrap(), fs::read(out.join("replications.csv")).unwrap(), out)
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_ne!(a.1, c.1);
    assert!(a.2.join("separation_sweep.svg").exists());
    assert!(a.2.join("timing.csv").exists());

    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    for line in text.lines().skip(1) {
        let loss: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&loss));
    }
}

#[test]
fn check_writes_every_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = modeclust(&["check", "--draws", "20000", "--starts", "5"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("checks.csv")).unwrap();
    for name in ["flow_perturbation_h0.05", "chi_square_tail", "core_entry_time"] {
        assert!(csv.contains(name), "missing {name}");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("PRECONDITION-FAILED"));
    assert!(!stdout.contains("VIOLATED"));
}
