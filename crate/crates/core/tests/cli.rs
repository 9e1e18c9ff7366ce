use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nsllg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsllg")).args(args).output().expect("binary runs")
}

const RANDOM_RUN: &str = "model = \"full\"\nT_end = 0.01\ndt = 1e-3\nsample_every = 5\nsnapshot_every = 5\n\
                          [grid]\ndim = 2\nn = 8\n[initial]\nkind = \"random\"\namplitude = 0.05\nseed = 1\n";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RANDOM_RUN);
    let out = dir.path().join("out");
    let o = nsllg(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    assert!(series.starts_with("t,E_total,K,F_helm,D_total,"));
    assert_eq!(series.lines().count(), 1 + 3);
    for f in ["final.nslg", "snap_00000.nslg", "snap_00002.nslg", "summary.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("termination = Completed"));
}

#[test]
fn deterministic_runs_are_byte_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RANDOM_RUN);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["--config", &cfg, "--deterministic", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        args.push("simulate");
        assert!(nsllg(&args).status.success());
        (fs::read(out.join("series.csv")).unwrap(), fs::read(out.join("final.nslg")).unwrap())
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "2"]);
    assert_ne!(a.1, c.1);
}

#[test]
fn invalid_parameters_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{RANDOM_RUN}[params]\ngamma_p = 0.5\n"));
    let o = nsllg(&["--config", &cfg, "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.gamma_p: violates gamma_p>1"));
    let cfg = write_config(dir.path(), &format!("{RANDOM_RUN}bogus = 1\n"));
    assert_eq!(nsllg(&["--config", &cfg, "simulate"]).status.code(), Some(2));
}

#[test]
fn coeffs_reports_failure_list() {
    let o = nsllg(&["coeffs"]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("nearest miss"));
    assert!(String::from_utf8_lossy(&o.stderr).lines().any(|l| l.starts_with("FAIL check=coeff_search")));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{RANDOM_RUN}[params]\nmu = 0.3\n"));
    assert!(nsllg(&["--config", &cfg, "coeffs"]).status.success());
}

#[test]
fn invariants_varcheck_and_macrospin_pass() {
    let dir = tempfile::tempdir().unwrap();
    let resolved = RANDOM_RUN.replace("n = 8", "n = 16").replace("amplitude = 0.05", "amplitude = 0.01");
    let cfg = write_config(dir.path(), &resolved);
    for cmd in ["check-invariants", "varcheck"] {
        let o = nsllg(&["--config", &cfg, cmd]);
        assert!(o.status.success(), "{cmd}: {}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    }
    let o = nsllg(&["--t-end", "0.05", "--dt", "1e-3", "oracle-macrospin"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn perturbation_simulation_and_unknown_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &RANDOM_RUN.replace("\"full\"", "\"perturb\""));
    let out = dir.path().join("p");
    assert!(nsllg(&["--config", &cfg, "--out", out.to_str().unwrap(), "simulate"]).status.success());
    assert!(!nsllg(&["frobnicate"]).status.success());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        nsllg::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 4);
}
