use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scalinglab::cli::{exit_code, RESOLVED_CONFIG, SEED_ENV};
use scalinglab::Error;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scalinglab"));
    c.env_remove(SEED_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SWEEP: &str = "
regime = variance-D
S = 64
P = 8
D_grid = 64:1024:5
seeds = 4
test_points = 256
";

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), 1);
    assert_eq!(exit_code(&Error::Format("x".into())), 1);
    assert_eq!(exit_code(&Error::Numeric("x".into())), 2);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "regime = variance-D\nwidht = 3\n").unwrap();
    let o = run(&["sweep", "--config", path(&conf), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("widht"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_bad_grid_exit_one() {
    assert_eq!(run(&["sweep", "--bogus"]).status.code(), Some(1));
    let o = run(&["sweep", "--D-grid", "10:5:3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--D-grid"), "{}", stderr(&o));
}

#[test]
fn regimes_rejects_unshared_flags() {
    let o = run(&["regimes", "--P", "32"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--P"));
}

#[test]
fn selftest_passes_and_fault_is_reported() {
    let ok = run(&["selftest"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let bad = run(&["selftest", "--inject-fault", "eigen-sign"]);
    assert_eq!(bad.status.code(), Some(2));
    let text = stdout(&bad);
    let features = text.split("[exactloss]").next().unwrap();
    assert!(features.contains("FAIL second moment is PSD"), "{text}");
    assert_eq!(text.matches("FAIL").count(), 1);
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("small.conf");
    fs::write(&conf, SMALL_SWEEP).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["sweep", "--config", path(&conf), "--seeds", "3", "--out", path(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = a.join(RESOLVED_CONFIG);
    let o = run(&["sweep", "--config", path(&resolved), "--out", path(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["curve.csv", "curve.svg", RESOLVED_CONFIG] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(&resolved).unwrap();
    assert!(text.contains("seeds = 3"), "flags override the config file");
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, format!("{SMALL_SWEEP}seed = 11\n")).unwrap();
    let env_only = dir.path().join("env");
    let o = bin().env(SEED_ENV, "5").args(["sweep", "--config", path(&conf), "--out", path(&env_only)]).output().unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(env_only.join(RESOLVED_CONFIG)).unwrap();
    assert!(text.contains("seed = 11"), "config file beats the environment");

    fs::write(&conf, SMALL_SWEEP).unwrap();
    let o = bin().env(SEED_ENV, "5").args(["sweep", "--config", path(&conf), "--out", path(&env_only)]).output().unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(env_only.join(RESOLVED_CONFIG)).unwrap();
    assert!(text.contains("seed = 5"));

    let o = bin().env(SEED_ENV, "five").args(["sweep", "--config", path(&conf)]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn regimes_writes_curves_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("r.conf");
    fs::write(
        &conf,
        "seeds = 3\n\
         variance-D.S = 64\nvariance-D.D_grid = 128:2048:5\nvariance-D.test_points = 256\n\
         variance-P.S = 2048\nvariance-P.P_grid = 64:1024:5\n\
         resolution-D.cutoff = 8\nresolution-D.D_grid = 8:128:5\n\
         resolution-P.cutoff = 8\nresolution-P.P_grid = 8:128:5\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["regimes", "--config", path(&conf), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for r in ["variance-D", "variance-P", "resolution-D", "resolution-P"] {
        let csv = fs::read_to_string(out.join(format!("{r}.csv"))).unwrap();
        assert!(csv.contains(&format!("regime={r}")));
        assert!(fs::read_to_string(out.join(format!("{r}.svg"))).unwrap().starts_with("<svg"));
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("regime,alpha,alpha_stderr,expected,tolerance,pass"));
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 5);
    assert!(out.join(RESOLVED_CONFIG).exists());
}

#[test]
fn replica_kappa_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["replica", "--alpha-k", "1.0", "--S", "10000", "--D-grid", "100:1000:8", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("replica.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[0].ln(), f[1].ln())
        })
        .collect();
    assert_eq!(rows.len(), 8);
    let n = rows.len() as f64;
    let (mx, my) = (rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n);
    let slope = rows.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum::<f64>() / rows.iter().map(|r| (r.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 1.0).abs() <= 0.05, "slope {slope}");
}

#[test]
fn manifold_dim_reads_point_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scalinglab::features::ManifoldSpec::torus(2).unwrap();
    let ds = scalinglab::features::sample_manifold(spec, 1500, 4).unwrap();
    let input = dir.path().join("pts.csv");
    fs::write(&input, scalinglab::features::io::dataset_to_csv(&ds)).unwrap();
    let out = dir.path().join("out");
    let o = run(&["manifold-dim", "--in", path(&input), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("dimension.csv")).unwrap();
    let d_hat: f64 = csv.lines().find_map(|l| l.strip_prefix("d_hat,")).unwrap().parse().unwrap();
    assert!((d_hat - 2.0).abs() < 0.2, "{d_hat}");

    fs::write(&input, "x0,x1\n0.1,0.2\n0.3\n").unwrap();
    assert_eq!(run(&["manifold-dim", "--in", path(&input)]).status.code(), Some(1));
}

#[test]
fn spectrum_and_duality_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum", "--d", "2", "--t", "2", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(dir.path().join("spectrum_fit.csv")).unwrap().starts_with("method,exponent"));
    let o = run(&["duality", "--seeds", "3", "--D-grid", "8:64:4", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("duality.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("duality.svg").exists());
}
