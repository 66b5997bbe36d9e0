//! Command-line front end. Every subcommand resolves a configuration,
//! calls one library entry point and writes its outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{config, Error, Result};
use crate::features::io::{dataset_from_csv, format_float};
use crate::fit::fit_line;
use crate::harness::{
    duality_report, emit, fit_scaling_exponent, geometric_grid, regimes_demo, run_sweep, Artifact, Format, PlotSeries, Regime,
    RegimesConfig, SweepConfig, FeatureFamily,
};
use crate::manifold::{estimate_dim, fit_nn_scaling};
use crate::replica::{replica_curve, replica_vs_exact, teacher_overlaps};
use crate::selftest::{self, Fault};
use crate::spectral::{eig_spectrum, fit_spectral_exponent, partial_sum_exponent, synth_spectrum, ExponentFit, Spectrum};

/// Environment variable holding the base seed.
pub const SEED_ENV: &str = "SCALINGLAB_SEED";
/// File written next to every run's outputs.
pub const RESOLVED_CONFIG: &str = "resolved.conf";

#[derive(Debug, Parser)]
#[command(name = "scalinglab", version, about = "Scaling regimes of exactly solvable random-feature models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeaturesArg {
    Relu,
    Torus,
    Spectral,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Number of seeds per grid point.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Spectral exponent of a synthetic spectrum.
    #[arg(long = "alpha-k", global = true)]
    pub alpha_k: Option<f64>,
    /// Teacher feature count.
    #[arg(long = "S", global = true)]
    pub s: Option<usize>,
    /// Fixed student size (`inf` for all features).
    #[arg(long = "P", global = true)]
    pub p: Option<String>,
    /// Dataset-size grid, `lo:hi:n` or a comma list.
    #[arg(long = "D-grid", global = true)]
    pub d_grid: Option<String>,
    /// Student-size grid, `lo:hi:n` or a comma list.
    #[arg(long = "P-grid", global = true)]
    pub p_grid: Option<String>,
    /// Manifold dimension.
    #[arg(long = "d", global = true)]
    pub d: Option<usize>,
    /// Smoothness of torus features.
    #[arg(long = "t", global = true)]
    pub t: Option<f64>,
    /// Teacher feature family.
    #[arg(long, global = true, value_enum)]
    pub features: Option<FeaturesArg>,
    /// Report raw losses instead of subtracting the infinite limit.
    #[arg(long = "no-subtract", global = true)]
    pub no_subtract: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// All four scaling regimes with a pass/fail summary.
    Regimes,
    /// One sweep described by a config file and flags.
    Sweep {
        #[arg(long)]
        regime: Option<String>,
        /// Fixed dataset size for student-size sweeps (`inf` for no limit).
        #[arg(long = "D")]
        d_fixed: Option<String>,
    },
    /// Kernel spectrum and its power-law fit.
    Spectrum,
    /// Replica predictions; compared with exact losses for torus features.
    Replica,
    /// Paired dataset-size and student-size curves.
    Duality,
    /// Intrinsic dimension of a point cloud.
    ManifoldDim {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Nearest-neighbor distance and 1-NN predictor scaling.
    NnScaling,
    /// Reduced-scale checks of every module.
    Selftest {
        /// Deliberately break one check (`eigen-sign`).
        #[arg(long = "inject-fault")]
        inject_fault: Option<String>,
    },
}

/// Exit code for an error: 1 for configuration and input problems,
/// 2 for numeric failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => 2,
        _ => 1,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn warn(ws: impl IntoIterator<Item = String>) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn read_config(flags: &Flags) -> Result<Option<String>> {
    flags.config.as_ref().map(|p| fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))).transpose()
}

/// Flag values as config keys.
fn flag_overrides(flags: &Flags) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    if let Some(f) = flags.features {
        let name = match f {
            FeaturesArg::Relu => "relu",
            FeaturesArg::Torus => "torus",
            FeaturesArg::Spectral => "spectral",
        };
        v.push(("features", name.to_string()));
    }
    if let Some(x) = flags.seeds {
        v.push(("seeds", x.to_string()));
    }
    if let Some(x) = flags.alpha_k {
        v.push(("alpha_k", x.to_string()));
    }
    if let Some(x) = flags.s {
        v.push(("S", x.to_string()));
    }
    if let Some(x) = &flags.p {
        v.push(("P", x.clone()));
    }
    if let Some(x) = &flags.d_grid {
        v.push(("D_grid", x.clone()));
    }
    if let Some(x) = &flags.p_grid {
        v.push(("P_grid", x.clone()));
    }
    if let Some(x) = flags.d {
        v.push(("d", x.to_string()));
    }
    if let Some(x) = flags.t {
        v.push(("t", x.to_string()));
    }
    if flags.no_subtract {
        v.push(("subtract_asymptote", "false".to_string()));
    }
    v
}

fn flag_name(key: &str) -> &'static str {
    match key {
        "features" => "--features",
        "seeds" => "--seeds",
        "alpha_k" => "--alpha-k",
        "S" => "--S",
        "P" => "--P",
        "D_grid" => "--D-grid",
        "P_grid" => "--P-grid",
        "d" => "--d",
        "t" => "--t",
        "subtract_asymptote" => "--no-subtract",
        _ => "flag",
    }
}

fn with_flag<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", flag_name(key))),
        other => other,
    })
}

/// Defaults, then the seed variable, then the config file, then flags.
fn resolve_sweep(base: SweepConfig, flags: &Flags, extra: &[(&'static str, String)]) -> Result<SweepConfig> {
    let mut c = base;
    if let Some(s) = env_seed()? {
        c.base_seed = s;
    }
    if let Some(text) = read_config(flags)? {
        warn(c.apply_text(&text)?);
    }
    let mut overrides = flag_overrides(flags);
    overrides.extend_from_slice(extra);
    for (k, v) in &overrides {
        warn(with_flag(k, c.set(k, v))?);
        if *k == "d" && c.features == FeatureFamily::Relu {
            c.input_dim = c.d;
        }
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(flags: &Flags) -> Result<PathBuf> {
    let dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("scalinglab-out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn fit_line_text(f: &ExponentFit) -> String {
    format!("alpha = {:.4} ± {:.4} (window {}..{}, {} points)", f.exponent, f.stderr, f.window.0, f.window.1, f.n_points)
}

fn execute(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            return config("--threads must be at least 1");
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let flags = &cli.flags;
    match &cli.command {
        Command::Regimes => cmd_regimes(flags),
        Command::Sweep { regime, d_fixed } => cmd_sweep(flags, regime.as_deref(), d_fixed.as_deref()),
        Command::Spectrum => cmd_spectrum(flags),
        Command::Replica => cmd_replica(flags),
        Command::Duality => cmd_duality(flags),
        Command::ManifoldDim { input } => cmd_manifold_dim(flags, input),
        Command::NnScaling => cmd_nn_scaling(flags),
        Command::Selftest { inject_fault } => cmd_selftest(inject_fault.as_deref()),
    }
}

fn cmd_regimes(flags: &Flags) -> Result<i32> {
    let mut cfg = RegimesConfig::default();
    if let Some(s) = env_seed()? {
        for c in &mut cfg.sweeps {
            c.base_seed = s;
        }
    }
    if let Some(text) = read_config(flags)? {
        warn(cfg.apply_text(&text)?);
    }
    for (k, v) in flag_overrides(flags) {
        match k {
            "seeds" | "d" | "t" | "subtract_asymptote" => warn(with_flag(k, cfg.set(k, &v))?),
            _ => return config(format!("{} does not apply to regimes; use a config file with regime-prefixed keys", flag_name(k))),
        }
    }
    cfg.validate()?;
    let dir = out_dir(flags)?;
    let report = regimes_demo(&cfg)?;
    report.write(&dir)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    print!("{}", report.summary_csv());
    Ok(0)
}

fn cmd_sweep(flags: &Flags, regime: Option<&str>, d_fixed: Option<&str>) -> Result<i32> {
    let text = read_config(flags)?;
    let regime: Regime = match (regime, text.as_deref().map(SweepConfig::regime_in).transpose()?.flatten()) {
        (Some(r), _) => r.parse()?,
        (None, Some(r)) => r,
        (None, None) => Regime::VarianceD,
    };
    let mut extra = vec![("regime", regime.to_string())];
    if let Some(d) = d_fixed {
        extra.push(("D", d.to_string()));
    }
    let cfg = resolve_sweep(SweepConfig::preset(regime), flags, &extra)?;
    if regime == Regime::Duality {
        return run_duality(&cfg, flags);
    }
    let dir = out_dir(flags)?;
    let curve = run_sweep(&cfg)?;
    let fit = fit_scaling_exponent(&curve, None);
    let art = Artifact::Curve { curve: &curve, fit: fit.as_ref().ok() };
    emit(&dir.join("curve.csv"), &art, Format::Csv)?;
    emit(&dir.join("curve.svg"), &art, Format::Svg)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    match &fit {
        Ok(f) => {
            write(&dir, "fit.csv", &f.to_csv())?;
            println!("{regime}: {}", fit_line_text(f));
        }
        Err(e) => println!("{regime}: no fit ({e})"),
    }
    Ok(0)
}

fn spectrum_defaults() -> SweepConfig {
    let mut c = SweepConfig::preset(Regime::ResolutionD);
    c.features = FeatureFamily::Torus;
    c
}

fn cmd_spectrum(flags: &Flags) -> Result<i32> {
    let mut base = spectrum_defaults();
    if flags.alpha_k.is_some() && flags.features.is_none() {
        base.features = FeatureFamily::Spectral;
        base.s = 10_000;
    }
    let cfg = resolve_sweep(base, flags, &[])?;
    let dir = out_dir(flags)?;
    let spectrum: Spectrum = match cfg.features {
        FeatureFamily::Spectral => synth_spectrum(cfg.alpha_k, cfg.s)?,
        _ => {
            let fm = cfg.build_features()?;
            let m = crate::harness::feature_moment(&fm, cfg.manifold_spec(&fm)?, cfg.moment_samples, cfg.base_seed)?;
            eig_spectrum(&m)?
        }
    };
    let fit = fit_spectral_exponent(&spectrum, None)?;
    let mut table = format!("method,{}\n", ExponentFit::CSV_HEADER);
    let _ = writeln!(table, "eigenvalues,{}", fit.csv_record());
    let partial = partial_sum_exponent(&spectrum, None);
    if let Ok(p) = &partial {
        let _ = writeln!(table, "partial_sums,{}", p.csv_record());
    }
    write(&dir, "spectrum.csv", &spectrum.to_csv())?;
    write(&dir, "spectrum_fit.csv", &table)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    println!("S = {}, alpha_K = {:.4} ± {:.4} (decay exponent {:.4})", spectrum.len(), fit.exponent, fit.stderr, fit.exponent + 1.0);
    if let Ok(p) = partial {
        println!("partial-sum alpha_K = {:.4}", p.exponent);
    }
    Ok(0)
}

fn cmd_replica(flags: &Flags) -> Result<i32> {
    let mut base = SweepConfig::preset(Regime::ResolutionD);
    base.features = FeatureFamily::Spectral;
    base.s = 10_000;
    base.d_grid = geometric_grid(100, 1000, 8)?.0;
    base.seeds = 20;
    if flags.features == Some(FeaturesArg::Torus) {
        base.d_grid = geometric_grid(16, 512, 6)?.0;
    }
    let cfg = resolve_sweep(base, flags, &[])?;
    let dir = out_dir(flags)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    if cfg.features == FeatureFamily::Spectral {
        let spectrum = synth_spectrum(cfg.alpha_k, cfg.s)?;
        let grid: Vec<f64> = cfg.d_grid.iter().map(|&d| d as f64).collect();
        let sols = replica_curve(&spectrum, &teacher_overlaps(cfg.s), &grid)?;
        let mut table = String::from("D,kappa,gamma,L_replica\n");
        for (d, r) in cfg.d_grid.iter().zip(&sols) {
            let _ = writeln!(table, "{d},{},{},{}", format_float(r.kappa), format_float(r.gamma), format_float(r.predicted_loss));
        }
        write(&dir, "replica.csv", &table)?;
        print!("{table}");
        if grid.len() >= 2 {
            let x: Vec<f64> = grid.iter().map(|d| d.ln()).collect();
            let y: Vec<f64> = sols.iter().map(|r| r.kappa.ln()).collect();
            let f = fit_line(&x, &y, None)?;
            println!("kappa slope = {:.4} (alpha_K = {})", f.slope, cfg.alpha_k);
        }
    } else {
        let fm = cfg.build_features()?;
        let table = replica_vs_exact(&fm, None, &cfg.d_grid, cfg.seeds, cfg.base_seed)?;
        write(&dir, "replica_vs_exact.csv", &table.to_csv())?;
        print!("{}", table.to_csv());
        println!("max |relative deviation| = {:.4}", table.max_abs_rel_dev());
    }
    Ok(0)
}

fn cmd_duality(flags: &Flags) -> Result<i32> {
    let cfg = resolve_sweep(SweepConfig::preset(Regime::Duality), flags, &[])?;
    run_duality(&cfg, flags)
}

fn run_duality(cfg: &SweepConfig, flags: &Flags) -> Result<i32> {
    let dir = out_dir(flags)?;
    let fm = cfg.build_features()?;
    let report = duality_report(&fm, None, &cfg.d_grid, cfg.seeds, cfg.base_seed)?;
    write(&dir, "duality.csv", &report.to_csv())?;
    let series = vec![
        PlotSeries { label: "L(D)".into(), curve: &report.d_curve, fit: report.fit_d.as_ref() },
        PlotSeries { label: "L(P)".into(), curve: &report.p_curve, fit: report.fit_p.as_ref() },
    ];
    emit(&dir.join("duality.svg"), &Artifact::Curves { title: "duality".into(), series }, Format::Svg)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    print!("{}", report.to_csv());
    for (name, f) in [("alpha_D", &report.fit_d), ("alpha_P", &report.fit_p)] {
        match f {
            Some(f) => println!("{name}: {}", fit_line_text(f)),
            None => println!("{name}: no fit"),
        }
    }
    println!("max |log deviation| = {:.4}", report.max_abs_deviation);
    Ok(0)
}

fn cmd_manifold_dim(flags: &Flags, input: &Path) -> Result<i32> {
    let text = fs::read_to_string(input).map_err(|e| Error::Config(format!("cannot read --in {}: {e}", input.display())))?;
    let ds = dataset_from_csv(&text)?;
    let est = estimate_dim(&ds.inputs, ds.manifold.metric())?;
    if flags.out.is_some() {
        write(&out_dir(flags)?, "dimension.csv", &est.to_csv())?;
    }
    println!("d_hat = {:.4}", est.d_hat);
    for (k, v) in &est.per_k {
        println!("  k = {k}: {v:.4}");
    }
    if est.wide_spread {
        println!("  (wide spread across k; treat with caution)");
    }
    Ok(0)
}

fn cmd_nn_scaling(flags: &Flags) -> Result<i32> {
    let mut base = SweepConfig::preset(Regime::NnScaling);
    base.seeds = 10;
    let cfg = resolve_sweep(base, flags, &[])?;
    let dir = out_dir(flags)?;
    let spec = crate::features::ManifoldSpec::new(cfg.manifold, cfg.d)?;
    let nn = fit_nn_scaling(spec, &cfg.d_grid, cfg.seeds, cfg.base_seed)?;
    let curve = run_sweep(&cfg)?;
    let fit = crate::harness::fit_scaling_exponent(&curve, Some((cfg.d_grid[0], *cfg.d_grid.last().unwrap())));
    let art = Artifact::Curve { curve: &curve, fit: fit.as_ref().ok() };
    emit(&dir.join("nn_predictor.csv"), &art, Format::Csv)?;
    emit(&dir.join("nn_predictor.svg"), &art, Format::Svg)?;
    let mut table = format!("quantity,{}\n", ExponentFit::CSV_HEADER);
    let _ = writeln!(table, "nn_distance,{}", nn.csv_record());
    if let Ok(f) = &fit {
        let _ = writeln!(table, "nn_predictor,{}", f.csv_record());
    }
    write(&dir, "nn_fits.csv", &table)?;
    write(&dir, RESOLVED_CONFIG, &cfg.to_text())?;
    println!("NN distance slope = {:.4} (expected {:.4})", nn.slope, -1.0 / cfg.d as f64);
    match fit {
        Ok(f) => println!("1-NN predictor slope = {:.4} (expected {:.4})", f.slope, -2.0 / cfg.d as f64),
        Err(e) => println!("1-NN predictor: no fit ({e})"),
    }
    Ok(0)
}

fn cmd_selftest(fault: Option<&str>) -> Result<i32> {
    let fault = match fault {
        None => None,
        Some("eigen-sign") => Some(Fault::EigenSign),
        Some(other) => return config(format!("--inject-fault: unknown fault '{other}' (eigen-sign)")),
    };
    let report = selftest::run(fault);
    print!("{}", report.render());
    Ok(if report.all_pass() { 0 } else { 2 })
}
