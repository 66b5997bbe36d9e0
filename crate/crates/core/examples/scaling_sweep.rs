//! One scaling sweep from a flat config, fitted and written as CSV and SVG.
//!
//! ```text
//! cargo run --release --example scaling_sweep -- [out_dir]
//! ```

use std::path::PathBuf;

use scalinglab::harness::{emit, fit_scaling_exponent, run_sweep, Artifact, Format, SweepConfig};

const CONFIG: &str = "
# variance-limited dataset scaling at reduced size
regime = variance-D
features = relu
S = 128
P = 16
D_grid = 256:8192:6
seeds = 8
";

fn main() -> scalinglab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scaling-sweep-out".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = SweepConfig::from_text(CONFIG)?;
    let curve = run_sweep(&cfg)?;
    for p in &curve.points {
        println!("D = {:>5}  <log L> = {:8.4} ± {:.4}  {}", p.size, p.mean_log_loss, p.stderr, p.flags());
    }
    let fit = fit_scaling_exponent(&curve, None)?;
    println!("alpha_D = {:.3} ± {:.3}", fit.exponent, fit.stderr);

    let art = Artifact::Curve { curve: &curve, fit: Some(&fit) };
    emit(&out.join("curve.csv"), &art, Format::Csv)?;
    emit(&out.join("curve.svg"), &art, Format::Svg)?;
    std::fs::write(out.join("resolved.conf"), cfg.to_text())?;
    println!("wrote {}", out.display());
    Ok(())
}
