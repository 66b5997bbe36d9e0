//! All four scaling regimes with their pass/fail summary. Takes about a
//! minute in release mode.
//!
//! ```text
//! cargo run --release --example four_regimes -- [out_dir]
//! ```

use std::path::PathBuf;

use scalinglab::harness::{regimes_demo, RegimesConfig};

fn main() -> scalinglab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "four-regimes-out".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RegimesConfig::default();
    let report = regimes_demo(&cfg)?;
    report.write(&out)?;
    print!("{}", report.summary_csv());
    Ok(())
}
