//! Dataset-size and student-size curves built from the same kind of random
//! points, compared point by point.
//!
//! ```text
//! cargo run --release --example duality
//! ```

use scalinglab::features::build_torus_features;
use scalinglab::harness::{duality_report, pow2_grid};

fn main() -> scalinglab::Result<()> {
    let fm = build_torus_features(2, 2.0, 24)?;
    let report = duality_report(&fm, None, &pow2_grid(3, 8), 20, 0)?;
    print!("{}", report.to_csv());
    if let (Some(d), Some(p)) = (&report.fit_d, &report.fit_p) {
        println!("alpha_D = {:.3} ± {:.3}, alpha_P = {:.3} ± {:.3}", d.exponent, d.stderr, p.exponent, p.stderr);
    }
    println!("rows beyond 2 joint stderr: {}", report.violations(2.0).len());
    Ok(())
}
