//! Replica predictions for a power-law spectrum, then against Monte Carlo
//! for torus features.
//!
//! ```text
//! cargo run --release --example replica_theory
//! ```

use scalinglab::features::build_torus_features;
use scalinglab::fit::fit_line;
use scalinglab::replica::{replica_curve, replica_vs_exact, teacher_overlaps};
use scalinglab::spectral::synth_spectrum;

fn main() -> scalinglab::Result<()> {
    let s = 1_000_000;
    let grid: Vec<f64> = (0..7).map(|i| 100.0 * 2f64.powi(i)).collect();
    for alpha in [0.5, 1.0, 2.0] {
        let sols = replica_curve(&synth_spectrum(alpha, s)?, &teacher_overlaps(s), &grid)?;
        let x: Vec<f64> = grid.iter().map(|d| d.ln()).collect();
        let k: Vec<f64> = sols.iter().map(|r| r.kappa.ln()).collect();
        let l: Vec<f64> = sols.iter().map(|r| r.predicted_loss.ln()).collect();
        println!(
            "alpha_K = {alpha}: kappa slope {:.3}, loss slope {:.3}, gamma {:.3} .. {:.3}",
            fit_line(&x, &k, None)?.slope,
            fit_line(&x, &l, None)?.slope,
            sols[0].gamma,
            sols[sols.len() - 1].gamma
        );
    }

    let fm = build_torus_features(2, 2.0, 12)?;
    let table = replica_vs_exact(&fm, None, &[16, 32, 64, 128], 5, 0)?;
    print!("{}", table.to_csv());
    println!("max |relative deviation| {:.3}", table.max_abs_rel_dev());
    Ok(())
}
