//! Eigenvalue decay of torus features against the smoothness bound, and
//! exponent fits on a synthetic power law.
//!
//! ```text
//! cargo run --release --example kernel_spectrum
//! ```

use scalinglab::features::build_torus_features;
use scalinglab::spectral::{eig_spectrum, fit_spectral_exponent, partial_sum_exponent, synth_spectrum};

fn main() -> scalinglab::Result<()> {
    for (d, t) in [(1, 1.0), (2, 2.0), (3, 3.0)] {
        let cutoff = [200, 24, 8][d - 1];
        let fm = build_torus_features(d, t, cutoff)?;
        let sp = eig_spectrum(&fm.analytic_second_moment().expect("closed form"))?;
        let fit = fit_spectral_exponent(&sp, None)?;
        println!(
            "d = {d}, t = {t}: S = {:>5}, decay {:.3} (bound 1 + t/d = {:.3}), window {:?}",
            sp.len(),
            fit.exponent + 1.0,
            1.0 + t / d as f64,
            fit.window
        );
    }
    for alpha in [0.25, 0.5, 1.0, 2.0] {
        let sp = synth_spectrum(alpha, 10_000)?;
        let direct = fit_spectral_exponent(&sp, None)?;
        let partial = partial_sum_exponent(&sp, None)?;
        println!("alpha_K = {alpha}: eigenvalue fit {:.4}, partial-sum fit {:.4}", direct.exponent, partial.exponent);
    }
    Ok(())
}
