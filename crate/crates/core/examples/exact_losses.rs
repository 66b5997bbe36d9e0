//! Exact teacher-student losses: finite data, infinite data, infinite
//! parameters, and the variance correction at large D.
//!
//! ```text
//! cargo run --release --example exact_losses
//! ```

use scalinglab::exactloss::{
    expected_loss_finite, loss_finite, loss_infinite_data, loss_infinite_params, quartic_tensor, variance_correction,
};
use scalinglab::features::{build_relu_features, random_projector, sample_manifold, sample_teacher, second_moment_features};

fn main() -> scalinglab::Result<()> {
    let fm = build_relu_features(8, 8, 7)?;
    let spec = fm.natural_manifold();
    let s = fm.n_features();
    let pool = sample_manifold(spec, 200_000, 11)?;
    let moment = second_moment_features(&fm, &pool)?;
    let student = random_projector(s, 4, 3)?;
    let teacher = sample_teacher(s, 1)?;
    let test = sample_manifold(spec, 4096, 12)?;

    let l_p = loss_infinite_data(&fm, &student, &moment)?.value;
    println!("L(P = 4)            = {l_p:.6e}");
    for d in [16, 64, 256, 1024] {
        let train = sample_manifold(spec, d, 100 + d as u64)?;
        let one = loss_finite(&fm, &teacher, &student, &train, &test)?.value;
        let avg = expected_loss_finite(&fm, &student, &train, &moment)?.value;
        let lim = loss_infinite_params(&fm, &train, &test)?.value;
        println!("D = {d:>5}: one teacher {one:.4e}  teacher-averaged {avg:.4e}  all features {lim:.4e}");
    }

    let tensor = quartic_tensor(&fm, &pool, s)?;
    let c = variance_correction(&student, &moment, &tensor)?;
    println!("large-D excess ≈ {c:.4e} / D");
    Ok(())
}
