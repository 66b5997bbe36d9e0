//! Build teacher features, sample a data manifold, and look at the feature
//! second moment.
//!
//! ```text
//! cargo run --release --example feature_maps
//! ```

use scalinglab::features::io::{dataset_to_csv, feature_map_to_csv};
use scalinglab::features::{
    build_relu_features, build_torus_features, random_projector, sample_manifold, sample_teacher, second_moment_features,
};
use scalinglab::spectral::eig_spectrum;

fn main() -> scalinglab::Result<()> {
    // ReLU features of a random linear map of the unit hypercube.
    let relu = build_relu_features(8, 64, 1)?;
    let data = sample_manifold(relu.natural_manifold(), 4096, 7)?;
    let moment = second_moment_features(&relu, &data)?;
    println!("relu: S = {}, Tr C = {:.4}, asymmetry {:.1e}", relu.n_features(), moment.trace(), moment.asymmetry());

    // Fourier features on the flat torus come with an exact diagonal moment.
    let torus = build_torus_features(2, 2.0, 6)?;
    let exact = torus.analytic_second_moment().expect("torus moments are closed form");
    let spectrum = eig_spectrum(&exact)?;
    println!("torus: S = {}, top eigenvalues {:?}", torus.n_features(), &spectrum.eigenvalues[..5]);

    // A teacher, targets, and a student that keeps 16 of the 64 features.
    let teacher = sample_teacher(relu.n_features(), 3)?;
    let labelled = data.prefix(8).with_targets(&relu, &teacher)?;
    let student = random_projector(relu.n_features(), 16, 5)?;
    println!("student keeps P = {} of S = {}", student.p(), student.s());

    print!("{}", dataset_to_csv(&labelled));
    let fm_csv = feature_map_to_csv(&torus);
    println!("torus feature map CSV: {} lines", fm_csv.lines().count());
    Ok(())
}
