//! Nearest-neighbor geometry of sampled manifolds: intrinsic dimension,
//! distance scaling and the 1-NN predictor.
//!
//! ```text
//! cargo run --release --example nearest_neighbors
//! ```

use scalinglab::features::{build_torus_features, sample_manifold, ManifoldSpec};
use scalinglab::harness::geometric_grid;
use scalinglab::manifold::{estimate_dim, fit_nn_predictor_scaling, fit_nn_scaling, NeighborIndex};

fn main() -> scalinglab::Result<()> {
    let spec = ManifoldSpec::torus(3)?;
    let cloud = sample_manifold(spec, 5000, 1)?;
    let est = estimate_dim(&cloud.inputs, spec.metric())?;
    println!("T^3: d_hat = {:.3}, per k {:?}", est.d_hat, est.per_k);

    let index = NeighborIndex::new(&cloud.inputs, spec.metric());
    let second = index.knn(None, 2);
    println!("first point: two nearest distances {:?}", second[0]);

    let (grid, _) = geometric_grid(100, 10_000, 5)?;
    for d in [1, 2, 4] {
        let fit = fit_nn_scaling(ManifoldSpec::hypercube(d)?, &grid, 5, 0)?;
        println!("d = {d}: mean log NN distance slope {:.3} (expect {:.3})", fit.slope, -1.0 / d as f64);
    }

    let fm = build_torus_features(2, 2.0, 8)?;
    let (_, fit) = fit_nn_predictor_scaling(&fm, &grid, 5, 1000, 0)?;
    println!("1-NN predictor on T^2: loss slope {:.3} (expect -1)", fit.slope);
    Ok(())
}
