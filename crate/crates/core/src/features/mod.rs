//! Teacher feature pools, teachers, student projections, datasets on
//! controlled manifolds, and their second moments.

mod feature_map;
pub mod io;
mod moments;
mod projector;
mod sampling;
mod teacher;

pub(crate) use feature_map::EVAL_BLOCK;
pub use feature_map::{
    build_explicit_features, build_relu_features, build_spectral_features, build_torus_features,
    random_explicit_features, FeatureKind, FeatureMap, FourierMode, Trig,
};
pub use moments::{gram_matrix, second_moment_features, Moment, MomentRole, SecondMoment};
pub use projector::{point_projector, random_projector, random_subspace_projector, selection_order, Projector};
pub use sampling::{sample_manifold, Dataset, ManifoldKind, ManifoldSpec, Metric, Points};
pub use teacher::{sample_teacher, TeacherWeights};
