//! Sweeps over dataset and student size, exponent fits, the duality
//! comparison and the regime demo, with CSV/SVG output.

mod config;
mod duality;
mod emit;
mod regimes;
mod sweep;

pub use config::{
    format_grid, geometric_grid, parse_grid, parse_key_values, pow2_grid, FeatureFamily, ProjectorKind, Regime, Size, SizeKind,
    SweepConfig, TeacherMode,
};
pub use duality::{duality_report, DualityReport, DualityRow, DUALITY_MOMENT_SAMPLES};
pub use emit::{curve_from_csv, curve_to_csv, curves_svg, emit, Artifact, Format, PlotSeries, CURVE_HEADER};
pub use regimes::{regimes_demo, RegimeResult, RegimesConfig, RegimesReport, REGIMES, RESOLUTION_REL_TOL, VARIANCE_TOL};
pub use sweep::{
    default_fit_window, feature_moment, fit_scaling_exponent, mean_stderr, run_sweep, CurvePoint, ScalingCurve, TAG_DATA,
    TAG_MOMENT, TAG_PROJECTOR, TAG_TEACHER, TAG_TEST,
};
