//! The four scaling regimes side by side.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{parse_key_values, Regime, SweepConfig};
use super::emit::{emit, Artifact, Format};
use super::sweep::{feature_moment, fit_scaling_exponent, run_sweep, ScalingCurve};
use crate::error::{config, Result};
use crate::features::io::format_float;
use crate::spectral::{eig_spectrum, fit_spectral_exponent, ExponentFit};

/// Tolerance on the variance-limited exponent (absolute, around 1).
pub const VARIANCE_TOL: f64 = 0.1;
/// Relative tolerance of resolution-limited exponents against `alpha_K`.
pub const RESOLUTION_REL_TOL: f64 = 0.15;

pub const REGIMES: [Regime; 4] = [Regime::VarianceD, Regime::VarianceP, Regime::ResolutionD, Regime::ResolutionP];

/// One sweep configuration per regime. In text form a key `regime.key`
/// sets one regime and a bare `key` sets all four.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimesConfig {
    pub sweeps: [SweepConfig; 4],
}

impl Default for RegimesConfig {
    fn default() -> Self {
        Self { sweeps: REGIMES.map(SweepConfig::preset) }
    }
}

impl RegimesConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if let Some((prefix, k)) = key.split_once('.') {
            let r: Regime = prefix.parse()?;
            let i = REGIMES.iter().position(|&x| x == r).ok_or_else(|| crate::Error::Config(format!("'{prefix}' is not one of the four regimes")))?;
            if k == "regime" {
                return config(format!("key '{key}' cannot change the regime"));
            }
            warnings.extend(self.sweeps[i].set(k, value)?);
        } else {
            if key == "regime" {
                return config("key 'regime' is fixed per sweep in a regimes config");
            }
            for c in &mut self.sweeps {
                warnings.extend(c.set(key, value)?);
            }
        }
        Ok(warnings)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut w = Vec::new();
        for (k, v) in parse_key_values(text)? {
            w.extend(self.set(&k, &v)?);
        }
        Ok(w)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweeps.iter().try_for_each(SweepConfig::validate)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.sweeps {
            for line in c.to_text().lines().filter(|l| !l.starts_with("regime ")) {
                let _ = writeln!(out, "{}.{line}", c.regime);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RegimeResult {
    pub curve: ScalingCurve,
    pub fit: Option<ExponentFit>,
    pub expected: f64,
    /// Absolute tolerance applied to `|alpha - expected|`.
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct RegimesReport {
    pub results: Vec<RegimeResult>,
    /// Exponent of the resolution features' spectrum, fitted independently.
    pub alpha_k: ExponentFit,
}

impl RegimesReport {
    pub const SUMMARY_HEADER: &'static str = "regime,alpha,alpha_stderr,expected,tolerance,pass";

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for r in &self.results {
            let (a, se) = r.fit.as_ref().map_or((f64::NAN, f64::NAN), |f| (f.exponent, f.stderr));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.curve.regime,
                format_float(a),
                format_float(se),
                format_float(r.expected),
                format_float(r.tolerance),
                r.pass
            );
        }
        let _ = writeln!(out, "# alpha_K fitted from the resolution spectrum: {}", format_float(self.alpha_k.exponent));
        out
    }

    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    /// Four curve CSVs, the summary, and one SVG per regime.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for r in &self.results {
            let name = r.curve.regime.as_str();
            let art = Artifact::Curve { curve: &r.curve, fit: r.fit.as_ref() };
            emit(&dir.join(format!("{name}.csv")), &art, Format::Csv)?;
            emit(&dir.join(format!("{name}.svg")), &art, Format::Svg)?;
        }
        emit(&dir.join("summary.csv"), &Artifact::Table(self.summary_csv()), Format::Csv)
    }
}

/// Run the four regimes and grade each fitted exponent: 1 for the variance
/// regimes, the spectral `alpha_K` of the resolution features otherwise.
pub fn regimes_demo(cfg: &RegimesConfig) -> Result<RegimesReport> {
    cfg.validate()?;
    let res = &cfg.sweeps[2];
    let fm = res.build_features()?;
    let moment = feature_moment(&fm, res.manifold_spec(&fm)?, res.moment_samples, res.base_seed)?;
    let alpha_k = fit_spectral_exponent(&eig_spectrum(&moment)?, None)?;
    let results = cfg
        .sweeps
        .iter()
        .map(|c| {
            let curve = run_sweep(c)?;
            let fit = fit_scaling_exponent(&curve, None).ok();
            let (expected, tolerance) = match c.regime {
                Regime::VarianceD | Regime::VarianceP => (1.0, VARIANCE_TOL),
                _ => (alpha_k.exponent, RESOLUTION_REL_TOL * alpha_k.exponent),
            };
            let pass = fit.as_ref().is_some_and(|f| (f.exponent - expected).abs() <= tolerance);
            Ok(RegimeResult { curve, fit, expected, tolerance, pass })
        })
        .collect::<Result<_>>()?;
    Ok(RegimesReport { results, alpha_k })
}
