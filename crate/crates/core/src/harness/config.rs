//! Sweep configuration and its flat `key = value` text form.

use std::fmt;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::features::{build_relu_features, build_spectral_features, build_torus_features, FeatureMap, ManifoldKind, ManifoldSpec};
use crate::spectral::synth_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    VarianceD,
    VarianceP,
    ResolutionD,
    ResolutionP,
    Duality,
    NnScaling,
}

impl Regime {
    pub const ALL: [Regime; 6] =
        [Regime::VarianceD, Regime::VarianceP, Regime::ResolutionD, Regime::ResolutionP, Regime::Duality, Regime::NnScaling];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::VarianceD => "variance-D",
            Regime::VarianceP => "variance-P",
            Regime::ResolutionD => "resolution-D",
            Regime::ResolutionP => "resolution-P",
            Regime::Duality => "duality",
            Regime::NnScaling => "nn-scaling",
        }
    }

    /// Which size the regime sweeps.
    pub fn size_kind(self) -> SizeKind {
        match self {
            Regime::VarianceP | Regime::ResolutionP => SizeKind::P,
            _ => SizeKind::D,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeKind {
    D,
    P,
}

impl SizeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeKind::D => "D",
            SizeKind::P => "P",
        }
    }
}

/// A fixed dataset or student size; `Inf` is the corresponding limit
/// (infinite data, or every teacher feature).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Size {
    Finite(usize),
    Inf,
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Size::Finite(n) => write!(f, "{n}"),
            Size::Inf => f.write_str("inf"),
        }
    }
}

impl FromStr for Size {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Size::Inf);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Size::Finite(n)),
            _ => config(format!("expected a positive size or 'inf', got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureFamily {
    Relu,
    Torus,
    Spectral,
}

impl FeatureFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFamily::Relu => "relu",
            FeatureFamily::Torus => "torus",
            FeatureFamily::Spectral => "spectral",
        }
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(FeatureFamily::Relu),
            "torus" => Ok(FeatureFamily::Torus),
            "spectral" => Ok(FeatureFamily::Spectral),
            _ => config(format!("unknown feature family '{s}' (relu, torus, spectral)")),
        }
    }
}

/// How the teacher enters each seed's loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TeacherMode {
    /// Closed-form average over `omega ~ N(0, I/S)`.
    Averaged,
    /// One sampled teacher per seed, evaluated on a sampled test set.
    Sampled,
}

impl FromStr for TeacherMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "averaged" => Ok(TeacherMode::Averaged),
            "sampled" => Ok(TeacherMode::Sampled),
            _ => config(format!("unknown teacher mode '{s}' (averaged, sampled)")),
        }
    }
}

impl fmt::Display for TeacherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeacherMode::Averaged => "averaged",
            TeacherMode::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectorKind {
    /// Random subset of teacher features.
    Select,
    /// Uniformly random orthonormal subspace.
    Subspace,
    /// Whitened features at random manifold points.
    Points,
}

impl FromStr for ProjectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "select" => Ok(ProjectorKind::Select),
            "subspace" => Ok(ProjectorKind::Subspace),
            "points" => Ok(ProjectorKind::Points),
            _ => config(format!("unknown projector '{s}' (select, subspace, points)")),
        }
    }
}

impl fmt::Display for ProjectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectorKind::Select => "select",
            ProjectorKind::Subspace => "subspace",
            ProjectorKind::Points => "points",
        })
    }
}

/// `n` geometrically spaced integers from `lo` to `hi`, rounded and
/// deduplicated. Returns the grid and a warning when rounding merged points.
pub fn geometric_grid(lo: usize, hi: usize, n: usize) -> Result<(Vec<usize>, Option<String>)> {
    if lo == 0 || hi < lo || n == 0 {
        return config(format!("grid {lo}:{hi}:{n} needs 1 <= lo <= hi and n >= 1"));
    }
    if n == 1 && lo != hi {
        return config(format!("grid {lo}:{hi}:1 has distinct endpoints but one point"));
    }
    let ratio = hi as f64 / lo as f64;
    let mut grid: Vec<usize> = (0..n)
        .map(|i| if n == 1 { lo } else { (lo as f64 * ratio.powf(i as f64 / (n - 1) as f64)).round() as usize })
        .collect();
    grid.dedup();
    let warning = (grid.len() < n).then(|| format!("grid {lo}:{hi}:{n} has duplicates after rounding; kept {} points", grid.len()));
    Ok((grid, warning))
}

/// Parse `lo:hi:n` or a comma-separated strictly increasing list.
pub fn parse_grid(text: &str) -> Result<(Vec<usize>, Option<String>)> {
    let text = text.trim();
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad grid '{text}'")));
        return geometric_grid(num(parts[0])?, num(parts[1])?, num(parts[2])?);
    }
    if parts.len() != 1 {
        return config(format!("bad grid '{text}': use lo:hi:n or a comma list"));
    }
    let grid = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad grid entry '{s}' in '{text}'"))))
        .collect::<Result<Vec<_>>>()?;
    check_increasing(&grid, text)?;
    Ok((grid, None))
}

fn check_increasing(grid: &[usize], name: &str) -> Result<()> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return config(format!("grid '{name}' must be nonempty, positive and strictly increasing"));
    }
    Ok(())
}

pub fn format_grid(grid: &[usize]) -> String {
    grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",")
}

/// Lines of a flat `key = value` file; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return config(format!("line {}: expected 'key = value', got '{line}'", no + 1));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => config(format!("key '{key}': expected true or false, got '{value}'")),
    }
}

fn parse_manifold(key: &str, value: &str) -> Result<ManifoldKind> {
    match value.to_ascii_lowercase().as_str() {
        "hypercube" => Ok(ManifoldKind::UnitHypercube),
        "torus" => Ok(ManifoldKind::FlatTorus),
        _ => config(format!("key '{key}': expected hypercube or torus, got '{value}'")),
    }
}

pub(crate) fn manifold_name(kind: ManifoldKind) -> &'static str {
    match kind {
        ManifoldKind::UnitHypercube => "hypercube",
        ManifoldKind::FlatTorus => "torus",
    }
}

/// Complete description of one sweep. Every field has a text key; see
/// [`SweepConfig::KEYS`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub regime: Regime,
    pub features: FeatureFamily,
    /// Teacher feature count for relu and spectral features (torus features
    /// derive it from `d` and `cutoff`).
    pub s: usize,
    pub input_dim: usize,
    pub feature_seed: u64,
    pub manifold: ManifoldKind,
    pub d: usize,
    pub t: f64,
    pub cutoff: usize,
    pub alpha_k: f64,
    pub d_grid: Vec<usize>,
    pub p_grid: Vec<usize>,
    /// Student size held fixed in D sweeps.
    pub fixed_p: Size,
    /// Dataset size held fixed in P sweeps.
    pub fixed_d: Size,
    pub seeds: usize,
    pub base_seed: u64,
    pub subtract_asymptote: bool,
    pub resonance_margin: f64,
    pub teacher: TeacherMode,
    pub projector: ProjectorKind,
    /// Monte Carlo test points per seed where an input average is sampled.
    pub test_points: usize,
    /// Pool size for estimating the feature second moment when no exact
    /// form exists.
    pub moment_samples: usize,
}

/// Powers of two from `2^a` to `2^b`.
pub fn pow2_grid(a: u32, b: u32) -> Vec<usize> {
    (a..=b).map(|k| 1usize << k).collect()
}

impl SweepConfig {
    pub const KEYS: [&'static str; 22] = [
        "regime",
        "features",
        "S",
        "input_dim",
        "feature_seed",
        "manifold",
        "d",
        "t",
        "cutoff",
        "alpha_k",
        "D_grid",
        "P_grid",
        "P",
        "D",
        "seeds",
        "seed",
        "subtract_asymptote",
        "resonance_margin",
        "teacher",
        "projector",
        "test_points",
        "moment_samples",
    ];

    /// Default protocol for a regime.
    pub fn preset(regime: Regime) -> Self {
        let base = SweepConfig {
            regime,
            features: FeatureFamily::Relu,
            s: 256,
            input_dim: 8,
            feature_seed: 1,
            manifold: ManifoldKind::UnitHypercube,
            d: 2,
            t: 2.0,
            cutoff: 24,
            alpha_k: 1.0,
            d_grid: pow2_grid(9, 14),
            p_grid: pow2_grid(9, 14),
            fixed_p: Size::Finite(16),
            fixed_d: Size::Finite(16),
            seeds: 20,
            base_seed: 0,
            subtract_asymptote: true,
            resonance_margin: 0.1,
            teacher: TeacherMode::Averaged,
            projector: ProjectorKind::Select,
            test_points: 2048,
            moment_samples: 1 << 16,
        };
        match regime {
            Regime::VarianceD => base,
            Regime::VarianceP => SweepConfig { s: 1 << 15, ..base },
            Regime::ResolutionD => SweepConfig {
                features: FeatureFamily::Torus,
                d_grid: pow2_grid(3, 8),
                fixed_p: Size::Inf,
                subtract_asymptote: false,
                ..base
            },
            Regime::ResolutionP => SweepConfig {
                features: FeatureFamily::Torus,
                p_grid: pow2_grid(3, 8),
                fixed_d: Size::Inf,
                projector: ProjectorKind::Subspace,
                subtract_asymptote: false,
                ..base
            },
            Regime::Duality => SweepConfig {
                features: FeatureFamily::Torus,
                d_grid: pow2_grid(3, 8),
                p_grid: pow2_grid(3, 8),
                fixed_p: Size::Inf,
                fixed_d: Size::Inf,
                projector: ProjectorKind::Points,
                subtract_asymptote: false,
                ..base
            },
            Regime::NnScaling => SweepConfig {
                features: FeatureFamily::Torus,
                cutoff: 8,
                d_grid: pow2_grid(7, 13),
                fixed_p: Size::Inf,
                teacher: TeacherMode::Sampled,
                subtract_asymptote: false,
                ..base
            },
        }
    }

    /// Set one key from its text value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<Option<String>> {
        let mut warning = None;
        match key {
            "regime" => self.regime = value.parse()?,
            "features" => self.features = value.parse()?,
            "S" => self.s = parse_num(key, value)?,
            "input_dim" => self.input_dim = parse_num(key, value)?,
            "feature_seed" => self.feature_seed = parse_num(key, value)?,
            "manifold" => self.manifold = parse_manifold(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "t" => self.t = parse_num(key, value)?,
            "cutoff" => self.cutoff = parse_num(key, value)?,
            "alpha_k" => self.alpha_k = parse_num(key, value)?,
            "D_grid" => (self.d_grid, warning) = parse_grid(value)?,
            "P_grid" => (self.p_grid, warning) = parse_grid(value)?,
            "P" => self.fixed_p = value.parse()?,
            "D" => self.fixed_d = value.parse()?,
            "seeds" => self.seeds = parse_num(key, value)?,
            "seed" => self.base_seed = parse_num(key, value)?,
            "subtract_asymptote" => self.subtract_asymptote = parse_bool(key, value)?,
            "resonance_margin" => self.resonance_margin = parse_num(key, value)?,
            "teacher" => self.teacher = value.parse()?,
            "projector" => self.projector = value.parse()?,
            "test_points" => self.test_points = parse_num(key, value)?,
            "moment_samples" => self.moment_samples = parse_num(key, value)?,
            _ => return config(format!("unknown config key '{key}'")),
        }
        Ok(warning)
    }

    /// Apply every line of a config file, in order.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for (k, v) in parse_key_values(text)? {
            warnings.extend(self.set(&k, &v)?);
        }
        Ok(warnings)
    }

    /// Regime named by a config file, if any (used to pick the preset).
    pub fn regime_in(text: &str) -> Result<Option<Regime>> {
        for (k, v) in parse_key_values(text)? {
            if k == "regime" {
                return Ok(Some(v.parse()?));
            }
        }
        Ok(None)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = SweepConfig::preset(SweepConfig::regime_in(text)?.unwrap_or(Regime::VarianceD));
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// The fully resolved configuration; reading it back gives an equal value.
    pub fn to_text(&self) -> String {
        let lines = [
            ("regime", self.regime.to_string()),
            ("features", self.features.as_str().to_string()),
            ("S", self.s.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("feature_seed", self.feature_seed.to_string()),
            ("manifold", manifold_name(self.manifold).to_string()),
            ("d", self.d.to_string()),
            ("t", format!("{:?}", self.t)),
            ("cutoff", self.cutoff.to_string()),
            ("alpha_k", format!("{:?}", self.alpha_k)),
            ("D_grid", format_grid(&self.d_grid)),
            ("P_grid", format_grid(&self.p_grid)),
            ("P", self.fixed_p.to_string()),
            ("D", self.fixed_d.to_string()),
            ("seeds", self.seeds.to_string()),
            ("seed", self.base_seed.to_string()),
            ("subtract_asymptote", self.subtract_asymptote.to_string()),
            ("resonance_margin", format!("{:?}", self.resonance_margin)),
            ("teacher", self.teacher.to_string()),
            ("projector", self.projector.to_string()),
            ("test_points", self.test_points.to_string()),
            ("moment_samples", self.moment_samples.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Stable 64-bit hash of the resolved text.
    pub fn hash(&self) -> u64 {
        crate::rng::fnv1a(&self.to_text())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return config("seeds must be at least 1");
        }
        check_increasing(&self.d_grid, "D_grid")?;
        check_increasing(&self.p_grid, "P_grid")?;
        if !(self.resonance_margin >= 0.0 && self.resonance_margin.is_finite()) {
            return config("resonance_margin must be a finite nonnegative number");
        }
        if self.test_points == 0 || self.moment_samples == 0 {
            return config("test_points and moment_samples must be positive");
        }
        let s = self.n_features();
        let over = |g: &[usize]| g.last().is_some_and(|&v| v > s);
        match self.regime {
            Regime::VarianceP | Regime::ResolutionP if over(&self.p_grid) => {
                return config(format!("P_grid exceeds S = {s}"));
            }
            Regime::VarianceD | Regime::ResolutionD => {
                if let Size::Finite(p) = self.fixed_p {
                    if p > s {
                        return config(format!("P = {p} exceeds S = {s}"));
                    }
                }
            }
            _ => {}
        }
        if self.regime == Regime::VarianceD && self.fixed_p == Size::Inf && self.subtract_asymptote {
            return config("variance-D with P = inf has a zero asymptote; set a finite P");
        }
        if self.regime == Regime::VarianceP && self.fixed_d == Size::Inf {
            return config("variance-P needs a finite D");
        }
        self.feature_spec_check()
    }

    fn feature_spec_check(&self) -> Result<()> {
        match self.features {
            FeatureFamily::Relu if self.input_dim == 0 || self.s == 0 => config("relu features need S and input_dim >= 1"),
            FeatureFamily::Torus if self.d == 0 || self.cutoff == 0 || !(self.t > 0.0) => {
                config("torus features need d >= 1, cutoff >= 1, t > 0")
            }
            FeatureFamily::Spectral if self.s == 0 || !(self.alpha_k > 0.0) => config("spectral features need S >= 1 and alpha_k > 0"),
            _ => Ok(()),
        }
    }

    /// Teacher feature count implied by the feature settings.
    pub fn n_features(&self) -> usize {
        match self.features {
            FeatureFamily::Torus => (2 * self.cutoff + 1).pow(self.d as u32),
            _ => self.s,
        }
    }

    pub fn build_features(&self) -> Result<FeatureMap> {
        self.feature_spec_check()?;
        match self.features {
            FeatureFamily::Relu => build_relu_features(self.input_dim, self.s, self.feature_seed),
            FeatureFamily::Torus => build_torus_features(self.d, self.t, self.cutoff),
            FeatureFamily::Spectral => build_spectral_features(&synth_spectrum(self.alpha_k, self.s)?.eigenvalues),
        }
    }

    /// Input distribution of the sweep.
    pub fn manifold_spec(&self, fm: &FeatureMap) -> Result<ManifoldSpec> {
        match self.features {
            FeatureFamily::Relu => ManifoldSpec::new(self.manifold, self.input_dim),
            _ => Ok(fm.natural_manifold()),
        }
    }

    /// Grid swept by this regime.
    pub fn grid(&self) -> &[usize] {
        match self.regime.size_kind() {
            SizeKind::D => &self.d_grid,
            SizeKind::P => &self.p_grid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_grid_endpoints_and_dedup() {
        let (g, w) = geometric_grid(100, 1000, 8).unwrap();
        assert_eq!(g.first(), Some(&100));
        assert_eq!(g.last(), Some(&1000));
        assert!(w.is_none());
        let (g, w) = geometric_grid(1, 4, 10).unwrap();
        assert_eq!(g, vec![1, 2, 3, 4]);
        assert!(w.unwrap().contains("duplicates"));
    }

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("8,16,32").unwrap().0, vec![8, 16, 32]);
        assert!(parse_grid("8,8").is_err());
        assert!(parse_grid("8:4:3").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn text_round_trip() {
        for r in Regime::ALL {
            let mut c = SweepConfig::preset(r);
            c.base_seed = 77;
            c.t = 1.5;
            let back = SweepConfig::from_text(&c.to_text()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_text(), c.to_text());
        }
    }

    #[test]
    fn unknown_key_named() {
        let err = SweepConfig::from_text("regime = variance-D\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn presets_validate() {
        for r in Regime::ALL {
            SweepConfig::preset(r).validate().unwrap();
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = SweepConfig::from_text("# header\n\nseeds = 3 # trailing\n").unwrap();
        assert_eq!(c.seeds, 3);
    }
}
