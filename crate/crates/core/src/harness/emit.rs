//! CSV and SVG output for curves and tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{Regime, Size, SizeKind};
use super::sweep::{CurvePoint, ScalingCurve};
use crate::error::{Error, Result};
use crate::features::io::format_float;
use crate::spectral::ExponentFit;

pub const CURVE_HEADER: &str = "regime,size_kind,size,P,D,S,n_seeds,mean_log_loss,stderr,flags";

/// Curve as CSV: a `# key=value` metadata line, the header, one row per point.
pub fn curve_to_csv(curve: &ScalingCurve) -> String {
    let mut out = format!(
        "# regime={},size_kind={},S={},config_hash={:016x},seed_base={}\n{CURVE_HEADER}\n",
        curve.regime,
        curve.size_kind.as_str(),
        curve.s,
        curve.config_hash,
        curve.seed_base
    );
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            curve.regime,
            curve.size_kind.as_str(),
            p.size,
            p.p,
            p.d,
            curve.s,
            p.n_seeds,
            format_float(p.mean_log_loss),
            format_float(p.stderr),
            p.flags()
        );
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn meta_value<'a>(meta: &'a str, key: &str) -> Result<&'a str> {
    meta.split(',')
        .find_map(|kv| kv.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
        .ok_or_else(|| bad(format!("curve metadata lacks '{key}'")))
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| bad(format!("cannot parse {what} from '{s}'")))
}

/// Inverse of [`curve_to_csv`].
pub fn curve_from_csv(text: &str) -> Result<ScalingCurve> {
    let mut lines = text.lines();
    let meta = lines.next().and_then(|l| l.strip_prefix('#')).ok_or_else(|| bad("curve CSV must start with a '#' metadata line"))?;
    let regime: Regime = meta_value(meta, "regime")?.parse()?;
    let size_kind = match meta_value(meta, "size_kind")? {
        "D" => SizeKind::D,
        "P" => SizeKind::P,
        other => return Err(bad(format!("unknown size kind '{other}'"))),
    };
    let s: usize = num(meta_value(meta, "S")?, "S")?;
    let config_hash = u64::from_str_radix(meta_value(meta, "config_hash")?, 16).map_err(|_| bad("bad config_hash"))?;
    let seed_base: u64 = num(meta_value(meta, "seed_base")?, "seed_base")?;
    let rest: String = lines.map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CURVE_HEADER {
        return Err(bad(format!("unexpected curve header '{}'", header.join(","))));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let flags = &rec[9];
        let mut dropped = 0;
        let mut res = false;
        for f in flags.split(';').filter(|f| !f.is_empty()) {
            match f.split_once('=') {
                Some(("dropped", n)) => dropped = num(n, "dropped count")?,
                None if f == "resonance" => res = true,
                _ => return Err(bad(format!("unknown flag '{f}'"))),
            }
        }
        points.push(CurvePoint {
            size: num(&rec[2], "size")?,
            p: rec[3].parse::<Size>()?,
            d: rec[4].parse::<Size>()?,
            n_seeds: num(&rec[6], "n_seeds")?,
            mean_log_loss: num(&rec[7], "mean_log_loss")?,
            stderr: num(&rec[8], "stderr")?,
            dropped,
            resonance: res,
        });
    }
    Ok(ScalingCurve { regime, size_kind, s, points, config_hash, seed_base })
}

/// One curve in a plot, with an optional fitted line.
pub struct PlotSeries<'a> {
    pub label: String,
    pub curve: &'a ScalingCurve,
    pub fit: Option<&'a ExponentFit>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log plot (`log10` axes) of mean loss against size, one path per
/// curve, a dashed line per fit, and the fitted exponents as text.
pub fn curves_svg(title: &str, series: &[PlotSeries<'_>]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.curve.points.iter().filter(|p| p.mean_log_loss.is_finite()))
        .map(|p| ((p.size as f64).log10(), p.mean_log_loss / std::f64::consts::LN_10))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (ml, mr, mt, mb) = MARGIN;
    let sx = move |x: f64| ml + (x - x0) / (x1 - x0) * (W - ml - mr);
    let sy = move |y: f64| H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{ml}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{ml}" y1="{mt}" x2="{ml}" y2="{0}"/></g>"#,
        H - mb,
        W - mr
    );
    for k in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = sx(k as f64);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{}" font-size="11" text-anchor="middle">1e{k}</text>"#, H - mb + 16.0);
    }
    for k in (y0.ceil() as i64)..=(y1.floor() as i64) {
        let y = sy(k as f64);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">1e{k}</text>"#, ml - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">size</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(out, r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {0})" text-anchor="middle">loss</text>"#, H / 2.0);

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let data: Vec<(f64, f64)> = s
            .curve
            .points
            .iter()
            .filter(|p| p.mean_log_loss.is_finite())
            .map(|p| (sx((p.size as f64).log10()), sy(p.mean_log_loss / std::f64::consts::LN_10)))
            .collect();
        let d: String = data
            .iter()
            .enumerate()
            .map(|(j, (x, y))| format!("{}{x:.2} {y:.2}", if j == 0 { "M" } else { " L" }))
            .collect();
        let _ = writeln!(out, r#"<path class="curve" d="{d}" stroke="{color}" stroke-width="1.5" fill="none"/>"#);
        for (x, y) in &data {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let mut label = s.label.clone();
        if let Some(f) = s.fit {
            let (lo, hi) = ((f.window.0 as f64).log10(), (f.window.1 as f64).log10());
            let line = |lx: f64| (f.intercept + f.slope * lx * std::f64::consts::LN_10) / std::f64::consts::LN_10;
            let _ = writeln!(
                out,
                r#"<path class="fit" d="M{:.2} {:.2} L{:.2} {:.2}" stroke="{color}" stroke-dasharray="6,4" fill="none"/>"#,
                sx(lo),
                sy(line(lo)),
                sx(hi),
                sy(line(hi))
            );
            let _ = write!(label, ": α = {:.3} ± {:.3}", f.exponent, f.stderr);
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - mr - 230.0,
            mt + 20.0 + 16.0 * i as f64,
            escape(&label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Something that can be written out.
pub enum Artifact<'a> {
    Curve { curve: &'a ScalingCurve, fit: Option<&'a ExponentFit> },
    Curves { title: String, series: Vec<PlotSeries<'a>> },
    /// Pre-rendered CSV text.
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Svg,
}

/// Render an artifact in a format and write it to `path`.
pub fn emit(path: &Path, artifact: &Artifact<'_>, format: Format) -> Result<()> {
    let text = match (artifact, format) {
        (Artifact::Curve { curve, .. }, Format::Csv) => curve_to_csv(curve),
        (Artifact::Curve { curve, fit }, Format::Svg) => {
            let series = [PlotSeries { label: curve.regime.to_string(), curve, fit: *fit }];
            curves_svg(curve.regime.as_str(), &series)
        }
        (Artifact::Curves { series, .. }, Format::Csv) => series.iter().map(|s| curve_to_csv(s.curve)).collect::<Vec<_>>().join("\n"),
        (Artifact::Curves { title, series }, Format::Svg) => curves_svg(title, series),
        (Artifact::Table(t), Format::Csv) => t.clone(),
        (Artifact::Table(_), Format::Svg) => return Err(Error::Config("tables have no SVG form".into())),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
