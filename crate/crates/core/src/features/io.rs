//! Persistence for feature maps and datasets.
//!
//! Two formats are supported:
//!
//! * a self-describing binary container: an 8-byte magic, a little-endian
//!   `u32` header length, a JSON header naming every array and its shape,
//!   then the arrays as little-endian `f64`, row-major, in header order;
//! * CSV, one row per feature (feature maps) or per point (datasets), with a
//!   leading `# key=value ...` metadata line and a header naming the columns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, FeatureKind, FeatureMap, FourierMode, ManifoldKind, ManifoldSpec, Points, Trig};

const MAGIC: &[u8; 8] = b"SCLAB\x00\x01\x00";

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    object: String,
    kind: String,
    seed: u64,
    dim: usize,
    #[serde(default)]
    meta: serde_json::Value,
    arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModeMeta {
    freq: Vec<i32>,
    trig: Trig,
}

#[derive(Debug, Serialize, Deserialize)]
struct TorusMeta {
    smoothness: Option<f64>,
    modes: Vec<ModeMeta>,
}

fn write_container<W: Write>(mut w: W, header: &Header, arrays: &[&DMatrix<f64>]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for a in arrays {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                w.write_all(&a[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_container<R: Read>(mut r: R) -> Result<(Header, BTreeMap<String, DMatrix<f64>>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return format_err("not a scalinglab container (bad magic)");
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut arrays = BTreeMap::new();
    let mut buf = [0u8; 8];
    for info in &header.arrays {
        let mut m = DMatrix::zeros(info.rows, info.cols);
        for i in 0..info.rows {
            for j in 0..info.cols {
                r.read_exact(&mut buf)?;
                m[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        arrays.insert(info.name.clone(), m);
    }
    Ok((header, arrays))
}

fn info(name: &str, m: &DMatrix<f64>) -> ArrayInfo {
    ArrayInfo { name: name.into(), rows: m.nrows(), cols: m.ncols() }
}

fn take(arrays: &mut BTreeMap<String, DMatrix<f64>>, name: &str) -> Result<DMatrix<f64>> {
    match arrays.remove(name) {
        Some(m) => Ok(m),
        None => format_err(format!("container is missing array `{name}`")),
    }
}

pub fn write_feature_map<W: Write>(fm: &FeatureMap, w: W) -> Result<()> {
    let (meta, named): (serde_json::Value, Vec<(&str, DMatrix<f64>)>) = match &fm.kind {
        FeatureKind::RandomRelu { weights, bias } => (
            serde_json::Value::Null,
            vec![("weights", weights.clone()), ("bias", DMatrix::from_column_slice(bias.len(), 1, bias.as_slice()))],
        ),
        FeatureKind::FourierTorus { smoothness, modes } => {
            let meta = TorusMeta {
                smoothness: *smoothness,
                modes: modes.iter().map(|m| ModeMeta { freq: m.freq.clone(), trig: m.trig }).collect(),
            };
            let coeff = DMatrix::from_iterator(modes.len(), 1, modes.iter().map(|m| m.coeff));
            (serde_json::to_value(meta)?, vec![("coeff", coeff)])
        }
        FeatureKind::Explicit { values } => (serde_json::Value::Null, vec![("values", values.clone())]),
    };
    let header = Header {
        object: "feature-map".into(),
        kind: fm.kind_name().into(),
        seed: fm.seed,
        dim: fm.input_dim,
        meta,
        arrays: named.iter().map(|(n, m)| info(n, m)).collect(),
    };
    let refs: Vec<&DMatrix<f64>> = named.iter().map(|(_, m)| m).collect();
    write_container(w, &header, &refs)
}

pub fn read_feature_map<R: Read>(r: R) -> Result<FeatureMap> {
    let (header, mut arrays) = read_container(r)?;
    if header.object != "feature-map" {
        return format_err(format!("expected a feature map, found `{}`", header.object));
    }
    let kind = match header.kind.as_str() {
        "random-relu" => {
            let weights = take(&mut arrays, "weights")?;
            let bias = take(&mut arrays, "bias")?;
            if weights.ncols() != header.dim || bias.nrows() != weights.nrows() {
                return format_err("ReLU weight and bias shapes disagree");
            }
            FeatureKind::RandomRelu { weights, bias: DVector::from_column_slice(bias.as_slice()) }
        }
        "fourier-torus" => {
            let meta: TorusMeta = serde_json::from_value(header.meta)?;
            let coeff = take(&mut arrays, "coeff")?;
            if coeff.nrows() != meta.modes.len() {
                return format_err("mode list and coefficient array disagree");
            }
            let modes = meta
                .modes
                .into_iter()
                .zip(coeff.iter())
                .map(|(m, &c)| FourierMode { freq: m.freq, trig: m.trig, coeff: c })
                .collect();
            FeatureKind::FourierTorus { smoothness: meta.smoothness, modes }
        }
        "explicit" => FeatureKind::Explicit { values: take(&mut arrays, "values")? },
        other => return format_err(format!("unknown feature kind `{other}`")),
    };
    Ok(FeatureMap { kind, input_dim: header.dim, seed: header.seed })
}

pub fn write_dataset<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let inputs = ds.inputs.to_matrix();
    let mut named = vec![("inputs", inputs)];
    if let Some(t) = &ds.targets {
        named.push(("targets", DMatrix::from_column_slice(t.len(), 1, t.as_slice())));
    }
    let header = Header {
        object: "dataset".into(),
        kind: manifold_name(ds.manifold.kind).into(),
        seed: ds.seed,
        dim: ds.dim(),
        meta: serde_json::Value::Null,
        arrays: named.iter().map(|(n, m)| info(n, m)).collect(),
    };
    let refs: Vec<&DMatrix<f64>> = named.iter().map(|(_, m)| m).collect();
    write_container(w, &header, &refs)
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let (header, mut arrays) = read_container(r)?;
    if header.object != "dataset" {
        return format_err(format!("expected a dataset, found `{}`", header.object));
    }
    let manifold = ManifoldSpec::new(parse_manifold(&header.kind)?, header.dim)?;
    let inputs = take(&mut arrays, "inputs")?;
    let targets = arrays.remove("targets").map(|t| DVector::from_column_slice(t.as_slice()));
    let coords: Vec<f64> = inputs.transpose().iter().copied().collect();
    Ok(Dataset { inputs: Points::new(header.dim, coords)?, targets, manifold, seed: header.seed })
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_feature_map(fm, BufWriter::new(File::create(path)?))
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_feature_map(BufReader::new(File::open(path)?))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

fn manifold_name(kind: ManifoldKind) -> &'static str {
    match kind {
        ManifoldKind::UnitHypercube => "unit-hypercube",
        ManifoldKind::FlatTorus => "flat-torus",
    }
}

fn parse_manifold(s: &str) -> Result<ManifoldKind> {
    match s {
        "unit-hypercube" => Ok(ManifoldKind::UnitHypercube),
        "flat-torus" => Ok(ManifoldKind::FlatTorus),
        other => format_err(format!("unknown manifold `{other}`")),
    }
}

fn meta_line(pairs: &[(&str, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(" "))
}

/// Split off the leading `# key=value` line (if any) and parse it.
fn split_meta(text: &str) -> (BTreeMap<String, String>, &str) {
    let mut meta = BTreeMap::new();
    let Some(rest) = text.strip_prefix('#') else {
        return (meta, text);
    };
    let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
    for tok in line.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    (meta, body)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse {what} `{s}` as a number")))
}

fn csv_rows(body: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Feature map as CSV: one row per feature.
///
/// * `random-relu`: `w0..w{d-1},b`
/// * `fourier-torus`: `n0..n{d-1},trig,coeff`
/// * `explicit`: `v0..v{grid-1}`
pub fn feature_map_to_csv(fm: &FeatureMap) -> String {
    let d = fm.input_dim;
    let mut meta = vec![("kind", fm.kind_name().to_string()), ("seed", fm.seed.to_string()), ("dim", d.to_string())];
    let mut out = String::new();
    let mut lines: Vec<String> = Vec::new();
    match &fm.kind {
        FeatureKind::RandomRelu { weights, bias } => {
            let mut cols: Vec<String> = (0..d).map(|j| format!("w{j}")).collect();
            cols.push("b".into());
            lines.push(cols.join(","));
            for i in 0..weights.nrows() {
                let mut row: Vec<String> = weights.row(i).iter().map(|&v| format_float(v)).collect();
                row.push(format_float(bias[i]));
                lines.push(row.join(","));
            }
        }
        FeatureKind::FourierTorus { smoothness, modes } => {
            if let Some(t) = smoothness {
                meta.push(("smoothness", format_float(*t)));
            }
            let mut cols: Vec<String> = (0..d).map(|j| format!("n{j}")).collect();
            cols.push("trig".into());
            cols.push("coeff".into());
            lines.push(cols.join(","));
            for m in modes {
                let mut row: Vec<String> = m.freq.iter().map(i32::to_string).collect();
                row.push(match m.trig {
                    Trig::Sin => "sin".into(),
                    Trig::Cos => "cos".into(),
                });
                row.push(format_float(m.coeff));
                lines.push(row.join(","));
            }
        }
        FeatureKind::Explicit { values } => {
            let cols: Vec<String> = (0..values.ncols()).map(|j| format!("v{j}")).collect();
            lines.push(cols.join(","));
            for i in 0..values.nrows() {
                let row: Vec<String> = values.row(i).iter().map(|&v| format_float(v)).collect();
                lines.push(row.join(","));
            }
        }
    }
    out.push_str(&meta_line(&meta));
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

pub fn feature_map_from_csv(text: &str) -> Result<FeatureMap> {
    let (meta, body) = split_meta(text);
    let kind_name = meta.get("kind").map(String::as_str).unwrap_or("");
    let seed = meta.get("seed").map_or(Ok(0), |s| s.parse().map_err(|_| Error::Format("bad seed".into())))?;
    let dim: usize = match meta.get("dim") {
        Some(s) => s.parse().map_err(|_| Error::Format("bad dim".into()))?,
        None => return format_err("feature map CSV needs a `dim` entry in its metadata line"),
    };
    let (header, rows) = csv_rows(body)?;
    let kind = match kind_name {
        "random-relu" => {
            if header.len() != dim + 1 {
                return format_err(format!("expected {} columns, found {}", dim + 1, header.len()));
            }
            let mut weights = DMatrix::zeros(rows.len(), dim);
            let mut bias = DVector::zeros(rows.len());
            for (i, r) in rows.iter().enumerate() {
                for j in 0..dim {
                    weights[(i, j)] = parse_f64(&r[j], "weight")?;
                }
                bias[i] = parse_f64(&r[dim], "bias")?;
            }
            FeatureKind::RandomRelu { weights, bias }
        }
        "fourier-torus" => {
            if header.len() != dim + 2 {
                return format_err(format!("expected {} columns, found {}", dim + 2, header.len()));
            }
            let smoothness = meta.get("smoothness").map(|s| parse_f64(s, "smoothness")).transpose()?;
            let mut modes = Vec::with_capacity(rows.len());
            for r in &rows {
                let freq = r[..dim]
                    .iter()
                    .map(|s| s.parse::<i32>().map_err(|_| Error::Format(format!("bad frequency `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                let trig = match r[dim].as_str() {
                    "sin" => Trig::Sin,
                    "cos" => Trig::Cos,
                    other => return format_err(format!("bad trig `{other}`")),
                };
                modes.push(FourierMode { freq, trig, coeff: parse_f64(&r[dim + 1], "coefficient")? });
            }
            FeatureKind::FourierTorus { smoothness, modes }
        }
        "explicit" => {
            let grid = header.len();
            let mut values = DMatrix::zeros(rows.len(), grid);
            for (i, r) in rows.iter().enumerate() {
                for j in 0..grid {
                    values[(i, j)] = parse_f64(&r[j], "value")?;
                }
            }
            FeatureKind::Explicit { values }
        }
        other => return format_err(format!("unknown feature kind `{other}`")),
    };
    Ok(FeatureMap { kind, input_dim: dim, seed })
}

/// Dataset (or bare point cloud) as CSV: columns `x0..x{d-1}` and `y` when
/// targets are present.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut out = meta_line(&[
        ("manifold", manifold_name(ds.manifold.kind).to_string()),
        ("dim", d.to_string()),
        ("seed", ds.seed.to_string()),
    ]);
    let mut cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if ds.targets.is_some() {
        cols.push("y".into());
    }
    out.push_str(&cols.join(","));
    out.push('\n');
    for (i, row) in ds.inputs.rows().enumerate() {
        let mut vals: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        if let Some(t) = &ds.targets {
            vals.push(format_float(t[i]));
        }
        out.push_str(&vals.join(","));
        out.push('\n');
    }
    out
}

/// Parse a dataset CSV. The metadata line is optional; without it the
/// points are taken to live in a unit hypercube and the seed is 0. A column
/// named `y` is read as targets, every other column as a coordinate.
pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let (meta, body) = split_meta(text);
    let (header, rows) = csv_rows(body)?;
    let y_col = header.iter().position(|h| h == "y");
    let d = header.len() - usize::from(y_col.is_some());
    if d == 0 {
        return format_err("point CSV has no coordinate columns");
    }
    let kind = match meta.get("manifold") {
        Some(m) => parse_manifold(m)?,
        None => ManifoldKind::UnitHypercube,
    };
    let seed = meta.get("seed").map_or(Ok(0), |s| s.parse().map_err(|_| Error::Format("bad seed".into())))?;
    let mut coords = Vec::with_capacity(rows.len() * d);
    let mut targets = Vec::new();
    for r in &rows {
        if r.len() != header.len() {
            return format_err("ragged row in point CSV");
        }
        for (j, v) in r.iter().enumerate() {
            let x = parse_f64(v, "coordinate")?;
            if Some(j) == y_col {
                targets.push(x);
            } else {
                coords.push(x);
            }
        }
    }
    if rows.is_empty() {
        return format_err("point CSV has no rows");
    }
    Ok(Dataset {
        inputs: Points::new(d, coords)?,
        targets: y_col.map(|_| DVector::from_vec(targets)),
        manifold: ManifoldSpec::new(kind, d)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0, -3.5e-300, 1.0 / 3.0, f64::MAX, 12345.678] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn relu_binary_round_trip() {
        let fm = build_relu_features(3, 7, 42).unwrap();
        let mut buf = Vec::new();
        write_feature_map(&fm, &mut buf).unwrap();
        assert_eq!(read_feature_map(buf.as_slice()).unwrap(), fm);
    }

    #[test]
    fn torus_csv_round_trip() {
        let fm = build_torus_features(2, 2.0, 2).unwrap();
        assert_eq!(feature_map_from_csv(&feature_map_to_csv(&fm)).unwrap(), fm);
    }

    #[test]
    fn dataset_round_trips() {
        let fm = build_relu_features(2, 5, 1).unwrap();
        let t = sample_teacher(5, 2).unwrap();
        let ds = sample_manifold(ManifoldSpec::hypercube(2).unwrap(), 9, 3).unwrap().with_targets(&fm, &t).unwrap();
        assert_eq!(dataset_from_csv(&dataset_to_csv(&ds)).unwrap(), ds);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(read_dataset(&b"NOTALAB0\0\0\0\0"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn bare_point_csv() {
        let ds = dataset_from_csv("a,b\n0.1,0.2\n0.3,0.4\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs.row(1), &[0.3, 0.4]);
        assert!(ds.targets.is_none());
    }
}
