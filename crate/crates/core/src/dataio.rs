//! Delimited-text datasets, the synthetic concentric-circles generator and
//! the model file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::boost::{Loss, MetricModel, TrainMeta, Variant};
use crate::constraints::Dataset;
use crate::error::{Error, Result};
use crate::seeding::substream;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Zero-based column index; negative values count from the end.
    Index(isize),
    /// Header name; requires a header row.
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<isize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.trim().to_string()),
        })
    }
}

pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn, delimiter: char) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, label, delimiter)
}

/// Parses delimited text. A first row whose feature cells are not all
/// numeric is taken as a header. Blank lines are skipped.
pub fn parse_csv(text: &str, label: &LabelColumn, delimiter: char) -> Result<Dataset> {
    let rows: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n + 1, l.split(delimiter).map(str::trim).collect()))
        .collect();
    let Some((_, first)) = rows.first() else {
        return Err(Error::EmptyFile);
    };
    let arity = first.len();
    if arity < 2 {
        return Err(Error::Csv {
            line: rows[0].0,
            column: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }

    let resolve_index = |i: isize, line: usize| -> Result<usize> {
        let idx = if i < 0 { arity as isize + i } else { i };
        if idx < 0 || idx as usize >= arity {
            return Err(Error::Csv {
                line,
                column: i.unsigned_abs(),
                message: format!("label column {i} is outside the {arity} columns"),
            });
        }
        Ok(idx as usize)
    };

    let (label_idx, has_header) = match label {
        LabelColumn::Index(i) => {
            let idx = resolve_index(*i, rows[0].0)?;
            let numeric = first
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != idx)
                .all(|(_, cell)| cell.parse::<f64>().is_ok());
            (idx, !numeric)
        }
        LabelColumn::Name(name) => {
            let idx = first.iter().position(|c| c == name).ok_or_else(|| Error::Csv {
                line: rows[0].0,
                column: 0,
                message: format!("no header column named {name:?}"),
            })?;
            (idx, true)
        }
    };

    let body = if has_header { &rows[1..] } else { &rows[..] };
    if body.is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut points = Vec::with_capacity(body.len());
    let mut labels = Vec::with_capacity(body.len());
    for (line, cells) in body {
        if cells.len() != arity {
            return Err(Error::Csv {
                line: *line,
                column: cells.len().min(arity) + 1,
                message: format!("expected {arity} columns, found {}", cells.len()),
            });
        }
        let mut p = Vec::with_capacity(arity - 1);
        for (c, cell) in cells.iter().enumerate() {
            if c == label_idx {
                if cell.is_empty() {
                    return Err(Error::Csv {
                        line: *line,
                        column: c + 1,
                        message: "missing label".into(),
                    });
                }
                labels.push(cell.to_string());
                continue;
            }
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => p.push(x),
                _ => {
                    return Err(Error::Csv {
                        line: *line,
                        column: c + 1,
                        message: format!("{cell:?} is not a finite number"),
                    })
                }
            }
        }
        points.push(p);
    }
    Dataset::new(points, labels)
}

/// Features followed by the label, comma-separated, with shortest
/// round-trip formatting of every value.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        for x in ds.point(i) {
            let _ = write!(out, "{x:?},");
        }
        out.push_str(ds.class_name(ds.label(i)));
        out.push('\n');
    }
    out
}

/// Radial jitter half-width around each class circle.
pub const CIRCLE_JITTER: f64 = 0.05;

/// Concentric circles: class `c` lies on radius `c + 1` in the first two
/// coordinates, followed by `noise_dims` Gaussian noise coordinates.
pub fn make_concentric_circles(
    n_per_class: usize,
    n_classes: usize,
    noise_dims: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n_classes}")));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("need at least one point per class".into()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
    }
    let mut rng = substream(seed, "toy", 0);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut points = Vec::with_capacity(n_per_class * n_classes);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for c in 0..n_classes {
        for _ in 0..n_per_class {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (c + 1) as f64 + rng.random_range(-CIRCLE_JITTER..=CIRCLE_JITTER);
            let mut p = vec![r * theta.cos(), r * theta.sin()];
            p.extend((0..noise_dims).map(|_| noise.sample(&mut rng)));
            points.push(p);
            labels.push(c);
        }
    }
    Dataset::with_classes(points, labels, (0..n_classes).map(|c| c.to_string()).collect())
}

pub const MODEL_MAGIC: &str = "BOOSTMETRIC-MODEL";
pub const MODEL_VERSION: u32 = 1;

fn model_body(model: &MetricModel) -> String {
    let m = &model.meta;
    let mut out = format!(
        "{MODEL_MAGIC} {MODEL_VERSION} {} {} {}\nmeta variant={} iterations={} converged={} capped_steps={} passes={} v={:.16e}\n",
        model.dim(),
        model.num_bases(),
        model.loss,
        m.variant,
        m.iterations,
        m.converged,
        m.capped_steps,
        m.passes,
        m.v
    );
    for (w, v) in model.weights().iter().zip(model.bases()) {
        let _ = write!(out, "{w:.16e}");
        for x in v {
            let _ = write!(out, " {x:.16e}");
        }
        out.push('\n');
    }
    out
}

fn checksum(body: &str, model: &MetricModel) -> String {
    let mut h = Sha256::new();
    h.update(body.as_bytes());
    let x = model.matrix();
    for i in 0..x.dim() {
        for j in 0..=i {
            h.update(x.get(i, j).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Serializes a model: header, metadata, one line per base
/// (`w v_1 … v_D`, 17 significant digits), then a checksum over the text
/// and the dense matrix.
pub fn model_to_string(model: &MetricModel) -> Result<String> {
    model.check_invariants()?;
    let body = model_body(model);
    let sum = checksum(&body, model);
    Ok(format!("{body}checksum {sum}\n"))
}

pub fn model_from_str(text: &str) -> Result<MetricModel> {
    let bad = |m: String| Error::ModelFormat(m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(' ').collect();
    if header.len() != 5 || header[0] != MODEL_MAGIC {
        return Err(bad("missing magic header".into()));
    }
    let version: u32 = header[1].parse().map_err(|_| bad(format!("bad version {:?}", header[1])))?;
    if version != MODEL_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let dim: usize = header[2].parse().map_err(|_| bad(format!("bad dimension {:?}", header[2])))?;
    let count: usize = header[3].parse().map_err(|_| bad(format!("bad base count {:?}", header[3])))?;
    if dim == 0 {
        return Err(bad("dimension must be at least 1".into()));
    }
    let loss: Loss = header[4].parse()?;

    let meta_line = lines.next().ok_or_else(|| bad("missing meta line".into()))?;
    let meta = parse_meta(meta_line)?;

    let mut weights = Vec::with_capacity(count);
    let mut bases = Vec::with_capacity(count);
    for j in 0..count {
        let line = lines.next().ok_or_else(|| bad(format!("missing base line {}", j + 1)))?;
        let nums = line
            .split(' ')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| bad(format!("base line {} is not numeric", j + 1)))?;
        if nums.len() != dim + 1 {
            return Err(bad(format!("base line {} has {} values, expected {}", j + 1, nums.len(), dim + 1)));
        }
        weights.push(nums[0]);
        bases.push(nums[1..].to_vec());
    }
    let sum_line = lines.next().ok_or_else(|| bad("missing checksum line".into()))?;
    let stored = sum_line
        .strip_prefix("checksum ")
        .ok_or_else(|| bad("malformed checksum line".into()))?
        .trim()
        .to_string();
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after checksum".into()));
    }

    let model = MetricModel::from_parts(dim, weights, bases, loss, meta)?;
    let computed = checksum(&model_body(&model), &model);
    if computed != stored {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    model.check_invariants()?;
    Ok(model)
}

fn parse_meta(line: &str) -> Result<TrainMeta> {
    let bad = |m: String| Error::ModelFormat(m);
    let mut it = line.split(' ');
    if it.next() != Some("meta") {
        return Err(bad("malformed meta line".into()));
    }
    let mut meta = TrainMeta::new(Variant::Stagewise, 0.0);
    let mut seen = 0;
    for kv in it {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed meta field {kv:?}")))?;
        let field = |_: ()| bad(format!("bad value for {k}: {v:?}"));
        match k {
            "variant" => meta.variant = v.parse().map_err(|_| field(()))?,
            "iterations" => meta.iterations = v.parse().map_err(|_| field(()))?,
            "converged" => meta.converged = v.parse().map_err(|_| field(()))?,
            "capped_steps" => meta.capped_steps = v.parse().map_err(|_| field(()))?,
            "passes" => meta.passes = v.parse().map_err(|_| field(()))?,
            "v" => meta.v = v.parse().map_err(|_| field(()))?,
            _ => return Err(bad(format!("unknown meta field {k:?}"))),
        }
        seen += 1;
    }
    if seen != 6 {
        return Err(bad("incomplete meta line".into()));
    }
    Ok(meta)
}

pub fn save_model(model: &MetricModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MetricModel> {
    model_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_row_file() {
        let ds = parse_csv("1,2,A\n3,4,A\n5,6,B\n", &LabelColumn::Index(2), ',').unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        let names: Vec<&str> = (0..3).map(|i| ds.class_name(ds.label(i))).collect();
        assert_eq!(names, ["A", "A", "B"]);
        assert_eq!(ds.point(2), &[5.0, 6.0]);
    }

    #[test]
    fn header_and_named_label() {
        let text = "x;y;cls\n1;2;A\n3;4;B\n";
        let ds = parse_csv(text, &LabelColumn::Name("cls".into()), ';').unwrap();
        assert_eq!(ds.len(), 2);
        let ds = parse_csv(text, &LabelColumn::Index(-1), ';').unwrap();
        assert_eq!(ds.len(), 2);
        // label first, no header
        let ds = parse_csv("a,1,2\nb,3,4\n", &LabelColumn::Index(0), ',').unwrap();
        assert_eq!(ds.point(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv("", &LabelColumn::Index(0), ','), Err(Error::EmptyFile)));
        assert!(matches!(parse_csv("\n\n", &LabelColumn::Index(0), ','), Err(Error::EmptyFile)));
        let e = parse_csv("1,2,A\n3,A\n", &LabelColumn::Index(2), ',').unwrap_err();
        assert!(matches!(e, Error::Csv { line: 2, .. }), "{e}");
        let e = parse_csv("1,2,A\n3,x,B\n", &LabelColumn::Index(2), ',').unwrap_err();
        assert!(matches!(e, Error::Csv { line: 2, column: 2, .. }), "{e}");
        let e = parse_csv("1,2,A\n3,4,\n", &LabelColumn::Index(2), ',').unwrap_err();
        assert!(matches!(e, Error::Csv { line: 2, column: 3, .. }), "{e}");
        assert!(parse_csv("1,2,A\n", &LabelColumn::Index(5), ',').is_err());
        assert!(parse_csv("a,b\n1,A\n", &LabelColumn::Name("zz".into()), ',').is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "0.1,1e-300,A\n-2.5,3.141592653589793,B\n";
        let ds = parse_csv(text, &LabelColumn::Index(2), ',').unwrap();
        let again = parse_csv(&dataset_to_csv(&ds), &LabelColumn::Index(2), ',').unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn circles_shape() {
        let ds = make_concentric_circles(1, 2, 0, 0.0, 3).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 2));
        let r: Vec<f64> = ds.points().iter().map(|p| p[0].hypot(p[1])).collect();
        assert!((r[0] - 1.0).abs() <= CIRCLE_JITTER && (r[1] - 2.0).abs() <= CIRCLE_JITTER);

        let ds = make_concentric_circles(50, 4, 8, 1.0, 3).unwrap();
        assert_eq!(ds.dim(), 10);
        let mean_norm: Vec<f64> = (0..4)
            .map(|c| {
                let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == c).collect();
                idx.iter().map(|&i| ds.point(i)[0].hypot(ds.point(i)[1])).sum::<f64>() / idx.len() as f64
            })
            .collect();
        assert!(mean_norm.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ds, make_concentric_circles(50, 4, 8, 1.0, 3).unwrap());
        assert_ne!(ds, make_concentric_circles(50, 4, 8, 1.0, 4).unwrap());
        assert!(make_concentric_circles(5, 1, 0, 1.0, 0).is_err());
    }

    fn sample_model() -> MetricModel {
        let s = 0.5f64.sqrt();
        let mut meta = TrainMeta::new(Variant::TotallyCorrective, 1e-7);
        meta.iterations = 3;
        meta.capped_steps = 1;
        MetricModel::from_parts(
            2,
            vec![0.1, 2.0 / 3.0, 1e-5],
            vec![vec![1.0, 0.0], vec![s, s], vec![0.6, -0.8]],
            Loss::Logistic,
            meta,
        )
        .unwrap()
    }

    #[test]
    fn model_round_trip() {
        let m = sample_model();
        let back = model_from_str(&model_to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights().iter().zip(m.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let empty = MetricModel::empty(3, Loss::Exponential, TrainMeta::new(Variant::Stagewise, 1e-7));
        assert_eq!(model_from_str(&model_to_string(&empty).unwrap()).unwrap(), empty);
    }

    #[test]
    fn model_corruption_detected() {
        let text = model_to_string(&sample_model()).unwrap();
        let tampered = text.replacen("1.0000000000000001e-1 ", "1.0000000000000003e-1 ", 1);
        assert_ne!(tampered, text);
        assert!(matches!(model_from_str(&tampered), Err(Error::ChecksumMismatch { .. })));
        let wrong_version = text.replacen("BOOSTMETRIC-MODEL 1", "BOOSTMETRIC-MODEL 2", 1);
        assert!(matches!(model_from_str(&wrong_version), Err(Error::ModelFormat(_))));
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(model_from_str(&truncated).is_err());
    }
}
