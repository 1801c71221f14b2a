//! Plain-text tensor files and experiment reports.
//!
//! Tensors are stored in a coordinate format: a header line
//! `# tensor <name> <ndim> <dim1> ... <dimN>` followed by one line per
//! nonzero entry holding `ndim` **0-based** indices and the value. Other
//! lines starting with `#` are comments and blank lines are ignored.
//!
//! ```text
//! # tensor X1 3 2 2 2
//! 0 0 0 1.0000000000000000e0
//! 1 0 1 2.5000000000000000e0
//! ```
//!
//! Values are written with 17 significant digits so that reading a written
//! file reproduces every double exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{GctfError, Result};
use crate::harness::ExperimentReport;
use crate::tensor::{DenseTensor, Index};

/// Reads a coordinate file and labels its axes with `labels`.
pub fn read_tensor(path: &Path, labels: &[&str]) -> Result<DenseTensor> {
    read_named_tensor(path, labels).map(|(_, t)| t)
}

/// Like [`read_tensor`], also returning the name from the header.
pub fn read_named_tensor(path: &Path, labels: &[&str]) -> Result<(String, DenseTensor)> {
    let text = fs::read_to_string(path).map_err(|e| GctfError::io(path, e))?;
    parse_tensor(&text, &path.display().to_string(), labels)
}

pub fn parse_tensor(text: &str, origin: &str, labels: &[&str]) -> Result<(String, DenseTensor)> {
    let parse_err = |line: usize, message: String| GctfError::Parse {
        path: origin.to_string(),
        line,
        message,
    };

    let mut header: Option<(String, Vec<usize>)> = None;
    let mut tensor: Option<DenseTensor> = None;
    let mut seen: Vec<bool> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            if header.is_none() && tokens.first() == Some(&"tensor") {
                let (name, dims) = parse_header(&tokens[1..]).map_err(|m| parse_err(line_no, m))?;
                if dims.len() != labels.len() {
                    return Err(GctfError::Shape(format!(
                        "{origin}:{line_no}: file declares {} dimensions, expected {}",
                        dims.len(),
                        labels.len()
                    )));
                }
                let ix: Vec<Index> = labels
                    .iter()
                    .zip(&dims)
                    .map(|(l, &c)| Index::new(*l, c))
                    .collect();
                let t = DenseTensor::zeros(ix)?;
                seen = vec![false; t.len()];
                tensor = Some(t);
                header = Some((name, dims));
            }
            continue;
        }

        let (Some((_, dims)), Some(t)) = (&header, tensor.as_mut()) else {
            return Err(parse_err(
                line_no,
                "data line before the `# tensor` header".into(),
            ));
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dims.len() + 1 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected {} indices and a value, found {} fields",
                    dims.len(),
                    fields.len()
                ),
            ));
        }
        let coords = fields[..dims.len()]
            .iter()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| parse_err(line_no, format!("`{f}` is not a 0-based index")))
            })
            .collect::<Result<Vec<_>>>()?;
        let value: f64 = fields[dims.len()]
            .parse()
            .map_err(|_| parse_err(line_no, format!("`{}` is not a number", fields[dims.len()])))?;
        for (ax, (&c, &d)) in coords.iter().zip(dims).enumerate() {
            if c >= d {
                return Err(GctfError::InvalidValue(format!(
                    "{origin}:{line_no}: index {c} on axis {ax} is out of bounds (size {d})"
                )));
            }
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(GctfError::InvalidValue(format!(
                "{origin}:{line_no}: value {value} must be finite and non-negative"
            )));
        }
        let off = t.offset(&coords)?;
        if seen[off] {
            return Err(GctfError::InvalidValue(format!(
                "{origin}:{line_no}: duplicate coordinate {coords:?}"
            )));
        }
        seen[off] = true;
        t.set(&coords, value)?;
    }

    match (header, tensor) {
        (Some((name, _)), Some(t)) => Ok((name, t)),
        _ => Err(parse_err(
            0,
            "missing `# tensor <name> <ndim> <dims...>` header".into(),
        )),
    }
}

fn parse_header(tokens: &[&str]) -> std::result::Result<(String, Vec<usize>), String> {
    let [name, ndim, dims @ ..] = tokens else {
        return Err("header must read `# tensor <name> <ndim> <dims...>`".into());
    };
    let ndim: usize = ndim
        .parse()
        .map_err(|_| format!("`{ndim}` is not a dimension count"))?;
    if ndim == 0 || dims.len() != ndim {
        return Err(format!(
            "header declares {ndim} dimensions but lists {} sizes",
            dims.len()
        ));
    }
    let dims = dims
        .iter()
        .map(|d| match d.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(format!("`{d}` is not a positive dimension size")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((name.to_string(), dims))
}

/// Coordinate-file text listing the nonzeros of `t` in row-major order.
pub fn format_tensor(t: &DenseTensor, name: &str) -> String {
    let mut out = String::new();
    let dims = t
        .shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let _ = writeln!(out, "# tensor {name} {} {dims}", t.ndim());
    for (off, &v) in t.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let coords = t.multi_index(off).expect("offset within tensor");
        for c in coords {
            let _ = write!(out, "{c} ");
        }
        let _ = writeln!(out, "{v:.16e}");
    }
    out
}

pub fn write_tensor(t: &DenseTensor, name: &str, path: &Path) -> Result<()> {
    write_text(path, &format_tensor(t, name))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| GctfError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| GctfError::io(path, e))
}

/// Writes the report document to `path` and its flat table next to it with
/// a `.csv` extension.
pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| GctfError::Document(e.to_string()))?;
    json.push('\n');
    write_text(path, &json)?;
    write_text(&path.with_extension("csv"), &report_csv(report))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| GctfError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| GctfError::Document(format!("{}: {e}", path.display())))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One header row plus one row per cell.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "model,cost,mask,parameter,repeat,mask_seed,engine_seed,auc,heldout,iterations,converged,wall_ms,error\n",
    );
    for r in &report.records {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.cost,
            r.mask.kind_name(),
            r.mask.parameter(),
            r.repeat,
            r.mask_seed,
            r.engine_seed,
            opt(r.auc.map(|a| format!("{a:.17}"))),
            r.heldout,
            r.iterations,
            r.converged,
            opt(r.wall_ms.map(|w| w.to_string())),
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    out
}
