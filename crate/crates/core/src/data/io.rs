//! CSV and IDX ingestion.
//!
//! CSV rows are `label, f₁, …, f_d` with an optional header. IDX files are
//! the big-endian, magic-prefixed tensors used by the classic small-image
//! archives; images and labels live in separate files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassId, Dataset, GridShape, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "format", deny_unknown_fields)]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Idx { images: PathBuf, labels: PathBuf },
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Csv { path } => load_csv(path),
        DatasetSource::Idx { images, labels } => load_idx(images, labels),
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut d_in: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_number = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let label = match fields[0].parse::<ClassId>() {
            Ok(l) => l,
            // a non-numeric first row is a header
            Err(_) if samples.is_empty() && d_in.is_none() && fields[0].parse::<f64>().is_err() => {
                d_in = Some(fields.len().saturating_sub(1));
                continue;
            }
            Err(_) => {
                return Err(Error::Parse {
                    line: line_number,
                    detail: format!("label `{}` is not a non-negative integer", fields[0]),
                })
            }
        };
        let features = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_number,
                        detail: format!("feature `{f}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match d_in {
            Some(d) if d != features.len() => {
                return Err(Error::Schema(format!(
                    "line {line_number}: {} features, expected {d}",
                    features.len()
                )))
            }
            None => d_in = Some(features.len()),
            _ => {}
        }
        samples.push(LabeledSample {
            features,
            label,
            source_id: samples.len() as u64,
        });
    }
    if samples.is_empty() {
        return Err(Error::Schema("dataset has no rows".into()));
    }
    let d_in = d_in.unwrap_or(0);
    if d_in == 0 {
        return Err(Error::Schema("rows carry no features".into()));
    }
    Dataset::new(d_in, None, samples)
}

/// Writes `label,f₁,…` rows with a header. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("label");
    for k in 0..dataset.d_in {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for s in &dataset.samples {
        let _ = write!(out, "{}", s.label);
        for v in &s.features {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct IdxTensor {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Schema(format!("{}: missing IDX magic", path.display())));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Schema(format!(
            "{}: only unsigned-byte IDX payloads are supported (type 0x{:02x})",
            path.display(),
            bytes[2]
        )));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Schema(format!("{}: truncated IDX header", path.display())));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(Error::Schema(format!(
            "{}: expected {count} payload bytes, found {}",
            path.display(),
            bytes.len() - header
        )));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.is_empty() || lab.dims.len() != 1 {
        return Err(Error::Schema("IDX images need ≥1 dim and labels exactly 1".into()));
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::Schema(format!("{n} images but {} labels", lab.dims[0])));
    }
    if n == 0 {
        return Err(Error::Schema("IDX archive is empty".into()));
    }
    let d_in: usize = img.dims[1..].iter().product::<usize>().max(1);
    let grid = match img.dims.as_slice() {
        [_, h, w] => Some(GridShape { height: *h, width: *w }),
        _ => None,
    };
    let samples = (0..n)
        .map(|i| LabeledSample {
            features: img.data[i * d_in..(i + 1) * d_in]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect(),
            label: ClassId::from(lab.data[i]),
            source_id: i as u64,
        })
        .collect();
    Dataset::new(d_in, grid, samples)
}

fn write_idx(path: &Path, dims: &[usize], data: &[u8]) -> Result<()> {
    let mut out = vec![0u8, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `n × height × width` unsigned-byte images.
pub fn write_idx_images(path: &Path, grid: GridShape, pixels: &[Vec<u8>]) -> Result<()> {
    let flat: Vec<u8> = pixels.iter().flatten().copied().collect();
    if flat.len() != pixels.len() * grid.len() {
        return Err(Error::Shape("image sizes do not match the grid".into()));
    }
    write_idx(path, &[pixels.len(), grid.height, grid.width], &flat)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_idx(path, &[labels.len()], labels)
}
