//! Angular diagnostics of feature spaces.
//!
//! * class mean features `z̄_c` (raw, un-normalized means),
//! * ψ: the average pairwise angle between normalized class means,
//! * φ(n, d): the average, over `n` random unit vectors in `d` dimensions, of
//!   each vector's smallest angle to any other,
//! * embedding export for external visualization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numeric::tensor::{l2_norm, l2_normalize};
use crate::numeric::Tensor;
use crate::par::Execution;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub psi_degrees: f64,
    pub n_classes: usize,
    pub dim: usize,
    /// `‖z̄_c‖` in class order.
    pub mean_norms: Vec<f64>,
    pub classes: Vec<ClassId>,
}

/// Raw per-class means of feature rows.
pub fn class_means(features: &Tensor, labels: &[ClassId], classes: &[ClassId]) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    if features.rows() != labels.len() {
        return Err(Error::dim(
            "class_means",
            format!("{} feature rows for {} labels", features.rows(), labels.len()),
        ));
    }
    let d = features.cols();
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = classes.iter().map(|&c| (c, (vec![0.0; d], 0))).collect();
    for (r, l) in labels.iter().enumerate() {
        if let Some((s, k)) = sums.get_mut(l) {
            s.iter_mut().zip(features.row(r)).for_each(|(a, x)| *a += x);
            *k += 1;
        }
    }
    sums.into_iter()
        .map(|(c, (mut s, k))| {
            if k == 0 {
                return Err(Error::Capacity(format!("class {c} has no samples")));
            }
            s.iter_mut().for_each(|v| *v /= k as f64);
            Ok((c, s))
        })
        .collect()
}

/// `z̄_c` for each class over `indices` of `data`, using the network's extractor.
pub fn class_mean_features(
    network: &Network,
    data: &Dataset,
    indices: &[usize],
    classes: &[ClassId],
) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    let wanted: std::collections::BTreeSet<ClassId> = classes.iter().copied().collect();
    let idx: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| wanted.contains(&data.samples[i].label))
        .collect();
    if idx.is_empty() {
        return Err(Error::Capacity("no samples for the requested classes".into()));
    }
    let z = network.features_of(data, &idx)?;
    let labels: Vec<ClassId> = idx.iter().map(|&i| data.samples[i].label).collect();
    class_means(&z, &labels, classes)
}

/// Angle between unit vectors as `2·atan2(‖u−v‖, ‖u+v‖)`, exact at 0° and 180°.
fn angle_degrees(u: &[f64], v: &[f64]) -> f64 {
    let (mut d, mut s) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        d += (a - b) * (a - b);
        s += (a + b) * (a + b);
    }
    (2.0 * d.sqrt().atan2(s.sqrt())).to_degrees()
}

/// Average pairwise angle in degrees between the normalized means.
pub fn psi(means: &[Vec<f64>]) -> Result<f64> {
    let k = means.len();
    if k < 2 {
        return Err(Error::UndefinedMetric {
            metric: "psi",
            detail: format!("needs at least 2 classes, have {k}"),
        });
    }
    let unit = means.iter().map(|m| l2_normalize(m)).collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += angle_degrees(&unit[i], &unit[j]);
        }
    }
    Ok(sum * 2.0 / (k * (k - 1)) as f64)
}

/// ψ report for the given classes.
pub fn angle_report(network: &Network, data: &Dataset, indices: &[usize], classes: &[ClassId]) -> Result<AngleReport> {
    let means = class_mean_features(network, data, indices, classes)?;
    let values: Vec<Vec<f64>> = means.values().cloned().collect();
    Ok(AngleReport {
        psi_degrees: psi(&values)?,
        n_classes: values.len(),
        dim: network.feature_dim(),
        mean_norms: values.iter().map(|m| l2_norm(m)).collect(),
        classes: means.keys().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinAngleConfig {
    /// Upper bound on bytes held by per-tile partial results.
    pub memory_cap_bytes: usize,
    pub execution: Execution,
}

impl Default for MinAngleConfig {
    fn default() -> Self {
        Self {
            memory_cap_bytes: 256 << 20,
            execution: Execution::Parallel,
        }
    }
}

/// `n` standard-normal vectors in `d` dimensions, normalized, as one flat buffer.
pub fn random_unit_vectors(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = l2_norm(&v);
        v.iter_mut().for_each(|x| *x /= norm);
        out.extend(v);
    }
    out
}

#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// For each row, the largest dot product with any other row.
///
/// The upper triangle is cut into square tiles; each tile yields partial row
/// maxima for both of its row blocks, and tiles are merged with `max`, which
/// is order-independent, so sequential and parallel runs agree bit for bit.
pub fn max_neighbor_dots(vectors: &[f64], n: usize, d: usize, cfg: &MinAngleConfig) -> Vec<f64> {
    let block = tile_size(n, cfg.memory_cap_bytes);
    let blocks = n.div_ceil(block);
    let tiles: Vec<(usize, usize)> = (0..blocks).flat_map(|i| (i..blocks).map(move |j| (i, j))).collect();
    let row = |i: usize| &vectors[i * d..(i + 1) * d];
    let mut best = vec![f64::NEG_INFINITY; n];
    // process tiles in waves so partial results stay under the memory cap
    let per_wave = (cfg.memory_cap_bytes / (16 * block).max(1)).max(1);
    for wave in tiles.chunks(per_wave) {
        let partial = cfg.execution.map(wave, |&(bi, bj)| {
            let (i0, i1) = (bi * block, ((bi + 1) * block).min(n));
            let (j0, j1) = (bj * block, ((bj + 1) * block).min(n));
            let mut mi = vec![f64::NEG_INFINITY; i1 - i0];
            let mut mj = vec![f64::NEG_INFINITY; j1 - j0];
            for i in i0..i1 {
                let start = if bi == bj { i + 1 } else { j0 };
                let vi = row(i);
                for j in start..j1 {
                    let s = dot4(vi, row(j));
                    if s > mi[i - i0] {
                        mi[i - i0] = s;
                    }
                    if s > mj[j - j0] {
                        mj[j - j0] = s;
                    }
                }
            }
            (i0, mi, j0, mj)
        });
        for (i0, mi, j0, mj) in partial {
            for (k, v) in mi.into_iter().enumerate() {
                best[i0 + k] = best[i0 + k].max(v);
            }
            for (k, v) in mj.into_iter().enumerate() {
                best[j0 + k] = best[j0 + k].max(v);
            }
        }
    }
    best
}

fn tile_size(n: usize, cap: usize) -> usize {
    let by_cap = (cap / 16).max(1);
    by_cap.clamp(1, 256).min(n.max(1))
}

/// φ(n, d) in degrees.
pub fn min_angle_study(n: usize, d: usize, seed: u64) -> Result<f64> {
    min_angle_study_with(n, d, seed, &MinAngleConfig::default())
}

pub fn min_angle_study_with(n: usize, d: usize, seed: u64, cfg: &MinAngleConfig) -> Result<f64> {
    if n < 2 || d < 2 {
        return Err(Error::Config(format!(
            "min-angle study needs n ≥ 2 and d ≥ 2, got n={n}, d={d}"
        )));
    }
    let v = random_unit_vectors(n, d, seed);
    let best = max_neighbor_dots(&v, n, d, cfg);
    let sum: f64 = best.iter().map(|&c| c.clamp(-1.0, 1.0).acos().to_degrees()).sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub checkpoint: PathBuf,
    pub psi_degrees: f64,
}

/// ψ at every checkpoint, in the given order.
pub fn psi_trace(
    checkpoints: &[PathBuf],
    data: &Dataset,
    indices: &[usize],
    classes: &[ClassId],
) -> Result<Vec<TracePoint>> {
    checkpoints
        .iter()
        .map(|path| {
            let net = Network::load(path)?;
            Ok(TracePoint {
                checkpoint: path.clone(),
                psi_degrees: angle_report(&net, data, indices, classes)?.psi_degrees,
            })
        })
        .collect()
}

/// Writes `id,label,z0..z{D-1}` rows for `indices` of `data`.
pub fn export_embeddings(network: &Network, data: &Dataset, indices: &[usize], path: &Path) -> Result<()> {
    let z = network.features_of(data, indices)?;
    let mut out = String::from("id,label");
    for k in 0..z.cols() {
        write!(out, ",z{k}").unwrap();
    }
    out.push('\n');
    for (r, &i) in indices.iter().enumerate() {
        let s = &data.samples[i];
        write!(out, "{},{}", s.source_id, s.label).unwrap();
        for v in z.row(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: u64,
    pub label: ClassId,
    pub features: Vec<f64>,
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let width = match lines.next() {
        Some((_, h)) if h.starts_with("id,label") => h.split(',').count(),
        _ => {
            return Err(Error::Schema(
                "embedding CSV must start with an `id,label` header".into(),
            ))
        }
    };
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != width {
                return Err(Error::Schema(format!(
                    "line {}: {} columns, expected {width}",
                    n + 1,
                    f.len()
                )));
            }
            let bad = |detail: String| Error::Parse { line: n + 1, detail };
            Ok(EmbeddingRow {
                id: f[0].parse().map_err(|_| bad(format!("bad id `{}`", f[0])))?,
                label: f[1].parse().map_err(|_| bad(format!("bad label `{}`", f[1])))?,
                features: f[2..]
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn psi_cases() {
        assert_eq!(psi(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap(), 0.0);
        assert_abs_diff_eq!(psi(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap(), 90.0, epsilon = 1e-12);
        let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        assert_abs_diff_eq!(psi(&[at(0.0), at(60.0), at(120.0)]).unwrap(), 80.0, epsilon = 1e-9);
        // three unit vectors at pairwise 60° need a third dimension
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.5, 3f64.sqrt() / 2.0, 0.0];
        let c = vec![0.5, 3f64.sqrt() / 6.0, (2.0f64 / 3.0).sqrt()];
        assert_abs_diff_eq!(psi(&[a, b, c]).unwrap(), 60.0, epsilon = 1e-9);
    }

    #[test]
    fn psi_errors() {
        assert!(matches!(psi(&[vec![1.0]]), Err(Error::UndefinedMetric { .. })));
        assert!(matches!(
            psi(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::DegenerateVector { .. })
        ));
    }

    #[test]
    fn class_means_direct_sum() {
        let z = Tensor::matrix(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, 0.5]).unwrap();
        let m = class_means(&z, &[0, 0, 1, 2], &[0, 1]).unwrap();
        assert_eq!(m[&0], vec![2.0, 3.0]);
        assert_eq!(m[&1], vec![5.0, 6.0]);
        assert!(matches!(class_means(&z, &[0, 0, 1, 2], &[9]), Err(Error::Capacity(_))));
    }

    #[test]
    fn two_vectors_in_the_plane() {
        let v = random_unit_vectors(2, 2, 5);
        let expect = angle_degrees(&v[0..2], &v[2..4]);
        assert_abs_diff_eq!(min_angle_study(2, 2, 5).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn min_angle_rejects_small() {
        assert!(min_angle_study(1, 4, 0).is_err());
        assert!(min_angle_study(4, 1, 0).is_err());
    }

    #[test]
    fn tiling_and_execution_do_not_change_result() {
        let (n, d) = (301, 7);
        let v = random_unit_vectors(n, d, 3);
        let brute: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dot4(&v[i * d..(i + 1) * d], &v[j * d..(j + 1) * d]))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (cap, exec) in [
            (16, Execution::Sequential),
            (16 * 37, Execution::Parallel),
            (256 << 20, Execution::Parallel),
        ] {
            let cfg = MinAngleConfig {
                memory_cap_bytes: cap,
                execution: exec,
            };
            assert_eq!(max_neighbor_dots(&v, n, d, &cfg), brute);
        }
    }

    #[test]
    fn min_angle_trends() {
        let mean = |n, d| (0..10).map(|s| min_angle_study(n, d, s).unwrap()).sum::<f64>() / 10.0;
        assert!(mean(50, 8) > mean(400, 8));
        assert!(mean(100, 32) > mean(100, 8));
    }

    #[test]
    fn embedding_round_trip() {
        let cfg = crate::model::ModelConfig {
            extractor_dims: vec![5, 4],
            ..Default::default()
        };
        let net = Network::new(3, &cfg, 1).unwrap();
        let data = crate::data::generate_gaussian_clusters(2, 3, 4, 0.3, 2).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        export_embeddings(&net, &data, &idx, &path).unwrap();
        let rows = load_embeddings(&path).unwrap();
        assert_eq!(rows.len(), data.len());
        let header = std::fs::read_to_string(&path).unwrap();
        assert_eq!(header.lines().next().unwrap().split(',').count(), 4 + 2);
        let z = net.features_of(&data, &idx).unwrap();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.features.as_slice(), z.row(r));
            assert_eq!(row.label, data.samples[r].label);
        }
    }

    proptest! {
        #[test]
        fn psi_rotation_invariant(theta in 0.0..std::f64::consts::TAU, pts in prop::collection::vec((0.1f64..1.0, 0.1f64..1.0), 2..6)) {
            let means: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
            let (s, c) = theta.sin_cos();
            let rotated: Vec<Vec<f64>> = means.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
            prop_assert!((psi(&means).unwrap() - psi(&rotated).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn min_angle_is_finite(n in 2usize..30, d in 2usize..6, seed in 0u64..1000) {
            let v = min_angle_study(n, d, seed).unwrap();
            prop_assert!(v.is_finite() && (0.0..=180.0).contains(&v));
        }
    }
}
