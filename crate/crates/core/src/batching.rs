//! Multi-view batches and per-anchor positive/negative index sets.
//!
//! A batch of `n` source samples expands to `m·n` items in view-major blocks:
//! item `k·n + i` (0-based) is view `k + 1` of source `i`.

use crate::data::{augment, AugmentationConfig, ClassId, GridShape, LabeledSample};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewBatch {
    /// `m·n × d_in` augmented inputs.
    pub inputs: Tensor,
    pub labels: Vec<ClassId>,
    pub source_ids: Vec<u64>,
    /// 1-based view number of each item.
    pub view_index: Vec<usize>,
    pub m: usize,
    pub n: usize,
}

/// Index sets of one anchor. All lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSets {
    pub anchor: usize,
    /// Other views of the anchor's own source.
    pub positives_aug: Vec<usize>,
    /// Same label, different source.
    pub positives_diffsrc: Vec<usize>,
    /// Different label.
    pub negatives: Vec<usize>,
}

/// Expands `samples` into `m` stochastic views each.
pub fn build_multiview_batch(
    samples: &[&LabeledSample],
    m: usize,
    aug: &AugmentationConfig,
    draw_seed: u64,
    grid: Option<GridShape>,
) -> Result<MultiViewBatch> {
    if m < 2 {
        return Err(Error::Config(format!(
            "a multi-view batch needs m ≥ 2 views for a positive pair, got {m}"
        )));
    }
    expand(samples, m, aug, draw_seed, grid)
}

/// One augmented view per sample, for objectives without positive structure.
pub fn build_single_view_batch(
    samples: &[&LabeledSample],
    aug: &AugmentationConfig,
    draw_seed: u64,
    grid: Option<GridShape>,
) -> Result<MultiViewBatch> {
    expand(samples, 1, aug, draw_seed, grid)
}

fn expand(
    samples: &[&LabeledSample],
    m: usize,
    aug: &AugmentationConfig,
    draw_seed: u64,
    grid: Option<GridShape>,
) -> Result<MultiViewBatch> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Capacity("cannot batch zero samples".into()));
    }
    let d_in = samples[0].features.len();
    let mut rows = Vec::with_capacity(m * n);
    let mut labels = Vec::with_capacity(m * n);
    let mut source_ids = Vec::with_capacity(m * n);
    let mut view_index = Vec::with_capacity(m * n);
    for k in 0..m {
        let draw = derive_seed(draw_seed, &[k as u64]);
        for s in samples {
            if s.features.len() != d_in {
                return Err(Error::dim("build_multiview_batch", "ragged sample features"));
            }
            rows.push(augment(s, aug, draw, grid)?);
            labels.push(s.label);
            source_ids.push(s.source_id);
            view_index.push(k + 1);
        }
    }
    Ok(MultiViewBatch {
        inputs: Tensor::from_rows(&rows)?,
        labels,
        source_ids,
        view_index,
        m,
        n,
    })
}

impl MultiViewBatch {
    /// Structure-only batch: source `i` has label `source_labels[i]` and id `i`.
    /// Inputs are a zero column; useful when projections are supplied directly.
    pub fn from_labels(source_labels: &[ClassId], m: usize) -> Result<Self> {
        let n = source_labels.len();
        if n == 0 || m == 0 {
            return Err(Error::Capacity("empty batch layout".into()));
        }
        let mut labels = Vec::with_capacity(m * n);
        let mut source_ids = Vec::with_capacity(m * n);
        let mut view_index = Vec::with_capacity(m * n);
        for k in 0..m {
            for (i, &l) in source_labels.iter().enumerate() {
                labels.push(l);
                source_ids.push(i as u64);
                view_index.push(k + 1);
            }
        }
        Ok(Self {
            inputs: Tensor::zeros(&[m * n, 1]),
            labels,
            source_ids,
            view_index,
            m,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn anchor_sets(&self, j: usize) -> Result<AnchorSets> {
        let len = self.len();
        if j >= len {
            return Err(Error::Bounds { index: j, len });
        }
        let mut sets = AnchorSets {
            anchor: j,
            positives_aug: Vec::with_capacity(self.m.saturating_sub(1)),
            positives_diffsrc: Vec::new(),
            negatives: Vec::new(),
        };
        for a in (0..len).filter(|&a| a != j) {
            if self.source_ids[a] == self.source_ids[j] {
                sets.positives_aug.push(a);
            } else if self.labels[a] == self.labels[j] {
                sets.positives_diffsrc.push(a);
            } else {
                sets.negatives.push(a);
            }
        }
        Ok(sets)
    }

    pub fn all_anchor_sets(&self) -> Vec<AnchorSets> {
        (0..self.len())
            .map(|j| self.anchor_sets(j).expect("in range"))
            .collect()
    }
}
