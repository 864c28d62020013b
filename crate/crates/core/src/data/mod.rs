//! Datasets, session splits and vector-space augmentation.

mod augment;
mod io;
mod session;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugOp, AugmentationConfig};
pub use io::{load_csv, load_dataset, load_idx, save_csv, write_idx_images, write_idx_labels, DatasetSource};
pub use session::{make_session_plan, SessionPlan};
pub use synthetic::{add_offset, generate_gaussian_clusters};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub type ClassId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: ClassId,
    pub source_id: u64,
}

/// Height × width layout for image-like inputs, enabling crop-shift and flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub d_in: usize,
    pub grid: Option<GridShape>,
    pub samples: Vec<LabeledSample>,
}

/// Train and test halves of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(d_in: usize, grid: Option<GridShape>, samples: Vec<LabeledSample>) -> Result<Self> {
        let ds = Self { d_in, grid, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::Schema("input dimension must be positive".into()));
        }
        if let Some(g) = self.grid {
            if g.len() != self.d_in {
                return Err(Error::Schema(format!(
                    "grid {}x{} does not match d_in {}",
                    g.height, g.width, self.d_in
                )));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.features.len() != self.d_in {
                return Err(Error::Schema(format!(
                    "sample {} has {} features, expected {}",
                    s.source_id,
                    s.features.len(),
                    self.d_in
                )));
            }
            if !seen.insert(s.source_id) {
                return Err(Error::Schema(format!("duplicate source id {}", s.source_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut c: Vec<ClassId> = self.samples.iter().map(|s| s.label).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut map: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        map
    }

    /// Indices of samples whose label is in `classes`.
    pub fn indices_of(&self, classes: &[ClassId]) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| classes.contains(&s.label))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            d_in: self.d_in,
            grid: self.grid,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Per-class split with `round(train_fraction · n)` training samples,
    /// keeping at least one sample on each side when a class has two or more.
    pub fn split_train_test(&self, train_fraction: f64, seed: u64) -> Result<TrainTestSplit> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "train fraction must be in [0,1], got {train_fraction}"
            )));
        }
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (class, mut idx) in self.indices_by_class() {
            let mut rng = seeded(derive_seed(seed, &[u64::from(class)]));
            idx.shuffle(&mut rng);
            let n = idx.len();
            let mut k = (train_fraction * n as f64).round() as usize;
            if n >= 2 {
                k = k.clamp(1, n - 1);
            }
            let (tr, te) = idx.split_at(k.min(n));
            train_idx.extend_from_slice(tr);
            test_idx.extend_from_slice(te);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok(TrainTestSplit {
            train: self.subset(&train_idx),
            test: self.subset(&test_idx),
        })
    }
}
