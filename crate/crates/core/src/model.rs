//! Feature extractor, projection head and classifier bank.
//!
//! The extractor is a stack of affine + ReLU layers (the last layer keeps its
//! ReLU, so features are elementwise non-negative). The projection head is
//! affine → ReLU → affine followed by row-wise l2 normalization. Parameters are
//! stored under `extractor.{i}.{weight,bias}` and `head.{i}.{weight,bias}`;
//! weights are `[fan_in, fan_out]` and applied as `x · W + b`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::losses::LogitDistribution;
use crate::numeric::tensor::{dot, l2_norm, l2_normalize, NORM_EPS};
use crate::numeric::{xavier_uniform, Graph, ParamStore, Tensor, Var};
use crate::rng::derive_seed;

/// How classifier logits are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// `cos(z, w_c) / τ_ce`
    #[default]
    Cosine,
    /// `z · w_c / τ_ce`
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Widths of the extractor layers; the last entry is the feature dim `D`.
    pub extractor_dims: Vec<usize>,
    pub head_hidden: usize,
    pub projection_dim: usize,
    pub tau_ce: f64,
    pub scoring: Scoring,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor_dims: vec![64, 64, 64],
            head_hidden: 64,
            projection_dim: 32,
            tau_ce: 0.1,
            scoring: Scoring::Cosine,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extractor_dims.is_empty() || self.extractor_dims.contains(&0) {
            return Err(Error::Config(format!(
                "extractor_dims must be non-empty and positive, got {:?}",
                self.extractor_dims
            )));
        }
        if self.head_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::Config("projection head dims must be positive".into()));
        }
        if !(self.tau_ce > 0.0) {
            return Err(Error::Config(format!("tau_ce must be positive, got {}", self.tau_ce)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.extractor_dims.last().expect("validated")
    }
}

/// Where a classifier vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierOrigin {
    MeanInit,
    OptimizedFromMean,
    RandomInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEntry {
    pub class_id: ClassId,
    pub weight: Vec<f64>,
    pub origin: ClassifierOrigin,
}

/// Class-id → weight vector, iterated in insertion (session) order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank {
    entries: Vec<ClassifierEntry>,
}

impl ClassifierBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.entries.iter().any(|e| e.class_id == class)
    }

    pub fn get(&self, class: ClassId) -> Option<&ClassifierEntry> {
        self.entries.iter().find(|e| e.class_id == class)
    }

    pub fn entries(&self) -> &[ClassifierEntry] {
        &self.entries
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.entries.iter().map(|e| e.class_id).collect()
    }

    pub fn insert(&mut self, class: ClassId, weight: Vec<f64>, origin: ClassifierOrigin) -> Result<()> {
        if self.contains(class) {
            return Err(Error::Conflict(class));
        }
        self.entries.push(ClassifierEntry {
            class_id: class,
            weight,
            origin,
        });
        Ok(())
    }

    /// Replaces an existing vector, e.g. after fine-tuning.
    pub fn update(&mut self, class: ClassId, weight: Vec<f64>, origin: ClassifierOrigin) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.class_id == class)
            .ok_or(Error::Label(class))?;
        e.weight = weight;
        e.origin = origin;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Stacks the vectors of `classes` into a `|classes| × D` matrix.
    pub fn matrix(&self, classes: &[ClassId]) -> Result<Tensor> {
        if classes.is_empty() {
            return Err(Error::Config("no active classes".into()));
        }
        let rows = classes
            .iter()
            .map(|&c| self.get(c).map(|e| e.weight.as_slice()).ok_or(Error::Label(c)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub d_in: usize,
    pub config: ModelConfig,
    pub params: ParamStore,
    pub classifiers: ClassifierBank,
}

pub(crate) fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.{layer}.weight")
}

pub(crate) fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.{layer}.bias")
}

impl Network {
    /// Xavier-uniform weights and zero biases.
    pub fn new(d_in: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_in == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut fan_in = d_in;
        for (i, &width) in config.extractor_dims.iter().enumerate() {
            params.insert(
                weight_name("extractor", i),
                xavier_uniform(&[fan_in, width], derive_seed(seed, &[0, i as u64]))?,
            )?;
            params.insert(bias_name("extractor", i), Tensor::zeros(&[width]))?;
            fan_in = width;
        }
        let d = config.feature_dim();
        let head = [(d, config.head_hidden), (config.head_hidden, config.projection_dim)];
        for (i, &(a, b)) in head.iter().enumerate() {
            params.insert(
                weight_name("head", i),
                xavier_uniform(&[a, b], derive_seed(seed, &[1, i as u64]))?,
            )?;
            params.insert(bias_name("head", i), Tensor::zeros(&[b]))?;
        }
        Ok(Self {
            d_in,
            config: config.clone(),
            params,
            classifiers: ClassifierBank::default(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn extractor_layers(&self) -> usize {
        self.config.extractor_dims.len()
    }

    /// Extractor parameters only (θ).
    pub fn extractor_params(&self) -> ParamStore {
        self.params.subset("extractor.")
    }

    pub fn head_params(&self) -> ParamStore {
        self.params.subset("head.")
    }

    /// `z = f_θ(x)` on the tape, binding parameters from `store` under `ns`.
    pub fn forward_features(&self, g: &mut Graph, store: &ParamStore, ns: &str, x: Var) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.d_in {
            return Err(Error::dim(
                "forward_features",
                format!("input has {cols} columns, extractor expects {}", self.d_in),
            ));
        }
        let mut h = x;
        for i in 0..self.extractor_layers() {
            let w = store.bind(g, ns, &weight_name("extractor", i))?;
            let b = store.bind(g, ns, &bias_name("extractor", i))?;
            let a = g.matmul(h, w)?;
            let a = g.add_row(a, b)?;
            h = g.relu(a)?;
        }
        Ok(h)
    }

    /// `normalize(h_φ(z))` on the tape.
    pub fn forward_projection(&self, g: &mut Graph, store: &ParamStore, ns: &str, z: Var) -> Result<Var> {
        let cols = g.value(z).cols();
        if cols != self.feature_dim() {
            return Err(Error::dim(
                "forward_projection",
                format!("features have {cols} columns, head expects {}", self.feature_dim()),
            ));
        }
        let w0 = store.bind(g, ns, &weight_name("head", 0))?;
        let b0 = store.bind(g, ns, &bias_name("head", 0))?;
        let w1 = store.bind(g, ns, &weight_name("head", 1))?;
        let b1 = store.bind(g, ns, &bias_name("head", 1))?;
        let a = g.matmul(z, w0)?;
        let a = g.add_row(a, b0)?;
        let a = g.relu(a)?;
        let p = g.matmul(a, w1)?;
        let p = g.add_row(p, b1)?;
        g.normalize_rows(p)
    }

    /// Class logits `[rows, classes]` for features `z` against classifier rows `w`.
    pub fn classifier_logits(&self, g: &mut Graph, z: Var, w: Var) -> Result<Var> {
        let scores = match self.config.scoring {
            Scoring::Cosine => {
                let zn = g.normalize_rows(z)?;
                let wn = g.normalize_rows(w)?;
                g.matmul_t(zn, wn)?
            }
            Scoring::Dot => g.matmul_t(z, w)?,
        };
        g.scale(scores, 1.0 / self.config.tau_ce)
    }

    /// Inference-only features.
    pub fn features(&self, inputs: &Tensor) -> Result<Tensor> {
        if inputs.cols() != self.d_in {
            return Err(Error::dim(
                "features",
                format!("input has {} columns, extractor expects {}", inputs.cols(), self.d_in),
            ));
        }
        let mut h = inputs.clone();
        for i in 0..self.extractor_layers() {
            let w = self.params.get(&weight_name("extractor", i))?;
            let b = self.params.get(&bias_name("extractor", i))?;
            h = h.matmul(w)?.add_row(b)?.relu();
        }
        Ok(h)
    }

    /// Features of `indices` in `data`, one row per index.
    pub fn features_of(&self, data: &Dataset, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Capacity("no samples to featurize".into()));
        }
        let rows: Vec<&[f64]> = indices.iter().map(|&i| data.samples[i].features.as_slice()).collect();
        self.features(&Tensor::from_rows(&rows)?)
    }

    /// Inference-only projections.
    pub fn projections(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let z = g.constant(features.clone())?;
        let h = self.forward_projection(&mut g, &self.params, "", z)?;
        Ok(g.value(h).clone())
    }

    /// Logits of each feature row over `active` classes.
    pub fn logits(&self, features: &Tensor, active: &[ClassId]) -> Result<Vec<LogitDistribution>> {
        if active.is_empty() {
            return Err(Error::Config("empty active class set".into()));
        }
        let w = self.classifiers.matrix(active)?;
        let scale = 1.0 / self.config.tau_ce;
        let w_rows: Vec<Vec<f64>> = match self.config.scoring {
            Scoring::Cosine => (0..w.rows()).map(|c| l2_normalize(w.row(c))).collect::<Result<_>>()?,
            Scoring::Dot => (0..w.rows()).map(|c| w.row(c).to_vec()).collect(),
        };
        (0..features.rows())
            .map(|i| {
                let z = features.row(i);
                let z_norm = match self.config.scoring {
                    Scoring::Cosine => {
                        let n = l2_norm(z);
                        if n <= NORM_EPS {
                            return Err(Error::DegenerateVector { norm: n });
                        }
                        n
                    }
                    Scoring::Dot => 1.0,
                };
                let logits = w_rows
                    .iter()
                    .map(|w| (dot(z, w) / z_norm).clamp(-f64::MAX, f64::MAX) * scale)
                    .collect();
                LogitDistribution::new(logits, active.to_vec())
            })
            .collect()
    }

    /// Installs `w_c = mean_k z_k/‖z_k‖` over each class's samples in `indices`.
    pub fn init_classifiers_from_means(
        &mut self,
        data: &Dataset,
        indices: &[usize],
        classes: &[ClassId],
    ) -> Result<()> {
        for &c in classes {
            if self.classifiers.contains(c) {
                return Err(Error::Conflict(c));
            }
        }
        let means = self.mean_classifiers(data, indices, classes)?;
        for (c, w) in classes.iter().zip(means) {
            self.classifiers.insert(*c, w, ClassifierOrigin::MeanInit)?;
        }
        Ok(())
    }

    /// Mean-of-normalized-features vectors without installing them.
    pub fn mean_classifiers(&self, data: &Dataset, indices: &[usize], classes: &[ClassId]) -> Result<Vec<Vec<f64>>> {
        let mut by_class: BTreeMap<ClassId, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
        for &i in indices {
            if let Some(v) = by_class.get_mut(&data.samples[i].label) {
                v.push(i);
            }
        }
        classes
            .iter()
            .map(|c| {
                let idx = &by_class[c];
                if idx.is_empty() {
                    return Err(Error::Capacity(format!("class {c} has no training samples")));
                }
                let z = self.features_of(data, idx)?;
                let rows: Vec<&[f64]> = (0..z.rows()).map(|r| z.row(r)).collect();
                mean_of_normalized(&rows)
            })
            .collect()
    }

    /// Xavier-uniform classifier vectors for `classes`.
    pub fn init_classifiers_random(&mut self, classes: &[ClassId], seed: u64) -> Result<()> {
        for &c in classes {
            if self.classifiers.contains(c) {
                return Err(Error::Conflict(c));
            }
        }
        if classes.is_empty() {
            return Ok(());
        }
        let d = self.feature_dim();
        let w = xavier_uniform(&[d, classes.len()], seed)?.transpose();
        for (k, &c) in classes.iter().enumerate() {
            self.classifiers
                .insert(c, w.row(k).to_vec(), ClassifierOrigin::RandomInit)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&Checkpoint::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.into_network()
    }
}

/// `(1/K) Σ_k v_k/‖v_k‖`.
pub fn mean_of_normalized(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Capacity("mean of zero vectors".into()))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        let u = l2_normalize(v)?;
        for (a, x) in acc.iter_mut().zip(&u) {
            *a += x;
        }
    }
    let k = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

const CHECKPOINT_FORMAT: &str = "bsc-fscil-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    d_in: usize,
    model: ModelConfig,
    params: ParamStore,
    classifiers: ClassifierBank,
}

impl From<&Network> for Checkpoint {
    fn from(n: &Network) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            d_in: n.d_in,
            model: n.config.clone(),
            params: n.params.clone(),
            classifiers: n.classifiers.clone(),
        }
    }
}

impl Checkpoint {
    fn into_network(self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.model.validate()?;
        let reference = Network::new(self.d_in, &self.model, 0)?;
        for (name, p) in reference.params.iter() {
            let got = self.params.get(name)?;
            if got.shape() != p.value.shape() {
                return Err(Error::Schema(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if self.params.len() != reference.params.len() {
            return Err(Error::Schema("checkpoint has unexpected parameters".into()));
        }
        let d = self.model.feature_dim();
        if self.classifiers.entries().iter().any(|e| e.weight.len() != d) {
            return Err(Error::Schema("classifier dimension differs from feature dim".into()));
        }
        Ok(Network {
            d_in: self.d_in,
            config: self.model,
            params: self.params,
            classifiers: self.classifiers,
        })
    }
}
