//! The three-phase training protocol: contrastive pre-training, fine-tuning
//! with mean-initialized base classifiers, and update-free incremental
//! sessions with an evaluation after every session.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batching::{build_multiview_batch, build_single_view_batch, MultiViewBatch};
use crate::data::{AugmentationConfig, ClassId, Dataset, SessionPlan, TrainTestSplit};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, cskd_pairs, finetune_loss, ContrastiveConfig, LossVariant};
use crate::metrics::{AccuracyMatrix, SessionAccuracy};
use crate::model::{ClassifierOrigin, ModelConfig, Network};
use crate::numeric::{sgd_step, xavier_uniform, Graph, OptimizerConfig, ParamStore, Schedule, Tensor, Var};
use crate::rng::{derive_seed, seeded};

const CLASSIFIER: &str = "classifier.weight";
const TEACHER: &str = "teacher/";

// seed-stream tags
const TAG_INIT: u64 = 1;
const TAG_PRETRAIN: u64 = 2;
const TAG_FINETUNE: u64 = 3;
const TAG_CE_HEAD: u64 = 4;
const TAG_BASE_RANDOM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub contrastive: ContrastiveConfig,
    pub variant: LossVariant,
    /// Route contrastive losses through the projection head; otherwise they
    /// act on normalized extractor features.
    pub use_head: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            optimizer: OptimizerConfig {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: Schedule::StepDecay {
                    gamma: 0.1,
                    interval: 150,
                },
            },
            contrastive: ContrastiveConfig::default(),
            variant: LossVariant::Bsc,
            use_head: true,
            augmentation: AugmentationConfig::default(),
        }
    }
}

/// How base-session classifiers start fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseInit {
    #[default]
    Mean,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub lambda: f64,
    pub cskd: bool,
    pub base_init: BaseInit,
    /// Replaces the pre-training augmentation when set.
    pub augmentation: Option<AugmentationConfig>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerConfig {
                lr: 0.2,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: Schedule::Cosine { total_steps: None },
            },
            lambda: 1.0,
            cskd: true,
            base_init: BaseInit::Mean,
            augmentation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pretrain;
        p.optimizer.validate()?;
        p.contrastive.validate()?;
        p.augmentation.validate()?;
        if p.epochs > 0 && p.batch_size < if p.variant.is_contrastive() { 2 } else { 1 } {
            return Err(Error::Config(format!(
                "pretrain.batch_size must be ≥ 2 for contrastive variants, got {}",
                p.batch_size
            )));
        }
        let f = &self.finetune;
        f.optimizer.validate()?;
        if let Some(a) = &f.augmentation {
            a.validate()?;
        }
        if f.enabled && f.epochs > 0 && f.batch_size == 0 {
            return Err(Error::Config("finetune.batch_size must be positive".into()));
        }
        if !(f.lambda >= 0.0 && f.lambda.is_finite()) {
            return Err(Error::Config(format!("finetune.lambda must be ≥ 0, got {}", f.lambda)));
        }
        Ok(())
    }

    fn finetune_augmentation(&self) -> &AugmentationConfig {
        self.finetune
            .augmentation
            .as_ref()
            .unwrap_or(&self.pretrain.augmentation)
    }
}

/// Checkpoint saving policy.
#[derive(Debug, Clone, Default)]
pub struct CheckpointPolicy {
    /// Directory for checkpoint files; `None` disables saving.
    pub dir: Option<PathBuf>,
    /// Also save every `k` pre-training epochs when `Some(k)`.
    pub pretrain_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub phase: String,
    pub epoch: usize,
    pub path: PathBuf,
}

impl CheckpointPolicy {
    fn save(&self, net: &Network, phase: &str, epoch: usize, out: &mut Vec<CheckpointRef>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = format!("{phase}_{epoch:05}.json");
        net.save(&dir.join(&file))?;
        out.push(CheckpointRef {
            phase: phase.into(),
            epoch,
            path: PathBuf::from(file),
        });
        Ok(())
    }
}

/// Mean loss per epoch.
pub type LossHistory = Vec<f64>;

fn diverged(phase: &'static str, epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged {
            phase,
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => Error::in_phase(format!("{phase} epoch {epoch} batch {batch}"))(other),
    }
}

fn check_loss(phase: &'static str, epoch: usize, batch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            phase,
            epoch,
            batch,
            loss,
        })
    }
}

fn shuffled_batches(indices: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(&mut seeded(seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn class_positions(classes: &[ClassId], labels: &[ClassId]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| classes.iter().position(|c| c == l).ok_or(Error::Label(*l)))
        .collect()
}

fn sorted_classes(data: &Dataset, indices: &[usize]) -> Vec<ClassId> {
    let set: BTreeSet<ClassId> = indices.iter().map(|&i| data.samples[i].label).collect();
    set.into_iter().collect()
}

/// Phase 1. Trains θ (and φ when the head is used) on the base training split.
pub fn pretrain(net: &mut Network, train: &Dataset, indices: &[usize], cfg: &PhaseConfig) -> Result<LossHistory> {
    pretrain_with_checkpoints(net, train, indices, cfg, &CheckpointPolicy::default(), &mut Vec::new())
}

pub fn pretrain_with_checkpoints(
    net: &mut Network,
    train: &Dataset,
    indices: &[usize],
    cfg: &PhaseConfig,
    policy: &CheckpointPolicy,
    saved: &mut Vec<CheckpointRef>,
) -> Result<LossHistory> {
    cfg.validate()?;
    let p = &cfg.pretrain;
    if p.epochs == 0 {
        return Ok(Vec::new());
    }
    if indices.is_empty() {
        return Err(Error::Capacity("empty base training split".into()));
    }
    let contrastive = p.variant.is_contrastive();
    let mut store = if contrastive && p.use_head {
        let mut s = net.extractor_params();
        for (name, param) in net.head_params().iter() {
            s.insert(name, param.value.clone())?;
        }
        s
    } else {
        net.extractor_params()
    };
    let classes = sorted_classes(train, indices);
    if !contrastive {
        let w = xavier_uniform(
            &[net.feature_dim(), classes.len()],
            derive_seed(cfg.seed, &[TAG_CE_HEAD]),
        )?;
        store.insert(CLASSIFIER, w.transpose())?;
    }
    let optimizer = p.optimizer.with_horizon(p.epochs);
    let mut history = Vec::with_capacity(p.epochs);
    for epoch in 0..p.epochs {
        let batches = shuffled_batches(
            indices,
            p.batch_size,
            derive_seed(cfg.seed, &[TAG_PRETRAIN, epoch as u64]),
        );
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let samples: Vec<_> = idx.iter().map(|&i| &train.samples[i]).collect();
            let draw = derive_seed(cfg.seed, &[TAG_PRETRAIN, epoch as u64, b as u64]);
            let loss = (|| -> Result<f64> {
                let mut g = Graph::new();
                let out = if contrastive {
                    let batch = build_multiview_batch(&samples, p.contrastive.m, &p.augmentation, draw, train.grid)?;
                    contrastive_forward(&mut g, net, &store, &batch, p)?
                } else {
                    let batch = build_single_view_batch(&samples, &p.augmentation, draw, train.grid)?;
                    let targets = class_positions(&classes, &batch.labels)?;
                    let x = g.constant(batch.inputs)?;
                    let z = net.forward_features(&mut g, &store, "", x)?;
                    let w = store.bind(&mut g, "", CLASSIFIER)?;
                    let logits = net.classifier_logits(&mut g, z, w)?;
                    g.cross_entropy(logits, &targets)?
                };
                let value = g.value(out).item();
                check_loss("pretrain", epoch, b, value)?;
                let grads = g.backward(out)?;
                store.absorb_grads(&g, &grads, "");
                sgd_step(&mut store, &optimizer, epoch)?;
                Ok(value)
            })()
            .map_err(diverged("pretrain", epoch, b))?;
            total += loss;
        }
        history.push(total / batches.len() as f64);
        if policy
            .pretrain_every
            .is_some_and(|k| k > 0 && (epoch + 1) % k == 0 && epoch + 1 < p.epochs)
        {
            net.params.update_from(&without(&store, CLASSIFIER))?;
            policy.save(net, "pretrain", epoch + 1, saved)?;
        }
    }
    net.params.update_from(&without(&store, CLASSIFIER))?;
    Ok(history)
}

fn contrastive_forward(
    g: &mut Graph,
    net: &Network,
    store: &ParamStore,
    batch: &MultiViewBatch,
    p: &PretrainConfig,
) -> Result<Var> {
    let x = g.constant(batch.inputs.clone())?;
    let z = net.forward_features(g, store, "", x)?;
    let h = if p.use_head {
        net.forward_projection(g, store, "", z)?
    } else {
        g.normalize_rows(z)?
    };
    contrastive_loss(g, batch, h, p.variant, &p.contrastive)
}

fn without(store: &ParamStore, name: &str) -> ParamStore {
    let mut out = ParamStore::new();
    for (n, p) in store.iter().filter(|(n, _)| *n != name) {
        out.insert(n, p.value.clone()).expect("names are unique");
    }
    out
}

/// Phase 2. Installs base classifiers, then (when enabled) optimizes θ and
/// `w_{C¹}` with cross-entropy plus optional cs-kd. The head is not used.
pub fn finetune(net: &mut Network, train: &Dataset, indices: &[usize], cfg: &PhaseConfig) -> Result<LossHistory> {
    cfg.validate()?;
    let f = &cfg.finetune;
    if indices.is_empty() {
        return Err(Error::Capacity("empty base training split".into()));
    }
    let classes = sorted_classes(train, indices);
    match f.base_init {
        BaseInit::Mean => net.init_classifiers_from_means(train, indices, &classes)?,
        BaseInit::Random => net.init_classifiers_random(&classes, derive_seed(cfg.seed, &[TAG_BASE_RANDOM]))?,
    }
    if !f.enabled || f.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut store = net.extractor_params();
    store.insert(CLASSIFIER, net.classifiers.matrix(&classes)?)?;
    let optimizer = f.optimizer.with_horizon(f.epochs);
    let aug = cfg.finetune_augmentation();
    let m = cfg.pretrain.contrastive.m;
    let mut history = Vec::with_capacity(f.epochs);
    for epoch in 0..f.epochs {
        let teacher = f.cskd.then(|| store.clone());
        let batches = shuffled_batches(
            indices,
            f.batch_size,
            derive_seed(cfg.seed, &[TAG_FINETUNE, epoch as u64]),
        );
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let samples: Vec<_> = idx.iter().map(|&i| &train.samples[i]).collect();
            let draw = derive_seed(cfg.seed, &[TAG_FINETUNE, epoch as u64, b as u64]);
            let loss = (|| -> Result<f64> {
                let batch = build_multiview_batch(&samples, m, aug, draw, train.grid)?;
                let targets = class_positions(&classes, &batch.labels)?;
                let mut g = Graph::new();
                let x = g.constant(batch.inputs.clone())?;
                let z = net.forward_features(&mut g, &store, "", x)?;
                let w = store.bind(&mut g, "", CLASSIFIER)?;
                let logits = net.classifier_logits(&mut g, z, w)?;
                let out = match &teacher {
                    Some(t) => {
                        let zt = net.forward_features(&mut g, t, TEACHER, x)?;
                        let wt = t.bind(&mut g, TEACHER, CLASSIFIER)?;
                        let lt = net.classifier_logits(&mut g, zt, wt)?;
                        let pairs = cskd_pairs(&batch, derive_seed(draw, &[1]));
                        finetune_loss(&mut g, logits, &targets, Some((lt, &pairs)), f.lambda)?
                    }
                    None => finetune_loss(&mut g, logits, &targets, None, 0.0)?,
                };
                let value = g.value(out).item();
                check_loss("finetune", epoch, b, value)?;
                let grads = g.backward(out)?;
                store.absorb_grads(&g, &grads, "");
                sgd_step(&mut store, &optimizer, epoch)?;
                Ok(value)
            })()
            .map_err(diverged("finetune", epoch, b))?;
            total += loss;
        }
        history.push(total / batches.len() as f64);
    }
    net.params.update_from(&without(&store, CLASSIFIER))?;
    let w = store.get(CLASSIFIER)?;
    let origin = match f.base_init {
        BaseInit::Mean => ClassifierOrigin::OptimizedFromMean,
        BaseInit::Random => ClassifierOrigin::RandomInit,
    };
    for (k, &c) in classes.iter().enumerate() {
        net.classifiers.update(c, w.row(k).to_vec(), origin)?;
    }
    Ok(history)
}

/// Phase 3 for session `t > 1`: appends mean-initialized classifiers for the
/// session's classes. Nothing else in the network changes.
pub fn run_incremental_session(net: &mut Network, plan: &SessionPlan, train: &Dataset, t: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::Config(format!("incremental sessions start at t = 2, got {t}")));
    }
    let classes = plan.session_classes(t)?;
    if let Some(&c) = classes.iter().find(|&&c| net.classifiers.contains(c)) {
        return Err(Error::Disjointness(c));
    }
    net.init_classifiers_from_means(train, plan.train_indices(t)?, classes)
}

/// Test-set features computed once for a frozen extractor.
pub struct TestFeatures {
    pub features: Tensor,
    pub labels: Vec<ClassId>,
}

impl TestFeatures {
    pub fn compute(net: &Network, test: &Dataset) -> Result<Self> {
        let idx: Vec<usize> = (0..test.len()).collect();
        Ok(Self {
            features: net.features_of(test, &idx)?,
            labels: test.samples.iter().map(|s| s.label).collect(),
        })
    }
}

/// Accuracy over the scopes `C^{1:t}`, `C¹` and `C^{2:t}`, scoring only
/// against classes introduced up to session `t`.
pub fn evaluate_session(net: &Network, plan: &SessionPlan, test: &Dataset, t: usize) -> Result<SessionAccuracy> {
    evaluate_with_features(net, plan, &TestFeatures::compute(net, test)?, t)
}

pub fn evaluate_with_features(
    net: &Network,
    plan: &SessionPlan,
    test: &TestFeatures,
    t: usize,
) -> Result<SessionAccuracy> {
    let active = plan.classes_through(t)?;
    let base: BTreeSet<ClassId> = plan.base_classes.iter().copied().collect();
    let active_set: BTreeSet<ClassId> = active.iter().copied().collect();
    let rows: Vec<usize> = (0..test.labels.len())
        .filter(|&r| active_set.contains(&test.labels[r]))
        .collect();
    if rows.is_empty() {
        return Err(Error::Capacity(format!(
            "no test samples for the classes of sessions 1..={t}"
        )));
    }
    let z = test.features.gather_rows(&rows)?;
    let predictions = net.logits(&z, &active)?;
    let (mut all, mut b_hit, mut b_n, mut n_hit, mut n_n) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (k, &r) in rows.iter().enumerate() {
        let label = test.labels[r];
        let hit = predictions[k].predict() == label;
        all += hit as usize;
        if base.contains(&label) {
            b_n += 1;
            b_hit += hit as usize;
        } else {
            n_n += 1;
            n_hit += hit as usize;
        }
    }
    let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    Ok(SessionAccuracy {
        t,
        acc_all: all as f64 / rows.len() as f64,
        acc_base: frac(b_hit, b_n),
        acc_new: if t == 1 { None } else { frac(n_hit, n_n) },
        num_active_classes: active.len(),
    })
}

/// Wall-clock seconds per phase. Kept apart from [`RunRecord`], which must be
/// byte-identical across reruns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub pretrain_s: f64,
    pub finetune_s: f64,
    pub sessions_s: f64,
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub network: Network,
    pub sessions: AccuracyMatrix,
    pub checkpoints: Vec<CheckpointRef>,
    pub pretrain_loss: LossHistory,
    pub finetune_loss: LossHistory,
    pub timings: PhaseTimings,
}

/// Fresh network for a run, seeded from the phase seed.
pub fn init_network(d_in: usize, model: &ModelConfig, cfg: &PhaseConfig) -> Result<Network> {
    Network::new(d_in, model, derive_seed(cfg.seed, &[TAG_INIT]))
}

/// Pre-train → fine-tune → sessions `2..=T`, evaluating after every session.
pub fn run_full(
    model: &ModelConfig,
    cfg: &PhaseConfig,
    split: &TrainTestSplit,
    plan: &SessionPlan,
    policy: &CheckpointPolicy,
) -> Result<RunOutcome> {
    cfg.validate()?;
    plan.check_disjoint()?;
    let mut checkpoints = Vec::new();
    let mut net = init_network(split.train.d_in, model, cfg)?;
    policy.save(&net, "init", 0, &mut checkpoints)?;
    let start = Instant::now();
    let pretrain_loss =
        pretrain_with_checkpoints(&mut net, &split.train, &plan.base_train, cfg, policy, &mut checkpoints)
            .map_err(Error::in_phase("pretrain"))?;
    let pretrain_s = start.elapsed().as_secs_f64();
    policy.save(&net, "pretrain", cfg.pretrain.epochs, &mut checkpoints)?;
    let mut outcome = continue_from_pretrained(net, cfg, split, plan, policy)?;
    checkpoints.append(&mut outcome.checkpoints);
    outcome.checkpoints = checkpoints;
    outcome.pretrain_loss = pretrain_loss;
    outcome.timings.pretrain_s = pretrain_s;
    Ok(outcome)
}

/// Fine-tuning and all sessions, starting from a pre-trained network.
pub fn continue_from_pretrained(
    mut net: Network,
    cfg: &PhaseConfig,
    split: &TrainTestSplit,
    plan: &SessionPlan,
    policy: &CheckpointPolicy,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut checkpoints = Vec::new();
    let start = Instant::now();
    let finetune_loss = finetune(&mut net, &split.train, &plan.base_train, cfg).map_err(Error::in_phase("finetune"))?;
    let finetune_s = start.elapsed().as_secs_f64();
    policy.save(&net, "finetune", cfg.finetune.epochs, &mut checkpoints)?;
    let start = Instant::now();
    let test = TestFeatures::compute(&net, &split.test).map_err(Error::in_phase("evaluation"))?;
    let mut sessions = AccuracyMatrix::default();
    sessions.push(evaluate_with_features(&net, plan, &test, 1).map_err(Error::in_phase("session 1"))?)?;
    for t in 2..=plan.num_sessions() {
        let phase = format!("session {t}");
        run_incremental_session(&mut net, plan, &split.train, t).map_err(Error::in_phase(phase.clone()))?;
        sessions.push(evaluate_with_features(&net, plan, &test, t).map_err(Error::in_phase(phase))?)?;
    }
    Ok(RunOutcome {
        network: net,
        sessions,
        checkpoints,
        pretrain_loss: Vec::new(),
        finetune_loss,
        timings: PhaseTimings {
            pretrain_s: 0.0,
            finetune_s,
            sessions_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Serialized result of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub sessions: Vec<SessionAccuracy>,
    pub checkpoints: Vec<CheckpointRef>,
    pub pretrain_loss: LossHistory,
    pub finetune_loss: LossHistory,
}

impl RunRecord {
    pub fn new(config: serde_json::Value, outcome: &RunOutcome) -> Self {
        Self {
            config,
            sessions: outcome.sessions.entries.clone(),
            checkpoints: outcome.checkpoints.clone(),
            pretrain_loss: outcome.pretrain_loss.clone(),
            finetune_loss: outcome.finetune_loss.clone(),
        }
    }

    pub fn matrix(&self) -> Result<AccuracyMatrix> {
        AccuracyMatrix::new(self.sessions.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
