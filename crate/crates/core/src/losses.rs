//! Training objectives.
//!
//! The three contrastive losses share one weighted InfoNCE kernel
//! ([`Graph::weighted_info_nce`]); they differ only in which items count as
//! positives for an anchor and how those positives are weighted:
//!
//! | loss    | positives-aug weight | positives-diffsrc weight |
//! |---------|----------------------|--------------------------|
//! | BSC     | α                    | 1                        |
//! | SupCon  | 1                    | 1                        |
//! | SimCLR  | 1                    | 0 (treated as negatives) |
//!
//! Each anchor's weights are normalized by their sum and the result is
//! averaged over the batch.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batching::MultiViewBatch;
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::numeric::tensor::{cosine_sim, log_softmax};
use crate::numeric::{Graph, Tensor, Var};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub alpha: f64,
    pub m: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha: 1.2,
            m: 3,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.alpha > 0.0) || self.m < 2 {
            return Err(Error::Config(format!(
                "contrastive config needs tau > 0, alpha > 0, m ≥ 2: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Pre-training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Bsc,
    Supcon,
    Simclr,
    Ce,
}

impl LossVariant {
    pub fn is_contrastive(self) -> bool {
        !matches!(self, LossVariant::Ce)
    }
}

/// Class logits over an ordered class list.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDistribution {
    pub logits: Vec<f64>,
    pub class_ids: Vec<ClassId>,
}

impl LogitDistribution {
    pub fn new(logits: Vec<f64>, class_ids: Vec<ClassId>) -> Result<Self> {
        if logits.len() != class_ids.len() || logits.is_empty() {
            return Err(Error::Shape(format!(
                "{} logits for {} classes",
                logits.len(),
                class_ids.len()
            )));
        }
        Ok(Self { logits, class_ids })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        crate::numeric::tensor::softmax(&self.logits)
    }

    /// Arg-max class; ties go to the lowest class id.
    pub fn predict(&self) -> ClassId {
        let mut best = 0;
        for k in 1..self.logits.len() {
            let (l, b) = (self.logits[k], self.logits[best]);
            if l > b || (l == b && self.class_ids[k] < self.class_ids[best]) {
                best = k;
            }
        }
        self.class_ids[best]
    }
}

/// Per-anchor weights `(positives-aug, positives-diffsrc)` for each variant.
fn pair_weights(variant: LossVariant, alpha: f64) -> Result<(f64, f64)> {
    match variant {
        LossVariant::Bsc => Ok((alpha, 1.0)),
        LossVariant::Supcon => Ok((1.0, 1.0)),
        LossVariant::Simclr => Ok((1.0, 0.0)),
        LossVariant::Ce => Err(Error::Config("cross-entropy has no contrastive weights".into())),
    }
}

/// Row-major `N×N` coefficients `C[j,a]` such that the loss is
/// `−Σ_{j,a} C[j,a] · l(x_a; j)`.
pub fn contrastive_coefficients(batch: &MultiViewBatch, variant: LossVariant, alpha: f64) -> Result<Vec<f64>> {
    let (w_aug, w_diff) = pair_weights(variant, alpha)?;
    let n = batch.len();
    let mut coeffs = vec![0.0; n * n];
    for sets in batch.all_anchor_sets() {
        let norm = w_aug * sets.positives_aug.len() as f64 + w_diff * sets.positives_diffsrc.len() as f64;
        assert!(
            norm > 0.0,
            "anchor {} has no positives; multi-view batches guarantee m − 1 ≥ 1",
            sets.anchor
        );
        let scale = 1.0 / (n as f64 * norm);
        let row = &mut coeffs[sets.anchor * n..(sets.anchor + 1) * n];
        for &p in &sets.positives_aug {
            row[p] = w_aug * scale;
        }
        for &q in &sets.positives_diffsrc {
            row[q] = w_diff * scale;
        }
    }
    Ok(coeffs)
}

fn contrastive(
    g: &mut Graph,
    batch: &MultiViewBatch,
    projections: Var,
    variant: LossVariant,
    tau: f64,
    alpha: f64,
) -> Result<Var> {
    if batch.m < 2 {
        return Err(Error::Config("contrastive losses need m ≥ 2".into()));
    }
    if g.value(projections).rows() != batch.len() {
        return Err(Error::dim(
            "contrastive",
            format!("{} projections for {} items", g.value(projections).rows(), batch.len()),
        ));
    }
    let coeffs = contrastive_coefficients(batch, variant, alpha)?;
    g.weighted_info_nce(projections, coeffs, tau)
}

/// Balanced supervised contrastive loss over unit-norm projections.
pub fn bsc_loss(g: &mut Graph, batch: &MultiViewBatch, projections: Var, config: &ContrastiveConfig) -> Result<Var> {
    config.validate()?;
    contrastive(g, batch, projections, LossVariant::Bsc, config.tau, config.alpha)
}

pub fn supcon_loss(g: &mut Graph, batch: &MultiViewBatch, projections: Var, tau: f64) -> Result<Var> {
    contrastive(g, batch, projections, LossVariant::Supcon, tau, 1.0)
}

/// Label-free variant: only other views of the same source are positives.
pub fn simclr_loss(g: &mut Graph, batch: &MultiViewBatch, projections: Var, tau: f64) -> Result<Var> {
    contrastive(g, batch, projections, LossVariant::Simclr, tau, 1.0)
}

pub fn contrastive_loss(
    g: &mut Graph,
    batch: &MultiViewBatch,
    projections: Var,
    variant: LossVariant,
    config: &ContrastiveConfig,
) -> Result<Var> {
    match variant {
        LossVariant::Bsc => bsc_loss(g, batch, projections, config),
        LossVariant::Supcon => supcon_loss(g, batch, projections, config.tau),
        LossVariant::Simclr => simclr_loss(g, batch, projections, config.tau),
        LossVariant::Ce => Err(Error::Config("ce is not a contrastive loss".into())),
    }
}

/// `log [exp(sim(h_p, h_j)/τ) / Σ_{a≠j} exp(sim(h_a, h_j)/τ)]` for rows of `projections`.
pub fn softmax_term(projections: &Tensor, j: usize, p: usize, tau: f64) -> Result<f64> {
    let n = projections.rows();
    if j >= n {
        return Err(Error::Bounds { index: j, len: n });
    }
    if p >= n || p == j {
        return Err(Error::Config(format!("target {p} is not in A({j})")));
    }
    if n < 2 {
        return Err(Error::Capacity("A(j) is empty".into()));
    }
    let anchor = projections.row(j);
    let scaled: Vec<f64> = (0..n)
        .filter(|&a| a != j)
        .map(|a| cosine_sim(projections.row(a), anchor).map(|s| s / tau))
        .collect::<Result<_>>()?;
    let target = cosine_sim(projections.row(p), anchor)? / tau;
    Ok(target - crate::numeric::tensor::log_sum_exp(scaled.iter().copied()))
}

/// `−log softmax(logits)[true_class]`.
pub fn cross_entropy_loss(logits: &LogitDistribution, true_class: ClassId) -> Result<f64> {
    let k = logits
        .class_ids
        .iter()
        .position(|&c| c == true_class)
        .ok_or(Error::Label(true_class))?;
    Ok(-log_softmax(&logits.logits)[k])
}

/// `KL(softmax(teacher) ‖ softmax(student))` for one pair of logit rows.
pub fn cskd_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::Shape(format!(
            "student has {} logits, teacher {}",
            student.len(),
            teacher.len()
        )));
    }
    let log_t = log_softmax(teacher);
    let log_s = log_softmax(student);
    let kl: f64 = log_t
        .iter()
        .zip(&log_s)
        .map(|(&lt, &ls)| if lt.exp() > 0.0 { lt.exp() * (lt - ls) } else { 0.0 })
        .sum();
    Ok(kl.max(0.0))
}

/// For every item, one index drawn uniformly from its positives-aug set.
pub fn cskd_pairs(batch: &MultiViewBatch, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    batch
        .all_anchor_sets()
        .into_iter()
        .map(|s| {
            let p = &s.positives_aug;
            if p.is_empty() {
                s.anchor
            } else {
                p[rng.random_range(0..p.len())]
            }
        })
        .collect()
}

/// `L_ce + λ·L_cs`.
///
/// `student_logits` are the live model's logits for every batch item.
/// `teacher_logits` are the frozen copy's logits for every item; row
/// `pairs[j]` is matched against student row `j`. Passing `None` for the
/// teacher drops the distillation term.
pub fn finetune_loss(
    g: &mut Graph,
    student_logits: Var,
    targets: &[usize],
    teacher: Option<(Var, &[usize])>,
    lambda: f64,
) -> Result<Var> {
    let ce = g.cross_entropy(student_logits, targets)?;
    match teacher {
        Some((teacher_logits, pairs)) if lambda != 0.0 => {
            let paired = g.gather_rows(teacher_logits, pairs)?;
            let kl = g.kl_div(paired, student_logits)?;
            let scaled = g.scale(kl, lambda)?;
            g.add(ce, scaled)
        }
        _ => Ok(ce),
    }
}
