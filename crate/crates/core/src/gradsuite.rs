//! Finite-difference checks of every training objective, composed through
//! the extractor (and the head for contrastive losses).

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::batching::{build_multiview_batch, MultiViewBatch};
use crate::config::GradcheckSection;
use crate::data::{AugmentationConfig, LabeledSample};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, cskd_pairs, finetune_loss, ContrastiveConfig, LossVariant};
use crate::model::Network;
use crate::numeric::{gradcheck, xavier_uniform, GradcheckConfig, GradcheckReport, Graph, ParamStore, Var};
use crate::rng::{derive_seed, seeded};

pub const LOSSES: [&str; 6] = ["bsc", "supcon", "simclr", "ce", "cskd", "finetune"];

const CLASSIFIER: &str = "classifier.weight";
const TEACHER: &str = "teacher/";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheck {
    pub loss: &'static str,
    pub report: GradcheckReport,
}

impl LossCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.report.checked > 0 && self.report.max_rel_error <= tolerance
    }
}

struct Fixture {
    net: Network,
    batch: MultiViewBatch,
    classes: usize,
    targets: Vec<usize>,
    pairs: Vec<usize>,
}

fn fixture(s: &GradcheckSection) -> Result<Fixture> {
    if s.labels.is_empty() {
        return Err(Error::Config(
            "gradcheck.labels: no sources, so there is nothing to check".into(),
        ));
    }
    let mut net = Network::new(s.d_in, &s.model, derive_seed(s.seed, &[0]))?;
    // check at a generic point rather than at zero biases
    net.params = perturbed(&net.params, derive_seed(s.seed, &[7]), 0.1)?;
    let mut rng = seeded(derive_seed(s.seed, &[1]));
    let samples: Vec<LabeledSample> = s
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| LabeledSample {
            features: (0..s.d_in).map(|_| StandardNormal.sample(&mut rng)).collect(),
            label,
            source_id: i as u64,
        })
        .collect();
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    let batch = build_multiview_batch(
        &refs,
        s.m,
        &AugmentationConfig::default(),
        derive_seed(s.seed, &[2]),
        None,
    )?;
    let mut classes: Vec<u32> = s.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let targets = batch
        .labels
        .iter()
        .map(|l| classes.iter().position(|c| c == l).expect("label from batch"))
        .collect();
    let pairs = cskd_pairs(&batch, derive_seed(s.seed, &[3]));
    Ok(Fixture {
        net,
        batch,
        classes: classes.len(),
        targets,
        pairs,
    })
}

fn with_classifier(net: &Network, classes: usize, seed: u64) -> Result<ParamStore> {
    let mut store = net.extractor_params();
    store.insert(CLASSIFIER, xavier_uniform(&[classes, net.feature_dim()], seed)?)?;
    Ok(store)
}

fn perturbed(store: &ParamStore, seed: u64, scale: f64) -> Result<ParamStore> {
    let mut out = store.clone();
    let mut rng = seeded(seed);
    let names: Vec<String> = out.names().map(str::to_string).collect();
    for name in names {
        for v in out.get_mut(&name)?.values_mut() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v += scale * noise;
        }
    }
    Ok(out)
}

/// Runs the finite-difference check for each loss in [`LOSSES`].
pub fn run_gradcheck_suite(s: &GradcheckSection) -> Result<Vec<LossCheck>> {
    let fx = fixture(s)?;
    let cfg = GradcheckConfig {
        eps: s.eps,
        sample_fraction: s.sample_fraction,
        seed: derive_seed(s.seed, &[4]),
        corrupt_scale: s.corrupt_scale,
    };
    let contrastive = ContrastiveConfig {
        tau: s.tau,
        alpha: s.alpha,
        m: s.m,
    };
    let net = &fx.net;
    let mut head_store = net.extractor_params();
    for (name, p) in net.head_params().iter() {
        head_store.insert(name, p.value.clone())?;
    }
    let cls_store = with_classifier(net, fx.classes, derive_seed(s.seed, &[5]))?;
    let teacher = perturbed(&cls_store, derive_seed(s.seed, &[6]), 0.05)?;

    let logits = |g: &mut Graph, store: &ParamStore, ns: &str| -> Result<Var> {
        let x = g.constant(fx.batch.inputs.clone())?;
        let z = net.forward_features(g, store, ns, x)?;
        let w = store.bind(g, ns, CLASSIFIER)?;
        net.classifier_logits(g, z, w)
    };
    let teacher_logits = |g: &mut Graph| logits(g, &teacher, TEACHER);

    let mut out = Vec::with_capacity(LOSSES.len());
    for (name, variant) in [
        ("bsc", LossVariant::Bsc),
        ("supcon", LossVariant::Supcon),
        ("simclr", LossVariant::Simclr),
    ] {
        let report = gradcheck(
            |g: &mut Graph, store: &ParamStore| {
                let x = g.constant(fx.batch.inputs.clone())?;
                let z = net.forward_features(g, store, "", x)?;
                let h = net.forward_projection(g, store, "", z)?;
                contrastive_loss(g, &fx.batch, h, variant, &contrastive)
            },
            &head_store,
            &cfg,
        )?;
        out.push(LossCheck { loss: name, report });
    }
    let ce = gradcheck(
        |g: &mut Graph, store: &ParamStore| {
            let l = logits(g, store, "")?;
            g.cross_entropy(l, &fx.targets)
        },
        &cls_store,
        &cfg,
    )?;
    out.push(LossCheck { loss: "ce", report: ce });
    let cskd = gradcheck(
        |g: &mut Graph, store: &ParamStore| {
            let student = logits(g, store, "")?;
            let t = teacher_logits(g)?;
            let paired = g.gather_rows(t, &fx.pairs)?;
            g.kl_div(paired, student)
        },
        &cls_store,
        &cfg,
    )?;
    out.push(LossCheck {
        loss: "cskd",
        report: cskd,
    });
    let ft = gradcheck(
        |g: &mut Graph, store: &ParamStore| {
            let student = logits(g, store, "")?;
            let t = teacher_logits(g)?;
            finetune_loss(g, student, &fx.targets, Some((t, &fx.pairs)), s.lambda)
        },
        &cls_store,
        &cfg,
    )?;
    out.push(LossCheck {
        loss: "finetune",
        report: ft,
    });
    Ok(out)
}
