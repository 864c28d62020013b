//! Central finite-difference gradient checking.

use rand::Rng as _;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    /// Fraction of coordinates per parameter to probe; at least one is always checked.
    pub sample_fraction: f64,
    pub seed: u64,
    /// Multiplies analytic gradients before comparison. Left at 1.0 outside of
    /// tests that confirm the checker catches a wrong gradient.
    pub corrupt_scale: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            sample_fraction: 0.25,
            seed: 0,
            corrupt_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Evaluates `lossfn` once and returns its value.
pub fn eval_loss<F>(lossfn: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = lossfn(&mut g, store)?;
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(v)
}

/// Reverse-mode gradients of `lossfn` for every parameter bound under `namespace`.
pub fn analytic_gradients<F>(lossfn: &F, store: &ParamStore, namespace: &str) -> Result<ParamStore>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = lossfn(&mut g, store)?;
    if !g.value(out).item().is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = g.backward(out)?;
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    with_grads.absorb_grads(&g, &grads, namespace);
    Ok(with_grads)
}

/// Compares analytic gradients with `(f(p+ε) − f(p−ε)) / 2ε` on a seeded sample
/// of coordinates and returns the worst relative error, using the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradcheck<F>(lossfn: F, store: &ParamStore, config: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(&lossfn, store, "")?;
    let mut rng = seeded(config.seed);
    let mut probe = store.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: None,
        checked: 0,
    };

    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic
            .grad(&name)
            .cloned()
            .unwrap_or_else(|| super::tensor::Tensor::zeros(store.get(&name).unwrap().shape()));
        let count = grad.len();
        let mut coords: Vec<usize> = (0..count)
            .filter(|_| rng.random::<f64>() < config.sample_fraction)
            .collect();
        if coords.is_empty() {
            coords.push(rng.random_range(0..count));
        }
        for idx in coords {
            let original = store.get(&name)?.values()[idx];
            probe.get_mut(&name)?.values_mut()[idx] = original + config.eps;
            let plus = eval_loss(&lossfn, &probe)?;
            probe.get_mut(&name)?.values_mut()[idx] = original - config.eps;
            let minus = eval_loss(&lossfn, &probe)?;
            probe.get_mut(&name)?.values_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = grad.values()[idx] * config.corrupt_scale;
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_param = Some(name.clone());
                report.worst_index = Some(idx);
            }
        }
    }
    Ok(report)
}
