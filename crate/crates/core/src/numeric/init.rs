use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Xavier/Glorot uniform initialization for a `[fan_in, fan_out]` matrix.
///
/// For shapes with more than two dimensions the leading entries are folded
/// into the receptive field, as in the usual convention.
pub fn xavier_uniform(shape: &[usize], seed: u64) -> Result<Tensor> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "xavier init needs at least 2 dimensions, got {shape:?}"
        )));
    }
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[0] * receptive;
    let fan_out = shape[1] * receptive;
    let bound = xavier_bound(fan_in, fan_out);
    let mut rng = seeded(seed);
    let count: usize = shape.iter().product();
    let values = (0..count).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), values)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
