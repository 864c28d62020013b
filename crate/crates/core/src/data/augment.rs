use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GridShape, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// One stochastic transform. Grid ops need a [`GridShape`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", deny_unknown_fields)]
pub enum AugOp {
    GaussianNoise { sigma: f64 },
    RandomScale { lo: f64, hi: f64 },
    CoordinateMask { probability: f64 },
    RandomCropShift { max_shift: usize },
    HorizontalFlip { probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub ops: Vec<AugOp>,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            ops: vec![
                AugOp::GaussianNoise { sigma: 0.1 },
                AugOp::RandomScale { lo: 0.8, hi: 1.2 },
                AugOp::CoordinateMask { probability: 0.1 },
            ],
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        Self {
            ops: Vec::new(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            let ok = match *op {
                AugOp::GaussianNoise { sigma } => sigma >= 0.0 && sigma.is_finite(),
                AugOp::RandomScale { lo, hi } => lo > 0.0 && lo <= hi && hi.is_finite(),
                AugOp::CoordinateMask { probability } | AugOp::HorizontalFlip { probability } => {
                    (0.0..=1.0).contains(&probability)
                }
                AugOp::RandomCropShift { .. } => true,
            };
            if !ok {
                return Err(Error::Config(format!("invalid augmentation {op:?}")));
            }
        }
        Ok(())
    }

    pub fn needs_grid(&self) -> bool {
        self.ops
            .iter()
            .any(|op| matches!(op, AugOp::RandomCropShift { .. } | AugOp::HorizontalFlip { .. }))
    }
}

/// Applies every op in order. Randomness is keyed by
/// `(config seed, source_id, draw_index)`, so a view is reproducible on its own.
pub fn augment(
    sample: &LabeledSample,
    config: &AugmentationConfig,
    draw_index: u64,
    grid: Option<GridShape>,
) -> Result<Vec<f64>> {
    let mut rng = seeded(derive_seed(config.rng_seed, &[sample.source_id, draw_index]));
    let mut x = sample.features.clone();
    for op in &config.ops {
        match *op {
            AugOp::GaussianNoise { sigma } => {
                if sigma > 0.0 {
                    for v in &mut x {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += sigma * z;
                    }
                }
            }
            AugOp::RandomScale { lo, hi } => {
                let s = if lo == hi { lo } else { rng.random_range(lo..hi) };
                x.iter_mut().for_each(|v| *v *= s);
            }
            AugOp::CoordinateMask { probability } => {
                for v in &mut x {
                    if rng.random::<f64>() < probability {
                        *v = 0.0;
                    }
                }
            }
            AugOp::RandomCropShift { max_shift } => {
                let g = require_grid(grid, x.len(), "random_crop_shift")?;
                let m = max_shift as i64;
                let dy = rng.random_range(-m..=m);
                let dx = rng.random_range(-m..=m);
                x = shift(&x, g, dy, dx);
            }
            AugOp::HorizontalFlip { probability } => {
                let g = require_grid(grid, x.len(), "horizontal_flip")?;
                if rng.random::<f64>() < probability {
                    for row in x.chunks_mut(g.width) {
                        row.reverse();
                    }
                }
            }
        }
    }
    Ok(x)
}

fn require_grid(grid: Option<GridShape>, len: usize, op: &str) -> Result<GridShape> {
    match grid {
        Some(g) if g.len() == len => Ok(g),
        _ => Err(Error::Shape(format!("{op} needs grid-shaped input"))),
    }
}

/// Translates the image by `(dy, dx)`, filling uncovered pixels with zero.
fn shift(x: &[f64], g: GridShape, dy: i64, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let (h, w) = (g.height as i64, g.width as i64);
    for r in 0..h {
        let sr = r - dy;
        if !(0..h).contains(&sr) {
            continue;
        }
        for c in 0..w {
            let sc = c - dx;
            if (0..w).contains(&sc) {
                out[(r * w + c) as usize] = x[(sr * w + sc) as usize];
            }
        }
    }
    out
}
