//! Balanced supervised contrastive pre-training and update-free few-shot
//! class-incremental learning on small dense inputs.
//!
//! The crate is organized bottom-up:
//!
//! * [`numeric`]: tensors, a reverse-mode tape, Xavier init, SGD, gradcheck
//! * [`data`]: datasets, session plans, augmentation
//! * [`batching`]: multi-view batches and per-anchor index sets
//! * [`losses`]: BSC / SupCon / SimCLR, cross-entropy, cs-kd
//! * [`model`]: extractor, projection head, classifier bank
//! * [`protocol`]: pre-training, fine-tuning, incremental sessions
//! * [`metrics`]: PD, NLA, BMA
//! * [`analysis`]: class-mean angles, random-vector minimum angles
//! * [`config`]: the JSON run configuration

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod batching;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod par;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
