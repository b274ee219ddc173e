//! Network core: tensor primitives, the evidential action model with its
//! debiasing heads, and checkpoint serialization.
//!
//! Everything is computed in `f64` on the CPU with hand-rolled forward and
//! backward passes. There is no autograd: each op in [`layers`] comes as a
//! forward/backward pair, and [`model`] wires them together with explicit
//! tapes. That keeps the gradient flow — in particular where gradient
//! reversal sits and which signals are detached — visible in one place
//! instead of buried in graph bookkeeping.

pub mod checkpoint;
pub mod evidential;
pub mod layers;
pub mod model;
pub mod upsample;

pub use evidential::{pooled_evidence, uncertainty_map, PooledEvidence};
pub use model::{
    backbone_forward, decoder_forward, edl_map_forward, edl_pooled_forward, scene_map_forward,
    scene_pooled_forward, FeatureMap, Gradients, ModelConfig, ModelParams,
};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("bad input shape: {0}")]
    Shape(String),
    #[error("scene label {label} out of range for {n} scenes")]
    SceneLabel { label: usize, n: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
}

/// Hex SHA-256 of a value stream, little-endian f64 bytes. Used for golden
/// regression tests and determinism checks: equal hashes mean bit-identical
/// tensors.
pub fn hash_f64s(values: impl IntoIterator<Item = f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
