//! Time-gap-aware training for biomarker classification from wearable PPG.
//!
//! Every training segment carries the time gap (in days) to its nearest lab
//! draw. During training its loss contribution is scaled by a decay weight
//! `g(rate * gap)` where `rate = softplus(raw)` is learned per biomarker, and a
//! mean-weight bonus keeps the weights from collapsing to zero. Inference never
//! sees the gap.
//!
//! Module map:
//!
//! - [`cohort`]: lab records, segment metadata, windowed label attachment,
//!   two-extreme quantile labels, per-subject capping, subject-stratified folds.
//! - [`signal`]: segmentation, quality index, zero-phase band-pass, z-score.
//! - [`features`]: beat detection and the 34 handcrafted features.
//! - [`decay`]: decay families, softplus rate, weights and their derivatives.
//! - [`objective`]: weighted BCE with the mean-weight bonus and its gradients.
//! - [`model`]: the 34-32-1 scorer, backpropagation and the training loop.
//! - [`baseline`]: random forest over the same features.
//! - [`eval`]: AUROC/AUPRC, subject aggregation, cross-validation, comparisons.
//! - [`synth`]: synthetic waveforms and cohorts with a known staleness process.

// `!(x > 0.0)` is used on purpose so NaN is rejected alongside nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cohort;
pub mod decay;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod model;
pub mod objective;
pub mod signal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// Seconds per day; all time gaps are expressed in days.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// SHA-256 of arbitrary bytes as lowercase hex.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Derives an independent 64-bit seed from a base seed and a textual key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let out = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}
