//! The weighted temporal-decay objective:
//!
//! ```text
//! total = (1/N) sum_i w_i * BCE(p_i, y_i)  -  lambda * (1/N) sum_i w_i
//! ```
//!
//! with `w_i = g(rate * gap_i)`. Weights are constants with respect to the
//! logits and differentiable with respect to the raw decay parameter. The
//! second term rewards keeping weights high so that the trivial solution
//! `rate -> inf` is not optimal.

use serde::{Deserialize, Serialize};

use crate::decay::{check_gap, DecayParam};
use crate::stats::{compensated_sum, sigmoid};
use crate::{Error, Result};

/// Default regularization weight of the mean-weight bonus.
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub bce_epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: DEFAULT_LAMBDA,
            bce_epsilon: DEFAULT_BCE_EPSILON,
        }
    }
}

/// How per-sample weights are produced during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// `w_i = g(rate * gap_i)`.
    Decay(DecayParam),
    /// `w_i = 1` for every sample; the bonus term is the constant `-lambda`.
    Uniform,
}

impl Weighting {
    fn weight_and_slope(&self, gap: f64) -> (f64, f64) {
        match self {
            Weighting::Decay(p) => (p.weight_unchecked(gap), p.dweight_draw(gap)),
            Weighting::Uniform => (1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub weighted_bce: f64,
    pub mean_weight: f64,
    pub total: f64,
    pub d_total_d_raw_alpha: f64,
    pub d_total_d_logits: Vec<f64>,
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn bce(p: f64, y: u8, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn weighted_loss(
    logits: &[f64],
    labels: &[u8],
    gaps_days: &[f64],
    param: &DecayParam,
    hp: &Hyperparams,
) -> Result<LossBreakdown> {
    weighted_loss_with(logits, labels, gaps_days, &Weighting::Decay(*param), hp)
}

pub fn weighted_loss_with(
    logits: &[f64],
    labels: &[u8],
    gaps_days: &[f64],
    weighting: &Weighting,
    hp: &Hyperparams,
) -> Result<LossBreakdown> {
    let n = logits.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "logits vs labels",
            left: n,
            right: labels.len(),
        });
    }
    if gaps_days.len() != n {
        return Err(Error::LengthMismatch {
            what: "logits vs time gaps",
            left: n,
            right: gaps_days.len(),
        });
    }
    if n == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {bad}")));
    }
    for &gap in gaps_days {
        check_gap(gap)?;
    }

    let inv_n = 1.0 / n as f64;
    let mut weighted_terms = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut alpha_terms = Vec::with_capacity(n);
    let mut d_logits = Vec::with_capacity(n);
    for i in 0..n {
        let p = sigmoid(logits[i]);
        let loss = bce(p, labels[i], hp.bce_epsilon);
        let (w, dw) = weighting.weight_and_slope(gaps_days[i]);
        weighted_terms.push(w * loss);
        weights.push(w);
        alpha_terms.push((loss - hp.lambda) * dw);
        d_logits.push(w * (p - f64::from(labels[i])) * inv_n);
    }

    let weighted_bce = compensated_sum(weighted_terms) * inv_n;
    let mean_weight = compensated_sum(weights) * inv_n;
    Ok(LossBreakdown {
        weighted_bce,
        mean_weight,
        total: weighted_bce - hp.lambda * mean_weight,
        d_total_d_raw_alpha: compensated_sum(alpha_terms) * inv_n,
        d_total_d_logits: d_logits,
    })
}

/// d total / d raw alpha when every sample has the same BCE value.
pub fn alpha_gradient_at_constant_bce(
    param: &DecayParam,
    gaps_days: &[f64],
    bce_value: f64,
    hp: &Hyperparams,
) -> f64 {
    if gaps_days.is_empty() {
        return 0.0;
    }
    let terms = gaps_days
        .iter()
        .map(|&gap| (bce_value - hp.lambda) * param.dweight_draw(gap));
    compensated_sum(terms) / gaps_days.len() as f64
}

/// Self-check of the bonus term: when every per-sample BCE equals lambda the
/// bonus exactly cancels the weighted term's pressure on the decay rate.
pub fn bonus_interpretation_check(param: &DecayParam, gaps_days: &[f64], hp: &Hyperparams) -> bool {
    alpha_gradient_at_constant_bce(param, gaps_days, hp.lambda, hp) == 0.0
}
