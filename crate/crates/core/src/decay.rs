//! Decay families mapping a scaled time gap to a sample weight, the softplus
//! rate parameterization, and analytic derivatives with respect to the raw
//! (unconstrained) decay parameter.
//!
//! With `x = rate * gap_days`, every family satisfies `g(0) = 1`,
//! `0 <= g(x) <= 1` and is non-increasing on `x >= 0`:
//!
//! | family      | g(x)                                  |
//! |-------------|---------------------------------------|
//! | linear      | `max(0, 1 - x)`                       |
//! | exponential | `exp(-x)`                             |
//! | inverse     | `1 / (1 + x)`                         |
//! | cosine      | `(1 + cos(pi x)) / 2` for `x <= 1`, else 0 |
//!
//! Gaps are never normalized by the window length.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::stats::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayFamily {
    Linear,
    Exponential,
    Inverse,
    #[serde(rename = "cosine")]
    CosineAnnealing,
}

impl DecayFamily {
    pub const ALL: [DecayFamily; 4] = [
        DecayFamily::Linear,
        DecayFamily::Exponential,
        DecayFamily::Inverse,
        DecayFamily::CosineAnnealing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecayFamily::Linear => "linear",
            DecayFamily::Exponential => "exponential",
            DecayFamily::Inverse => "inverse",
            DecayFamily::CosineAnnealing => "cosine",
        }
    }

    /// g(x) for `x >= 0`.
    pub fn value(self, x: f64) -> f64 {
        match self {
            DecayFamily::Linear => (1.0 - x).max(0.0),
            DecayFamily::Exponential => (-x).exp(),
            DecayFamily::Inverse => 1.0 / (1.0 + x),
            DecayFamily::CosineAnnealing => {
                if x <= 1.0 {
                    0.5 * (1.0 + (PI * x).cos())
                } else {
                    0.0
                }
            }
        }
    }

    /// g'(x). At the truncation point `x = 1` of the linear and cosine
    /// families the flat-side value 0 is returned.
    pub fn slope(self, x: f64) -> f64 {
        match self {
            DecayFamily::Linear => {
                if x < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            DecayFamily::Exponential => -(-x).exp(),
            DecayFamily::Inverse => -1.0 / ((1.0 + x) * (1.0 + x)),
            DecayFamily::CosineAnnealing => {
                if x < 1.0 {
                    -0.5 * PI * (PI * x).sin()
                } else {
                    0.0
                }
            }
        }
    }

    /// Scaled gaps where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            DecayFamily::Linear | DecayFamily::CosineAnnealing => &[1.0],
            DecayFamily::Exponential | DecayFamily::Inverse => &[],
        }
    }
}

impl fmt::Display for DecayFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecayFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(DecayFamily::Linear),
            "exponential" => Ok(DecayFamily::Exponential),
            "inverse" => Ok(DecayFamily::Inverse),
            "cosine" => Ok(DecayFamily::CosineAnnealing),
            _ => Err(Error::UnknownName {
                kind: "decay family",
                name: s.to_string(),
                expected: "linear, exponential, inverse, cosine".to_string(),
            }),
        }
    }
}

/// `ln(1 + exp(raw))`, evaluated without overflow.
pub fn softplus(raw: f64) -> f64 {
    raw.max(0.0) + (-raw.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `rate > 0`.
pub fn inverse_softplus(rate: f64) -> f64 {
    if rate > 30.0 {
        rate + (-(-rate).exp()).ln_1p()
    } else {
        rate.exp_m1().ln()
    }
}

/// Per-biomarker decay parameter. The rate (1/day) is always the softplus
/// image of the raw value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParam {
    raw: f64,
    rate: f64,
    family: DecayFamily,
}

impl DecayParam {
    pub fn from_raw(family: DecayFamily, raw: f64) -> Self {
        DecayParam {
            raw,
            rate: softplus(raw),
            family,
        }
    }

    /// Parameter whose rate equals `rate_per_day` (must be positive).
    pub fn from_rate(family: DecayFamily, rate_per_day: f64) -> Result<Self> {
        if !(rate_per_day > 0.0 && rate_per_day.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "decay rate must be positive and finite, got {rate_per_day}"
            )));
        }
        Ok(Self::from_raw(family, inverse_softplus(rate_per_day)))
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn family(&self) -> DecayFamily {
        self.family
    }

    pub fn set_raw(&mut self, raw: f64) {
        self.raw = raw;
        self.rate = softplus(raw);
    }

    /// Weight of a segment `gap_days` away from its lab draw.
    pub fn weight(&self, gap_days: f64) -> Result<f64> {
        check_gap(gap_days)?;
        Ok(self.weight_unchecked(gap_days))
    }

    pub(crate) fn weight_unchecked(&self, gap_days: f64) -> f64 {
        self.family.value(self.rate * gap_days)
    }

    /// d weight / d raw = g'(rate * gap) * gap * sigmoid(raw).
    pub fn dweight_draw(&self, gap_days: f64) -> f64 {
        self.family.slope(self.rate * gap_days) * gap_days * sigmoid(self.raw)
    }
}

/// Free-function form of [`DecayParam::weight`].
pub fn weight(param: &DecayParam, gap_days: f64) -> Result<f64> {
    param.weight(gap_days)
}

/// Free-function form of [`DecayParam::dweight_draw`].
pub fn dweight_draw(param: &DecayParam, gap_days: f64) -> f64 {
    param.dweight_draw(gap_days)
}

pub(crate) fn check_gap(gap_days: f64) -> Result<()> {
    if gap_days < 0.0 || !gap_days.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time gap must be a finite nonnegative number of days, got {gap_days}"
        )));
    }
    Ok(())
}
