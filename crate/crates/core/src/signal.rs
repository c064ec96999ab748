//! Raw PPG handling: fixed-length segmentation, a signal-quality index,
//! zero-phase Butterworth band-pass filtering and per-segment z-scoring.
//!
//! The fixed pipeline order is: quality index on the raw segment, then
//! band-pass, then z-score.
//!
//! The quality index is a heuristic stand-in: half a skewness score
//! (clean pulses are positively skewed) and half the peak normalized
//! autocorrelation over lags covering 40-180 BPM.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cohort::SegmentMeta;
use crate::stats::{mean, population_std, skewness};
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 25.0;
pub const DEFAULT_SEGMENT_SECONDS: f64 = 10.0;
pub const DEFAULT_SQI_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LOW_HZ: f64 = 0.5;
pub const DEFAULT_HIGH_HZ: f64 = 5.0;
pub const BUTTERWORTH_ORDER: usize = 4;

/// Heart-rate range assumed plausible throughout (BPM).
pub const MIN_BPM: f64 = 40.0;
pub const MAX_BPM: f64 = 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPpgStream {
    pub subject_id: String,
    /// UTC seconds of the first sample.
    pub start_timestamp: f64,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl RawPpgStream {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "stream {}: sample rate must be positive, got {}",
                self.subject_id, self.sample_rate_hz
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("stream {} contains non-finite samples", self.subject_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub meta: SegmentMeta,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub pass: bool,
}

/// Splits a stream into consecutive non-overlapping windows of
/// `round(seg_seconds * fs)` samples; a trailing remainder is dropped.
pub fn segment_stream(stream: &RawPpgStream, seg_seconds: f64) -> Result<Vec<Segment>> {
    stream.validate()?;
    if !(seg_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!("segment length must be positive, got {seg_seconds}")));
    }
    let len = (seg_seconds * stream.sample_rate_hz).round() as usize;
    if len == 0 {
        return Err(Error::InvalidArgument("segment shorter than one sample".into()));
    }
    Ok(stream
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(i, chunk)| Segment {
            meta: SegmentMeta {
                subject_id: stream.subject_id.clone(),
                segment_id: format!("{}:{}:{}", stream.subject_id, stream.start_timestamp, i),
                median_timestamp: stream.start_timestamp + (i as f64 + 0.5) * seg_seconds,
            },
            sample_rate_hz: stream.sample_rate_hz,
            samples: chunk.to_vec(),
        })
        .collect())
}

/// Lag range (in samples) covering the plausible heart-rate band.
pub(crate) fn beat_lag_range(fs: f64) -> (usize, usize) {
    let min_lag = ((fs * 60.0 / MAX_BPM).round() as usize).max(1);
    let max_lag = (fs * 60.0 / MIN_BPM).round() as usize;
    (min_lag, max_lag)
}

/// Peak normalized autocorrelation over `[min_lag, max_lag]`, per-lag
/// unbiased, clamped to `[0, 1]`.
fn max_autocorrelation(x: &[f64], min_lag: usize, max_lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if var < 1e-24 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for lag in min_lag..=max_lag.min(n.saturating_sub(2)) {
        let c = (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / (n - lag) as f64;
        best = best.max(c / var);
    }
    best.clamp(0.0, 1.0)
}

/// Quality index of a raw (unfiltered) window.
pub fn sqi(samples: &[f64], sample_rate_hz: f64, threshold: f64) -> QualityScore {
    if samples.len() < 4 || population_std(samples) < 1e-12 {
        return QualityScore { value: 0.0, pass: false };
    }
    let skew_score = skewness(samples).clamp(0.0, 2.0) / 2.0;
    let (lo, hi) = beat_lag_range(sample_rate_hz);
    let ac_score = max_autocorrelation(samples, lo, hi);
    let value = 0.5 * (skew_score + ac_score);
    QualityScore {
        value,
        pass: value >= threshold,
    }
}

pub fn segment_sqi(segment: &Segment, threshold: f64) -> QualityScore {
    sqi(&segment.samples, segment.sample_rate_hz, threshold)
}

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Transposed direct-form II state for a unit step in steady state.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[2] * g]
    }
}

/// Digital Butterworth band-pass in second-order sections, designed from the
/// analog prototype through the low-pass to band-pass transform and the
/// bilinear transform with pre-warped edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthBandpass {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
}

impl ButterworthBandpass {
    pub fn design(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if order == 0 || !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
            return Err(Error::InvalidArgument(format!(
                "band edges must satisfy 0 < low < high < fs/2 (got low={low_hz}, high={high_hz}, fs={sample_rate_hz})"
            )));
        }
        let fs2 = 2.0 * sample_rate_hz;
        let w_lo = fs2 * (PI * low_hz / sample_rate_hz).tan();
        let w_hi = fs2 * (PI * high_hz / sample_rate_hz).tan();
        let bw = w_hi - w_lo;
        let w0_sq = w_lo * w_hi;

        // Upper-half-plane analog band-pass poles; their conjugates complete the set.
        let mut analog = Vec::with_capacity(order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::cis(theta) * (bw / 2.0);
            let disc = (p * p - w0_sq).sqrt();
            for q in [p + disc, p - disc] {
                if q.im > 0.0 {
                    analog.push(q);
                }
            }
        }
        if analog.len() != order {
            return Err(Error::InvalidArgument(format!(
                "band [{low_hz}, {high_hz}] Hz too narrow for a stable section layout"
            )));
        }

        let mut sections: Vec<Biquad> = analog
            .iter()
            .map(|&s| {
                let z = (fs2 + s) / (fs2 - s);
                Biquad {
                    // one zero at z = 1 (from s = 0) and one at z = -1 (from s = inf)
                    b: [1.0, 0.0, -1.0],
                    a: [1.0, -2.0 * z.re, z.re * z.re + z.im * z.im],
                }
            })
            .collect();

        // Unit gain at the digital image of the analog center frequency.
        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let mut gain = 1.0;
        for s in &sections {
            gain *= section_response(s, center).norm();
        }
        let k = 1.0 / gain;
        for b in sections[0].b.iter_mut() {
            *b *= k;
        }
        Ok(ButterworthBandpass {
            sections,
            sample_rate_hz,
        })
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        self.sections.iter().map(|s| section_response(s, w).norm()).product()
    }

    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    fn filter_in_place(&self, x: &mut [f64], x0: f64) {
        let mut scale = x0;
        for s in &self.sections {
            let zi = s.step_state();
            let mut z1 = zi[0] * scale;
            let mut z2 = zi[1] * scale;
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * y + z2;
                z2 = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
            scale *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd reflection padding of
    /// `3 * order` samples and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let first = ext[0];
        self.filter_in_place(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.filter_in_place(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn section_response(s: &Biquad, w: f64) -> Complex64 {
    let z1 = Complex64::cis(-w);
    let z2 = Complex64::cis(-2.0 * w);
    (s.b[0] + z1 * s.b[1] + z2 * s.b[2]) / (s.a[0] + z1 * s.a[1] + z2 * s.a[2])
}

/// Zero-phase band-pass of one segment; length is unchanged.
pub fn bandpass(segment: &Segment, low_hz: f64, high_hz: f64) -> Result<Segment> {
    let filter = ButterworthBandpass::design(BUTTERWORTH_ORDER, low_hz, high_hz, segment.sample_rate_hz)?;
    Ok(Segment {
        meta: segment.meta.clone(),
        sample_rate_hz: segment.sample_rate_hz,
        samples: filter.filtfilt(&segment.samples),
    })
}

/// `(x - mean) / std` with population std; all zeros when std < 1e-12.
pub fn zscore_samples(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let sd = population_std(x);
    if sd < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / sd).collect()
}

pub fn zscore(segment: &Segment) -> Segment {
    Segment {
        meta: segment.meta.clone(),
        sample_rate_hz: segment.sample_rate_hz,
        samples: zscore_samples(&segment.samples),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub segment_seconds: f64,
    pub sqi_threshold: f64,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            segment_seconds: DEFAULT_SEGMENT_SECONDS,
            sqi_threshold: DEFAULT_SQI_THRESHOLD,
            low_hz: DEFAULT_LOW_HZ,
            high_hz: DEFAULT_HIGH_HZ,
        }
    }
}

/// Stage-wise bookkeeping of [`preprocess_stream`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessCounts {
    pub segments: usize,
    pub sqi_passed: usize,
    pub sqi_dropped: usize,
}

/// Segment -> quality gate on raw samples -> band-pass -> z-score.
pub fn preprocess_stream(stream: &RawPpgStream, cfg: &PreprocessConfig) -> Result<(Vec<Segment>, PreprocessCounts)> {
    let raw = segment_stream(stream, cfg.segment_seconds)?;
    let filter = ButterworthBandpass::design(BUTTERWORTH_ORDER, cfg.low_hz, cfg.high_hz, stream.sample_rate_hz)?;
    let mut counts = PreprocessCounts {
        segments: raw.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for seg in raw {
        if !segment_sqi(&seg, cfg.sqi_threshold).pass {
            counts.sqi_dropped += 1;
            continue;
        }
        counts.sqi_passed += 1;
        let filtered = filter.filtfilt(&seg.samples);
        out.push(Segment {
            meta: seg.meta,
            sample_rate_hz: seg.sample_rate_hz,
            samples: zscore_samples(&filtered),
        });
    }
    Ok((out, counts))
}
