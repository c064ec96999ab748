//! Synthetic data at two levels: PPG waveforms for exercising the
//! signal/feature pipeline, and feature-level cohorts with a known label
//! staleness process for exercising the loss.
//!
//! Staleness model: a segment at gap `dt` is "fresh" with probability
//! `g_true(rate * dt)`. Fresh segments draw their features from the
//! subject's own class; stale segments draw them from a class chosen by a
//! fair coin, independent of the label. Class `c` shifts the first
//! `informative_features` coordinates by `(c - 1/2) * class_separation`;
//! every coordinate carries `N(0, feature_noise_std^2)` noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Biomarker, LabRecord, LabeledSegment, SegmentMeta};
use crate::decay::DecayFamily;
use crate::features::{FeatureRow, N_FEATURES};
use crate::signal::{RawPpgStream, DEFAULT_SAMPLE_RATE_HZ, MAX_BPM, MIN_BPM};
use crate::{derive_seed, Error, Result, SECONDS_PER_DAY};

/// One Gaussian component of the pulse: amplitude, delay of its center
/// after the beat time (s), and width (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWave {
    pub amplitude: f64,
    pub delay_s: f64,
    pub width_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub heart_rate_bpm: f64,
    pub hrv_std_ms: f64,
    pub systolic: GaussianWave,
    pub dicrotic: GaussianWave,
    pub noise_std: f64,
    pub baseline_wander_hz: f64,
    pub baseline_wander_amp: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        WaveformConfig {
            heart_rate_bpm: 60.0,
            hrv_std_ms: 0.0,
            systolic: GaussianWave {
                amplitude: 1.0,
                delay_s: 0.15,
                width_s: 0.08,
            },
            dicrotic: GaussianWave {
                amplitude: 0.35,
                delay_s: 0.45,
                width_s: 0.10,
            },
            noise_std: 0.0,
            baseline_wander_hz: 0.1,
            baseline_wander_amp: 0.1,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_BPM..=MAX_BPM).contains(&self.heart_rate_bpm) {
            return Err(Error::InvalidArgument(format!(
                "heart_rate_bpm must lie in [{MIN_BPM}, {MAX_BPM}], got {}",
                self.heart_rate_bpm
            )));
        }
        if self.noise_std < 0.0 || self.hrv_std_ms < 0.0 {
            return Err(Error::InvalidArgument("noise_std and hrv_std_ms must be nonnegative".into()));
        }
        if !(self.sample_rate_hz > 0.0) || self.systolic.width_s <= 0.0 || self.dicrotic.width_s <= 0.0 {
            return Err(Error::InvalidArgument("sample rate and pulse widths must be positive".into()));
        }
        Ok(())
    }
}

/// Beat times covering `[-1 s, duration_s)`, jittered by `hrv_std_ms` and
/// kept within the plausible interval range.
fn beat_times(cfg: &WaveformConfig, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = 60.0 / cfg.heart_rate_bpm;
    let jitter = Normal::new(0.0, cfg.hrv_std_ms / 1000.0).expect("nonnegative std");
    let (lo, hi) = (60.0 / MAX_BPM, 60.0 / MIN_BPM);
    let mut t = -1.0 + rng.random::<f64>() * period;
    let mut out = Vec::new();
    while t < duration_s {
        out.push(t);
        t += (period + jitter.sample(rng)).clamp(lo, hi);
    }
    out
}

pub fn gen_stream(cfg: &WaveformConfig, duration_s: f64, subject_id: &str, start_timestamp: f64) -> Result<RawPpgStream> {
    cfg.validate()?;
    if duration_s < 10.0 {
        return Err(Error::InvalidArgument(format!("duration must be at least 10 s, got {duration_s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beats = beat_times(cfg, duration_s, &mut rng);
    let wander_phase = rng.random::<f64>() * 2.0 * PI;
    let n = (duration_s * cfg.sample_rate_hz).round() as usize;
    let gauss = |w: &GaussianWave, dt: f64| w.amplitude * (-(dt - w.delay_s).powi(2) / (2.0 * w.width_s * w.width_s)).exp();
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate_hz;
            let pulse: f64 = beats
                .iter()
                .filter(|&&b| (t - b).abs() < 2.0)
                .map(|&b| gauss(&cfg.systolic, t - b) + gauss(&cfg.dicrotic, t - b))
                .sum();
            let wander = cfg.baseline_wander_amp * (2.0 * PI * cfg.baseline_wander_hz * t + wander_phase).sin();
            let noise: f64 = rng.sample(StandardNormal);
            pulse + wander + cfg.noise_std * noise
        })
        .collect();
    Ok(RawPpgStream {
        subject_id: subject_id.to_string(),
        start_timestamp,
        sample_rate_hz: cfg.sample_rate_hz,
        samples,
    })
}

/// Stream for subject `"synthetic"` starting at an arbitrary fixed epoch.
pub fn gen_waveform(cfg: &WaveformConfig, duration_s: f64) -> Result<RawPpgStream> {
    gen_stream(cfg, duration_s, "synthetic", 1.6e9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohortConfig {
    pub n_subjects: usize,
    pub segments_per_subject: (usize, usize),
    pub true_staleness_rate: f64,
    pub staleness_family: DecayFamily,
    pub max_gap_days: f64,
    pub class_separation: f64,
    pub feature_noise_std: f64,
    pub informative_features: usize,
    pub biomarker: Biomarker,
    pub seed: u64,
}

impl Default for SynthCohortConfig {
    fn default() -> Self {
        SynthCohortConfig {
            n_subjects: 300,
            segments_per_subject: (10, 20),
            true_staleness_rate: 0.15,
            staleness_family: DecayFamily::Linear,
            max_gap_days: 30.0,
            class_separation: 1.0,
            feature_noise_std: 1.0,
            informative_features: 4,
            biomarker: Biomarker::Potassium,
            seed: 0,
        }
    }
}

impl SynthCohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_subjects < 10 {
            return bad(format!("n_subjects must be at least 10, got {}", self.n_subjects));
        }
        let (lo, hi) = self.segments_per_subject;
        if lo == 0 || lo > hi {
            return bad(format!("segments_per_subject must satisfy 1 <= min <= max, got {lo}..{hi}"));
        }
        if !(self.true_staleness_rate >= 0.0) || !self.true_staleness_rate.is_finite() {
            return bad(format!("true_staleness_rate must be >= 0, got {}", self.true_staleness_rate));
        }
        if !(self.max_gap_days > 0.0) {
            return bad(format!("max_gap_days must be positive, got {}", self.max_gap_days));
        }
        if !(self.feature_noise_std >= 0.0) || !self.class_separation.is_finite() {
            return bad("feature_noise_std must be >= 0 and class_separation finite".into());
        }
        if self.informative_features == 0 || self.informative_features > N_FEATURES {
            return bad(format!(
                "informative_features must lie in [1, {N_FEATURES}], got {}",
                self.informative_features
            ));
        }
        Ok(())
    }
}

/// Ground truth for one generated segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    /// Drawn from the subject's own class by the staleness process.
    pub fresh: bool,
    /// Class whose distribution produced the features.
    pub source_class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCohort {
    pub config: SynthCohortConfig,
    pub labs: Vec<LabRecord>,
    pub segments: Vec<LabeledSegment>,
    pub rows: Vec<FeatureRow>,
    pub truth: Vec<SegmentTruth>,
}

/// Epoch around which synthetic lab draws are scattered (UTC seconds).
const SYNTH_EPOCH: f64 = 1.6e9;

pub fn gen_cohort(cfg: &SynthCohortConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let mut labels: Vec<u8> = (0..cfg.n_subjects).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "labels")));
    let noise = Normal::new(0.0, cfg.feature_noise_std).expect("validated std");

    let mut out = SynthCohort {
        config: cfg.clone(),
        labs: Vec::new(),
        segments: Vec::new(),
        rows: Vec::new(),
        truth: Vec::new(),
    };
    for (s, &label) in labels.iter().enumerate() {
        let subject_id = format!("S{s:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("subject/{s}")));
        let drawn_at = SYNTH_EPOCH + rng.random::<f64>() * 365.0 * SECONDS_PER_DAY;
        // Class-consistent extreme lab values.
        let lab_value = if label == 1 { 5.0 } else { 3.0 } + 0.5 * rng.random::<f64>();
        out.labs.push(LabRecord {
            subject_id: subject_id.clone(),
            biomarker: cfg.biomarker,
            value: lab_value,
            drawn_at,
        });
        let count = rng.random_range(cfg.segments_per_subject.0..=cfg.segments_per_subject.1);
        for j in 0..count {
            let gap = rng.random::<f64>() * cfg.max_gap_days;
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let keep = cfg.staleness_family.value(cfg.true_staleness_rate * gap);
            let fresh = rng.random::<f64>() < keep;
            let source_class = if fresh { label } else { rng.random_range(0..=1u8) };
            let shift = (source_class as f64 - 0.5) * cfg.class_separation;
            let features: Vec<f64> = (0..N_FEATURES)
                .map(|k| {
                    let base = if k < cfg.informative_features { shift } else { 0.0 };
                    base + noise.sample(&mut rng)
                })
                .collect();
            let segment_id = format!("{subject_id}-{j:03}");
            out.segments.push(LabeledSegment {
                meta: SegmentMeta {
                    subject_id: subject_id.clone(),
                    segment_id: segment_id.clone(),
                    median_timestamp: drawn_at + side * gap * SECONDS_PER_DAY,
                },
                biomarker: cfg.biomarker,
                delta_t_days: gap,
                label,
                lab_value,
            });
            out.rows.push(FeatureRow {
                subject_id: subject_id.clone(),
                segment_id,
                biomarker: cfg.biomarker,
                delta_t_days: gap,
                label,
                features: Some(features),
            });
            out.truth.push(SegmentTruth { fresh, source_class });
        }
    }
    Ok(out)
}

/// Waveform-level cohort: per subject one lab draw and several recording
/// sessions at random gaps from it. Heart rate rises with the lab value,
/// so the quantile labels are recoverable from the pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformCohortConfig {
    pub n_subjects: usize,
    pub sessions_per_subject: usize,
    pub session_seconds: f64,
    pub min_gap_days: f64,
    pub max_gap_days: f64,
    pub noise_std: f64,
    pub hrv_std_ms: f64,
    pub biomarker: Biomarker,
    pub seed: u64,
}

impl Default for WaveformCohortConfig {
    fn default() -> Self {
        WaveformCohortConfig {
            n_subjects: 20,
            sessions_per_subject: 3,
            session_seconds: 60.0,
            min_gap_days: 0.0,
            max_gap_days: 30.0,
            noise_std: 0.0,
            hrv_std_ms: 20.0,
            biomarker: Biomarker::Potassium,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformCohort {
    pub streams: Vec<RawPpgStream>,
    pub labs: Vec<LabRecord>,
}

pub fn gen_waveform_cohort(cfg: &WaveformCohortConfig) -> Result<WaveformCohort> {
    if cfg.n_subjects < 4 || cfg.sessions_per_subject == 0 {
        return Err(Error::InvalidArgument(
            "waveform cohort needs at least 4 subjects and one session each".into(),
        ));
    }
    if !(0.0 <= cfg.min_gap_days && cfg.min_gap_days <= cfg.max_gap_days) {
        return Err(Error::InvalidArgument(format!(
            "gap range must satisfy 0 <= min <= max, got {}..{}",
            cfg.min_gap_days, cfg.max_gap_days
        )));
    }
    let mut out = WaveformCohort {
        streams: Vec::new(),
        labs: Vec::new(),
    };
    for s in 0..cfg.n_subjects {
        let subject_id = format!("W{s:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("waveform-subject/{s}")));
        let value = rng.random_range(2.0..8.0);
        let drawn_at = SYNTH_EPOCH + rng.random::<f64>() * 365.0 * SECONDS_PER_DAY;
        out.labs.push(LabRecord {
            subject_id: subject_id.clone(),
            biomarker: cfg.biomarker,
            value,
            drawn_at,
        });
        let jitter: f64 = rng.sample(StandardNormal);
        let heart_rate_bpm = (50.0 + 5.0 * value + 2.0 * jitter).clamp(45.0, 120.0);
        for j in 0..cfg.sessions_per_subject {
            let gap = cfg.min_gap_days + rng.random::<f64>() * (cfg.max_gap_days - cfg.min_gap_days);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let center = drawn_at + side * gap * SECONDS_PER_DAY;
            let wf = WaveformConfig {
                heart_rate_bpm,
                hrv_std_ms: cfg.hrv_std_ms,
                noise_std: cfg.noise_std,
                seed: derive_seed(cfg.seed, &format!("waveform/{s}/{j}")),
                ..Default::default()
            };
            out.streams.push(gen_stream(&wf, cfg.session_seconds, &subject_id, center - cfg.session_seconds / 2.0)?);
        }
    }
    Ok(out)
}
