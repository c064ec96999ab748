//! Beat detection and the 34-dimensional handcrafted feature vector:
//! 28 morphology descriptors, 5 time-domain HRV statistics and mean heart
//! rate, in the fixed order of [`FEATURE_NAMES`].
//!
//! Morphology is computed per complete beat (foot, systolic peak, next foot)
//! on the filtered, z-scored segment and averaged over beats, except the last
//! two entries which are across-beat standard deviations. Amplitudes are
//! measured from the onset foot; times are in seconds from the onset foot.

use serde::{Deserialize, Serialize};

use crate::cohort::Biomarker;
use crate::signal::{Segment, MAX_BPM, MIN_BPM};
use crate::stats::{excess_kurtosis, mean, median, population_std, skewness};
use crate::{Error, Result};

pub const N_FEATURES: usize = 34;
pub const N_MORPHOLOGY: usize = 28;
pub const N_HRV: usize = 5;

/// Frozen feature order. Index 0..28 morphology, 28..33 HRV, 33 mean HR.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "rise_time",
    "fall_time",
    "pulse_duration",
    "width_25",
    "width_50",
    "width_75",
    "systolic_amplitude",
    "area_total",
    "area_systolic",
    "area_diastolic",
    "area_ratio",
    "systolic_area_fraction",
    "d1_max",
    "d1_min",
    "t_d1_max",
    "t_d1_min",
    "d2_max",
    "d2_min",
    "t_d2_max",
    "t_d2_min",
    "slope_rise",
    "slope_fall",
    "augmentation_index",
    "t_shoulder",
    "beat_skewness",
    "beat_kurtosis",
    "width_50_std",
    "amplitude_std",
    "sdnn_ms",
    "rmssd_ms",
    "pnn50_pct",
    "ibi_median_ms",
    "ibi_range_ms",
    "mean_hr_bpm",
];

/// Minimum number of cleaned inter-beat intervals needed for HRV.
pub const MIN_IBIS: usize = 3;

/// Height threshold above the rolling median, in units of segment std.
const PEAK_HEIGHT_STD: f64 = 0.3;
/// Rolling-median half window in seconds.
const ROLLING_HALF_WINDOW_S: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSequence {
    pub peak_indices: Vec<usize>,
    /// `foot_indices[k]` is the minimum strictly between peaks `k` and `k + 1`.
    pub foot_indices: Vec<usize>,
    /// Peak-to-peak intervals after dropping those outside 333-1500 ms.
    pub inter_beat_intervals_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(Error::LengthMismatch {
                what: "feature vector",
                left: values.len(),
                right: N_FEATURES,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {}", FEATURE_NAMES[i])));
        }
        Ok(FeatureVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names() -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// One labeled segment's features as consumed by the trainers. `features`
/// is `None` when featurization failed; such rows are imputed per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub segment_id: String,
    pub biomarker: Biomarker,
    pub delta_t_days: f64,
    pub label: u8,
    pub features: Option<Vec<f64>>,
}

fn rolling_median(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut window = Vec::with_capacity(2 * half + 1);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            window.clear();
            window.extend_from_slice(&x[lo..hi]);
            median(&window)
        })
        .collect()
}

/// Systolic peak detection: local maxima above `rolling median + 0.3 std`,
/// thinned greedily by height so that peaks are at least one shortest beat
/// (180 BPM) apart; feet are the minima between consecutive peaks.
pub fn detect_beats(samples: &[f64], sample_rate_hz: f64) -> Result<BeatSequence> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::BeatDetection("segment too short".into()));
    }
    let sd = population_std(samples);
    if sd < 1e-12 {
        return Err(Error::BeatDetection("constant segment".into()));
    }
    let half = (ROLLING_HALF_WINDOW_S * sample_rate_hz).round() as usize;
    let baseline = rolling_median(samples, half);
    let min_distance = (sample_rate_hz * 60.0 / MAX_BPM).ceil() as usize;

    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| {
            samples[i] > samples[i - 1] && samples[i] >= samples[i + 1] && samples[i] > baseline[i] + PEAK_HEIGHT_STD * sd
        })
        .collect();
    // Highest first; ties broken by earlier index.
    candidates.sort_by(|&a, &b| samples[b].total_cmp(&samples[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    if kept.len() < 3 {
        return Err(Error::BeatDetection(format!("found {} peaks, need at least 3", kept.len())));
    }

    let foot_indices = kept
        .windows(2)
        .map(|w| {
            (w[0] + 1..w[1])
                .min_by(|&a, &b| samples[a].total_cmp(&samples[b]))
                .unwrap_or(w[0])
        })
        .collect();
    let min_ibi = 60_000.0 / MAX_BPM;
    let max_ibi = 60_000.0 / MIN_BPM;
    let inter_beat_intervals_ms = kept
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 * 1000.0 / sample_rate_hz)
        .filter(|ibi| (min_ibi..=max_ibi).contains(ibi))
        .collect();
    Ok(BeatSequence {
        peak_indices: kept,
        foot_indices,
        inter_beat_intervals_ms,
    })
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    if den.abs() < 1e-12 {
        0.0
    } else {
        num / den
    }
}

fn trapezoid(y: &[f64], dt: f64) -> f64 {
    y.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
}

/// Width (seconds) of the region around `peak` where `y >= level`,
/// with linear interpolation at both crossings.
fn width_at(y: &[f64], peak: usize, level: f64, fs: f64) -> f64 {
    let mut left = 0.0;
    let mut i = peak;
    while i > 0 && y[i - 1] >= level {
        i -= 1;
    }
    if i > 0 {
        left = i as f64 - safe_ratio(y[i] - level, y[i] - y[i - 1]);
    }
    let mut j = peak;
    while j + 1 < y.len() && y[j + 1] >= level {
        j += 1;
    }
    let right = if j + 1 < y.len() {
        j as f64 + safe_ratio(y[j] - level, y[j] - y[j + 1])
    } else {
        (y.len() - 1) as f64
    };
    (right - left) / fs
}

fn derivative(y: &[f64], fs: f64) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                0.0
            } else if i == 0 {
                (y[1] - y[0]) * fs
            } else if i == n - 1 {
                (y[n - 1] - y[n - 2]) * fs
            } else {
                0.5 * (y[i + 1] - y[i - 1]) * fs
            }
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x < v[best] { i } else { best })
}

/// Per-beat descriptors 0..26 of [`FEATURE_NAMES`], plus the 50% width and
/// amplitude used for the two variability entries.
fn beat_descriptors(x: &[f64], foot: usize, peak: usize, next_foot: usize, fs: f64) -> [f64; 26] {
    let y: Vec<f64> = x[foot..=next_foot].iter().map(|v| v - x[foot]).collect();
    let p = peak - foot;
    let amp = y[p];
    let rise = p as f64 / fs;
    let fall = (next_foot - peak) as f64 / fs;
    let duration = (next_foot - foot) as f64 / fs;
    let dt = 1.0 / fs;
    let area_total = trapezoid(&y, dt);
    let area_sys = trapezoid(&y[..=p], dt);
    let area_dia = trapezoid(&y[p..], dt);
    let d1 = derivative(&y, fs);
    let d2 = derivative(&d1, fs);
    let (i1max, i1min) = (argmax(&d1), argmin(&d1));
    let (i2max, i2min) = (argmax(&d2), argmin(&d2));
    // Late-systolic shoulder: first concave-to-convex turn after the peak.
    let shoulder = (p + 1..y.len()).find(|&i| d2[i - 1] < 0.0 && d2[i] >= 0.0).unwrap_or(y.len() - 1);
    [
        rise,
        fall,
        duration,
        width_at(&y, p, 0.25 * amp, fs),
        width_at(&y, p, 0.50 * amp, fs),
        width_at(&y, p, 0.75 * amp, fs),
        amp,
        area_total,
        area_sys,
        area_dia,
        safe_ratio(area_dia, area_sys),
        safe_ratio(area_sys, area_total),
        d1[i1max],
        d1[i1min],
        i1max as f64 / fs,
        i1min as f64 / fs,
        d2[i2max],
        d2[i2min],
        i2max as f64 / fs,
        i2min as f64 / fs,
        safe_ratio(amp, rise),
        safe_ratio(x[peak] - x[next_foot], fall),
        safe_ratio(y[shoulder], amp),
        shoulder as f64 / fs,
        skewness(&y),
        excess_kurtosis(&y),
    ]
}

/// The 28 morphology descriptors. Requires at least one complete beat.
pub fn morphology_features(samples: &[f64], sample_rate_hz: f64, beats: &BeatSequence) -> Result<[f64; N_MORPHOLOGY]> {
    let per_beat: Vec<[f64; 26]> = beats
        .foot_indices
        .windows(2)
        .zip(&beats.peak_indices[1..])
        .filter(|(f, &p)| f[0] < p && p < f[1])
        .map(|(f, &p)| beat_descriptors(samples, f[0], p, f[1], sample_rate_hz))
        .collect();
    if per_beat.is_empty() {
        return Err(Error::BeatDetection("no complete beat".into()));
    }
    let mut out = [0.0; N_MORPHOLOGY];
    for (j, slot) in out.iter_mut().take(26).enumerate() {
        let column: Vec<f64> = per_beat.iter().map(|b| b[j]).collect();
        *slot = mean(&column);
    }
    let widths: Vec<f64> = per_beat.iter().map(|b| b[4]).collect();
    let amps: Vec<f64> = per_beat.iter().map(|b| b[6]).collect();
    out[26] = population_std(&widths);
    out[27] = population_std(&amps);
    Ok(out)
}

/// `[SDNN, RMSSD, pNN50 (%), median IBI, IBI range]`, all in ms except pNN50.
/// SDNN uses the population (N) standard deviation.
pub fn hrv_features(ibis_ms: &[f64]) -> Result<[f64; N_HRV]> {
    if ibis_ms.len() < MIN_IBIS {
        return Err(Error::BeatDetection(format!(
            "{} inter-beat intervals, need at least {MIN_IBIS}",
            ibis_ms.len()
        )));
    }
    let diffs: Vec<f64> = ibis_ms.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let pnn50 = 100.0 * diffs.iter().filter(|d| d.abs() > 50.0).count() as f64 / diffs.len() as f64;
    let max = ibis_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ibis_ms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok([population_std(ibis_ms), rmssd, pnn50, median(ibis_ms), max - min])
}

/// `60000 / mean(IBI)` in beats per minute.
pub fn mean_hr(ibis_ms: &[f64]) -> Result<f64> {
    if ibis_ms.is_empty() {
        return Err(Error::BeatDetection("no inter-beat intervals".into()));
    }
    Ok(60_000.0 / mean(ibis_ms))
}

/// Full 34-vector, or the reason it could not be computed.
pub fn extract(samples: &[f64], sample_rate_hz: f64) -> Result<FeatureVector> {
    let beats = detect_beats(samples, sample_rate_hz)?;
    let morph = morphology_features(samples, sample_rate_hz, &beats)?;
    let hrv = hrv_features(&beats.inter_beat_intervals_ms)?;
    let hr = mean_hr(&beats.inter_beat_intervals_ms)?;
    let mut values = Vec::with_capacity(N_FEATURES);
    values.extend_from_slice(&morph);
    values.extend_from_slice(&hrv);
    values.push(hr);
    FeatureVector::new(values).map_err(|e| Error::BeatDetection(e.to_string()))
}

pub fn try_featurize(segment: &Segment) -> Result<FeatureVector> {
    extract(&segment.samples, segment.sample_rate_hz)
}

/// Per-feature medians of a training split, used for failed segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    medians: Vec<f64>,
}

impl Imputer {
    /// Fits on the rows that featurized successfully.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); N_FEATURES];
        for row in rows {
            if row.len() != N_FEATURES {
                return Err(Error::LengthMismatch {
                    what: "feature row",
                    left: row.len(),
                    right: N_FEATURES,
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        if columns[0].is_empty() {
            return Err(Error::InsufficientData("no featurized rows to fit the imputer".into()));
        }
        Ok(Imputer {
            medians: columns.iter().map(|c| median(c)).collect(),
        })
    }

    pub fn from_medians(medians: Vec<f64>) -> Result<Self> {
        FeatureVector::new(medians).map(|v| Imputer { medians: v.into_values() })
    }

    pub fn medians(&self) -> &[f64] {
        &self.medians
    }

    pub fn fill(&self, features: Option<&[f64]>) -> Vec<f64> {
        match features {
            Some(f) => f.to_vec(),
            None => self.medians.clone(),
        }
    }
}

/// Never fails: on beat-detection failure the imputation vector is returned.
pub fn featurize(segment: &Segment, imputer: &Imputer) -> FeatureVector {
    try_featurize(segment).unwrap_or_else(|_| FeatureVector {
        values: imputer.medians.clone(),
    })
}
