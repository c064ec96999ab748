//! Cohort data model: lab records, segment metadata, nearest-lab label
//! attachment within a time window, two-extreme quantile labels, per-subject
//! segment capping and subject-stratified fold assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::stats::quantile_linear;
use crate::{derive_seed, digest_hex, Error, Result, SECONDS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Biomarker {
    Ldl,
    Triglyceride,
    HbA1c,
    Hemoglobin,
    Co2,
    Chloride,
    Potassium,
    Sodium,
    Wbc,
    Platelets,
}

impl Biomarker {
    pub const ALL: [Biomarker; 10] = [
        Biomarker::Ldl,
        Biomarker::Triglyceride,
        Biomarker::HbA1c,
        Biomarker::Hemoglobin,
        Biomarker::Co2,
        Biomarker::Chloride,
        Biomarker::Potassium,
        Biomarker::Sodium,
        Biomarker::Wbc,
        Biomarker::Platelets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Biomarker::Ldl => "LDL",
            Biomarker::Triglyceride => "Triglyceride",
            Biomarker::HbA1c => "HbA1C",
            Biomarker::Hemoglobin => "Hemoglobin",
            Biomarker::Co2 => "CO2",
            Biomarker::Chloride => "Chloride",
            Biomarker::Potassium => "Potassium",
            Biomarker::Sodium => "Sodium",
            Biomarker::Wbc => "WBC",
            Biomarker::Platelets => "Platelets",
        }
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Biomarker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Biomarker::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::UnknownName {
                kind: "biomarker",
                name: s.to_string(),
                expected: Biomarker::ALL.map(|b| b.name()).join(", "),
            })
    }
}

impl Serialize for Biomarker {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Biomarker {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabRecord {
    pub subject_id: String,
    pub biomarker: Biomarker,
    pub value: f64,
    /// UTC seconds.
    pub drawn_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub subject_id: String,
    pub segment_id: String,
    /// UTC seconds.
    pub median_timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub meta: SegmentMeta,
    pub biomarker: Biomarker,
    pub delta_t_days: f64,
    pub label: u8,
    pub lab_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelClass {
    Positive,
    Negative,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub window_days: f64,
    pub lower_q: f64,
    pub upper_q: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            window_days: 30.0,
            lower_q: 0.25,
            upper_q: 0.75,
        }
    }
}

/// Two-extreme labels for a set of lab values: at or above the upper quantile
/// is positive, at or below the lower quantile negative, everything strictly
/// between excluded. When the two quantiles coincide nothing is separable and
/// every value is excluded.
pub fn quantile_label(values: &[f64], lower_q: f64, upper_q: f64) -> Result<Vec<LabelClass>> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "quantile labeling needs at least 4 lab values, got {}",
            values.len()
        )));
    }
    if !(0.0..=1.0).contains(&lower_q) || !(0.0..=1.0).contains(&upper_q) || lower_q > upper_q {
        return Err(Error::InvalidArgument(format!(
            "quantiles must satisfy 0 <= lower <= upper <= 1, got {lower_q}, {upper_q}"
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("lab value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_linear(&sorted, lower_q);
    let hi = quantile_linear(&sorted, upper_q);
    if lo == hi {
        return Ok(vec![LabelClass::Excluded; values.len()]);
    }
    Ok(values
        .iter()
        .map(|&v| {
            if v >= hi {
                LabelClass::Positive
            } else if v <= lo {
                LabelClass::Negative
            } else {
                LabelClass::Excluded
            }
        })
        .collect())
}

/// Joins each segment to the nearest same-subject lab of `biomarker`.
///
/// Segments are dropped when the subject has no lab, when the nearest lab is
/// more than `window_days` away, or when that lab falls in the excluded middle
/// band. Equidistant labs resolve to the earlier draw.
pub fn attach_labels(
    segments: &[SegmentMeta],
    labs: &[LabRecord],
    biomarker: Biomarker,
    cfg: &LabelingConfig,
) -> Result<Vec<LabeledSegment>> {
    if !(cfg.window_days > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window_days must be positive, got {}",
            cfg.window_days
        )));
    }
    let mut rejected: Vec<String> = segments
        .iter()
        .filter(|s| !(s.median_timestamp > 0.0) || !s.median_timestamp.is_finite())
        .map(|s| s.segment_id.clone())
        .collect();
    rejected.extend(
        labs.iter()
            .filter(|l| !(l.drawn_at > 0.0) || !l.drawn_at.is_finite())
            .map(|l| format!("lab:{}@{}", l.subject_id, l.drawn_at)),
    );
    if !rejected.is_empty() {
        return Err(Error::RejectedRecords { ids: rejected });
    }

    let relevant: Vec<&LabRecord> = labs.iter().filter(|l| l.biomarker == biomarker).collect();
    if relevant.is_empty() {
        return Ok(Vec::new());
    }
    let values: Vec<f64> = relevant.iter().map(|l| l.value).collect();
    let classes = quantile_label(&values, cfg.lower_q, cfg.upper_q)?;

    let mut by_subject: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, lab) in relevant.iter().enumerate() {
        by_subject
            .entry(lab.subject_id.as_str())
            .or_default()
            .push((lab.drawn_at, i));
    }
    for draws in by_subject.values_mut() {
        draws.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let mut out = Vec::new();
    for seg in segments {
        let Some(draws) = by_subject.get(seg.subject_id.as_str()) else {
            continue;
        };
        let (gap_s, lab_idx) = nearest_draw(draws, seg.median_timestamp);
        let delta_t_days = gap_s / SECONDS_PER_DAY;
        if delta_t_days > cfg.window_days {
            continue;
        }
        let label = match classes[lab_idx] {
            LabelClass::Positive => 1,
            LabelClass::Negative => 0,
            LabelClass::Excluded => continue,
        };
        out.push(LabeledSegment {
            meta: seg.clone(),
            biomarker,
            delta_t_days,
            label,
            lab_value: relevant[lab_idx].value,
        });
    }
    Ok(out)
}

/// `draws` sorted by time; returns (|gap| in seconds, lab index). Ties go to
/// the earlier draw.
fn nearest_draw(draws: &[(f64, usize)], t: f64) -> (f64, usize) {
    let pos = draws.partition_point(|d| d.0 < t);
    let mut best: Option<(f64, usize)> = None;
    for &j in [pos.checked_sub(1), Some(pos)].iter().flatten() {
        if let Some(&(drawn, idx)) = draws.get(j) {
            let gap = (t - drawn).abs();
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, idx));
            }
        }
    }
    best.expect("draws is non-empty")
}

/// Lower median of a non-empty list of counts.
pub fn lower_median(counts: &[usize]) -> usize {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2]
}

/// Caps each subject's segment count per biomarker at the lower median of
/// per-subject counts, keeping a seeded uniform subsample. Input order of the
/// retained segments is preserved.
pub fn cap_segments(segments: &[LabeledSegment], seed: u64) -> Vec<LabeledSegment> {
    let mut groups: BTreeMap<(Biomarker, &str), Vec<usize>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        groups
            .entry((s.biomarker, s.meta.subject_id.as_str()))
            .or_default()
            .push(i);
    }
    let mut per_biomarker: BTreeMap<Biomarker, Vec<usize>> = BTreeMap::new();
    for ((b, _), idx) in &groups {
        per_biomarker.entry(*b).or_default().push(idx.len());
    }
    let caps: BTreeMap<Biomarker, usize> = per_biomarker
        .into_iter()
        .map(|(b, counts)| (b, lower_median(&counts)))
        .collect();

    let mut keep = vec![false; segments.len()];
    for ((b, subject), idx) in &groups {
        let cap = caps[b];
        if idx.len() <= cap {
            idx.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("cap/{b}/{subject}")));
        for j in rand::seq::index::sample(&mut rng, idx.len(), cap) {
            keep[idx[j]] = true;
        }
    }
    segments
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Majority label per subject (ties resolve to 1).
pub fn subject_majority_labels(segments: &[LabeledSegment]) -> BTreeMap<String, u8> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in segments {
        let e = counts.entry(s.meta.subject_id.clone()).or_default();
        if s.label == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, (neg, pos))| (k, u8::from(pos >= neg)))
        .collect()
}

/// Keeps only segments that agree with their subject's strict majority label
/// for the same biomarker; subjects split evenly are dropped entirely.
/// Returns (kept, number dropped).
pub fn enforce_subject_unanimity(segments: &[LabeledSegment]) -> (Vec<LabeledSegment>, usize) {
    let mut counts: BTreeMap<(Biomarker, &str), (usize, usize)> = BTreeMap::new();
    for s in segments {
        let e = counts.entry((s.biomarker, s.meta.subject_id.as_str())).or_default();
        if s.label == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    let kept: Vec<LabeledSegment> = segments
        .iter()
        .filter(|s| {
            let (neg, pos) = counts[&(s.biomarker, s.meta.subject_id.as_str())];
            (pos > neg && s.label == 1) || (neg > pos && s.label == 0)
        })
        .cloned()
        .collect();
    let dropped = segments.len() - kept.len();
    (kept, dropped)
}

/// Subject → fold index in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> BTreeSet<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Content digest; identical assignments hash identically.
    pub fn digest(&self) -> String {
        let mut text = format!("k={}\n", self.k);
        for (s, f) in &self.folds {
            text.push_str(&format!("{s}\t{f}\n"));
        }
        digest_hex(text.as_bytes())
    }
}

/// Deals subjects into `k` folds: each label stratum is shuffled by `seed`
/// and dealt round-robin, the deal continuing across strata so fold sizes
/// stay within one of each other.
pub fn stratified_folds(subjects: &[(String, u8)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if subjects.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let mut strata: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (s, label) in subjects {
        if !seen.insert(s.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate subject {s}")));
        }
        strata.entry(*label).or_default().push(s.as_str());
    }
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for (label, mut members) in strata {
        members.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("folds/{label}")));
        members.shuffle(&mut rng);
        for s in members {
            folds.insert(s.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, folds })
}
