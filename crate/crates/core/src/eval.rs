//! Ranking metrics, subject-level aggregation, the subject-stratified
//! cross-validation runner, decay-family comparison and the two ablations.
//!
//! Every fold fits its imputer and standardizer on the training split only,
//! scores test segments without time gaps, averages segment logits per
//! subject and computes metrics on subjects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, Forest, ForestConfig};
use crate::cohort::{stratified_folds, Biomarker, FoldAssignment};
use crate::decay::DecayFamily;
use crate::features::{FeatureRow, Imputer, N_FEATURES};
use crate::model::{train_biomarker, Dataset, Scorer, Standardizer, TrainConfig, TrainMode, TrainResult};
use crate::objective::Hyperparams;
use crate::stats::compensated_sum;
use crate::{derive_seed, digest_hex, Error, Result};

/// Exact AUROC via midranks (Mann-Whitney U): ties count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives keeps midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Average precision: sum over distinct descending thresholds of
/// `(recall gain) * precision`, tied scores forming one threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut terms = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let gained = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        tp += gained;
        seen += j - i + 1;
        if gained > 0 {
            terms.push(gained as f64 / n_pos as f64 * (tp as f64 / seen as f64));
        }
        i = j + 1;
    }
    Ok(compensated_sum(terms))
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub mean_logit: f64,
    pub label: u8,
    pub n_segments: usize,
}

/// Mean segment logit per subject, in subject-id order.
pub fn aggregate_subject(rows: &[(String, f64, u8)]) -> Result<Vec<SubjectPrediction>> {
    let mut groups: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
    for (subject, logit, label) in rows {
        if !logit.is_finite() {
            return Err(Error::NonFinite(format!("logit for subject {subject}")));
        }
        let entry = groups.entry(subject.as_str()).or_insert_with(|| (Vec::new(), *label));
        if entry.1 != *label {
            return Err(Error::ConflictingLabels(subject.clone()));
        }
        entry.0.push(*logit);
    }
    Ok(groups
        .into_iter()
        .map(|(subject, (logits, label))| SubjectPrediction {
            subject_id: subject.to_string(),
            mean_logit: compensated_sum(logits.iter().copied()) / logits.len() as f64,
            label,
            n_segments: logits.len(),
        })
        .collect())
}

/// What is trained in each fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "family", rename_all = "snake_case")]
pub enum Method {
    /// Learned decay rate.
    Ours(DecayFamily),
    Rf,
    /// Decay weights with the rate frozen at `CvConfig::fixed_alpha_rate`.
    AblationFixedAlpha(DecayFamily),
    /// Plain BCE (every weight one).
    AblationNoDecay,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours(_) => "ours",
            Method::Rf => "rf",
            Method::AblationFixedAlpha(_) => "ablation_fixed_alpha",
            Method::AblationNoDecay => "ablation_no_decay",
        }
    }

    pub fn family(self) -> Option<DecayFamily> {
        match self {
            Method::Ours(f) | Method::AblationFixedAlpha(f) => Some(f),
            Method::Rf | Method::AblationNoDecay => None,
        }
    }

    pub fn parse(name: &str, family: DecayFamily) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ours" | "full" => Ok(Method::Ours(family)),
            "rf" => Ok(Method::Rf),
            "ablation_fixed_alpha" | "fixed_alpha" => Ok(Method::AblationFixedAlpha(family)),
            "ablation_no_decay" | "no_decay" => Ok(Method::AblationNoDecay),
            _ => Err(Error::UnknownName {
                kind: "method",
                name: name.to_string(),
                expected: "ours, rf, ablation_fixed_alpha, ablation_no_decay".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub hp: Hyperparams,
    /// Frozen decay rate (1/day) for the fixed-alpha ablation.
    pub fixed_alpha_rate: f64,
    /// Worker threads for fold-level parallelism; results do not depend on it.
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 0,
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            hp: Hyperparams::default(),
            fixed_alpha_rate: crate::model::DEFAULT_INIT_RATE,
            jobs: 1,
        }
    }
}

impl CvConfig {
    /// Digest of every field except `jobs`.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("jobs");
        }
        digest_hex(v.to_string().as_bytes())
    }
}

/// A fold's fitted model, including the imputer fitted on its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Scorer {
        imputer: Imputer,
        scorer: Scorer,
        result: TrainResult,
    },
    Forest {
        imputer: Imputer,
        forest: Forest,
    },
}

/// Probability clamp used to turn forest votes into logits.
const RF_PROB_CLAMP: f64 = 1e-6;

impl FittedModel {
    /// Segment logit from features alone (`None` = failed featurization).
    pub fn predict_logit(&self, features: Option<&[f64]>) -> Result<f64> {
        match self {
            FittedModel::Scorer { imputer, scorer, .. } => scorer.predict_logit(&imputer.fill(features)),
            FittedModel::Forest { imputer, forest } => {
                let p = forest
                    .predict_proba(&imputer.fill(features))
                    .clamp(RF_PROB_CLAMP, 1.0 - RF_PROB_CLAMP);
                Ok((p / (1.0 - p)).ln())
            }
        }
    }

    pub fn learned_rate_per_day(&self) -> Option<f64> {
        match self {
            FittedModel::Scorer { result, .. } if result.mode != TrainMode::NoDecay => Some(result.learned_rate_per_day),
            _ => None,
        }
    }
}

fn fit_imputer(rows: &[&FeatureRow]) -> Result<Imputer> {
    Imputer::fit(rows.iter().filter_map(|r| r.features.as_deref()))
}

fn dataset(name: &str, rows: &[&FeatureRow], imputer: &Imputer) -> Result<(Vec<f64>, Vec<u8>, Vec<f64>)> {
    let mut x = Vec::with_capacity(rows.len() * N_FEATURES);
    for r in rows {
        let filled = imputer.fill(r.features.as_deref());
        if filled.len() != N_FEATURES {
            return Err(Error::LengthMismatch {
                what: "feature row",
                left: filled.len(),
                right: N_FEATURES,
            });
        }
        x.extend(filled);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name}: feature matrix")));
    }
    Ok((x, rows.iter().map(|r| r.label).collect(), rows.iter().map(|r| r.delta_t_days).collect()))
}

/// Fits one method on a fold's training (and, for the scorer, validation)
/// rows. Test rows are not an input.
pub fn fit_fold(
    name: &str,
    train: &[&FeatureRow],
    valid: &[&FeatureRow],
    method: Method,
    train_cfg: &TrainConfig,
    forest_cfg: &ForestConfig,
    hp: &Hyperparams,
) -> Result<FittedModel> {
    match method {
        Method::Rf => {
            let mut all: Vec<&FeatureRow> = train.to_vec();
            all.extend_from_slice(valid);
            let imputer = fit_imputer(&all)?;
            let (x, y, _) = dataset(name, &all, &imputer)?;
            let forest = baseline::fit(&x, &y, N_FEATURES, forest_cfg).map_err(|e| match e {
                Error::SingleClass { .. } => Error::SingleClass { context: name.to_string() },
                other => other,
            })?;
            Ok(FittedModel::Forest { imputer, forest })
        }
        _ => {
            let imputer = fit_imputer(train)?;
            let (x, y, g) = dataset(name, train, &imputer)?;
            let standardizer = Standardizer::fit(&x, N_FEATURES)?;
            let train_ds = Dataset::new(name, N_FEATURES, standardizer.apply(&x), y, g)?;
            let (vx, vy, vg) = dataset(name, valid, &imputer)?;
            let valid_ds = Dataset::new(format!("{name} validation"), N_FEATURES, standardizer.apply(&vx), vy, vg)?;
            let result = train_biomarker(&train_ds, &valid_ds, train_cfg, hp)?;
            Ok(FittedModel::Scorer {
                imputer,
                scorer: Scorer {
                    standardizer,
                    params: result.params.clone(),
                },
                result,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub learned_rate_per_day: Option<f64>,
    pub n_train_subjects: usize,
    pub n_valid_subjects: usize,
    pub n_test_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub biomarker: Biomarker,
    pub method: Method,
    pub per_fold: Vec<FoldMetrics>,
    pub mean_auroc: f64,
    pub mean_auprc: f64,
    /// Digest of the fold assignment; equal across methods sharing folds.
    pub folds_digest: String,
    pub config_hash: String,
}

impl MetricReport {
    pub fn mean_learned_rate(&self) -> Option<f64> {
        let rates: Vec<f64> = self.per_fold.iter().filter_map(|f| f.learned_rate_per_day).collect();
        (!rates.is_empty()).then(|| compensated_sum(rates.iter().copied()) / rates.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub report: MetricReport,
    pub folds: FoldAssignment,
    pub models: Vec<FittedModel>,
    pub subject_predictions: Vec<Vec<SubjectPrediction>>,
}

/// Subject label per subject; errors if a subject's segments disagree.
pub fn subject_labels(rows: &[&FeatureRow]) -> Result<BTreeMap<String, u8>> {
    let mut out: BTreeMap<String, u8> = BTreeMap::new();
    for r in rows {
        match out.get(&r.subject_id) {
            Some(&y) if y != r.label => return Err(Error::ConflictingLabels(r.subject_id.clone())),
            Some(_) => {}
            None => {
                out.insert(r.subject_id.clone(), r.label);
            }
        }
    }
    Ok(out)
}

/// Fold assignment shared by every method run with this seed.
pub fn folds_for(rows: &[&FeatureRow], k: usize, seed: u64) -> Result<FoldAssignment> {
    let labels = subject_labels(rows)?;
    for class in [0u8, 1] {
        let n = labels.values().filter(|&&y| y == class).count();
        if n < k {
            return Err(Error::InsufficientData(format!(
                "{n} subjects with label {class}; need at least {k} per class"
            )));
        }
    }
    let subjects: Vec<(String, u8)> = labels.into_iter().collect();
    stratified_folds(&subjects, k, derive_seed(seed, "folds"))
}

fn check_disjoint(fold: usize, sets: [(&str, &BTreeSet<&str>); 3]) -> Result<()> {
    for a in 0..3 {
        for b in a + 1..3 {
            if let Some(s) = sets[a].1.intersection(sets[b].1).next() {
                return Err(Error::InvalidArgument(format!(
                    "fold {fold}: subject {s} appears in both {} and {}",
                    sets[a].0, sets[b].0
                )));
            }
        }
    }
    Ok(())
}

fn subject_set<'a>(rows: &[&'a FeatureRow]) -> BTreeSet<&'a str> {
    rows.iter().map(|r| r.subject_id.as_str()).collect()
}

struct FoldRun {
    metrics: FoldMetrics,
    model: FittedModel,
    predictions: Vec<SubjectPrediction>,
}

fn run_fold(
    rows: &[&FeatureRow],
    folds: &FoldAssignment,
    fold: usize,
    biomarker: Biomarker,
    method: Method,
    cfg: &CvConfig,
) -> Result<FoldRun> {
    let k = folds.k;
    let valid_fold = (fold + 1) % k;
    let part = |r: &FeatureRow| folds.fold_of(&r.subject_id).expect("every subject has a fold");
    let test: Vec<&FeatureRow> = rows.iter().copied().filter(|r| part(r) == fold).collect();
    let (train, valid): (Vec<&FeatureRow>, Vec<&FeatureRow>) = rows
        .iter()
        .copied()
        .filter(|r| part(r) != fold)
        .partition(|r| part(r) != valid_fold);

    let (train_ids, valid_ids, test_ids) = (subject_set(&train), subject_set(&valid), subject_set(&test));
    check_disjoint(fold, [("train", &train_ids), ("validation", &valid_ids), ("test", &test_ids)])?;

    let mut train_cfg = train_config_for(method, &cfg.train, cfg.fixed_alpha_rate);
    train_cfg.seed = derive_seed(cfg.seed, &format!("train/{fold}"));
    let mut forest_cfg = cfg.forest.clone();
    forest_cfg.seed = derive_seed(cfg.seed, &format!("forest/{fold}"));

    let name = format!("{biomarker} fold {fold}");
    let model = fit_fold(&name, &train, &valid, method, &train_cfg, &forest_cfg, &cfg.hp)?;

    let scored = test
        .iter()
        .map(|r| Ok((r.subject_id.clone(), model.predict_logit(r.features.as_deref())?, r.label)))
        .collect::<Result<Vec<_>>>()?;
    let predictions = aggregate_subject(&scored)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.mean_logit).collect();
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let metrics = FoldMetrics {
        fold,
        auroc: auroc(&scores, &labels)?,
        auprc: auprc(&scores, &labels)?,
        learned_rate_per_day: model.learned_rate_per_day(),
        n_train_subjects: train_ids.len(),
        n_valid_subjects: valid_ids.len(),
        n_test_subjects: test_ids.len(),
    };
    Ok(FoldRun {
        metrics,
        model,
        predictions,
    })
}

/// Training configuration a method implies: family and mode, and for the
/// frozen-rate ablation the rate it is frozen at.
pub fn train_config_for(method: Method, base: &TrainConfig, fixed_alpha_rate: f64) -> TrainConfig {
    let mut cfg = base.clone();
    match method {
        Method::Ours(f) => {
            cfg.family = f;
            cfg.mode = TrainMode::Full;
        }
        Method::AblationFixedAlpha(f) => {
            cfg.family = f;
            cfg.mode = TrainMode::FixedAlpha;
            cfg.init_rate = fixed_alpha_rate;
        }
        Method::AblationNoDecay => cfg.mode = TrainMode::NoDecay,
        Method::Rf => {}
    }
    cfg
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Subject-stratified k-fold cross-validation of one method on the rows of
/// one biomarker. Fold `f` tests on fold `f`; scorer methods validate on
/// fold `f + 1 (mod k)` and train on the rest, the forest trains on both.
pub fn run_cv_detailed(rows: &[FeatureRow], biomarker: Biomarker, method: Method, cfg: &CvConfig) -> Result<CvOutcome> {
    if cfg.k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {}", cfg.k)));
    }
    if !(cfg.fixed_alpha_rate > 0.0) {
        return Err(Error::InvalidArgument("fixed_alpha_rate must be positive".into()));
    }
    let rows: Vec<&FeatureRow> = rows.iter().filter(|r| r.biomarker == biomarker).collect();
    let folds = folds_for(&rows, cfg.k, cfg.seed)?;
    let runs: Vec<Result<FoldRun>> = with_jobs(cfg.jobs, || {
        (0..cfg.k)
            .into_par_iter()
            .map(|f| run_fold(&rows, &folds, f, biomarker, method, cfg).map_err(|e| e.in_fold(f)))
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let per_fold: Vec<FoldMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let k = per_fold.len() as f64;
    let report = MetricReport {
        biomarker,
        method,
        mean_auroc: compensated_sum(per_fold.iter().map(|f| f.auroc)) / k,
        mean_auprc: compensated_sum(per_fold.iter().map(|f| f.auprc)) / k,
        per_fold,
        folds_digest: folds.digest(),
        config_hash: digest_hex(format!("{}|{:?}", cfg.digest(), method).as_bytes()),
    };
    let (models, subject_predictions) = runs.into_iter().map(|r| (r.model, r.predictions)).unzip();
    Ok(CvOutcome {
        report,
        folds,
        models,
        subject_predictions,
    })
}

pub fn run_cv(rows: &[FeatureRow], biomarker: Biomarker, method: Method, cfg: &CvConfig) -> Result<MetricReport> {
    run_cv_detailed(rows, biomarker, method, cfg).map(|o| o.report)
}

/// The learned-rate method under each family, on shared folds and seeds.
pub fn compare_decays(
    rows: &[FeatureRow],
    biomarker: Biomarker,
    families: &[DecayFamily],
    cfg: &CvConfig,
) -> Result<Vec<MetricReport>> {
    families
        .iter()
        .map(|&f| run_cv(rows, biomarker, Method::Ours(f), cfg))
        .collect()
}

/// Full method, frozen rate, and no decay, on shared folds and seeds.
pub fn ablation(rows: &[FeatureRow], biomarker: Biomarker, family: DecayFamily, cfg: &CvConfig) -> Result<Vec<MetricReport>> {
    [
        Method::Ours(family),
        Method::AblationFixedAlpha(family),
        Method::AblationNoDecay,
    ]
    .into_iter()
    .map(|m| run_cv(rows, biomarker, m, cfg))
    .collect()
}

pub const REPORT_HEADER: &str = "biomarker,method,family,fold,auroc,auprc,alpha_hat";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-fold rows followed by one `mean` row per report.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let family = r.method.family().map(|f| f.name()).unwrap_or("");
        let prefix = format!("{},{},{}", r.biomarker, r.method.name(), family);
        for f in &r.per_fold {
            let _ = writeln!(out, "{prefix},{},{},{},{}", f.fold, f.auroc, f.auprc, opt(f.learned_rate_per_day));
        }
        let _ = writeln!(out, "{prefix},mean,{},{},{}", r.mean_auroc, r.mean_auprc, opt(r.mean_learned_rate()));
    }
    out
}

/// One summary row parsed back from a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub biomarker: String,
    pub method: String,
    pub family: String,
    pub auroc: f64,
    pub auprc: f64,
    pub alpha_hat: Option<f64>,
}

/// Extracts the `mean` rows of a report CSV.
pub fn parse_report_means(csv_text: &str) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::Parse(format!("expected 7 report columns, got {}", rec.len())));
        }
        if &rec[3] != "mean" {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
        out.push(SummaryRow {
            biomarker: rec[0].to_string(),
            method: rec[1].to_string(),
            family: rec[2].to_string(),
            auroc: num(&rec[4])?,
            auprc: num(&rec[5])?,
            alpha_hat: if rec[6].is_empty() { None } else { Some(num(&rec[6])?) },
        });
    }
    Ok(out)
}

/// Aligned text table of summary rows, one line per method/family.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let label = |r: &SummaryRow| {
        if r.family.is_empty() {
            r.method.clone()
        } else {
            format!("{} ({})", r.method, r.family)
        }
    };
    let w0 = rows.iter().map(|r| r.biomarker.len()).chain([9]).max().unwrap_or(9);
    let w1 = rows.iter().map(|r| label(r).len()).chain([6]).max().unwrap_or(6);
    let mut out = format!("{:<w0$}  {:<w1$}  {:>6}  {:>6}  {:>9}\n", "Biomarker", "Method", "AUROC", "AUPRC", "alpha/day");
    out.push_str(&format!("{}\n", "-".repeat(w0 + w1 + 31)));
    for r in rows {
        let alpha = r.alpha_hat.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:>6.3}  {:>6.3}  {:>9}",
            r.biomarker,
            label(r),
            r.auroc,
            r.auprc,
            alpha
        );
    }
    out
}

/// Plot-ready `family,alpha_hat,delta_t_days,weight` rows on a grid of gaps.
pub fn weight_curve_csv(curves: &[(DecayFamily, f64)], max_gap_days: f64, step_days: f64) -> Result<String> {
    if !(step_days > 0.0) || !(max_gap_days >= 0.0) {
        return Err(Error::InvalidArgument("curve grid needs step > 0 and max >= 0".into()));
    }
    let mut out = String::from("family,alpha_hat,delta_t_days,weight\n");
    let steps = (max_gap_days / step_days).round() as usize;
    for &(family, rate) in curves {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("decay rate must be >= 0, got {rate}")));
        }
        for i in 0..=steps {
            let gap = i as f64 * step_days;
            let _ = writeln!(out, "{},{},{},{}", family.name(), rate, gap, family.value(rate * gap));
        }
    }
    Ok(out)
}
