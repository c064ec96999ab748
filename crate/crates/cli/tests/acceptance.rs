//! Acceptance suite: one PASS/FAIL line per criterion and a summary naming
//! the failing ones. Runs as a plain binary (no libtest harness) so the lines
//! are always shown. Set `ACCEPTANCE_STRICT=1` to exit nonzero on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gapweight::cohort::{
    attach_labels, cap_segments, lower_median, Biomarker, LabRecord, LabeledSegment, LabelingConfig, SegmentMeta,
};
use gapweight::decay::{inverse_softplus, DecayFamily, DecayParam};
use gapweight::eval::{auprc, auroc, run_cv, run_cv_detailed, CvConfig, CvOutcome, FittedModel, Method};
use gapweight::features::{detect_beats, hrv_features, FeatureRow, N_FEATURES};
use gapweight::model::{loss_and_gradients, train_biomarker, Dataset, Scorer, ScorerParams, TrainConfig, TrainMode};
use gapweight::objective::{Hyperparams, Weighting};
use gapweight::signal::{
    preprocess_stream, segment_stream, segment_sqi, zscore_samples, ButterworthBandpass, PreprocessConfig,
    BUTTERWORTH_ORDER, DEFAULT_HIGH_HZ, DEFAULT_LOW_HZ, DEFAULT_SQI_THRESHOLD,
};
use gapweight::synth::{gen_cohort, gen_waveform, gen_waveform_cohort, SynthCohortConfig, WaveformConfig, WaveformCohortConfig};
use gapweight::{derive_seed, digest_hex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEEDS: u64 = 10;

// ---------------------------------------------------------------- 1

fn near_kink(family: DecayFamily, x: f64) -> bool {
    family.kinks().iter().any(|k| (x - k).abs() < 1e-3)
}

/// Smallest |pre-activation| over the hidden layer for one row. Central
/// differences straddling a ReLU kink measure a one-sided average, not the
/// derivative, so rows closer than the probe step are redrawn.
fn relu_margin(params: &ScorerParams, x: &[f64]) -> f64 {
    params
        .w1()
        .chunks_exact(params.input_dim())
        .zip(params.b1())
        .map(|(row, b)| (b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).abs())
        .fold(f64::INFINITY, f64::min)
}

struct Numeric {
    base_total: f64,
    theta: Vec<f64>,
    raw_alpha: f64,
}

/// `softplus(b + d) - softplus(b)` without subtracting two rounded values.
fn softplus_step(b: f64, d: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-b).exp());
    (sig * d.exp_m1()).ln_1p()
}

/// Central differences `(T(p + h) - T(p - h)) / 2h` of the weighted objective,
/// from an independent forward pass. Each perturbation moves a few logits
/// (or weights) by a small delta, and the change in every loss term is formed
/// directly from that delta, so the quotient does not lose digits to
/// cancellation between two O(1) totals.
#[allow(clippy::too_many_arguments)]
fn central_differences(
    params: &ScorerParams,
    x: &[f64],
    labels: &[u8],
    gaps: &[f64],
    family: DecayFamily,
    raw: f64,
    hp: &Hyperparams,
    h: f64,
) -> Numeric {
    let d = params.input_dim();
    let units = params.hidden_dim();
    let n = labels.len();
    let (w1, b1, w2) = (params.w1(), params.b1(), params.w2());
    let relu = |v: f64| v.max(0.0);
    let pre: Vec<Vec<f64>> = x
        .chunks_exact(d)
        .map(|row| {
            (0..units)
                .map(|u| b1[u] + (0..d).map(|j| w1[u * d + j] * row[j]).sum::<f64>())
                .collect()
        })
        .collect();
    let z: Vec<f64> = pre
        .iter()
        .map(|p| params.b2() + p.iter().zip(w2).map(|(&v, &w)| relu(v) * w).sum::<f64>())
        .collect();
    // BCE of logit z is softplus(s) with s = z (label 0) or -z (label 1).
    let sign: Vec<f64> = labels.iter().map(|&y| if y == 1 { -1.0 } else { 1.0 }).collect();
    let bce: Vec<f64> = (0..n).map(|i| softplus_step(0.0, sign[i] * z[i]) + 2f64.ln()).collect();
    let weight = |r: f64, gap: f64| {
        let rate = r.max(0.0) + (-r.abs()).exp().ln_1p();
        family.value(rate * gap)
    };
    let w: Vec<f64> = gaps.iter().map(|&g| weight(raw, g)).collect();
    let base_total = (0..n).map(|i| w[i] * (bce[i] - hp.lambda)).sum::<f64>() / n as f64;

    // Quotient for logit shifts dz_plus / dz_minus on sample i.
    let term = |i: usize, up: f64, down: f64| {
        let s = sign[i];
        let low = s * z[i] + s * down;
        w[i] * softplus_step(low, s * (up - down))
    };
    let mut theta = vec![0.0; params.flat().len()];
    for u in 0..units {
        for j in 0..=d {
            let mut acc = 0.0;
            for i in 0..n {
                let xj = if j < d { x[i * d + j] } else { 1.0 };
                let up = w2[u] * (relu(pre[i][u] + h * xj) - relu(pre[i][u]));
                let down = w2[u] * (relu(pre[i][u] - h * xj) - relu(pre[i][u]));
                acc += term(i, up, down);
            }
            let slot = if j < d { u * d + j } else { units * d + u };
            theta[slot] = acc / n as f64 / (2.0 * h);
        }
        let acc: f64 = (0..n).map(|i| term(i, h * relu(pre[i][u]), -h * relu(pre[i][u]))).sum();
        theta[units * (d + 1) + u] = acc / n as f64 / (2.0 * h);
    }
    let acc: f64 = (0..n).map(|i| term(i, h, -h)).sum();
    theta[units * (d + 2)] = acc / n as f64 / (2.0 * h);
    let acc: f64 = (0..n)
        .map(|i| (bce[i] - hp.lambda) * (weight(raw + h, gaps[i]) - weight(raw - h, gaps[i])))
        .sum();
    Numeric {
        base_total,
        theta,
        raw_alpha: acc / n as f64 / (2.0 * h),
    }
}

fn gradient_check() -> Outcome {
    let hp = Hyperparams::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut worst_at = String::new();
    let mut resampled = 0usize;
    let mut base_gap = 0.0f64;
    for b in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(b, "gradient-batch"));
        let family = DecayFamily::ALL[(b % 4) as usize];
        let n = rng.random_range(8..=64);
        let rate: f64 = rng.random_range(0.02..0.5);
        let raw = inverse_softplus(rate);
        let mut params = ScorerParams::init_with(N_FEATURES, 32, derive_seed(b, "gradient-init"));
        for (i, v) in params.flat_mut().iter_mut().enumerate() {
            // Nonzero biases so every parameter block is exercised.
            if i >= N_FEATURES * 32 {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let mut x = Vec::with_capacity(n * N_FEATURES);
        let mut labels = Vec::with_capacity(n);
        let mut gaps = Vec::with_capacity(n);
        for _ in 0..n {
            let row = loop {
                let row: Vec<f64> = (0..N_FEATURES).map(|_| rng.random_range(-2.0..2.0)).collect();
                if relu_margin(&params, &row) > 1e-3 {
                    break row;
                }
                resampled += 1;
            };
            x.extend(row);
            labels.push(rng.random_range(0..=1u8));
            let mut gap: f64 = rng.random_range(0.0..30.0);
            while near_kink(family, rate * gap) {
                gap = rng.random_range(0.0..30.0);
            }
            gaps.push(gap);
        }
        let numeric = central_differences(&params, &x, &labels, &gaps, family, raw, &hp, h);
        let data = Dataset::new("gradient batch", N_FEATURES, x, labels, gaps).unwrap();
        let (loss, grads) =
            loss_and_gradients(&params, &Weighting::Decay(DecayParam::from_raw(family, raw)), &data, None, &hp).unwrap();
        base_gap = base_gap.max((loss.total - numeric.base_total).abs());

        let mut compare = |analytic: f64, numeric: f64, what: String| {
            // Inactive hidden units give exact zeros on both sides.
            if analytic == 0.0 && numeric == 0.0 {
                return;
            }
            checked += 1;
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            if rel > worst {
                worst = rel;
                worst_at = format!("{what}: analytic {analytic:.3e}, numeric {numeric:.3e}");
            }
        };
        for (j, (&a, &n)) in grads.theta.iter().zip(&numeric.theta).enumerate() {
            compare(a, n, format!("batch {b} theta[{j}]"));
        }
        compare(grads.raw_alpha, numeric.raw_alpha, format!("batch {b} raw alpha ({family})"));
    }
    outcome(
        worst < 1e-4 && base_gap < 1e-12,
        format!(
            "{checked} partials over 100 batches ({resampled} rows redrawn off ReLU kinks), worst relative error {worst:.2e} ({worst_at}); oracle total agrees to {base_gap:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Plain mini-batch BCE trainer written against the textbook formulas,
/// sharing only the seeding convention with the library trainer.
struct PlainTrainer {
    d: usize,
    h: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl PlainTrainer {
    fn new(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = (6.0 / (d + h) as f64).sqrt();
        let w1 = (0..h * d).map(|_| rng.random_range(-l1..l1)).collect();
        let l2 = (6.0 / (h + 1) as f64).sqrt();
        let w2 = (0..h).map(|_| rng.random_range(-l2..l2)).collect();
        PlainTrainer {
            d,
            h,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: 0.0,
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        (0..self.h)
            .map(|j| {
                let mut s = 0.0;
                for k in 0..self.d {
                    s += self.w1[j * self.d + k] * x[k];
                }
                self.b1[j] + s
            })
            .collect()
    }

    fn logit(&self, pre: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.h {
            s += pre[j].max(0.0) * self.w2[j];
        }
        self.b2 + s
    }

    fn mean_bce(&self, data: &Dataset) -> f64 {
        let mut s = 0.0;
        for i in 0..data.len() {
            let p = prob(self.logit(&self.hidden(data.row(i))));
            s += plain_bce(p, data.labels[i]);
        }
        s / data.len() as f64
    }
}

fn prob(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        z.exp() / (1.0 + z.exp())
    }
}

fn plain_bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

struct PlainAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl PlainAdam {
    fn step(&mut self, params: &mut [&mut f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - 0.9f64.powi(self.t);
        let c2 = 1.0 - 0.999f64.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            self.m[i] = 0.9 * self.m[i] + (1.0 - 0.9) * grads[i];
            self.v[i] = 0.999 * self.v[i] + (1.0 - 0.999) * grads[i] * grads[i];
            **p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Returns the per-epoch `(mean BCE, total = mean BCE - lambda)` trace.
fn plain_trace(train: &Dataset, valid: &Dataset, cfg: &TrainConfig, lambda: f64) -> Vec<(f64, f64)> {
    let mut net = PlainTrainer::new(train.dim, cfg.hidden_units, derive_seed(cfg.seed, "init"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let n_params = net.w1.len() + net.b1.len() + net.w2.len() + 1;
    let mut adam = PlainAdam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
        lr: cfg.learning_rate,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::new();
    let (mut best, mut since) = (f64::INFINITY, 0);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let inv_n = 1.0 / batch.len() as f64;
            let mut gw1 = vec![0.0; net.w1.len()];
            let mut gb1 = vec![0.0; net.h];
            let mut gw2 = vec![0.0; net.h];
            let mut gb2 = 0.0;
            for &i in batch {
                let x = train.row(i);
                let pre = net.hidden(x);
                let p = prob(net.logit(&pre));
                let dz = (p - f64::from(train.labels[i])) * inv_n;
                gb2 += dz;
                for j in 0..net.h {
                    if pre[j] > 0.0 {
                        gw2[j] += dz * pre[j];
                        let dh = dz * net.w2[j];
                        gb1[j] += dh;
                        for k in 0..net.d {
                            gw1[j * net.d + k] += dh * x[k];
                        }
                    }
                }
            }
            let mut grads = gw1;
            grads.extend(gb1);
            grads.extend(gw2);
            grads.push(gb2);
            let mut refs: Vec<&mut f64> = net.w1.iter_mut().chain(net.b1.iter_mut()).chain(net.w2.iter_mut()).collect();
            refs.push(&mut net.b2);
            adam.step(&mut refs, &grads);
        }
        let bce = net.mean_bce(train);
        trace.push((bce, bce - lambda));
        let valid_total = net.mean_bce(valid) - lambda;
        if valid_total < best {
            best = valid_total;
            since = 0;
        } else {
            since += 1;
            if since >= cfg.early_stop_patience {
                break;
            }
        }
    }
    trace
}

fn rows_to_dataset(name: &str, rows: &[&FeatureRow]) -> Dataset {
    let x = rows.iter().flat_map(|r| r.features.clone().unwrap()).collect();
    Dataset::new(
        name,
        N_FEATURES,
        x,
        rows.iter().map(|r| r.label).collect(),
        rows.iter().map(|r| r.delta_t_days).collect(),
    )
    .unwrap()
}

fn loss_identity() -> Outcome {
    let hp = Hyperparams::default();
    let mut worst = 0.0f64;
    let mut epochs = 0;
    for seed in 0..3u64 {
        let cohort = gen_cohort(&SynthCohortConfig {
            n_subjects: 60,
            seed,
            ..Default::default()
        })
        .unwrap();
        let (valid, train): (Vec<&FeatureRow>, Vec<&FeatureRow>) =
            cohort.rows.iter().partition(|r| r.subject_id.as_str() < "S0012");
        let train = rows_to_dataset("train", &train);
        let valid = rows_to_dataset("valid", &valid);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 64,
            seed: derive_seed(seed, "identity"),
            mode: TrainMode::NoDecay,
            early_stop_patience: 10,
            ..Default::default()
        };
        let lib = train_biomarker(&train, &valid, &cfg, &hp).unwrap();
        let plain = plain_trace(&train, &valid, &cfg, hp.lambda);
        if lib.loss_trace.len() != plain.len() {
            return outcome(
                false,
                format!("seed {seed}: trace lengths differ ({} vs {})", lib.loss_trace.len(), plain.len()),
            );
        }
        for (e, (bce, total)) in lib.loss_trace.iter().zip(&plain) {
            if e.mean_weight != 1.0 {
                return outcome(false, format!("seed {seed}: mean weight {} under no_decay", e.mean_weight));
            }
            worst = worst.max((e.weighted_bce - bce).abs()).max((e.total - total).abs());
        }
        epochs += plain.len();
    }
    outcome(worst <= 1e-12, format!("{epochs} epochs over 3 seeds, worst per-epoch difference {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn auroc_oracle(s: &[f64], y: &[u8]) -> f64 {
    let mut wins = 0.0;
    let (mut np, mut nn) = (0.0, 0.0);
    for i in 0..s.len() {
        if y[i] == 1 {
            np += 1.0;
        } else {
            nn += 1.0;
        }
    }
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / (np * nn)
}

/// Average precision by enumerating each distinct score as a threshold.
fn auprc_oracle(s: &[f64], y: &[u8]) -> f64 {
    let total_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = s.iter().zip(y).filter(|(v, l)| **v >= t && **l == 1).count() as f64;
        let predicted = s.iter().filter(|v| **v >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut worst_roc, mut worst_pr) = (0.0f64, 0.0f64);
    let mut tied = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        y[0] = 1;
        y[1] = 0;
        let levels = match rng.random_range(0..3) {
            0 => 0,
            1 => rng.random_range(2..6),
            _ => rng.random_range(6..40),
        };
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-3.0..3.0);
                if levels == 0 {
                    v
                } else {
                    (v * levels as f64).round() / levels as f64
                }
            })
            .collect();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied += 1;
        }
        worst_roc = worst_roc.max((auroc(&s, &y).unwrap() - auroc_oracle(&s, &y)).abs());
        worst_pr = worst_pr.max((auprc(&s, &y).unwrap() - auprc_oracle(&s, &y)).abs());
    }
    outcome(
        worst_roc <= 1e-12 && worst_pr <= 1e-12 && tied > 0,
        format!("1000 instances ({tied} with ties); worst |dAUROC| {worst_roc:.1e}, |dAUPRC| {worst_pr:.1e}"),
    )
}

// ---------------------------------------------------------------- 4-6

fn cohort_for(seed: u64, rate: f64) -> Vec<FeatureRow> {
    gen_cohort(&SynthCohortConfig {
        seed,
        true_staleness_rate: rate,
        ..Default::default()
    })
    .unwrap()
    .rows
}

fn cv_for(seed: u64) -> CvConfig {
    CvConfig {
        seed,
        fixed_alpha_rate: 0.5,
        ..Default::default()
    }
}

struct SeedRuns {
    full: CvOutcome,
    no_decay: f64,
    fixed: f64,
    families: BTreeMap<&'static str, f64>,
    rate_low: f64,
    rate_high: f64,
    fold_digests: Vec<String>,
}

fn synthetic_runs() -> Vec<SeedRuns> {
    let bm = Biomarker::Potassium;
    (0..SEEDS)
        .map(|seed| {
            let rows = cohort_for(seed, 0.15);
            let cv = cv_for(seed);
            let full = run_cv_detailed(&rows, bm, Method::Ours(DecayFamily::Linear), &cv).unwrap();
            let nod = run_cv(&rows, bm, Method::AblationNoDecay, &cv).unwrap();
            let fix = run_cv(&rows, bm, Method::AblationFixedAlpha(DecayFamily::Linear), &cv).unwrap();
            let mut families = BTreeMap::new();
            let mut digests = vec![full.report.folds_digest.clone(), nod.folds_digest, fix.folds_digest];
            families.insert("linear", full.report.mean_auroc);
            for f in [DecayFamily::Exponential, DecayFamily::Inverse, DecayFamily::CosineAnnealing] {
                let r = run_cv(&rows, bm, Method::Ours(f), &cv).unwrap();
                digests.push(r.folds_digest.clone());
                families.insert(f.name(), r.mean_auroc);
            }
            let rate_at = |rate: f64| {
                run_cv(&cohort_for(seed, rate), bm, Method::Ours(DecayFamily::Linear), &cv)
                    .unwrap()
                    .mean_learned_rate()
                    .unwrap()
            };
            let run = SeedRuns {
                no_decay: nod.mean_auroc,
                fixed: fix.mean_auroc,
                families,
                rate_low: rate_at(0.05),
                rate_high: rate_at(0.4),
                fold_digests: digests,
                full,
            };
            eprintln!(
                "  seed {seed}: full {:.4} fixed {:.4} none {:.4} | rates {:.3} {:.3} {:.3} | families {:?}",
                run.full.report.mean_auroc,
                run.fixed,
                run.no_decay,
                run.rate_low,
                run.full.report.mean_learned_rate().unwrap(),
                run.rate_high,
                run.families
            );
            run
        })
        .collect()
}

fn time_aware_benefit(runs: &[SeedRuns]) -> Outcome {
    let n = runs.len() as f64;
    let full = runs.iter().map(|r| r.full.report.mean_auroc).sum::<f64>() / n;
    let none = runs.iter().map(|r| r.no_decay).sum::<f64>() / n;
    let wins = runs.iter().filter(|r| r.full.report.mean_auroc >= r.fixed).count();
    outcome(
        full >= none + 0.02 && wins >= 8,
        format!("mean AUROC full {full:.4} vs no_decay {none:.4} (+{:.4}); full >= fixed_alpha(0.5) in {wins}/10", full - none),
    )
}

fn rate_recovery(runs: &[SeedRuns]) -> Outcome {
    let within = runs
        .iter()
        .filter(|r| {
            let a = r.full.report.mean_learned_rate().unwrap();
            (0.075..=0.30).contains(&a)
        })
        .count();
    let ordered = runs
        .iter()
        .filter(|r| {
            let mid = r.full.report.mean_learned_rate().unwrap();
            r.rate_low < mid && mid < r.rate_high
        })
        .count();
    let rates: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}", r.full.report.mean_learned_rate().unwrap()))
        .collect();
    outcome(
        within >= 7 && ordered >= 8,
        format!(
            "alpha_hat in [0.075, 0.30] for {within}/10 (rates {}); ordering 0.05<0.15<0.4 kept in {ordered}/10",
            rates.join(" ")
        ),
    )
}

fn family_sanity(runs: &[SeedRuns]) -> Outcome {
    let shared = runs.iter().all(|r| r.fold_digests.windows(2).all(|w| w[0] == w[1]));
    let linear_best = runs
        .iter()
        .filter(|r| {
            let best = r.families.values().copied().fold(f64::NEG_INFINITY, f64::max);
            r.families["linear"] >= best
        })
        .count();
    let mut winners: BTreeMap<&str, usize> = BTreeMap::new();
    for r in runs {
        let (name, _) = r.families.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        *winners.entry(name).or_default() += 1;
    }
    outcome(
        shared && linear_best >= 7,
        format!("linear best in {linear_best}/10 (winners {winners:?}); folds shared: {shared}"),
    )
}

// ---------------------------------------------------------------- 7

fn pipeline_fidelity() -> Outcome {
    let pre = PreprocessConfig::default();
    let mut failures = Vec::new();

    let (mut total, mut passed) = (0, 0);
    for hr in [45.0, 60.0, 75.0, 90.0, 110.0] {
        for seed in 0..4 {
            let cfg = WaveformConfig {
                heart_rate_bpm: hr,
                seed,
                ..Default::default()
            };
            let stream = gen_waveform(&cfg, 60.0).unwrap();
            for seg in segment_stream(&stream, pre.segment_seconds).unwrap() {
                total += 1;
                passed += usize::from(segment_sqi(&seg, DEFAULT_SQI_THRESHOLD).pass);
            }
        }
    }
    if passed != total {
        failures.push(format!("SQI passed {passed}/{total}"));
    }

    let filter = ButterworthBandpass::design(BUTTERWORTH_ORDER, DEFAULT_LOW_HZ, DEFAULT_HIGH_HZ, 25.0).unwrap();
    let rms_after = |freq: f64| {
        let x: Vec<f64> = (0..25 * 400).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 25.0).sin()).collect();
        let y = filter.filtfilt(&x);
        let mid = &y[y.len() / 4..3 * y.len() / 4];
        (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt()
    };
    let atten_db = 20.0 * (rms_after(2.0) / rms_after(0.05)).log10();
    if atten_db < 20.0 {
        failures.push(format!("0.05 Hz attenuation {atten_db:.1} dB"));
    }

    let stream = gen_waveform(&WaveformConfig::default(), 60.0).unwrap();
    let clean = zscore_samples(&filter.filtfilt(&stream.samples));
    let beats = detect_beats(&clean, 25.0).unwrap();
    let bpm = beats.peak_indices.len() as f64;
    if (bpm - 60.0).abs() > 2.0 {
        failures.push(format!("60 BPM train detected at {bpm} beats/min"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_hrv = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(3..40);
        let ibis: Vec<f64> = (0..n).map(|_| rng.random_range(400.0..1400.0)).collect();
        let got = hrv_features(&ibis).unwrap();
        let want = hrv_oracle(&ibis);
        for (g, w) in got.iter().zip(want) {
            worst_hrv = worst_hrv.max((g - w).abs());
        }
    }
    if worst_hrv > 1e-9 {
        failures.push(format!("HRV mismatch {worst_hrv:.2e}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("SQI {passed}/{total}; 0.05 Hz down {atten_db:.1} dB vs 2 Hz; 60 BPM -> {bpm} beats/min; HRV worst {worst_hrv:.1e}")
        } else {
            failures.join("; ")
        },
    )
}

fn hrv_oracle(ibis: &[f64]) -> [f64; 5] {
    let n = ibis.len() as f64;
    let mean = ibis.iter().sum::<f64>() / n;
    let sdnn = (ibis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sq = 0.0;
    let mut over = 0.0;
    for i in 1..ibis.len() {
        let d = ibis[i] - ibis[i - 1];
        sq += d * d;
        if d.abs() > 50.0 {
            over += 1.0;
        }
    }
    let m = (ibis.len() - 1) as f64;
    let mut sorted = ibis.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0
    };
    [sdnn, (sq / m).sqrt(), 100.0 * over / m, median, sorted[k - 1] - sorted[0]]
}

// ---------------------------------------------------------------- 8

fn protocol_integrity(runs: &[SeedRuns]) -> Outcome {
    let mut failures = Vec::new();

    // Subject overlap, recomputed from the stored fold assignment.
    for (seed, r) in runs.iter().enumerate() {
        let k = r.full.folds.k;
        for f in 0..k {
            let test = r.full.folds.subjects_in(f);
            let valid = r.full.folds.subjects_in((f + 1) % k);
            let train: Vec<&str> = r
                .full
                .folds
                .folds
                .iter()
                .filter(|(_, &g)| g != f && g != (f + 1) % k)
                .map(|(s, _)| s.as_str())
                .collect();
            if train.iter().any(|s| test.contains(s) || valid.contains(s)) || test.intersection(&valid).next().is_some() {
                failures.push(format!("seed {seed} fold {f}: subject overlap"));
            }
            let m = &r.full.report.per_fold[f];
            if m.n_train_subjects + m.n_valid_subjects + m.n_test_subjects != r.full.folds.folds.len() {
                failures.push(format!("seed {seed} fold {f}: subject counts do not partition the cohort"));
            }
            let predicted: Vec<&str> = r.full.subject_predictions[f].iter().map(|p| p.subject_id.as_str()).collect();
            if predicted.iter().any(|s| !test.contains(s)) {
                failures.push(format!("seed {seed} fold {f}: scored a subject outside the test fold"));
            }
        }
    }

    // Cap and window on a real preprocessing run with labs for two biomarkers.
    let wave = gen_waveform_cohort(&WaveformCohortConfig {
        n_subjects: 24,
        sessions_per_subject: 4,
        session_seconds: 30.0,
        max_gap_days: 45.0,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let mut labs = wave.labs.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    labs.extend(wave.labs.iter().map(|l| LabRecord {
        biomarker: Biomarker::Sodium,
        value: rng.random_range(130.0..150.0),
        ..l.clone()
    }));
    let mut metas: Vec<SegmentMeta> = Vec::new();
    for s in &wave.streams {
        metas.extend(preprocess_stream(s, &PreprocessConfig::default()).unwrap().0.into_iter().map(|g| g.meta));
    }
    // Uneven per-subject counts so the cap binds.
    metas.retain(|m| !(m.subject_id.as_str() < "W0008" && m.segment_id.ends_with(":2")));
    let mut labeled: Vec<LabeledSegment> = Vec::new();
    for bm in [Biomarker::Potassium, Biomarker::Sodium] {
        labeled.extend(attach_labels(&metas, &labs, bm, &LabelingConfig::default()).unwrap());
    }
    let max_dt = labeled.iter().map(|s| s.delta_t_days).fold(0.0, f64::max);
    if max_dt > 30.0 {
        failures.push(format!("emitted delta t {max_dt} > 30 days"));
    }
    let synth_max = gen_cohort(&SynthCohortConfig::default()).unwrap().rows.iter().map(|r| r.delta_t_days).fold(0.0, f64::max);
    if synth_max > 30.0 {
        failures.push(format!("synthetic delta t {synth_max} > 30 days"));
    }
    let capped = cap_segments(&labeled, 5);
    let mut cap_checked = 0;
    for bm in [Biomarker::Potassium, Biomarker::Sodium] {
        let count = |set: &[LabeledSegment]| {
            let mut m: BTreeMap<String, usize> = BTreeMap::new();
            for s in set.iter().filter(|s| s.biomarker == bm) {
                *m.entry(s.meta.subject_id.clone()).or_default() += 1;
            }
            m
        };
        let before = count(&labeled);
        let counts: Vec<usize> = before.values().copied().collect();
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2] as f64
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
        };
        if lower_median(&counts) as f64 > median {
            failures.push(format!("{bm}: cap exceeds median"));
        }
        for (s, c) in count(&capped) {
            cap_checked += 1;
            if c as f64 > median {
                failures.push(format!("{bm} subject {s}: {c} segments after cap, median {median}"));
            }
        }
    }

    // Inference signatures carry no gap or weight argument.
    let _scorer: fn(&Scorer, &[f64]) -> gapweight::Result<f64> = Scorer::predict_logit;
    let _fitted: fn(&FittedModel, Option<&[f64]>) -> gapweight::Result<f64> = FittedModel::predict_logit;
    // And predictions ignore the gap column entirely.
    let rows = cohort_for(0, 0.15);
    let model = &runs[0].full.models[0];
    let mut shifted = rows.clone();
    for r in &mut shifted {
        r.delta_t_days = 29.0 - r.delta_t_days.min(29.0);
    }
    let same = rows.iter().zip(&shifted).take(500).all(|(a, b)| {
        model.predict_logit(a.features.as_deref()).unwrap() == model.predict_logit(b.features.as_deref()).unwrap()
    });
    if !same {
        failures.push("prediction changed with delta t".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} CV runs overlap-free; {cap_checked} capped subject/biomarker pairs within median; max delta t {max_dt:.2} d; inference API gap-free",
                runs.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 9

fn gapweight(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gapweight"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn primary_outputs(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| !p.file_name().unwrap().to_str().unwrap().ends_with("_manifest.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_str().unwrap().to_string(),
                digest_hex(&std::fs::read(&p).unwrap()),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let fast = ["--set", "epochs=20", "--set", "k=3", "--set", "n_trees=10"];
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["--out".into(), d("synth"), "--seed".into(), "2".into(), "--set".into(), "n_subjects=40".into()]),
        (
            "synth",
            vec![
                "--out".into(),
                d("raw"),
                "--seed".into(),
                "2".into(),
                "--level".into(),
                "waveform".into(),
                "--set".into(),
                "n_subjects=12".into(),
                "--set".into(),
                "session_seconds=30".into(),
            ],
        ),
        ("preprocess", vec!["--input".into(), d("raw"), "--out".into(), d("pre")]),
        ("featurize", vec!["--input".into(), d("pre/prepared.jsonl"), "--out".into(), d("feat")]),
        ("train", vec!["--input".into(), d("synth/features.csv"), "--out".into(), d("train")]),
        ("eval", vec!["--input".into(), d("feat/features.csv"), "--out".into(), d("eval"), "--method".into(), "rf".into()]),
        ("compare-decays", vec!["--input".into(), d("synth/features.csv"), "--out".into(), d("compare")]),
        ("ablate", vec!["--input".into(), d("synth/features.csv"), "--out".into(), d("ablate"), "--jobs".into(), "2".into()]),
        ("report", vec![d("ablate/report.csv"), d("compare/report.csv"), "--out".into(), d("report")]),
    ];
    let mut compared = 0;
    for (cmd, args) in &steps {
        let mut argv: Vec<&str> = vec![cmd];
        argv.extend(args.iter().map(String::as_str));
        if !matches!(*cmd, "synth" | "preprocess" | "featurize" | "report") {
            argv.extend(fast);
        }
        if let Err(e) = gapweight(&argv) {
            return outcome(false, e);
        }
        let out_dir = args[args.iter().position(|a| a == "--out").unwrap() + 1].clone();
        let manifest = Path::new(&out_dir).join(format!("{}_manifest.json", cmd.replace('-', "_")));
        let rerun_dir = format!("{out_dir}-rerun");
        if let Err(e) = gapweight(&[cmd, "--from-manifest", manifest.to_str().unwrap(), "--out", &rerun_dir]) {
            return outcome(false, e);
        }
        let (a, b) = (primary_outputs(Path::new(&out_dir)), primary_outputs(Path::new(&rerun_dir)));
        if a != b || a.is_empty() {
            return outcome(false, format!("{cmd}: rerun outputs differ ({a:?} vs {b:?})"));
        }
        compared += a.len();
    }
    outcome(true, format!("{} commands rerun from manifests, {compared} output files byte-identical", steps.len()))
}

// ----------------------------------------------------------------

fn report(n: usize, name: &str, started: Instant, o: &Outcome) {
    println!(
        "criterion {n} [{name}]: {} ({:.1}s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        o.detail
    );
}

fn record(results: &mut Vec<bool>, n: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let o = f();
    report(n, name, t, &o);
    results.push(o.pass);
}

fn main() {
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are ignored.
    let mut results = Vec::new();
    record(&mut results, 1, "gradient correctness", gradient_check);
    record(&mut results, 2, "loss reduction identity", loss_identity);
    record(&mut results, 3, "metric oracles", metric_oracles);

    let t = Instant::now();
    eprintln!("synthetic experiments: {SEEDS} seeds");
    let runs = synthetic_runs();
    eprintln!("synthetic experiments took {:.1}s", t.elapsed().as_secs_f64());
    record(&mut results, 4, "time-aware weighting benefit", || time_aware_benefit(&runs));
    record(&mut results, 5, "rate recovery", || rate_recovery(&runs));
    record(&mut results, 6, "decay-family sanity", || family_sanity(&runs));
    record(&mut results, 7, "pipeline fidelity", pipeline_fidelity);
    record(&mut results, 8, "protocol integrity", || protocol_integrity(&runs));
    record(&mut results, 9, "determinism", determinism);

    let passed = results.iter().filter(|p| **p).count();
    let failed: Vec<String> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria: {}", failed.join(", "));
        // Verdicts are reported above; the exit status only turns red on request.
        if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
