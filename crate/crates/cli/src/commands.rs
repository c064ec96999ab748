//! Subcommand implementations. Each reads its inputs, writes deterministic
//! CSV/JSON outputs into `out_dir`, then a run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gapweight::baseline::ForestConfig;
use gapweight::cohort::{attach_labels, cap_segments, enforce_subject_unanimity, Biomarker, LabeledSegment, LabelingConfig};
use gapweight::decay::DecayFamily;
use gapweight::eval::{
    ablation, compare_decays, fit_fold, folds_for, parse_report_means, render_table, reports_csv, run_cv_detailed,
    train_config_for, weight_curve_csv, CvConfig, FittedModel, Method, MetricReport,
};
use gapweight::features::{try_featurize, FeatureRow};
use gapweight::io;
use gapweight::model::{Checkpoint, TrainConfig, TrainMode};
use gapweight::objective::{Hyperparams, DEFAULT_LAMBDA};
use gapweight::signal::{preprocess_stream, PreprocessConfig, Segment};
use gapweight::synth::{gen_cohort, gen_waveform_cohort, SynthCohortConfig, WaveformCohortConfig};
use gapweight::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::Recorder;

pub const FEATURES_FILE: &str = "features.csv";
pub const LABS_FILE: &str = "labs.csv";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const STREAMS_FILE: &str = "streams.csv";
pub const PREPARED_FILE: &str = "prepared.jsonl";
pub const STAGES_FILE: &str = "stage_counts.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Everything a command needs besides its configuration.
pub struct Run<'a> {
    pub cfg: &'a Config,
    pub unsafe_tune_lambda: bool,
    pub recorder: Recorder,
}

impl Run<'_> {
    fn out_dir(&self) -> anyhow::Result<PathBuf> {
        let dir = PathBuf::from(self.cfg.require("out_dir")?);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn input(&mut self) -> anyhow::Result<PathBuf> {
        Ok(PathBuf::from(self.cfg.require("input")?))
    }

    fn write(&mut self, path: &Path, text: &str) -> anyhow::Result<()> {
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        self.recorder.output(path);
        Ok(())
    }

    fn write_with(
        &mut self,
        path: &Path,
        f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> gapweight::Result<()>,
    ) -> anyhow::Result<()> {
        f(io::create_file(path)?).with_context(|| format!("writing {}", path.display()))?;
        self.recorder.output(path);
        Ok(())
    }

    fn seed(&mut self) -> anyhow::Result<u64> {
        let seed = self.cfg.get("seed")?;
        self.recorder.seed("seed", seed);
        Ok(seed)
    }

    fn hyperparams(&self) -> anyhow::Result<Hyperparams> {
        let hp = Hyperparams {
            lambda: self.cfg.get("lambda")?,
            bce_epsilon: self.cfg.get("bce_epsilon")?,
        };
        if hp.lambda != DEFAULT_LAMBDA && !self.unsafe_tune_lambda {
            return Err(CliError::Config(format!(
                "lambda is fixed at {DEFAULT_LAMBDA}; got {} (pass --unsafe-tune-lambda to override)",
                hp.lambda
            ))
            .into());
        }
        Ok(hp)
    }

    fn family(&self, key: &str) -> anyhow::Result<DecayFamily> {
        Ok(self.cfg.require(key)?.parse::<DecayFamily>()?)
    }

    fn biomarker(&self) -> anyhow::Result<Biomarker> {
        Ok(self.cfg.require("biomarker")?.parse::<Biomarker>()?)
    }

    fn train_config(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        let c = self.cfg;
        let t = TrainConfig {
            epochs: c.get("epochs")?,
            batch_size: c.get("batch_size")?,
            learning_rate: c.get("learning_rate")?,
            alpha_learning_rate: c.get("alpha_learning_rate")?,
            seed,
            early_stop_patience: c.get("early_stop_patience")?,
            family: self.family("family")?,
            mode: TrainMode::Full,
            init_rate: c.get("init_rate")?,
            hidden_units: c.get("hidden_units")?,
        };
        t.validate()?;
        Ok(t)
    }

    fn forest_config(&self, seed: u64) -> anyhow::Result<ForestConfig> {
        let c = self.cfg;
        Ok(ForestConfig {
            n_trees: c.get("n_trees")?,
            max_depth: c.get("max_depth")?,
            min_leaf: c.get("min_leaf")?,
            features_per_split: c.get("features_per_split")?,
            bootstrap: c.get("bootstrap")?,
            seed,
        })
    }

    fn cv_config(&mut self) -> anyhow::Result<CvConfig> {
        let seed = self.seed()?;
        Ok(CvConfig {
            k: self.cfg.get("k")?,
            seed,
            train: self.train_config(seed)?,
            forest: self.forest_config(seed)?,
            hp: self.hyperparams()?,
            fixed_alpha_rate: self.cfg.get("fixed_alpha_rate")?,
            jobs: self.cfg.get("jobs")?,
        })
    }

    fn feature_rows(&mut self) -> anyhow::Result<Vec<FeatureRow>> {
        let path = self.input()?;
        let rows = io::read_features(io::open(&path)?).with_context(|| format!("reading {}", path.display()))?;
        self.recorder.input(&path)?;
        if rows.is_empty() {
            return Err(CliError::Empty(format!("{} has no feature rows", path.display())).into());
        }
        Ok(rows)
    }
}

pub fn synth(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    run.cfg.require_explicit("seed")?;
    let seed = run.seed()?;
    let c = run.cfg;
    match c.require("level")? {
        "features" => {
            let sc = SynthCohortConfig {
                n_subjects: c.get("n_subjects")?,
                segments_per_subject: (c.get("segments_min")?, c.get("segments_max")?),
                true_staleness_rate: c.get("true_rate")?,
                staleness_family: run.family("staleness_family")?,
                max_gap_days: c.get("max_gap_days")?,
                class_separation: c.get("class_separation")?,
                feature_noise_std: c.get("feature_noise_std")?,
                informative_features: c.get("informative_features")?,
                biomarker: run.biomarker()?,
                seed,
            };
            let cohort = gen_cohort(&sc)?;
            run.write_with(&out.join(FEATURES_FILE), |w| io::write_features(w, &cohort.rows))?;
            run.write_with(&out.join(LABS_FILE), |w| io::write_labs(w, &cohort.labs))?;
            let metas: Vec<_> = cohort.segments.iter().map(|s| s.meta.clone()).collect();
            run.write_with(&out.join(SEGMENTS_FILE), |w| io::write_segments(w, &metas))?;
            let mut truth = String::from("subject_id,segment_id,delta_t_days,label,fresh,source_class\n");
            for (row, t) in cohort.rows.iter().zip(&cohort.truth) {
                let _ = writeln!(
                    truth,
                    "{},{},{},{},{},{}",
                    row.subject_id,
                    row.segment_id,
                    row.delta_t_days,
                    row.label,
                    u8::from(t.fresh),
                    t.source_class
                );
            }
            run.write(&out.join(TRUTH_FILE), &truth)?;
            let fresh = cohort.truth.iter().filter(|t| t.fresh).count();
            println!(
                "synth: {} subjects, {} segments, {} class-consistent, true rate {}/day ({})",
                sc.n_subjects,
                cohort.rows.len(),
                fresh,
                sc.true_staleness_rate,
                sc.staleness_family
            );
        }
        "waveform" => {
            let wc = WaveformCohortConfig {
                n_subjects: c.get("n_subjects")?,
                sessions_per_subject: c.get("sessions_per_subject")?,
                session_seconds: c.get("session_seconds")?,
                min_gap_days: c.get("min_gap_days")?,
                max_gap_days: c.get("max_gap_days")?,
                noise_std: c.get("noise_std")?,
                hrv_std_ms: c.get("hrv_std_ms")?,
                biomarker: run.biomarker()?,
                seed,
            };
            let cohort = gen_waveform_cohort(&wc)?;
            run.write_with(&out.join(STREAMS_FILE), |w| io::write_streams_csv(w, &cohort.streams))?;
            run.write_with(&out.join(LABS_FILE), |w| io::write_labs(w, &cohort.labs))?;
            println!(
                "synth: {} subjects, {} waveform recordings of {} s",
                wc.n_subjects,
                cohort.streams.len(),
                wc.session_seconds
            );
        }
        other => {
            return Err(CliError::Config(format!("invalid value for 'level': '{other}' (expected features or waveform)")).into())
        }
    }
    run.recorder.seed("cohort", seed);
    Ok(())
}

/// A labeled, filtered and normalized segment as passed to `featurize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSegment {
    pub segment: LabeledSegment,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageCount {
    pub stage: &'static str,
    pub input: usize,
    pub retained: usize,
}

impl StageCount {
    pub fn dropped(&self) -> usize {
        self.input - self.retained
    }
}

fn stage_table(stages: &[StageCount]) -> String {
    let mut out = String::from("stage,input,retained,dropped\n");
    for s in stages {
        let _ = writeln!(out, "{},{},{},{}", s.stage, s.input, s.retained, s.dropped());
    }
    out
}

fn print_stages(stages: &[StageCount], to_stderr: bool) {
    for s in stages {
        let line = format!(
            "{:<12} input {:>7}  retained {:>7}  dropped {:>7}",
            s.stage,
            s.input,
            s.retained,
            s.dropped()
        );
        if to_stderr {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
}

pub fn preprocess(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let dir = run.input()?;
    let seed = run.seed()?;
    let c = run.cfg;
    let pre = PreprocessConfig {
        segment_seconds: c.get("segment_seconds")?,
        sqi_threshold: c.get("sqi_threshold")?,
        low_hz: c.get("low_hz")?,
        high_hz: c.get("high_hz")?,
    };
    let labeling = LabelingConfig {
        window_days: c.get("window_days")?,
        lower_q: c.get("lower_q")?,
        upper_q: c.get("upper_q")?,
    };
    let biomarker = run.biomarker()?;

    let streams_path = dir.join(STREAMS_FILE);
    let labs_path = dir.join(LABS_FILE);
    let streams = io::read_streams_csv(io::open(&streams_path)?).with_context(|| format!("reading {}", streams_path.display()))?;
    let labs = io::read_labs(io::open(&labs_path)?).with_context(|| format!("reading {}", labs_path.display()))?;
    run.recorder.input(&streams_path)?;
    run.recorder.input(&labs_path)?;

    let mut segments: Vec<Segment> = Vec::new();
    let mut n_raw = 0;
    for s in &streams {
        let (kept, counts) = preprocess_stream(s, &pre)?;
        n_raw += counts.segments;
        segments.extend(kept);
    }
    let mut stages = vec![StageCount {
        stage: "sqi",
        input: n_raw,
        retained: segments.len(),
    }];

    let metas: Vec<_> = segments.iter().map(|s| s.meta.clone()).collect();
    let labeled = if metas.is_empty() {
        Vec::new()
    } else {
        attach_labels(&metas, &labs, biomarker, &labeling)?
    };
    stages.push(StageCount {
        stage: "label",
        input: metas.len(),
        retained: labeled.len(),
    });
    let (unanimous, _) = enforce_subject_unanimity(&labeled);
    stages.push(StageCount {
        stage: "unanimity",
        input: labeled.len(),
        retained: unanimous.len(),
    });
    let capped = if unanimous.is_empty() {
        Vec::new()
    } else {
        cap_segments(&unanimous, derive_seed(seed, "cap"))
    };
    stages.push(StageCount {
        stage: "cap",
        input: unanimous.len(),
        retained: capped.len(),
    });

    if capped.is_empty() {
        print_stages(&stages, true);
        let first_empty = stages.iter().find(|s| s.retained == 0).map_or("input", |s| s.stage);
        return Err(CliError::Empty(format!("no segments survive preprocessing (emptied at stage '{first_empty}')")).into());
    }
    print_stages(&stages, false);

    let by_id: std::collections::HashMap<&str, &Segment> =
        segments.iter().map(|s| (s.meta.segment_id.as_str(), s)).collect();
    let prepared: Vec<PreparedSegment> = capped
        .into_iter()
        .map(|l| {
            let seg = by_id[l.meta.segment_id.as_str()];
            PreparedSegment {
                sample_rate_hz: seg.sample_rate_hz,
                samples: seg.samples.clone(),
                segment: l,
            }
        })
        .collect();
    run.write_with(&out.join(PREPARED_FILE), |w| io::write_jsonl(w, &prepared))?;
    run.write(&out.join(STAGES_FILE), &stage_table(&stages))?;
    run.recorder.seed("cap", derive_seed(seed, "cap"));
    Ok(())
}

pub fn featurize(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let path = run.input()?;
    let prepared: Vec<PreparedSegment> =
        io::read_jsonl(io::open(&path)?).with_context(|| format!("reading {}", path.display()))?;
    run.recorder.input(&path)?;
    if prepared.is_empty() {
        return Err(CliError::Empty(format!("{} has no segments", path.display())).into());
    }
    let mut failed = 0;
    let rows: Vec<FeatureRow> = prepared
        .into_iter()
        .map(|p| {
            let segment = Segment {
                meta: p.segment.meta.clone(),
                sample_rate_hz: p.sample_rate_hz,
                samples: p.samples,
            };
            let features = try_featurize(&segment).ok().map(|f| f.into_values());
            if features.is_none() {
                failed += 1;
            }
            FeatureRow {
                subject_id: p.segment.meta.subject_id,
                segment_id: p.segment.meta.segment_id,
                biomarker: p.segment.biomarker,
                delta_t_days: p.segment.delta_t_days,
                label: p.segment.label,
                features,
            }
        })
        .collect();
    println!(
        "featurize: {} segments, {} extracted, {} left for imputation",
        rows.len(),
        rows.len() - failed,
        failed
    );
    run.write_with(&out.join(FEATURES_FILE), |w| io::write_features(w, &rows))?;
    Ok(())
}

fn method(run: &Run) -> anyhow::Result<Method> {
    Ok(Method::parse(run.cfg.require("method")?, run.family("family")?)?)
}

pub fn train(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let rows = run.feature_rows()?;
    let cv = run.cv_config()?;
    let biomarker = run.biomarker()?;
    let method = method(run)?;

    let rows: Vec<&FeatureRow> = rows.iter().filter(|r| r.biomarker == biomarker).collect();
    if rows.is_empty() {
        return Err(CliError::Empty(format!("no rows for biomarker {biomarker}")).into());
    }
    // Fold 0 of the shared assignment is held out for early stopping.
    let folds = folds_for(&rows, cv.k, cv.seed)?;
    let (valid, train): (Vec<&FeatureRow>, Vec<&FeatureRow>) =
        rows.iter().copied().partition(|r| folds.fold_of(&r.subject_id) == Some(0));
    let mut train_cfg = train_config_for(method, &cv.train, cv.fixed_alpha_rate);
    train_cfg.seed = derive_seed(cv.seed, "train");
    let mut forest_cfg = cv.forest.clone();
    forest_cfg.seed = derive_seed(cv.seed, "forest");
    run.recorder.seed("train", train_cfg.seed);
    run.recorder.seed("forest", forest_cfg.seed);

    let name = biomarker.to_string();
    let model = fit_fold(&name, &train, &valid, method, &train_cfg, &forest_cfg, &cv.hp)?;
    run.write(&out.join("model.json"), &(serde_json::to_string(&model)? + "\n"))?;
    match &model {
        FittedModel::Scorer { scorer, result, .. } => {
            let ckpt = Checkpoint::new(result, &scorer.standardizer, &train_cfg);
            run.write(&out.join("checkpoint.json"), &(serde_json::to_string_pretty(&ckpt)? + "\n"))?;
            let mut trace = String::from("epoch,weighted_bce,mean_weight,total,alpha_hat,valid_total\n");
            for e in &result.loss_trace {
                let _ = writeln!(
                    trace,
                    "{},{},{},{},{},{}",
                    e.epoch, e.weighted_bce, e.mean_weight, e.total, e.alpha_hat, e.valid_total
                );
            }
            run.write(&out.join("loss_trace.csv"), &trace)?;
            println!(
                "train: {} on {} ({} train / {} validation segments), best epoch {}, learned rate {:.4}/day",
                method.name(),
                biomarker,
                train.len(),
                valid.len(),
                result.best_epoch,
                result.learned_rate_per_day
            );
        }
        FittedModel::Forest { forest, .. } => {
            println!(
                "train: rf on {} ({} segments), {} trees",
                biomarker,
                train.len() + valid.len(),
                forest.trees.len()
            );
        }
    }
    Ok(())
}

fn write_report(run: &mut Run, out: &Path, reports: &[MetricReport]) -> anyhow::Result<()> {
    let csv = reports_csv(reports);
    run.write(&out.join(REPORT_FILE), &csv)?;
    print!("{}", render_table(&parse_report_means(&csv)?));
    Ok(())
}

pub fn eval(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let rows = run.feature_rows()?;
    let cv = run.cv_config()?;
    let biomarker = run.biomarker()?;
    let method = method(run)?;
    let outcome = run_cv_detailed(&rows, biomarker, method, &cv)?;

    let mut preds = String::from("fold,subject_id,label,mean_logit,n_segments\n");
    for (fold, ps) in outcome.subject_predictions.iter().enumerate() {
        for p in ps {
            let _ = writeln!(preds, "{fold},{},{},{},{}", p.subject_id, p.label, p.mean_logit, p.n_segments);
        }
    }
    run.write(&out.join("predictions.csv"), &preds)?;
    let mut folds = String::from("subject_id,fold\n");
    for (s, f) in &outcome.folds.folds {
        let _ = writeln!(folds, "{s},{f}");
    }
    run.write(&out.join("folds.csv"), &folds)?;
    write_report(run, &out, &[outcome.report])
}

pub fn compare(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let rows = run.feature_rows()?;
    let cv = run.cv_config()?;
    let biomarker = run.biomarker()?;
    let families = run
        .cfg
        .require("families")?
        .split(',')
        .map(|f| f.parse::<DecayFamily>())
        .collect::<gapweight::Result<Vec<_>>>()?;
    let reports = compare_decays(&rows, biomarker, &families, &cv)?;
    let curves: Vec<(DecayFamily, f64)> = reports
        .iter()
        .filter_map(|r| Some((r.method.family()?, r.mean_learned_rate()?)))
        .collect();
    let window: f64 = run.cfg.get("window_days")?;
    run.write(&out.join("weight_curves.csv"), &weight_curve_csv(&curves, window, 0.5)?)?;
    write_report(run, &out, &reports)
}

pub fn ablate(run: &mut Run) -> anyhow::Result<()> {
    let out = run.out_dir()?;
    let rows = run.feature_rows()?;
    let cv = run.cv_config()?;
    let biomarker = run.biomarker()?;
    let family = run.family("family")?;
    let reports = ablation(&rows, biomarker, family, &cv)?;
    write_report(run, &out, &reports)
}

pub fn report(run: &mut Run) -> anyhow::Result<()> {
    let inputs: Vec<PathBuf> = run
        .cfg
        .require("input")?
        .split(',')
        .map(|p| PathBuf::from(p.trim()))
        .collect();
    let mut rows = Vec::new();
    for path in &inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        rows.extend(parse_report_means(&text).with_context(|| format!("parsing {}", path.display()))?);
        run.recorder.input(path)?;
    }
    if rows.is_empty() {
        return Err(CliError::Empty("no summary rows in the given reports".into()).into());
    }
    let table = render_table(&rows);
    print!("{table}");
    if run.cfg.get_str("out_dir").is_some() {
        let out = run.out_dir()?;
        run.write(&out.join("table.txt"), &table)?;
    }
    Ok(())
}
