//! Flat `key = value` configuration. Every key and its default lives in
//! [`key_table`]; values are layered defaults < file < `--set` < flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use gapweight::baseline::ForestConfig;
use gapweight::cohort::LabelingConfig;
use gapweight::eval::CvConfig;
use gapweight::model::TrainConfig;
use gapweight::objective::Hyperparams;
use gapweight::signal::PreprocessConfig;
use gapweight::synth::{SynthCohortConfig, WaveformCohortConfig};

use crate::error::CliError;

pub struct KeySpec {
    pub name: &'static str,
    /// `None` for keys without a default (paths).
    pub default: Option<String>,
    pub help: &'static str,
}

fn spec(name: &'static str, default: impl Display, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default: Some(default.to_string()),
        help,
    }
}

/// The single table of configuration keys and their defaults.
pub fn key_table() -> Vec<KeySpec> {
    let train = TrainConfig::default();
    let forest = ForestConfig::default();
    let cv = CvConfig::default();
    let hp = Hyperparams::default();
    let pre = PreprocessConfig::default();
    let lab = LabelingConfig::default();
    let synth = SynthCohortConfig::default();
    let wave = WaveformCohortConfig::default();
    vec![
        KeySpec {
            name: "out_dir",
            default: None,
            help: "directory receiving outputs and the run manifest",
        },
        KeySpec {
            name: "input",
            default: None,
            help: "input file or directory (comma-separated list for report)",
        },
        spec("seed", 0, "master seed; required for synth"),
        spec("jobs", 1, "worker threads for cross-validation folds"),
        spec("biomarker", synth.biomarker, "biomarker to label, train or evaluate"),
        spec("family", train.family.name(), "decay family: linear, exponential, inverse, cosine"),
        spec("families", "linear,exponential,inverse,cosine", "families compared by compare-decays"),
        spec("method", "ours", "ours, rf, ablation_fixed_alpha, ablation_no_decay"),
        spec("lambda", hp.lambda, "weight-bonus coefficient; changing it needs --unsafe-tune-lambda"),
        spec("bce_epsilon", hp.bce_epsilon, "probability clamp inside the BCE"),
        // preprocessing and labeling
        spec("segment_seconds", pre.segment_seconds, "segment length in seconds"),
        spec("sqi_threshold", pre.sqi_threshold, "minimum signal-quality index"),
        spec("low_hz", pre.low_hz, "band-pass lower edge"),
        spec("high_hz", pre.high_hz, "band-pass upper edge"),
        spec("window_days", lab.window_days, "maximum segment-to-lab gap in days"),
        spec("lower_q", lab.lower_q, "negative-class quantile"),
        spec("upper_q", lab.upper_q, "positive-class quantile"),
        // training and evaluation
        spec("k", cv.k, "cross-validation folds"),
        spec("epochs", train.epochs, "maximum training epochs"),
        spec("batch_size", train.batch_size, "minibatch size"),
        spec("learning_rate", train.learning_rate, "Adam step for network weights"),
        spec("alpha_learning_rate", train.alpha_learning_rate, "Adam step for the decay parameter"),
        spec("early_stop_patience", train.early_stop_patience, "epochs without validation improvement"),
        spec("init_rate", train.init_rate, "initial decay rate per day"),
        spec("hidden_units", train.hidden_units, "hidden layer width"),
        spec("fixed_alpha_rate", cv.fixed_alpha_rate, "frozen rate of the fixed-alpha ablation"),
        spec("n_trees", forest.n_trees, "random-forest trees"),
        spec("max_depth", forest.max_depth, "random-forest depth limit"),
        spec("min_leaf", forest.min_leaf, "random-forest minimum leaf size"),
        spec("features_per_split", forest.features_per_split, "features sampled per split"),
        spec("bootstrap", forest.bootstrap, "bootstrap rows per tree"),
        // synthetic cohorts
        spec("level", "features", "synth level: features or waveform"),
        spec("n_subjects", synth.n_subjects, "synthetic subjects"),
        spec("segments_min", synth.segments_per_subject.0, "fewest segments per subject"),
        spec("segments_max", synth.segments_per_subject.1, "most segments per subject"),
        spec("true_rate", synth.true_staleness_rate, "generative staleness rate per day"),
        spec("staleness_family", synth.staleness_family.name(), "generative staleness family"),
        spec("max_gap_days", synth.max_gap_days, "largest segment-to-lab gap"),
        spec("class_separation", synth.class_separation, "class mean shift per informative feature"),
        spec("feature_noise_std", synth.feature_noise_std, "feature noise standard deviation"),
        spec("informative_features", synth.informative_features, "features carrying the class shift"),
        spec("sessions_per_subject", wave.sessions_per_subject, "waveform recordings per subject"),
        spec("session_seconds", wave.session_seconds, "length of each waveform recording"),
        spec("min_gap_days", wave.min_gap_days, "smallest recording-to-lab gap (waveform)"),
        spec("noise_std", wave.noise_std, "waveform additive noise"),
        spec("hrv_std_ms", wave.hrv_std_ms, "beat-interval jitter"),
    ]
}

/// Resolved configuration: every known key has a value except path keys
/// nobody set. `explicit` tracks keys set by a file, `--set` or a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    explicit: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self::new()
    }
}

impl Config {
    pub fn new() -> Self {
        let values = key_table()
            .into_iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d)))
            .collect();
        Config {
            values,
            explicit: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        if !key_table().iter().any(|k| k.name == key) {
            return Err(CliError::Config(format!("unknown config key '{key}'")));
        }
        let value = value.trim().to_string();
        self.values.insert(key.to_string(), value.clone());
        self.explicit.insert(key.to_string(), value);
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got '{pair}'")))?;
        self.set(k, v)
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        match self.values.get(key) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(CliError::Config(format!("missing required field '{key}'"))),
        }
    }

    pub fn require_explicit(&self, key: &str) -> Result<&str, CliError> {
        if !self.is_explicit(key) {
            return Err(CliError::Config(format!("missing required field '{key}'")));
        }
        self.require(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    /// Typed value of a key; parse failures name the key.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| CliError::Config(format!("invalid value for '{key}': '{raw}' ({e})")))
    }

    /// All resolved values, sorted by key.
    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Canonical `key=value` lines, the basis of the config digest.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Rebuilds a configuration from a manifest snapshot; every recorded key
    /// counts as explicit.
    pub fn from_snapshot(map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut cfg = Config::new();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Markdown listing of every key, used by `--help-config`.
pub fn describe_keys() -> String {
    let mut out = String::from("| key | default | meaning |\n|---|---|---|\n");
    for k in key_table() {
        out.push_str(&format!(
            "| `{}` | {} | {} |\n",
            k.name,
            k.default.map(|d| format!("`{d}`")).unwrap_or_else(|| "(none)".into()),
            k.help
        ));
    }
    out
}
