//! The feedforward scorer (34 -> 32 -> 1, ReLU hidden layer, raw logit
//! output), its hand-written backward pass, and the training loop that
//! updates network parameters and the biomarker's decay parameter together.
//!
//! Prediction functions take feature rows only; the time gap is a
//! training-time input and never reaches inference.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decay::{inverse_softplus, softplus, DecayFamily, DecayParam};
use crate::features::N_FEATURES;
use crate::objective::{weighted_loss_with, Hyperparams, LossBreakdown, Weighting};
use crate::stats::{mean, population_std};
use crate::{derive_seed, digest_hex, Error, Result};

pub const HIDDEN_UNITS: usize = 32;
/// Decay rate (1/day) the raw parameter starts from.
pub const DEFAULT_INIT_RATE: f64 = 0.1;

/// Network parameters in one flat vector laid out as
/// `[W1 (hidden x input, row-major) | b1 | w2 | b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    input_dim: usize,
    hidden_dim: usize,
    theta: Vec<f64>,
}

impl ScorerParams {
    fn len_for(input_dim: usize, hidden_dim: usize) -> usize {
        hidden_dim * input_dim + 2 * hidden_dim + 1
    }

    /// Glorot-uniform weights from a seeded generator, zero biases.
    pub fn init_with(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ScorerParams::zeros(input_dim, hidden_dim);
        let b1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        for w in p.w1_mut() {
            *w = rng.random_range(-b1..b1);
        }
        let b2 = (6.0 / (hidden_dim + 1) as f64).sqrt();
        for w in p.w2_mut() {
            *w = rng.random_range(-b2..b2);
        }
        p
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        ScorerParams {
            input_dim,
            hidden_dim,
            theta: vec![0.0; Self::len_for(input_dim, hidden_dim)],
        }
    }

    pub fn from_flat(input_dim: usize, hidden_dim: usize, theta: Vec<f64>) -> Result<Self> {
        let want = Self::len_for(input_dim, hidden_dim);
        if theta.len() != want {
            return Err(Error::LengthMismatch {
                what: "flat parameter vector",
                left: theta.len(),
                right: want,
            });
        }
        Ok(ScorerParams {
            input_dim,
            hidden_dim,
            theta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden_dim * self.input_dim]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let end = self.hidden_dim * self.input_dim;
        &mut self.theta[..end]
    }

    pub fn b1(&self) -> &[f64] {
        let start = self.hidden_dim * self.input_dim;
        &self.theta[start..start + self.hidden_dim]
    }

    pub fn w2(&self) -> &[f64] {
        let start = self.hidden_dim * (self.input_dim + 1);
        &self.theta[start..start + self.hidden_dim]
    }

    fn w2_mut(&mut self) -> &mut [f64] {
        let start = self.hidden_dim * (self.input_dim + 1);
        let h = self.hidden_dim;
        &mut self.theta[start..start + h]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    fn hidden_into(&self, x: &[f64], pre: &mut [f64]) {
        let d = self.input_dim;
        let w1 = self.w1();
        for ((slot, row), b) in pre.iter_mut().zip(w1.chunks_exact(d)).zip(self.b1()) {
            *slot = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn logit_from_pre(&self, pre: &[f64]) -> f64 {
        self.b2() + pre.iter().zip(self.w2()).map(|(p, w)| p.max(0.0) * w).sum::<f64>()
    }

    /// Logit of one (already standardized) input row.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                what: "input row",
                left: x.len(),
                right: self.input_dim,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scorer input".into()));
        }
        let mut pre = vec![0.0; self.hidden_dim];
        self.hidden_into(x, &mut pre);
        Ok(self.logit_from_pre(&pre))
    }

    /// Logits of a row-major `n x input_dim` matrix.
    pub fn forward_batch(&self, x: &[f64]) -> Result<Vec<f64>> {
        x.chunks_exact(self.input_dim).map(|row| self.forward(row)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Default-architecture initialization.
pub fn init(seed: u64) -> ScorerParams {
    ScorerParams::init_with(N_FEATURES, HIDDEN_UNITS, seed)
}

/// Decay parameter at the configured starting rate.
pub fn init_decay(family: DecayFamily, rate: f64) -> Result<DecayParam> {
    DecayParam::from_rate(family, rate)
}

/// Per-feature mean and population std of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with std below 1e-12 are centered but not scaled.
    pub fn fit(x: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || x.is_empty() || !x.len().is_multiple_of(dim) {
            return Err(Error::InsufficientData("cannot fit a standardizer on an empty split".into()));
        }
        let n = x.len() / dim;
        let mut means = Vec::with_capacity(dim);
        let mut stds = Vec::with_capacity(dim);
        let mut col = Vec::with_capacity(n);
        for j in 0..dim {
            col.clear();
            col.extend(x.chunks_exact(dim).map(|r| r[j]));
            means.push(mean(&col));
            let sd = population_std(&col);
            stds.push(if sd < 1e-12 { 1.0 } else { sd });
        }
        Ok(Standardizer { mean: means, std: stds })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        x.chunks_exact(dim)
            .flat_map(|r| r.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s))
            .collect()
    }
}

/// A training or validation split: row-major inputs plus labels and gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Used in error messages, e.g. `"Potassium fold 2"`.
    pub name: String,
    pub dim: usize,
    pub x: Vec<f64>,
    pub labels: Vec<u8>,
    pub gaps: Vec<f64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, x: Vec<f64>, labels: Vec<u8>, gaps: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || x.len() != n * dim {
            return Err(Error::LengthMismatch {
                what: "feature matrix vs labels",
                left: x.len(),
                right: n * dim,
            });
        }
        if gaps.len() != n {
            return Err(Error::LengthMismatch {
                what: "labels vs time gaps",
                left: n,
                right: gaps.len(),
            });
        }
        Ok(Dataset {
            name: name.into(),
            dim,
            x,
            labels,
            gaps,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }
}

/// Gradients in the same flat layout as [`ScorerParams`], plus raw alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<f64>,
    pub raw_alpha: f64,
}

/// Loss and exact gradients of the objective's total on the rows `idx`
/// of `data` (all rows when `idx` is `None`).
pub fn loss_and_gradients(
    params: &ScorerParams,
    weighting: &Weighting,
    data: &Dataset,
    idx: Option<&[usize]>,
    hp: &Hyperparams,
) -> Result<(LossBreakdown, Gradients)> {
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let h = params.hidden_dim;
    let d = params.input_dim;
    let mut pre = vec![0.0; idx.len() * h];
    let mut logits = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    let mut gaps = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let slot = &mut pre[k * h..(k + 1) * h];
        params.hidden_into(data.row(i), slot);
        logits.push(params.logit_from_pre(slot));
        labels.push(data.labels[i]);
        gaps.push(data.gaps[i]);
    }
    let loss = weighted_loss_with(&logits, &labels, &gaps, weighting, hp)?;

    let mut g = vec![0.0; params.theta.len()];
    let (gw1, rest) = g.split_at_mut(h * d);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h);
    let w2 = params.w2();
    for (k, &i) in idx.iter().enumerate() {
        let dz = loss.d_total_d_logits[k];
        if dz == 0.0 {
            continue;
        }
        gb2[0] += dz;
        let x = data.row(i);
        for j in 0..h {
            let a = pre[k * h + j];
            if a > 0.0 {
                gw2[j] += dz * a;
                let dh = dz * w2[j];
                gb1[j] += dh;
                for (gw, v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += dh * v;
                }
            }
        }
    }
    let raw_alpha = loss.d_total_d_raw_alpha;
    Ok((loss, Gradients { theta: g, raw_alpha }))
}

/// Which parts of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Decay weights with a learned rate.
    Full,
    /// Decay weights with the rate frozen at its initial value.
    FixedAlpha,
    /// All weights equal to one.
    NoDecay,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Full => "full",
            TrainMode::FixedAlpha => "fixed_alpha",
            TrainMode::NoDecay => "no_decay",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(TrainMode::Full),
            "fixed_alpha" => Ok(TrainMode::FixedAlpha),
            "no_decay" => Ok(TrainMode::NoDecay),
            _ => Err(Error::UnknownName {
                kind: "training mode",
                name: s.to_string(),
                expected: "full, fixed_alpha, no_decay".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha_learning_rate: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub family: DecayFamily,
    pub mode: TrainMode,
    /// Starting decay rate (1/day); the frozen rate in `fixed_alpha` mode.
    pub init_rate: f64,
    pub hidden_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            alpha_learning_rate: 1e-2,
            seed: 0,
            early_stop_patience: 20,
            family: DecayFamily::Linear,
            mode: TrainMode::Full,
            init_rate: DEFAULT_INIT_RATE,
            hidden_units: HIDDEN_UNITS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return bad("epochs, batch_size and hidden_units must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.alpha_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.init_rate > 0.0) || !self.init_rate.is_finite() {
            return bad("init_rate must be positive");
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// End-of-epoch objective on the whole training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub weighted_bce: f64,
    pub mean_weight: f64,
    pub total: f64,
    pub alpha_hat: f64,
    pub valid_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: ScorerParams,
    pub raw_alpha: f64,
    pub learned_rate_per_day: f64,
    pub family: DecayFamily,
    pub mode: TrainMode,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub loss_trace: Vec<EpochSummary>,
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn weighting_for(mode: TrainMode, decay: DecayParam) -> Weighting {
    match mode {
        TrainMode::NoDecay => Weighting::Uniform,
        TrainMode::Full | TrainMode::FixedAlpha => Weighting::Decay(decay),
    }
}

/// Trains one scorer with mini-batch Adam, early-stopping on the
/// validation objective and restoring the best epoch's parameters.
pub fn train_biomarker(train: &Dataset, valid: &Dataset, cfg: &TrainConfig, hp: &Hyperparams) -> Result<TrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData(format!("{}: empty training split", train.name)));
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass {
            context: train.name.clone(),
        });
    }
    if valid.is_empty() {
        return Err(Error::InsufficientData(format!("{}: empty validation split", valid.name)));
    }
    if train.dim != valid.dim {
        return Err(Error::LengthMismatch {
            what: "train vs validation feature width",
            left: train.dim,
            right: valid.dim,
        });
    }

    let mut params = ScorerParams::init_with(train.dim, cfg.hidden_units, derive_seed(cfg.seed, "init"));
    let mut decay = init_decay(cfg.family, cfg.init_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut opt = Adam::new(params.theta.len(), cfg.learning_rate);
    let mut alpha_opt = Adam::new(1, cfg.alpha_learning_rate);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, params.clone(), decay.raw(), 0usize);
    let mut since_best = 0usize;
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let weighting = weighting_for(cfg.mode, decay);
            let (_, grads) = loss_and_gradients(&params, &weighting, train, Some(batch), hp)?;
            opt.step(&mut params.theta, &grads.theta);
            if cfg.mode == TrainMode::Full {
                let mut raw = [decay.raw()];
                alpha_opt.step(&mut raw, &[grads.raw_alpha]);
                decay.set_raw(raw[0]);
            }
        }
        if !params.is_finite() || !decay.raw().is_finite() {
            return Err(Error::NonFinite(format!("{}: parameters diverged at epoch {epoch}", train.name)));
        }
        let weighting = weighting_for(cfg.mode, decay);
        let (train_loss, _) = loss_and_gradients(&params, &weighting, train, None, hp)?;
        let (valid_loss, _) = loss_and_gradients(&params, &weighting, valid, None, hp)?;
        trace.push(EpochSummary {
            epoch,
            weighted_bce: train_loss.weighted_bce,
            mean_weight: train_loss.mean_weight,
            total: train_loss.total,
            alpha_hat: decay.rate(),
            valid_total: valid_loss.total,
        });
        if valid_loss.total < best.0 {
            best = (valid_loss.total, params.clone(), decay.raw(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (_, params, raw_alpha, best_epoch) = best;
    Ok(TrainResult {
        params,
        raw_alpha,
        learned_rate_per_day: softplus(raw_alpha),
        family: cfg.family,
        mode: cfg.mode,
        best_epoch,
        loss_trace: trace,
    })
}

/// Raw decay parameter that [`TrainConfig::init_rate`] maps to.
pub fn initial_raw(cfg: &TrainConfig) -> f64 {
    inverse_softplus(cfg.init_rate)
}

/// Fitted scorer with its training-split standardizer. Prediction takes
/// feature rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub standardizer: Standardizer,
    pub params: ScorerParams,
}

impl Scorer {
    pub fn predict_logit(&self, features: &[f64]) -> Result<f64> {
        self.params.forward(&self.standardizer.apply(features))
    }

    pub fn predict_logits(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict_logit(r)).collect()
    }
}

/// JSON checkpoint of a trained scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// `[[hidden, input], [1, hidden]]`.
    pub layer_shapes: Vec<[usize; 2]>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub raw_alpha: f64,
    pub learned_rate_per_day: f64,
    pub family: DecayFamily,
    pub mode: TrainMode,
    pub standardizer: Standardizer,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(result: &TrainResult, standardizer: &Standardizer, cfg: &TrainConfig) -> Self {
        let p = &result.params;
        Checkpoint {
            layer_shapes: vec![[p.hidden_dim, p.input_dim], [1, p.hidden_dim]],
            w1: p.w1().to_vec(),
            b1: p.b1().to_vec(),
            w2: p.w2().to_vec(),
            b2: p.b2(),
            raw_alpha: result.raw_alpha,
            learned_rate_per_day: result.learned_rate_per_day,
            family: result.family,
            mode: result.mode,
            standardizer: standardizer.clone(),
            config_hash: cfg.digest(),
        }
    }

    pub fn scorer(&self) -> Result<Scorer> {
        let shape_ok = self.layer_shapes.len() == 2 && self.layer_shapes[1] == [1, self.layer_shapes[0][0]];
        if !shape_ok {
            return Err(Error::Parse(format!("unsupported layer shapes {:?}", self.layer_shapes)));
        }
        let [hidden, input] = self.layer_shapes[0];
        let mut theta = Vec::with_capacity(ScorerParams::len_for(input, hidden));
        theta.extend_from_slice(&self.w1);
        theta.extend_from_slice(&self.b1);
        theta.extend_from_slice(&self.w2);
        theta.push(self.b2);
        Ok(Scorer {
            standardizer: self.standardizer.clone(),
            params: ScorerParams::from_flat(input, hidden, theta)?,
        })
    }
}
