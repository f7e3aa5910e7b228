//! Sigmoid multi-label head over fused features, weighted binary
//! cross-entropy with its analytic gradient, and a full-batch trainer.

use std::collections::HashMap;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

/// Probabilities are clipped to `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-12;

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::input(format!("{what} holds non-finite value {v}"))),
        None => Ok(()),
    }
}

/// Text features first, then image features.
pub fn concat_features(x_text: &[f64], x_image: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(x_text, "text features")?;
    ensure_finite(x_image, "image features")?;
    Ok([x_text, x_image].concat())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(z)` without forming the probability.
fn softplus_neg(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Neumaier-compensated sum, so terms shared by two nearly equal losses
/// cancel when the losses are subtracted.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for t in terms {
        let next = sum + t;
        carry += if sum.abs() >= t.abs() { (sum - next) + t } else { (t - next) + sum };
        sum = next;
    }
    sum + carry
}

/// Weights of an `m`-label head over `d` features. `w` is row-major, one row per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub m: usize,
    pub d: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(m: usize, d: usize) -> Self {
        HeadParams {
            m,
            d,
            w: vec![0.0; m * d],
            b: vec![0.0; m],
        }
    }

    /// Entries drawn uniformly from (-0.01, 0.01) with xoshiro256** seeded by `seed`.
    pub fn init(m: usize, d: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut draw = || {
            let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            0.02 * unit - 0.01
        };
        let w = (0..m * d).map(|_| draw()).collect();
        let b = (0..m).map(|_| draw()).collect();
        HeadParams { m, d, w, b }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.w[j * self.d..(j + 1) * self.d]
    }

    fn check(&self) -> Result<()> {
        if self.w.len() != self.m * self.d || self.b.len() != self.m {
            return Err(Error::contract(format!(
                "parameter shapes do not match m={} d={}",
                self.m, self.d
            )));
        }
        Ok(())
    }

    /// JSON with every real rounded to 12 significant digits.
    pub fn to_json(&self) -> String {
        let round = |v: &Vec<f64>| -> Vec<f64> {
            v.iter()
                .map(|x| format::real(*x).parse().expect("formatted float parses"))
                .collect()
        };
        let rounded = HeadParams {
            m: self.m,
            d: self.d,
            w: round(&self.w),
            b: round(&self.b),
        };
        let mut json = serde_json::to_string_pretty(&rounded).expect("parameters serialize");
        json.push('\n');
        json
    }
}

fn logits(p: &HeadParams, x: &[f64]) -> Result<Vec<f64>> {
    p.check()?;
    if x.len() != p.d {
        return Err(Error::contract(format!("feature vector has {} entries; the head expects {}", x.len(), p.d)));
    }
    Ok((0..p.m)
        .map(|j| p.row(j).iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + p.b[j])
        .collect())
}

/// `sigmoid(W x + b)`, one probability per label.
pub fn forward(p: &HeadParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(logits(p, x)?.into_iter().map(sigmoid).collect())
}

/// Per-label loss weights for positive (`y = 1`) and negative (`y = 0`) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelWeights {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl LabelWeights {
    pub fn ones(m: usize) -> Self {
        LabelWeights {
            pos: vec![1.0; m],
            neg: vec![1.0; m],
        }
    }

    /// Positive targets take the given class weight; negatives keep weight 1.
    pub fn positive(class_weights: Vec<f64>) -> Self {
        let m = class_weights.len();
        LabelWeights {
            pos: class_weights,
            neg: vec![1.0; m],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        LabelWeights {
            pos: self.pos.iter().map(|w| w * k).collect(),
            neg: self.neg.iter().map(|w| w * k).collect(),
        }
    }

    fn get(&self, j: usize, y: u8) -> f64 {
        if y == 1 {
            self.pos[j]
        } else {
            self.neg[j]
        }
    }
}

fn check_batch(n_pred: usize, y: &[Vec<u8>], m: usize, weights: &LabelWeights) -> Result<()> {
    if n_pred != y.len() {
        return Err(Error::contract(format!("{n_pred} predictions for {} targets", y.len())));
    }
    if y.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if weights.pos.len() != m || weights.neg.len() != m {
        return Err(Error::contract(format!("weights cover {} labels; expected {m}", weights.pos.len())));
    }
    if let Some(row) = y.iter().find(|row| row.len() != m || row.iter().any(|&v| v > 1)) {
        return Err(Error::contract(format!("target row {row:?} is not {m} binary labels")));
    }
    Ok(())
}

/// Weighted binary cross-entropy averaged over all `N * m` label slots.
pub fn wbce_loss(y_hat: &[Vec<f64>], y: &[Vec<u8>], weights: &LabelWeights) -> Result<f64> {
    let m = weights.pos.len();
    check_batch(y_hat.len(), y, m, weights)?;
    for probs in y_hat {
        if probs.len() != m {
            return Err(Error::contract(format!("prediction row has {} labels; expected {m}", probs.len())));
        }
    }
    let terms = y_hat.iter().zip(y).flat_map(|(probs, targets)| {
        probs.iter().zip(targets).enumerate().map(|(j, (&q, &t))| {
            let q = q.clamp(EPSILON, 1.0 - EPSILON);
            let log_lik = if t == 1 { q.ln() } else { (1.0 - q).ln() };
            -weights.get(j, t) * log_lik
        })
    });
    Ok(compensated_sum(terms) / (y.len() * m) as f64)
}

/// Loss of the head's predictions on a batch.
///
/// Equal to [`wbce_loss`] of [`forward`], but each slot is evaluated from its
/// logit, which keeps the value accurate near saturation and makes finite
/// differences of the loss usable at small steps.
pub fn head_loss(p: &HeadParams, x: &[Vec<f64>], y: &[Vec<u8>], weights: &LabelWeights) -> Result<f64> {
    check_batch(x.len(), y, p.m, weights)?;
    let z = x.iter().map(|row| logits(p, row)).collect::<Result<Vec<_>>>()?;
    let (lo, hi) = (-(-EPSILON).ln_1p(), -EPSILON.ln());
    let terms = z.iter().zip(y).flat_map(|(zs, targets)| {
        zs.iter().zip(targets).enumerate().map(|(j, (&z, &t))| {
            let nll = if t == 1 { softplus_neg(z) } else { softplus_neg(-z) };
            weights.get(j, t) * nll.clamp(lo, hi)
        })
    });
    Ok(compensated_sum(terms) / (y.len() * p.m) as f64)
}

/// Gradient of [`head_loss`] with respect to `W` and `b`, in the layout of [`HeadParams`].
///
/// Per slot the derivative with respect to the logit is `w (sigmoid - y) / (N m)`.
/// Clipping is ignored, so the result is exact wherever no probability is
/// within `EPSILON` of 0 or 1.
pub fn wbce_grad(p: &HeadParams, x: &[Vec<f64>], y: &[Vec<u8>], weights: &LabelWeights) -> Result<HeadParams> {
    check_batch(x.len(), y, p.m, weights)?;
    let scale = 1.0 / (y.len() * p.m) as f64;
    let mut g = HeadParams::zeros(p.m, p.d);
    for (row, targets) in x.iter().zip(y) {
        let probs = forward(p, row)?;
        for j in 0..p.m {
            let dz = weights.get(j, targets[j]) * (probs[j] - f64::from(targets[j])) * scale;
            g.b[j] += dz;
            for (gw, &xk) in g.w[j * p.d..(j + 1) * p.d].iter_mut().zip(row) {
                *gw += dz * xk;
            }
        }
    }
    Ok(g)
}

/// Entry `idx` of `W` followed by `b`, as one flat sequence.
fn param_mut(p: &mut HeadParams, idx: usize) -> &mut f64 {
    let n_w = p.w.len();
    if idx < n_w {
        &mut p.w[idx]
    } else {
        &mut p.b[idx - n_w]
    }
}

/// Largest relative difference between [`wbce_grad`] and central differences
/// with step `h`, taken over every entry of `W` and `b`.
pub fn gradient_check(p: &HeadParams, x: &[Vec<f64>], y: &[Vec<u8>], weights: &LabelWeights, h: f64) -> Result<f64> {
    let analytic = wbce_grad(p, x, y, weights)?;
    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    let n_w = p.w.len();
    for idx in 0..n_w + p.m {
        let original = *param_mut(&mut probe, idx);
        *param_mut(&mut probe, idx) = original + h;
        let up = head_loss(&probe, x, y, weights)?;
        *param_mut(&mut probe, idx) = original - h;
        let down = head_loss(&probe, x, y, weights)?;
        *param_mut(&mut probe, idx) = original;

        let numeric = (up - down) / (2.0 * h);
        let exact = if idx < n_w { analytic.w[idx] } else { analytic.b[idx - n_w] };
        let scale = exact.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((exact - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

/// Feature rows paired with binary targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub weights: LabelWeights,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: HeadParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Full-batch gradient descent with early stopping.
///
/// Each epoch takes one step, then records both losses for the updated
/// parameters. Training stops once the validation loss has failed to improve
/// on its best value for more than `patience` consecutive epochs.
pub fn train_head(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::input("training and validation splits must both be non-empty"));
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || cfg.max_epochs == 0 || cfg.patience > cfg.max_epochs {
        return Err(Error::input(
            "learning rate must be positive, max_epochs at least 1, and patience at most max_epochs",
        ));
    }
    let d = train.x[0].len();
    let m = cfg.weights.pos.len();
    for row in train.x.iter().chain(&val.x) {
        ensure_finite(row, "feature row")?;
        if row.len() != d {
            return Err(Error::input(format!("feature rows have differing lengths ({} and {d})", row.len())));
        }
    }

    let mut params = HeadParams::init(m, d, cfg.seed);
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let g = wbce_grad(&params, &train.x, &train.y, &cfg.weights)?;
        for (w, gw) in params.w.iter_mut().zip(&g.w) {
            *w -= cfg.learning_rate * gw;
        }
        for (b, gb) in params.b.iter_mut().zip(&g.b) {
            *b -= cfg.learning_rate * gb;
        }
        let train_loss = head_loss(&params, &train.x, &train.y, &cfg.weights)?;
        let val_loss = head_loss(&params, &val.x, &val.y, &cfg.weights)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainResult {
        params: best.2,
        best_epoch: best.1,
        history,
    })
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, format::real(r.train_loss), format::real(r.val_loss)));
    }
    out
}

/// Reads `study_id,f1,...,fd` rows. Every row must have the same width.
pub fn read_features_csv(text: &str, origin: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::parse(origin, 1, e.to_string()))?.clone();
    if headers.get(0) != Some("study_id") {
        return Err(Error::parse(origin, 1, "first column must be study_id"));
    }
    let mut out = Vec::new();
    for (n, record) in r.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| Error::parse(origin, line, e.to_string()))?;
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::parse(origin, line, "feature values must be finite numbers"))?;
        out.push((record[0].to_string(), values));
    }
    Ok(out)
}

/// Which fold each study belongs to, from `study_id,split` rows.
pub fn read_split_csv(text: &str, origin: &str) -> Result<HashMap<String, String>> {
    #[derive(Deserialize)]
    struct Row {
        study_id: String,
        split: String,
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = HashMap::new();
    for (n, row) in r.deserialize().enumerate() {
        let row: Row = row.map_err(|e| Error::parse(origin, n + 2, e.to_string()))?;
        if out.insert(row.study_id.clone(), row.split).is_some() {
            return Err(Error::parse(origin, n + 2, format!("study {:?} listed twice", row.study_id)));
        }
    }
    Ok(out)
}
