//! Fully connected ReLU network trained by minibatch SGD with momentum.
//!
//! The output layer produces logits; the training objective is pluggable and
//! supplies exact logit gradients, so every configured loss backpropagates
//! through the same machinery. Early stopping watches macro-F1 on an inner
//! holdout split.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{loss_and_grad, LossSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths, 1 to 3 layers.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
    /// Fraction of training rows held out for early stopping.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![32],
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    /// `weights[l]` maps layer l inputs to layer l outputs.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub n_classes: usize,
}

fn init_layers(dims: &[usize], rng: &mut ChaCha20Rng) -> (Vec<Array2<f64>>, Vec<Vec<f64>>) {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
            rng.gen_range(-bound..bound)
        }));
        biases.push(vec![0.0; fan_out]);
    }
    (weights, biases)
}

/// Forward pass; returns post-activation values per layer (logits last).
fn forward(model: &MlpModel, x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(model.weights.len());
    let mut cur = x.to_vec();
    let last = model.weights.len() - 1;
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut out = b.clone();
        for (i, &xi) in cur.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &wij) in out.iter_mut().zip(w.row(i)) {
                *o += xi * wij;
            }
        }
        if l < last {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(out.clone());
        cur = out;
    }
    acts
}

pub fn predict_mlp(model: &MlpModel, x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let k = model.n_classes;
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let acts = forward(model, x.row(i).as_slice().unwrap());
        let logits = acts.last().unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (j, &z) in logits.iter().enumerate() {
            let e = (z - m).exp();
            out[[i, j]] = e;
            s += e;
        }
        for j in 0..k {
            out[[i, j]] /= s;
        }
    }
    out
}

struct Gradients {
    dw: Vec<Array2<f64>>,
    db: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Gradients {
        Gradients {
            dw: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            db: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        self.dw.iter_mut().for_each(|w| w.fill(0.0));
        self.db.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
    }
}

/// Accumulates one sample's gradient into `g`; returns the sample loss.
fn backprop(
    model: &MlpModel,
    x: &[f64],
    y: usize,
    loss: &LossSpec,
    counts: &[usize],
    g: &mut Gradients,
) -> f64 {
    let acts = forward(model, x);
    let logits = acts.last().unwrap();
    let (loss_val, dlogits) =
        loss_and_grad(logits, y, loss, counts).expect("finite logits during training");
    let last = model.weights.len() - 1;
    let mut delta = dlogits;
    for l in (0..=last).rev() {
        let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gw, &d) in g.dw[l].row_mut(i).iter_mut().zip(&delta) {
                *gw += xi * d;
            }
        }
        for (gb, &d) in g.db[l].iter_mut().zip(&delta) {
            *gb += d;
        }
        if l > 0 {
            // ReLU pass-through: zero where the activation was clipped.
            let w = &model.weights[l];
            let mut prev = vec![0.0; w.nrows()];
            for (i, pv) in prev.iter_mut().enumerate() {
                if acts[l - 1][i] > 0.0 {
                    *pv = w.row(i).iter().zip(&delta).map(|(&wij, &d)| wij * d).sum();
                }
            }
            delta = prev;
        }
    }
    loss_val
}

/// Macro-F1 over classes 0..k; classes where F1 is undefined (no support and
/// no predictions) are excluded from the mean.
pub(crate) fn macro_f1(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut tp = vec![0usize; k];
    let mut pn = vec![0usize; k];
    let mut tn = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        pn[p] += 1;
        tn[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..k {
        match (pn[c] > 0, tn[c] > 0) {
            (true, true) => {
                let p = tp[c] as f64 / pn[c] as f64;
                let r = tp[c] as f64 / tn[c] as f64;
                sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                defined += 1;
            }
            (true, false) | (false, true) => {
                defined += 1;
            }
            (false, false) => {}
        }
    }
    if defined > 0 {
        sum / defined as f64
    } else {
        0.0
    }
}

pub(crate) fn top1(p: &Array2<f64>) -> Vec<usize> {
    (0..p.nrows())
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Class-stratified holdout: per class, roughly `fraction` of its rows,
/// none when the class has fewer than 2 rows.
fn holdout_split(y: &[usize], k: usize, fraction: f64, rng: &mut ChaCha20Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &yi) in y.iter().enumerate() {
        by_class[yi].push(i);
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for rows in &mut by_class {
        rows.shuffle(rng);
        let take = if rows.len() >= 2 {
            ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len() - 1)
        } else {
            0
        };
        held.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

pub fn fit_mlp(
    cfg: &MlpConfig,
    loss: &LossSpec,
    x: &Array2<f64>,
    y: &[usize],
    k: usize,
) -> MlpModel {
    assert!(
        !cfg.hidden.is_empty() && cfg.hidden.len() <= 3,
        "1 to 3 hidden layers"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut dims = vec![x.ncols()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(k);
    let (weights, biases) = init_layers(&dims, &mut rng);
    let mut model = MlpModel {
        weights,
        biases,
        n_classes: k,
    };

    let mut counts = vec![0usize; k];
    for &yi in y {
        counts[yi] += 1;
    }
    let (train_rows, held_rows) = holdout_split(y, k, cfg.holdout_fraction, &mut rng);
    let held_truth: Vec<usize> = held_rows.iter().map(|&r| y[r]).collect();
    let held_x = if held_rows.is_empty() {
        None
    } else {
        Some(x.select(ndarray::Axis(0), &held_rows))
    };

    let mut vel = Gradients::zeros_like(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut order = train_rows.clone();
    let mut best: Option<(f64, Vec<Array2<f64>>, Vec<Vec<f64>>)> = None;
    let mut stale = 0usize;

    for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grads.reset();
            for &r in batch {
                backprop(&model, x.row(r).as_slice().unwrap(), y[r], loss, &counts, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            for l in 0..model.weights.len() {
                vel.dw[l].zip_mut_with(&grads.dw[l], |v, &g| {
                    *v = cfg.momentum * *v - cfg.learning_rate * g * scale
                });
                model.weights[l] += &vel.dw[l];
                for (v, (&g, b)) in vel.db[l]
                    .iter_mut()
                    .zip(grads.db[l].iter().zip(model.biases[l].iter_mut()))
                {
                    *v = cfg.momentum * *v - cfg.learning_rate * g * scale;
                    *b += *v;
                }
            }
        }
        if let Some(hx) = &held_x {
            let score = macro_f1(&top1(&predict_mlp(&model, hx)), &held_truth, k);
            let improved = best.as_ref().map_or(true, |(b, _, _)| score > *b + 1e-12);
            if improved {
                best = Some((score, model.weights.clone(), model.biases.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, w, b)) = best {
        model.weights = w;
        model.biases = b;
    }
    model
}
