//! Class-weight schemes and imbalance-aware training objectives with exact
//! analytic gradients.
//!
//! Supported objectives: categorical cross-entropy (CE), weighted CE (WCE),
//! focal loss (FL, wFL) and label-distribution-aware margin loss (LDAM,
//! wLDAM). LDAM subtracts a count-dependent margin from the true-class logit
//! before the softmax; focal loss down-weights well-classified examples by
//! `(1 - p_y)^gamma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_MAX_MARGIN: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    InverseFrequency,
    EffectiveNumber,
}

/// Per-leaf weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub scheme: WeightScheme,
}

/// Derives class weights from per-leaf sample counts.
///
/// `inverse_frequency` uses `w_c = N / (K n_c)` (count-weighted mean 1);
/// `effective_number` uses `w_c ∝ (1 - beta) / (1 - beta^{n_c})` rescaled so
/// the weights sum to K.
pub fn class_weights(counts: &[usize], scheme: WeightScheme, beta: f64) -> Result<ClassWeights> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount(i));
    }
    let k = counts.len();
    let n: usize = counts.iter().sum();
    let weights = match scheme {
        WeightScheme::Uniform => vec![1.0; k],
        WeightScheme::InverseFrequency => counts
            .iter()
            .map(|&c| n as f64 / (k as f64 * c as f64))
            .collect(),
        WeightScheme::EffectiveNumber => {
            let raw: Vec<f64> = counts
                .iter()
                .map(|&c| (1.0 - beta) / (1.0 - beta.powi(c as i32)))
                .collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|&w| w * k as f64 / s).collect()
        }
    };
    Ok(ClassWeights {
        weights,
        scheme,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "WCE")]
    Wce,
    #[serde(rename = "FL")]
    Fl,
    #[serde(rename = "wFL")]
    Wfl,
    #[serde(rename = "LDAM")]
    Ldam,
    #[serde(rename = "wLDAM")]
    Wldam,
}

impl LossKind {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LossKind::Wce | LossKind::Wfl | LossKind::Wldam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gamma: f64,
    pub max_margin: f64,
    pub weights: Option<ClassWeights>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> LossSpec {
        LossSpec {
            kind,
            gamma: DEFAULT_GAMMA,
            max_margin: DEFAULT_MAX_MARGIN,
            weights: None,
        }
    }

    fn weight_for(&self, class: usize) -> f64 {
        if self.kind.is_weighted() {
            self.weights
                .as_ref()
                .map_or(1.0, |w| w.weights[class])
        } else {
            1.0
        }
    }
}

/// LDAM margins: `Δ_c ∝ n_c^{-1/4}`, rescaled so the largest margin (the
/// rarest class) equals `max_margin`.
pub fn ldam_margins(counts: &[usize], max_margin: f64) -> Result<Vec<f64>> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount(i));
    }
    let raw: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(-0.25)).collect();
    let top = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(raw.iter().map(|&r| max_margin * r / top).collect())
}

fn softmax_logp(logits: &[f64], out_p: &mut [f64], out_logp: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (&z, p) in logits.iter().zip(out_p.iter_mut()) {
        *p = (z - m).exp();
        sum += *p;
    }
    let lse = m + sum.ln();
    for ((&z, p), lp) in logits.iter().zip(out_p.iter_mut()).zip(out_logp.iter_mut()) {
        *p /= sum;
        *lp = z - lse;
    }
}

/// Loss value and exact gradient with respect to the logits.
pub fn loss_and_grad(
    logits: &[f64],
    true_leaf: usize,
    spec: &LossSpec,
    counts: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFiniteLogits(i));
    }
    let k = logits.len();
    let w = spec.weight_for(true_leaf);
    let mut p = vec![0.0; k];
    let mut logp = vec![0.0; k];

    match spec.kind {
        LossKind::Ce | LossKind::Wce => {
            softmax_logp(logits, &mut p, &mut logp);
            let loss = -w * logp[true_leaf];
            let grad = (0..k)
                .map(|j| w * (p[j] - if j == true_leaf { 1.0 } else { 0.0 }))
                .collect();
            Ok((loss, grad))
        }
        LossKind::Fl | LossKind::Wfl => {
            softmax_logp(logits, &mut p, &mut logp);
            let py = p[true_leaf];
            let lpy = logp[true_leaf];
            if spec.gamma == 0.0 {
                let loss = -w * lpy;
                let grad = (0..k)
                    .map(|j| w * (p[j] - if j == true_leaf { 1.0 } else { 0.0 }))
                    .collect();
                return Ok((loss, grad));
            }
            // q = 1 - p_y computed stably from log p_y.
            let q = (-lpy.exp_m1()).max(0.0);
            let loss = -w * q.powf(spec.gamma) * lpy;
            // dL/dp_y
            let dldp = if q == 0.0 {
                0.0
            } else {
                w * spec.gamma * q.powf(spec.gamma - 1.0) * lpy - w * q.powf(spec.gamma) / py
            };
            let grad = (0..k)
                .map(|j| dldp * py * (if j == true_leaf { 1.0 } else { 0.0 } - p[j]))
                .collect();
            Ok((loss, grad))
        }
        LossKind::Ldam | LossKind::Wldam => {
            let margins = ldam_margins(counts, spec.max_margin)?;
            let mut shifted = logits.to_vec();
            shifted[true_leaf] -= margins[true_leaf];
            softmax_logp(&shifted, &mut p, &mut logp);
            let loss = -w * logp[true_leaf];
            let grad = (0..k)
                .map(|j| w * (p[j] - if j == true_leaf { 1.0 } else { 0.0 }))
                .collect();
            Ok((loss, grad))
        }
    }
}
