//! Second-order multiclass gradient boosting over softmax.
//!
//! Each round fits one regression tree per class on the softmax gradient and
//! hessian; leaves hold Newton steps scaled by the learning rate at update
//! time. Scores start at the log class priors.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_regression, RegressionParams, Tree};
use crate::losses::{class_weights, WeightScheme, DEFAULT_BETA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
    /// Row fraction sampled without replacement per round.
    pub subsample: f64,
    pub weight_scheme: WeightScheme,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 50,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 2,
            lambda: 1.0,
            subsample: 0.8,
            weight_scheme: WeightScheme::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostModel {
    /// Log class priors, the round-zero score of every row.
    pub init: Vec<f64>,
    /// `rounds[r][c]` is round r's tree for class c.
    pub rounds: Vec<Vec<Tree>>,
    pub learning_rate: f64,
    pub n_classes: usize,
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut p = scores.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    p
}

pub fn fit_boost(cfg: &BoostConfig, x: &Array2<f64>, y: &[usize], k: usize) -> BoostModel {
    let n = x.nrows();
    let mut counts = vec![0usize; k];
    for &yi in y {
        counts[yi] += 1;
    }
    let cw = class_weights(&counts, cfg.weight_scheme, DEFAULT_BETA)
        .expect("all classes present after compression");
    let row_w: Vec<f64> = y.iter().map(|&yi| cw.weights[yi]).collect();
    let init: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).ln())
        .collect();
    let mut scores = Array2::zeros((n, k));
    for i in 0..n {
        for c in 0..k {
            scores[[i, c]] = init[c];
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let params = RegressionParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        lambda: cfg.lambda,
    };
    let m = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    let mut rounds = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let p = softmax_rows(&scores);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows.truncate(m);
        rows.sort_unstable();
        let mut round_trees = Vec::with_capacity(k);
        for c in 0..k {
            // Softmax cross-entropy: g = p_c - [y = c], h = p_c (1 - p_c),
            // both scaled by the row's class weight.
            let grad: Vec<f64> = (0..n)
                .map(|i| row_w[i] * (p[[i, c]] - if y[i] == c { 1.0 } else { 0.0 }))
                .collect();
            let hess: Vec<f64> = (0..n)
                .map(|i| row_w[i] * p[[i, c]] * (1.0 - p[[i, c]]))
                .collect();
            let tree = grow_regression(x, &grad, &hess, &rows, &params);
            for i in 0..n {
                let xi = x.row(i);
                scores[[i, c]] += cfg.learning_rate * tree.leaf_value(xi.as_slice().unwrap())[0];
            }
            round_trees.push(tree);
        }
        rounds.push(round_trees);
    }
    BoostModel {
        init,
        rounds,
        learning_rate: cfg.learning_rate,
        n_classes: k,
    }
}

pub fn predict_boost(model: &BoostModel, x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let k = model.n_classes;
    let mut scores = Array2::zeros((n, k));
    for i in 0..n {
        let xi = x.row(i);
        let xi = xi.as_slice().unwrap();
        for c in 0..k {
            let mut s = model.init[c];
            for round in &model.rounds {
                s += model.learning_rate * round[c].leaf_value(xi)[0];
            }
            scores[[i, c]] = s;
        }
    }
    softmax_rows(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rounds_predicts_class_priors() {
        let x = Array2::zeros((4, 2));
        let y = [0, 0, 0, 1];
        let cfg = BoostConfig {
            n_rounds: 0,
            ..BoostConfig::default()
        };
        let m = fit_boost(&cfg, &x, &y, 2);
        let p = predict_boost(&m, &x);
        assert!((p[[0, 0]] - 0.75).abs() < 1e-12);
        assert!((p[[0, 1]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn training_loss_decreases_with_rounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((80, 3), |(i, j)| {
            (i % 3) as f64 * 2.0 + j as f64 * 0.1 + rng.gen_range(-0.3..0.3)
        });
        let y: Vec<usize> = (0..80).map(|i| i % 3).collect();
        let ce = |p: &Array2<f64>| -> f64 {
            y.iter()
                .enumerate()
                .map(|(i, &yi)| -p[[i, yi]].max(1e-12).ln())
                .sum::<f64>()
                / y.len() as f64
        };
        let few = fit_boost(
            &BoostConfig {
                n_rounds: 2,
                subsample: 1.0,
                ..BoostConfig::default()
            },
            &x,
            &y,
            3,
        );
        let many = fit_boost(
            &BoostConfig {
                n_rounds: 30,
                subsample: 1.0,
                ..BoostConfig::default()
            },
            &x,
            &y,
            3,
        );
        assert!(ce(&predict_boost(&many, &x)) < ce(&predict_boost(&few, &x)));
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((50, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let cfg = BoostConfig {
            n_rounds: 8,
            seed: 7,
            ..BoostConfig::default()
        };
        let a = predict_boost(&fit_boost(&cfg, &x, &y, 2), &x);
        let b = predict_boost(&fit_boost(&cfg, &x, &y, 2), &x);
        assert_eq!(a, b);
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let m = fit_boost(
            &BoostConfig {
                n_rounds: 5,
                ..BoostConfig::default()
            },
            &x,
            &y,
            4,
        );
        let p = predict_boost(&m, &x);
        for i in 0..40 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }
}
