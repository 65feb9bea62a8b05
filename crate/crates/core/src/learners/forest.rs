//! Bagged classification trees with class-weighted Gini splits.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classification, ClassificationParams, Tree};
use crate::losses::{class_weights, WeightScheme, DEFAULT_BETA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered per split.
    pub mtry_fraction: f64,
    pub weight_scheme: WeightScheme,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            max_depth: 12,
            min_leaf: 2,
            mtry_fraction: 0.5,
            weight_scheme: WeightScheme::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_classes: usize,
}

pub fn fit_forest(cfg: &ForestConfig, x: &Array2<f64>, y: &[usize], k: usize) -> ForestModel {
    let counts = {
        let mut c = vec![0usize; k];
        for &yi in y {
            c[yi] += 1;
        }
        c
    };
    let cw = class_weights(&counts, cfg.weight_scheme, DEFAULT_BETA)
        .expect("all classes present after compression");
    let sample_weight: Vec<f64> = y.iter().map(|&yi| cw.weights[yi]).collect();
    let n = x.nrows();
    let params = ClassificationParams {
        n_classes: k,
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        mtry_fraction: cfg.mtry_fraction,
    };
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(super::mix_seed(cfg.seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            grow_classification(x, y, &sample_weight, &rows, &params, &mut rng)
        })
        .collect();
    ForestModel {
        trees,
        n_classes: k,
    }
}

pub fn predict_forest(model: &ForestModel, x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let k = model.n_classes;
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let row = x.row(i);
        let row = row.as_slice().unwrap();
        let mut acc = vec![0.0; k];
        // Fixed tree order keeps the reduction identical across thread counts.
        for t in &model.trees {
            for (a, &v) in acc.iter_mut().zip(t.leaf_value(row)) {
                *a += v;
            }
        }
        let s = model.trees.len() as f64;
        for (j, a) in acc.iter().enumerate() {
            out[[i, j]] = a / s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn single_stump_on_pure_data_gives_hard_probs() {
        let x = arr2(&[[0.0], [0.2], [5.0], [5.2]]);
        let y = [0, 0, 1, 1];
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            mtry_fraction: 1.0,
            weight_scheme: WeightScheme::Uniform,
            seed: 3,
        };
        let m = fit_forest(&cfg, &x, &y, 2);
        let p = predict_forest(&m, &x);
        for i in 0..4 {
            for j in 0..2 {
                let v = p[[i, j]];
                assert!(v == 0.0 || v == 1.0, "p[{i},{j}]={v}");
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((100, 4), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let m = fit_forest(&ForestConfig::default(), &x, &y, 3);
        let p = predict_forest(&m, &x);
        for i in 0..100 {
            let s: f64 = p.row(i).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((60, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let cfg = ForestConfig {
            n_trees: 10,
            seed: 42,
            ..ForestConfig::default()
        };
        let a = predict_forest(&fit_forest(&cfg, &x, &y, 2), &x);
        let b = predict_forest(&fit_forest(&cfg, &x, &y, 2), &x);
        assert_eq!(a, b);
    }
}
