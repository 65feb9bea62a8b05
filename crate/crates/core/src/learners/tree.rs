//! Decision trees shared by the forest and boosting learners.
//!
//! Split tie-breaking is lowest feature index, then lowest threshold, so
//! training is deterministic for a fixed RNG stream.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    /// Class distribution (classification) or a single value (regression).
    Leaf { value: Vec<f64> },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value<'a>(&'a self, x: &[f64]) -> &'a [f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn weighted_gini(class_w: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - class_w.iter().map(|&w| (w / total) * (w / total)).sum::<f64>()
}

pub struct ClassificationParams {
    pub n_classes: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered per split.
    pub mtry_fraction: f64,
}

/// Grows a classification tree on the given rows. `sample_weight[r]` is the
/// class weight of row r's label; splits maximize the weighted Gini decrease
/// and leaves store normalized weighted class frequencies.
pub fn grow_classification(
    x: &Array2<f64>,
    y: &[usize],
    sample_weight: &[f64],
    rows: &[usize],
    params: &ClassificationParams,
    rng: &mut ChaCha20Rng,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow_cls_node(x, y, sample_weight, rows, params, rng, 0, &mut tree);
    tree
}

fn leaf_distribution(y: &[usize], w: &[f64], rows: &[usize], k: usize) -> Vec<f64> {
    let mut dist = vec![0.0; k];
    for &r in rows {
        dist[y[r]] += w[r];
    }
    let s: f64 = dist.iter().sum();
    if s > 0.0 {
        dist.iter_mut().for_each(|v| *v /= s);
    }
    dist
}

fn grow_cls_node(
    x: &Array2<f64>,
    y: &[usize],
    w: &[f64],
    rows: &[usize],
    params: &ClassificationParams,
    rng: &mut ChaCha20Rng,
    depth: usize,
    tree: &mut Tree,
) -> usize {
    let k = params.n_classes;
    let mut class_w = vec![0.0; k];
    for &r in rows {
        class_w[y[r]] += w[r];
    }
    let total: f64 = class_w.iter().sum();
    let n_present = class_w.iter().filter(|&&c| c > 0.0).count();
    let make_leaf = |tree: &mut Tree| {
        tree.nodes.push(Node::Leaf {
            value: leaf_distribution(y, w, rows, k),
        });
        tree.nodes.len() - 1
    };
    if depth >= params.max_depth || n_present <= 1 || rows.len() < 2 * params.min_leaf {
        return make_leaf(tree);
    }

    let p = x.ncols();
    let mtry = ((p as f64 * params.mtry_fraction).ceil() as usize).clamp(1, p);
    let mut feats: Vec<usize> = (0..p).collect();
    // Partial Fisher-Yates; candidate order re-sorted for tie-break stability.
    for i in 0..mtry {
        let j = rng.gen_range(i..p);
        feats.swap(i, j);
    }
    let mut candidates: Vec<usize> = feats[..mtry].to_vec();
    candidates.sort_unstable();

    let parent_imp = weighted_gini(&class_w, total);
    let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
    let mut order: Vec<usize> = Vec::with_capacity(rows.len());
    for &f in &candidates {
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| x[[a, f]].partial_cmp(&x[[b, f]]).unwrap().then(a.cmp(&b)));
        let mut left_w = vec![0.0; k];
        let mut left_total = 0.0;
        for i in 1..order.len() {
            let prev = order[i - 1];
            left_w[y[prev]] += w[prev];
            left_total += w[prev];
            let (va, vb) = (x[[prev, f]], x[[order[i], f]]);
            if va == vb {
                continue;
            }
            if i < params.min_leaf || order.len() - i < params.min_leaf {
                continue;
            }
            let right_total = total - left_total;
            let mut right_imp_sum = 0.0;
            let mut left_imp_sum = 0.0;
            for c in 0..k {
                let lw = left_w[c];
                let rw = class_w[c] - lw;
                left_imp_sum += lw * lw;
                right_imp_sum += rw * rw;
            }
            let left_imp = 1.0 - left_imp_sum / (left_total * left_total).max(1e-300);
            let right_imp = 1.0 - right_imp_sum / (right_total * right_total).max(1e-300);
            let decrease =
                parent_imp - (left_total * left_imp + right_total * right_imp) / total;
            if decrease > best.map_or(1e-12, |b| b.0 + 1e-12) {
                best = Some((decrease, f, 0.5 * (va + vb)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return make_leaf(tree);
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| x[[r, feature]] <= threshold);
    let idx = tree.nodes.len();
    tree.nodes.push(Node::Leaf { value: vec![] }); // placeholder
    let left = grow_cls_node(x, y, w, &left_rows, params, rng, depth + 1, tree);
    let right = grow_cls_node(x, y, w, &right_rows, params, rng, depth + 1, tree);
    tree.nodes[idx] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    idx
}

pub struct RegressionParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
}

/// Grows a regression tree on per-row gradient/hessian pairs; leaves hold the
/// Newton step `-G / (H + lambda)`.
pub fn grow_regression(
    x: &Array2<f64>,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &RegressionParams,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow_reg_node(x, grad, hess, rows, params, 0, &mut tree);
    tree
}

fn grow_reg_node(
    x: &Array2<f64>,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &RegressionParams,
    depth: usize,
    tree: &mut Tree,
) -> usize {
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r]).sum();
    let leaf_val = -g_total / (h_total + params.lambda);
    let make_leaf = |tree: &mut Tree| {
        tree.nodes.push(Node::Leaf {
            value: vec![leaf_val],
        });
        tree.nodes.len() - 1
    };
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf {
        return make_leaf(tree);
    }
    let parent_score = g_total * g_total / (h_total + params.lambda);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<usize> = Vec::with_capacity(rows.len());
    for f in 0..x.ncols() {
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| x[[a, f]].partial_cmp(&x[[b, f]]).unwrap().then(a.cmp(&b)));
        let mut gl = 0.0;
        let mut hl = 0.0;
        for i in 1..order.len() {
            let prev = order[i - 1];
            gl += grad[prev];
            hl += hess[prev];
            let (va, vb) = (x[[prev, f]], x[[order[i], f]]);
            if va == vb {
                continue;
            }
            if i < params.min_leaf || order.len() - i < params.min_leaf {
                continue;
            }
            let gr = g_total - gl;
            let hr = h_total - hl;
            let gain = gl * gl / (hl + params.lambda) + gr * gr / (hr + params.lambda)
                - parent_score;
            if gain > best.map_or(1e-12, |b| b.0 + 1e-12) {
                best = Some((gain, f, 0.5 * (va + vb)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return make_leaf(tree);
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| x[[r, feature]] <= threshold);
    let idx = tree.nodes.len();
    tree.nodes.push(Node::Leaf { value: vec![] });
    let left = grow_reg_node(x, grad, hess, &left_rows, params, depth + 1, tree);
    let right = grow_reg_node(x, grad, hess, &right_rows, params, depth + 1, tree);
    tree.nodes[idx] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn pure_leaf_data_yields_hard_distributions() {
        let x = arr2(&[[0.0], [0.1], [5.0], [5.1]]);
        let y = [0, 0, 1, 1];
        let w = [1.0; 4];
        let rows = [0, 1, 2, 3];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let t = grow_classification(
            &x,
            &y,
            &w,
            &rows,
            &ClassificationParams {
                n_classes: 2,
                max_depth: 4,
                min_leaf: 1,
                mtry_fraction: 1.0,
            },
            &mut rng,
        );
        assert_eq!(t.leaf_value(&[0.0]), &[1.0, 0.0]);
        assert_eq!(t.leaf_value(&[5.0]), &[0.0, 1.0]);
    }

    #[test]
    fn class_weight_shifts_leaf_distribution() {
        let x = arr2(&[[0.0], [0.0], [0.0], [0.0]]);
        let y = [0, 0, 0, 1];
        let w = [1.0, 1.0, 1.0, 3.0];
        let rows = [0, 1, 2, 3];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let t = grow_classification(
            &x,
            &y,
            &w,
            &rows,
            &ClassificationParams {
                n_classes: 2,
                max_depth: 3,
                min_leaf: 1,
                mtry_fraction: 1.0,
            },
            &mut rng,
        );
        // No split possible (constant feature) -> weighted frequencies.
        assert_eq!(t.leaf_value(&[0.0]), &[0.5, 0.5]);
    }

    #[test]
    fn regression_tree_newton_leaves() {
        // Single leaf: value = -G/(H + lambda).
        let x = arr2(&[[0.0], [0.0]]);
        let grad = [1.0, 1.0];
        let hess = [0.5, 0.5];
        let t = grow_regression(
            &x,
            &grad,
            &hess,
            &[0, 1],
            &RegressionParams {
                max_depth: 2,
                min_leaf: 1,
                lambda: 1.0,
            },
        );
        let v = t.leaf_value(&[0.0])[0];
        assert!((v - (-2.0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn regression_tree_splits_on_signal() {
        let x = arr2(&[[0.0], [1.0], [10.0], [11.0]]);
        let grad = [1.0, 1.0, -1.0, -1.0];
        let hess = [1.0; 4];
        let t = grow_regression(
            &x,
            &grad,
            &hess,
            &[0, 1, 2, 3],
            &RegressionParams {
                max_depth: 3,
                min_leaf: 1,
                lambda: 0.0,
            },
        );
        assert!(t.leaf_value(&[0.5])[0] < 0.0);
        assert!(t.leaf_value(&[10.5])[0] > 0.0);
    }
}
