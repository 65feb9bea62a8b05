//! Ranking and classification metrics.
//!
//! Rank ties are broken by ascending class index, so every metric is
//! deterministic. Coverage error uses 1-based ranks (1 = best).

use serde::{Deserialize, Serialize};

use crate::dataset::ProbabilityTable;
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// 1-based rank of the true class in the descending probability ordering:
/// `1 + |{j : p_j > p_y}| + |{j < y : p_j = p_y}|`.
fn rank_of(row: &[f64], y_col: usize) -> usize {
    let py = row[y_col];
    let above = row.iter().filter(|&&p| p > py).count();
    let tied_before = row[..y_col].iter().filter(|&&p| p == py).count();
    1 + above + tied_before
}

fn truth_column(probs: &ProbabilityTable, truth: &[usize]) -> Result<Vec<usize>> {
    truth
        .iter()
        .map(|t| {
            probs
                .classes
                .iter()
                .position(|c| c == t)
                .ok_or_else(|| Error::SchemaMismatch(format!("true class {t} not in class list")))
        })
        .collect()
}

/// Fraction of rows whose true class sits among the k top-ranked classes.
pub fn top_k_accuracy(probs: &ProbabilityTable, truth: &[usize], k: usize) -> Result<f64> {
    let kmax = probs.n_classes();
    if k == 0 || k > kmax {
        return Err(Error::BadK { k, kmax });
    }
    let cols = truth_column(probs, truth)?;
    let hits = probs
        .probs
        .rows()
        .into_iter()
        .zip(&cols)
        .filter(|(row, &c)| rank_of(row.as_slice().unwrap(), c) <= k)
        .count();
    Ok(hits as f64 / truth.len().max(1) as f64)
}

/// Mean 1-based rank of the true class.
pub fn coverage_error(probs: &ProbabilityTable, truth: &[usize]) -> Result<f64> {
    let cols = truth_column(probs, truth)?;
    let ranks: Vec<f64> = probs
        .probs
        .rows()
        .into_iter()
        .zip(&cols)
        .map(|(row, &c)| rank_of(row.as_slice().unwrap(), c) as f64)
        .collect();
    Ok(ranks.iter().sum::<f64>() / ranks.len().max(1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPrf {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    /// None = undefined (zero predictions).
    pub precision: Option<f64>,
    /// None = undefined (zero support).
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<ClassPrf>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Classes excluded from the macro averages.
    pub n_undefined: usize,
    pub accuracy: f64,
}

impl ClassMetrics {
    /// Macro-F1 over leaves of one formation (defined classes only).
    pub fn formation_macro_f1(&self, taxonomy: &Taxonomy, formation: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .per_class
            .iter()
            .filter(|c| taxonomy.parent_of(c.class) == formation)
            .filter_map(|c| c.f1)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// One-vs-rest precision/recall/F1 per leaf from top-1 predictions.
pub fn class_prf(pred_top1: &[usize], truth: &[usize], taxonomy: &Taxonomy) -> ClassMetrics {
    assert_eq!(pred_top1.len(), truth.len());
    let k = taxonomy.n_leaves();
    let mut tp = vec![0usize; k];
    let mut pred_n = vec![0usize; k];
    let mut true_n = vec![0usize; k];
    let mut correct = 0usize;
    for (&p, &t) in pred_top1.iter().zip(truth) {
        pred_n[p] += 1;
        true_n[t] += 1;
        if p == t {
            tp[p] += 1;
            correct += 1;
        }
    }
    let mut per_class = Vec::with_capacity(k);
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    let (mut np, mut nr, mut nf) = (0usize, 0usize, 0usize);
    let mut n_undefined = 0usize;
    for c in 0..k {
        let precision = (pred_n[c] > 0).then(|| tp[c] as f64 / pred_n[c] as f64);
        let recall = (true_n[c] > 0).then(|| tp[c] as f64 / true_n[c] as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        if let Some(p) = precision {
            sp += p;
            np += 1;
        }
        if let Some(r) = recall {
            sr += r;
            nr += 1;
        }
        if let Some(f) = f1 {
            sf += f;
            nf += 1;
        } else {
            n_undefined += 1;
        }
        per_class.push(ClassPrf {
            class: c,
            support: true_n[c],
            predicted: pred_n[c],
            precision,
            recall,
            f1,
        });
    }
    ClassMetrics {
        per_class,
        macro_precision: if np > 0 { sp / np as f64 } else { 0.0 },
        macro_recall: if nr > 0 { sr / nr as f64 } else { 0.0 },
        macro_f1: if nf > 0 { sf / nf as f64 } else { 0.0 },
        n_undefined,
        accuracy: correct as f64 / truth.len().max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::FormationRule;

    fn probs(rows: &[&[f64]]) -> ProbabilityTable {
        let k = rows[0].len();
        let mut m = ndarray::Array2::zeros((rows.len(), k));
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        ProbabilityTable {
            classes: (0..k).collect(),
            probs: m,
        }
    }

    fn taxo(k: usize) -> Taxonomy {
        let codes: Vec<String> = (0..k).map(|i| format!("A{i:02}")).collect();
        Taxonomy::build(&codes, &FormationRule::PrefixLength(1)).unwrap()
    }

    #[test]
    fn top_k_full_is_one() {
        let p = probs(&[&[0.5, 0.3, 0.2], &[0.1, 0.1, 0.8]]);
        assert_eq!(top_k_accuracy(&p, &[2, 0], 3).unwrap(), 1.0);
    }

    #[test]
    fn top_1_counts_argmax_rows() {
        let p = probs(&[&[0.5, 0.3, 0.2], &[0.5, 0.3, 0.2], &[0.5, 0.3, 0.2]]);
        let acc = top_k_accuracy(&p, &[0, 1, 2], 1).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_by_ascending_index() {
        let p = probs(&[&[0.5, 0.5, 0.0]]);
        assert_eq!(top_k_accuracy(&p, &[1], 1).unwrap(), 0.0);
        assert_eq!(top_k_accuracy(&p, &[0], 1).unwrap(), 1.0);
    }

    #[test]
    fn bad_k_rejected() {
        let p = probs(&[&[1.0, 0.0]]);
        assert!(matches!(
            top_k_accuracy(&p, &[0], 3),
            Err(Error::BadK { .. })
        ));
        assert!(matches!(
            top_k_accuracy(&p, &[0], 0),
            Err(Error::BadK { .. })
        ));
    }

    #[test]
    fn coverage_best_case() {
        let p = probs(&[&[0.7, 0.2, 0.1], &[0.1, 0.8, 0.1]]);
        assert_eq!(coverage_error(&p, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn coverage_worst_row() {
        let p = probs(&[&[0.5, 0.3, 0.2]]);
        assert_eq!(coverage_error(&p, &[2]).unwrap(), 3.0);
    }

    #[test]
    fn coverage_uniform_ties() {
        let p = probs(&[&[0.2, 0.2, 0.2, 0.2, 0.2]]);
        assert_eq!(coverage_error(&p, &[2]).unwrap(), 3.0);
    }

    #[test]
    fn prf_hand_case() {
        let t = taxo(2);
        let m = class_prf(&[0, 1, 1, 1], &[0, 0, 1, 1], &t);
        let c0 = &m.per_class[0];
        assert_eq!(c0.precision, Some(1.0));
        assert_eq!(c0.recall, Some(0.5));
        assert!((c0.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let c1 = &m.per_class[1];
        assert!((c1.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c1.recall, Some(1.0));
        assert!((c1.f1.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let t = taxo(3);
        let m = class_prf(&[0, 1, 2], &[0, 1, 2], &t);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn absent_class_flagged_undefined() {
        let t = taxo(3);
        let m = class_prf(&[0, 0], &[0, 0], &t);
        assert!(m.per_class[2].f1.is_none());
        assert_eq!(m.n_undefined, 2);
        assert_eq!(m.macro_f1, 1.0);
    }

    // Brute-force oracles: rank by explicit sort with the declared tie rule.
    fn oracle_rank(row: &[f64], y: usize) -> usize {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        order.iter().position(|&c| c == y).unwrap() + 1
    }

    #[test]
    fn oracle_equivalence_on_random_instances() {
        use rand::prelude::*;
        use rand_chacha::ChaCha20Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let k = rng.gen_range(2..=6);
            let n = rng.gen_range(1..=20);
            let mut m = ndarray::Array2::zeros((n, k));
            let mut truth = Vec::with_capacity(n);
            for i in 0..n {
                let mut row: Vec<f64> = (0..k)
                    .map(|_| {
                        // Coarse grid so ties actually occur.
                        (rng.gen_range(0..5) as f64) / 4.0
                    })
                    .collect();
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
                for (j, &v) in row.iter().enumerate() {
                    m[[i, j]] = v;
                }
                truth.push(rng.gen_range(0..k));
            }
            let p = ProbabilityTable {
                classes: (0..k).collect(),
                probs: m,
            };
            let kk = rng.gen_range(1..=k);
            // top-k oracle
            let hits = (0..n)
                .filter(|&i| {
                    oracle_rank(p.probs.row(i).as_slice().unwrap(), truth[i]) <= kk
                })
                .count();
            assert_eq!(
                top_k_accuracy(&p, &truth, kk).unwrap(),
                hits as f64 / n as f64
            );
            // coverage oracle
            let cov: f64 = (0..n)
                .map(|i| oracle_rank(p.probs.row(i).as_slice().unwrap(), truth[i]) as f64)
                .sum::<f64>()
                / n as f64;
            assert_eq!(coverage_error(&p, &truth).unwrap(), cov);
            // PRF oracle via explicit confusion counts
            let t = taxo(k);
            let pred = p.argmax();
            let m2 = class_prf(&pred, &truth, &t);
            for c in 0..k {
                let tp = (0..n).filter(|&i| pred[i] == c && truth[i] == c).count();
                let pn = (0..n).filter(|&i| pred[i] == c).count();
                let tn = (0..n).filter(|&i| truth[i] == c).count();
                assert_eq!(
                    m2.per_class[c].precision,
                    (pn > 0).then(|| tp as f64 / pn as f64)
                );
                assert_eq!(
                    m2.per_class[c].recall,
                    (tn > 0).then(|| tp as f64 / tn as f64)
                );
            }
            // micro recall = top-1 accuracy
            let acc = top_k_accuracy(&p, &truth, 1).unwrap();
            let micro = (0..n).filter(|&i| pred[i] == truth[i]).count() as f64 / n as f64;
            // argmax tie rule matches rank tie rule, so these agree exactly.
            assert_eq!(acc, micro);
            assert_eq!(m2.accuracy, micro);
        }
    }
}
