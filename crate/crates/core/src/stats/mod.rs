//! Strategy-comparison statistics: Friedman test on class-wise scores,
//! Nemenyi post-hoc with critical differences, and paired t-tests.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use special::{chi2_sf, t_two_sided_p};

/// Blocks (habitat classes) x treatments (strategies) of real scores.
/// Rows containing undefined scores are dropped listwise; the count is kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub rows: Vec<Vec<f64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub n_dropped: usize,
}

impl ScoreMatrix {
    /// Builds a matrix from per-block score rows, dropping rows with any
    /// missing (None / non-finite) cell.
    pub fn from_rows(
        rows: Vec<(String, Vec<Option<f64>>)>,
        col_labels: Vec<String>,
    ) -> Result<ScoreMatrix> {
        let k = col_labels.len();
        if k < 2 {
            return Err(Error::DegenerateMatrix("need at least 2 treatments".into()));
        }
        let mut kept = Vec::new();
        let mut labels = Vec::new();
        let mut dropped = 0usize;
        for (label, row) in rows {
            if row.len() != k {
                return Err(Error::DegenerateMatrix(format!(
                    "row {label} has {} cells, expected {k}",
                    row.len()
                )));
            }
            if row.iter().all(|c| c.map_or(false, f64::is_finite)) {
                kept.push(row.into_iter().map(Option::unwrap).collect());
                labels.push(label);
            } else {
                dropped += 1;
            }
        }
        if kept.len() < 2 {
            return Err(Error::DegenerateMatrix(format!(
                "only {} complete rows after dropping {dropped}",
                kept.len()
            )));
        }
        Ok(ScoreMatrix {
            rows: kept,
            row_labels: labels,
            col_labels,
            n_dropped: dropped,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.col_labels.len()
    }
}

/// Within-row ranks, rank 1 = highest score, ties get average ranks.
fn row_ranks(row: &[f64]) -> Vec<f64> {
    let k = row.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
    let mut ranks = vec![0.0; k];
    let mut i = 0;
    while i < k {
        let mut j = i;
        while j + 1 < k && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of 1-based ranks i+1..=j+1
        for &col in &order[i..=j] {
            ranks[col] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    pub mean_ranks: Vec<f64>,
}

/// Friedman rank test. No tie-correction term (ties are rare on continuous
/// scores).
pub fn friedman(m: &ScoreMatrix) -> Result<FriedmanResult> {
    let n = m.n_blocks();
    let k = m.n_treatments();
    if n < 2 || k < 2 {
        return Err(Error::DegenerateMatrix(format!("n={n}, k={k}")));
    }
    let mut rank_sums = vec![0.0; k];
    for row in &m.rows {
        for (s, r) in rank_sums.iter_mut().zip(row_ranks(row)) {
            *s += r;
        }
    }
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / n as f64).collect();
    let nf = n as f64;
    let kf = k as f64;
    let chi2 = 12.0 * nf / (kf * (kf + 1.0))
        * mean_ranks.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    let chi2 = chi2.max(0.0);
    Ok(FriedmanResult {
        chi2,
        df: k - 1,
        p: chi2_sf(chi2, k - 1),
        mean_ranks,
    })
}

/// Studentized-range critical values q_{alpha,k} / sqrt(2) for the Nemenyi
/// test, k = 2..=10.
const Q_05: [f64; 9] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
];
const Q_10: [f64; 9] = [
    1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NemenyiResult {
    pub cd: f64,
    pub mean_ranks: Vec<f64>,
    /// Unordered significant pairs (i < j), indices into col_labels.
    pub significant_pairs: Vec<(usize, usize)>,
}

/// Nemenyi post-hoc: pairs whose mean-rank gap exceeds the critical
/// difference `CD = q_{alpha,k} * sqrt(k(k+1)/(6n))`.
pub fn nemenyi(m: &ScoreMatrix, alpha: f64) -> Result<NemenyiResult> {
    let k = m.n_treatments();
    if !(2..=10).contains(&k) {
        return Err(Error::UnsupportedK(k));
    }
    let q = if (alpha - 0.05).abs() < 1e-12 {
        Q_05[k - 2]
    } else if (alpha - 0.10).abs() < 1e-12 {
        Q_10[k - 2]
    } else {
        return Err(Error::DegenerateMatrix(format!(
            "alpha {alpha} not in {{0.05, 0.10}}"
        )));
    };
    let n = m.n_blocks() as f64;
    let kf = k as f64;
    let cd = q * (kf * (kf + 1.0) / (6.0 * n)).sqrt();
    let mean_ranks = friedman(m)?.mean_ranks;
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if (mean_ranks[i] - mean_ranks[j]).abs() > cd {
                pairs.push((i, j));
            }
        }
    }
    Ok(NemenyiResult {
        cd,
        mean_ranks,
        significant_pairs: pairs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedTResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Paired t-test on the differences `a - b`, two-sided.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedTResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DegeneratePairs(format!(
            "lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::DegeneratePairs("zero variance of differences".into()));
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = diffs.len() - 1;
    Ok(PairedTResult {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> ScoreMatrix {
        let k = rows[0].len();
        ScoreMatrix::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("b{i}"), r.iter().map(|&v| Some(v)).collect()))
                .collect(),
            (0..k).map(|j| format!("t{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_columns_no_signal() {
        let m = matrix(&[&[0.5, 0.5, 0.5], &[0.7, 0.7, 0.7], &[0.2, 0.2, 0.2]]);
        let r = friedman(&m).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p, 1.0);
        let nz = nemenyi(&m, 0.05).unwrap();
        assert!(nz.significant_pairs.is_empty());
    }

    #[test]
    fn hand_derived_case() {
        // every row ranks the columns (1, 2, 3)
        let m = matrix(&[&[0.9, 0.5, 0.1], &[0.8, 0.6, 0.2], &[0.7, 0.4, 0.3]]);
        let r = friedman(&m).unwrap();
        assert!((r.chi2 - 6.0).abs() < 1e-12);
        assert_eq!(r.df, 2);
        assert!((r.p - 0.0498).abs() < 1e-3);
        assert_eq!(r.mean_ranks, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mean_ranks_conserve_sum() {
        let m = matrix(&[&[0.1, 0.9, 0.5], &[0.6, 0.2, 0.8], &[0.3, 0.3, 0.3]]);
        let r = friedman(&m).unwrap();
        let s: f64 = r.mean_ranks.iter().sum();
        assert!((s - 6.0).abs() < 1e-12); // k(k+1)/2
    }

    #[test]
    fn friedman_invariant_to_monotone_row_transform() {
        let m1 = matrix(&[&[0.1, 0.9, 0.5], &[0.6, 0.2, 0.8], &[0.4, 0.3, 0.9]]);
        let transformed: Vec<Vec<f64>> = m1
            .rows
            .iter()
            .map(|r| r.iter().map(|&v| (v * 3.0).exp()).collect())
            .collect();
        let m2 = matrix(&transformed.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let a = friedman(&m1).unwrap();
        let b = friedman(&m2).unwrap();
        assert!((a.chi2 - b.chi2).abs() < 1e-12);
    }

    #[test]
    fn friedman_invariant_to_row_permutation() {
        let rows: Vec<Vec<f64>> = vec![
            vec![0.1, 0.9, 0.5],
            vec![0.6, 0.2, 0.8],
            vec![0.4, 0.3, 0.9],
        ];
        let m1 = matrix(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let perm: Vec<&[f64]> = vec![&rows[2], &rows[0], &rows[1]];
        let m2 = matrix(&perm);
        assert_eq!(friedman(&m1).unwrap().chi2, friedman(&m2).unwrap().chi2);
    }

    #[test]
    fn nemenyi_critical_difference_value() {
        // k=3, n=10, alpha=0.05, q=2.343 -> CD = 2.343*sqrt(12/60)
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![0.9 - i as f64 * 0.01, 0.5, 0.1 + i as f64 * 0.01])
            .collect();
        let m = matrix(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let r = nemenyi(&m, 0.05).unwrap();
        assert!((r.cd - 1.0478).abs() < 1e-3, "cd={}", r.cd);
        // rank gap |1 - 3| = 2 > CD: extreme pair significant, symmetric.
        assert!(r.significant_pairs.contains(&(0, 2)));
    }

    #[test]
    fn nemenyi_unsupported_k() {
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..11).map(|j| j as f64).collect()).collect();
        let m = matrix(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        assert!(matches!(nemenyi(&m, 0.05), Err(Error::UnsupportedK(11))));
    }

    #[test]
    fn nemenyi_cd_shrinks_with_n() {
        let mk = |n: usize| {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, 0.5 + (i % 2) as f64 * 0.01, 0.0]).collect();
            matrix(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>())
        };
        let small = nemenyi(&mk(4), 0.05).unwrap();
        let big = nemenyi(&mk(100), 0.05).unwrap();
        assert!(big.cd < small.cd);
        // fixed rank gap eventually significant
        assert!(!big.significant_pairs.is_empty());
    }

    #[test]
    fn paired_t_hand_case() {
        // diffs [1, -1, 2, 0]
        let a = [2.0, 0.0, 3.0, 1.0];
        let b = [1.0, 1.0, 1.0, 1.0];
        let r = paired_t(&a, &b).unwrap();
        assert!((r.t - 0.7746).abs() < 1e-4);
        assert_eq!(r.df, 3);
        assert!((r.p - 0.495).abs() < 1e-3);
    }

    #[test]
    fn equal_vectors_degenerate() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(paired_t(&a, &a), Err(Error::DegeneratePairs(_))));
    }

    #[test]
    fn near_constant_diffs_drive_p_to_zero() {
        let n = 20;
        let a: Vec<f64> = (0..n).map(|i| 1.0 + 1e-9 * (i as f64)).collect();
        let b = vec![0.0; n];
        let r = paired_t(&a, &b).unwrap();
        assert!(r.t > 1e6);
        assert!(r.p < 1e-10);
    }

    #[test]
    fn missing_rows_dropped_listwise() {
        let m = ScoreMatrix::from_rows(
            vec![
                ("a".into(), vec![Some(0.1), Some(0.2)]),
                ("b".into(), vec![Some(0.3), None]),
                ("c".into(), vec![Some(0.5), Some(0.4)]),
            ],
            vec!["s1".into(), "s2".into()],
        )
        .unwrap();
        assert_eq!(m.n_blocks(), 2);
        assert_eq!(m.n_dropped, 1);
    }

    #[test]
    fn average_ranks_for_ties() {
        let r = row_ranks(&[0.5, 0.5, 0.1]);
        assert_eq!(r, vec![1.5, 1.5, 3.0]);
    }
}
