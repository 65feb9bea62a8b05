//! Performance-weighted probability averaging across fitted members.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::ProbabilityTable;
use crate::error::{Error, Result};

/// Member list with validation scores; weights are proportional to
/// `max(score, floor)` and normalized to sum 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub member_names: Vec<String>,
    pub scores: Vec<f64>,
    pub weight_floor: f64,
}

impl EnsembleSpec {
    pub fn new(member_names: Vec<String>, scores: Vec<f64>) -> Result<EnsembleSpec> {
        if member_names.is_empty() || member_names.len() != scores.len() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(EnsembleSpec {
            member_names,
            scores,
            weight_floor: 1e-6,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self
            .scores
            .iter()
            .map(|&s| s.max(self.weight_floor))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|&w| w / total).collect()
    }
}

/// Row-wise convex combination of member probability tables.
pub fn combine(members: &[ProbabilityTable], weights: &[f64]) -> Result<ProbabilityTable> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if members.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} members, {} weights",
            members.len(),
            weights.len()
        )));
    }
    let first = &members[0];
    for m in &members[1..] {
        if m.classes != first.classes || m.probs.dim() != first.probs.dim() {
            return Err(Error::ShapeMismatch(
                "members differ in shape or class order".into(),
            ));
        }
    }
    let wsum: f64 = weights.iter().sum();
    let mut out: Array2<f64> = Array2::zeros(first.probs.dim());
    for (m, &w) in members.iter().zip(weights) {
        out.scaled_add(w / wsum, &m.probs);
    }
    Ok(ProbabilityTable {
        classes: first.classes.clone(),
        probs: out,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyRow {
    /// Shannon entropy of the combined row (nats).
    pub entropy: f64,
    /// Mean pairwise Jensen-Shannon divergence across members (nats).
    pub disagreement: f64,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    let kl = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).ln())
            .sum::<f64>()
    };
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// Per-row uncertainty: combined-row entropy plus member disagreement
/// (mean pairwise JSD; 0 when fewer than 2 members).
pub fn uncertainty(combined: &ProbabilityTable, members: &[ProbabilityTable]) -> Vec<UncertaintyRow> {
    let n = combined.n_rows();
    (0..n)
        .map(|i| {
            let row = combined.probs.row(i);
            let ent = entropy(row.as_slice().unwrap());
            let mut dis = 0.0;
            let mut pairs = 0usize;
            for a in 0..members.len() {
                for b in (a + 1)..members.len() {
                    dis += jsd(
                        members[a].probs.row(i).as_slice().unwrap(),
                        members[b].probs.row(i).as_slice().unwrap(),
                    );
                    pairs += 1;
                }
            }
            UncertaintyRow {
                entropy: ent,
                disagreement: if pairs > 0 { dis / pairs as f64 } else { 0.0 },
            }
        })
        .collect()
}
