//! Sampled interventional Shapley values and modality-level summaries.
//!
//! For each random feature permutation, features switch from a background
//! draw to the explained instance in permutation order; a feature's value is
//! the mean marginal change in the target output (the predicted-class
//! probability). One estimator serves every learner family.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_BACKGROUND: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionResult {
    /// Shapley estimate per feature for the target output.
    pub phi: Vec<f64>,
    /// `|sum phi - (f(x) - mean_b f(b))|`.
    pub efficiency_gap: f64,
    pub permutations: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl AttributionResult {
    /// Share of total |phi| per modality; `None` when all phi are zero.
    pub fn modality_shares(&self, modalities: &[Modality]) -> Option<BTreeMap<Modality, f64>> {
        assert_eq!(modalities.len(), self.phi.len());
        let total: f64 = self.phi.iter().map(|p| p.abs()).sum();
        if total <= 0.0 {
            return None;
        }
        let mut shares: BTreeMap<Modality, f64> = BTreeMap::new();
        for (&m, p) in modalities.iter().zip(&self.phi) {
            *shares.entry(m).or_insert(0.0) += p.abs() / total;
        }
        Some(shares)
    }
}

/// Monte-Carlo Shapley estimate for one instance. `f` maps a feature vector
/// to the target output and must be deterministic.
pub fn sampled_shapley(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    background: &Array2<f64>,
    permutations: usize,
    seed: u64,
) -> Result<AttributionResult> {
    if background.nrows() == 0 {
        return Err(Error::EmptyBackground);
    }
    assert!(permutations >= 1, "need at least one permutation");
    assert_eq!(background.ncols(), x.len(), "background width mismatch");
    let d = x.len();

    // Per-permutation seeds keep the estimate independent of scheduling.
    let sums: Vec<Vec<f64>> = (0..permutations)
        .into_par_iter()
        .map(|m| {
            let mut rng =
                ChaCha20Rng::seed_from_u64(crate::learners::mix_seed(seed, m as u64));
            // Cycle background rows so each is used equally often: balanced
            // sampling removes background variance from the estimate, and the
            // linear-model closed form then holds up to permutation noise.
            let b = m % background.nrows();
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(&mut rng);
            let mut cur: Vec<f64> = background.row(b).to_vec();
            let mut prev = f(&cur);
            let mut phi = vec![0.0; d];
            for &j in &order {
                cur[j] = x[j];
                let next = f(&cur);
                phi[j] = next - prev;
                prev = next;
            }
            phi
        })
        .collect();
    let mut phi = vec![0.0; d];
    for s in &sums {
        for (p, v) in phi.iter_mut().zip(s) {
            *p += v;
        }
    }
    phi.iter_mut().for_each(|p| *p /= permutations as f64);

    let fx = f(x);
    let mean_fb: f64 = (0..background.nrows())
        .map(|b| f(&background.row(b).to_vec()))
        .sum::<f64>()
        / background.nrows() as f64;
    let efficiency_gap = (phi.iter().sum::<f64>() - (fx - mean_fb)).abs();
    Ok(AttributionResult {
        phi,
        efficiency_gap,
        permutations,
        background_size: background.nrows(),
        seed,
    })
}

/// Mean modality share over per-sample results; rows where every phi is zero
/// are skipped and counted in `n_degenerate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityContribution {
    pub shares: BTreeMap<Modality, f64>,
    pub n_samples: usize,
    pub n_degenerate: usize,
}

pub fn modality_contribution(
    results: &[AttributionResult],
    modalities: &[Modality],
) -> ModalityContribution {
    assert!(!results.is_empty(), "need at least one result");
    let mut acc: BTreeMap<Modality, f64> = BTreeMap::new();
    let mut used = 0usize;
    for r in results {
        match r.modality_shares(modalities) {
            Some(shares) => {
                for (m, s) in shares {
                    *acc.entry(m).or_insert(0.0) += s;
                }
                used += 1;
            }
            None => {}
        }
    }
    if used > 0 {
        acc.values_mut().for_each(|v| *v /= used as f64);
    }
    ModalityContribution {
        shares: acc,
        n_samples: results.len(),
        n_degenerate: results.len() - used,
    }
}
