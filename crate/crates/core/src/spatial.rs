//! Spatial blocks, stratified block-to-fold assignment, and tuning splits.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleTable;
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

/// Grid of square spatial blocks; every sample maps to exactly one block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockGrid {
    pub block_size: f64,
    pub origin: (f64, f64),
    /// Block id per row; ids are contiguous 0..n_blocks.
    pub block_of_row: Vec<usize>,
    pub n_blocks: usize,
}

impl BlockGrid {
    /// Rows grouped by block id.
    pub fn rows_by_block(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks];
        for (r, &b) in self.block_of_row.iter().enumerate() {
            out[b].push(r);
        }
        out
    }
}

/// Assigns every sample to the grid cell `(floor((x-ox)/s), floor((y-oy)/s))`,
/// with the origin at the data minimum. Cell keys are flattened to contiguous
/// ids in sorted key order, so the assignment is deterministic.
pub fn assign_blocks(table: &SampleTable, block_size: f64) -> Result<BlockGrid> {
    if !(block_size > 0.0) {
        return Err(Error::NonPositiveBlockSize(block_size));
    }
    let ox = table.x.iter().cloned().fold(f64::INFINITY, f64::min);
    let oy = table.y.iter().cloned().fold(f64::INFINITY, f64::min);
    let (ox, oy) = if table.x.is_empty() { (0.0, 0.0) } else { (ox, oy) };
    let keys: Vec<(i64, i64)> = table
        .x
        .iter()
        .zip(&table.y)
        .map(|(&x, &y)| {
            (
                ((x - ox) / block_size).floor() as i64,
                ((y - oy) / block_size).floor() as i64,
            )
        })
        .collect();
    let mut uniq = keys.clone();
    uniq.sort();
    uniq.dedup();
    let block_of_row = keys
        .iter()
        .map(|k| uniq.binary_search(k).unwrap())
        .collect();
    Ok(BlockGrid {
        block_size,
        origin: (ox, oy),
        block_of_row,
        n_blocks: uniq.len(),
    })
}

/// Block-to-fold assignment; no block ever spans folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub block_size: f64,
    pub fold_of_block: Vec<usize>,
    pub fold_of_row: Vec<usize>,
    /// Per-fold leaf-class histograms.
    pub fold_class_counts: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&r| self.fold_of_row[r] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&r| self.fold_of_row[r] != fold)
            .collect()
    }

    /// JSON manifest for experiment reproducibility.
    pub fn to_manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "n_folds": self.n_folds,
            "block_size": self.block_size,
            "assignments": self
                .fold_of_block
                .iter()
                .enumerate()
                .map(|(b, &f)| serde_json::json!({"block": b, "fold": f}))
                .collect::<Vec<_>>(),
        })
    }
}

fn chi2_distance(counts: &[usize], total: usize, global_prop: &[f64]) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .zip(global_prop)
        .map(|(&c, &p)| {
            let e = (t * p).max(1e-12);
            let d = c as f64 - e;
            d * d / e
        })
        .sum()
}

/// Greedy stratified assignment: blocks sorted by sample count descending
/// (seed shuffles equal-count blocks), each placed in the fold minimizing
/// chi-square distance to the global class distribution; ties broken by fold
/// size, then fold index. Folds still empty are filled first.
pub fn make_folds(
    grid: &BlockGrid,
    table: &SampleTable,
    taxonomy: &Taxonomy,
    n_folds: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::TooFewBlocks {
            need: n_folds.max(2),
            have: grid.n_blocks,
        });
    }
    if grid.n_blocks < n_folds {
        return Err(Error::TooFewBlocks {
            need: n_folds,
            have: grid.n_blocks,
        });
    }
    let k = taxonomy.n_leaves();
    let by_block = grid.rows_by_block();
    let block_hist: Vec<Vec<usize>> = by_block
        .iter()
        .map(|rows| table.class_counts(rows, k))
        .collect();
    let mut global = vec![0usize; k];
    for h in &block_hist {
        for (g, &c) in global.iter_mut().zip(h) {
            *g += c;
        }
    }
    let n_total: usize = global.iter().sum();
    let global_prop: Vec<f64> = global
        .iter()
        .map(|&c| c as f64 / (n_total as f64).max(1.0))
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<(usize, usize, u64)> = (0..grid.n_blocks)
        .map(|b| (b, by_block[b].len(), rng.gen()))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));

    let mut fold_counts = vec![vec![0usize; k]; n_folds];
    let mut fold_sizes = vec![0usize; n_folds];
    let mut fold_of_block = vec![usize::MAX; grid.n_blocks];
    for &(b, size, _) in &order {
        let any_empty = fold_sizes.iter().any(|&s| s == 0);
        let mut best: Option<(f64, usize, usize)> = None;
        for f in 0..n_folds {
            if any_empty && fold_sizes[f] > 0 {
                continue;
            }
            let mut cand = fold_counts[f].clone();
            for (c, &h) in cand.iter_mut().zip(&block_hist[b]) {
                *c += h;
            }
            let d = chi2_distance(&cand, fold_sizes[f] + size, &global_prop);
            let key = (d, fold_sizes[f], f);
            let better = match &best {
                None => true,
                Some((bd, bs, bf)) => {
                    (d - bd).abs() > 1e-12 && d < *bd
                        || (d - bd).abs() <= 1e-12
                            && (fold_sizes[f] < *bs || (fold_sizes[f] == *bs && f < *bf))
                }
            };
            if better {
                best = Some(key);
            }
        }
        let f = best.unwrap().2;
        fold_of_block[b] = f;
        fold_sizes[f] += size;
        for (c, &h) in fold_counts[f].iter_mut().zip(&block_hist[b]) {
            *c += h;
        }
    }

    let fold_of_row = grid
        .block_of_row
        .iter()
        .map(|&b| fold_of_block[b])
        .collect();
    Ok(FoldPlan {
        n_folds,
        block_size: grid.block_size,
        fold_of_block,
        fold_of_row,
        fold_class_counts: fold_counts,
    })
}

/// Block-respecting inner tuning split: whole blocks go to the holdout,
/// sized as close to `fraction` as block granularity allows, stratified by
/// formation. Returns `(inner_train, holdout)` row lists.
pub fn tuning_split(
    table: &SampleTable,
    taxonomy: &Taxonomy,
    grid: &BlockGrid,
    train_rows: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    if train_rows.is_empty() {
        return Err(Error::DegenerateSplit("no training rows".into()));
    }
    // Blocks restricted to the training rows.
    let mut rows_of_block: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &r in train_rows {
        rows_of_block.entry(grid.block_of_row[r]).or_default().push(r);
    }
    let blocks: Vec<(usize, Vec<usize>)> = rows_of_block.into_iter().collect();
    if blocks.len() < 2 {
        return Err(Error::DegenerateSplit(
            "need at least 2 blocks for a block-respecting split".into(),
        ));
    }
    let nf = taxonomy.n_formations();
    let formation_hist = |rows: &[usize]| {
        let mut h = vec![0usize; nf];
        for &r in rows {
            if let Some(c) = table.leaf[r] {
                h[taxonomy.parent_of(c)] += 1;
            }
        }
        h
    };
    let global = formation_hist(train_rows);
    let g_total: usize = global.iter().sum();
    let global_prop: Vec<f64> = global
        .iter()
        .map(|&c| c as f64 / (g_total as f64).max(1.0))
        .collect();

    let target = fraction * train_rows.len() as f64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tiebreak: Vec<u64> = (0..blocks.len()).map(|_| rng.gen()).collect();

    let mut chosen = vec![false; blocks.len()];
    let mut holdout: Vec<usize> = Vec::new();
    let mut hold_hist = vec![0usize; nf];
    loop {
        let cur = holdout.len() as f64;
        // Candidates that move the holdout size closer to (or onto) target.
        let mut best: Option<(f64, u64, usize)> = None;
        for (i, (_, rows)) in blocks.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let new = cur + rows.len() as f64;
            if (new - target).abs() >= (cur - target).abs() && !holdout.is_empty() {
                continue;
            }
            let mut cand = hold_hist.clone();
            for &r in rows {
                if let Some(c) = table.leaf[r] {
                    cand[taxonomy.parent_of(c)] += 1;
                }
            }
            let d = chi2_distance(&cand, holdout.len() + rows.len(), &global_prop);
            let key = (d, tiebreak[i], i);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        let Some((_, _, i)) = best else { break };
        chosen[i] = true;
        holdout.extend(&blocks[i].1);
        hold_hist = {
            let mut h = hold_hist;
            for &r in &blocks[i].1 {
                if let Some(c) = table.leaf[r] {
                    h[taxonomy.parent_of(c)] += 1;
                }
            }
            h
        };
    }
    if holdout.is_empty() || holdout.len() == train_rows.len() {
        return Err(Error::DegenerateSplit(
            "holdout or inner-train would be empty".into(),
        ));
    }
    let inner: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|r| !holdout.contains(r))
        .collect();
    let mut holdout = holdout;
    holdout.sort();
    Ok((inner, holdout))
}
