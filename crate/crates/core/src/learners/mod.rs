//! Three learner families behind one fit/predict contract, plus randomized
//! hyperparameter search.
//!
//! Classes absent from the training labels are legal: their probability
//! columns are emitted as exact zeros and listed in `missing_classes`.

pub mod boosting;
pub mod forest;
pub mod mlp;
pub mod tree;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use boosting::BoostConfig;
pub use forest::ForestConfig;
pub use mlp::MlpConfig;

use crate::dataset::ProbabilityTable;
use crate::error::{Error, Result};
use crate::losses::{class_weights, LossSpec, WeightScheme, DEFAULT_BETA};

/// SplitMix64-style mix deriving independent substreams from one seed.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerConfig {
    Forest(ForestConfig),
    Boosting(BoostConfig),
    Mlp {
        config: MlpConfig,
        loss: LossSpec,
        /// Used to materialize loss weights from training counts when the
        /// loss is a weighted kind and no weights were supplied.
        weight_scheme: WeightScheme,
    },
}

impl LearnerConfig {
    pub fn family(&self) -> &'static str {
        match self {
            LearnerConfig::Forest(_) => "forest",
            LearnerConfig::Boosting(_) => "boosting",
            LearnerConfig::Mlp { .. } => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            LearnerConfig::Forest(c) => {
                if c.n_trees == 0 || c.max_depth == 0 || c.min_leaf == 0 {
                    return bad("forest counts must be >= 1");
                }
                if !(c.mtry_fraction > 0.0 && c.mtry_fraction <= 1.0) {
                    return bad("mtry_fraction must be in (0, 1]");
                }
            }
            LearnerConfig::Boosting(c) => {
                if c.max_depth == 0 || c.min_leaf == 0 {
                    return bad("boosting counts must be >= 1");
                }
                if c.learning_rate <= 0.0 || c.subsample <= 0.0 || c.subsample > 1.0 {
                    return bad("boosting rates must be positive, subsample in (0, 1]");
                }
            }
            LearnerConfig::Mlp { config: c, .. } => {
                if c.hidden.is_empty() || c.hidden.len() > 3 {
                    return bad("mlp needs 1 to 3 hidden layers");
                }
                if c.hidden.iter().any(|&h| h == 0) || c.batch_size == 0 || c.max_epochs == 0 {
                    return bad("mlp counts must be >= 1");
                }
                if c.learning_rate <= 0.0 {
                    return bad("mlp learning rate must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        match self {
            LearnerConfig::Forest(c) => c.seed,
            LearnerConfig::Boosting(c) => c.seed,
            LearnerConfig::Mlp { config, .. } => config.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> LearnerConfig {
        match &mut self {
            LearnerConfig::Forest(c) => c.seed = seed,
            LearnerConfig::Boosting(c) => c.seed = seed,
            LearnerConfig::Mlp { config, .. } => config.seed = seed,
        }
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Params {
    Forest(forest::ForestModel),
    Boosting(boosting::BoostModel),
    Mlp(mlp::MlpModel),
}

/// A trained learner over a fixed class index list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    params: Params,
    pub config: LearnerConfig,
    /// Full class index list; prediction columns follow this order.
    pub classes: Vec<usize>,
    /// Classes absent from training; their columns are exact zeros.
    pub missing_classes: Vec<usize>,
    pub n_features: usize,
    pub schema_hash: u64,
}

/// Trains one learner. `y` holds labels in `0..k`; `schema_hash` identifies
/// the feature layout and is re-checked at prediction time.
pub fn fit(
    config: &LearnerConfig,
    x: &Array2<f64>,
    y: &[usize],
    k: usize,
    schema_hash: u64,
) -> Result<FittedModel> {
    config.validate()?;
    let n = x.nrows();
    if n < k {
        return Err(Error::InsufficientData { n, k });
    }
    let mut counts = vec![0usize; k];
    for &yi in y {
        counts[yi] += 1;
    }
    // Compress to present classes so family code never sees empty columns.
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let missing: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    let mut to_compressed = vec![usize::MAX; k];
    for (j, &c) in present.iter().enumerate() {
        to_compressed[c] = j;
    }
    let yc: Vec<usize> = y.iter().map(|&yi| to_compressed[yi]).collect();
    let kp = present.len();

    let params = match config {
        LearnerConfig::Forest(c) => Params::Forest(forest::fit_forest(c, x, &yc, kp)),
        LearnerConfig::Boosting(c) => Params::Boosting(boosting::fit_boost(c, x, &yc, kp)),
        LearnerConfig::Mlp {
            config: c,
            loss,
            weight_scheme,
        } => {
            let mut loss = loss.clone();
            if loss.kind.is_weighted() && loss.weights.is_none() {
                let cc: Vec<usize> = present.iter().map(|&c| counts[c]).collect();
                loss.weights = Some(class_weights(&cc, *weight_scheme, DEFAULT_BETA)?);
            }
            Params::Mlp(mlp::fit_mlp(c, &loss, x, &yc, kp))
        }
    };
    Ok(FittedModel {
        params,
        config: config.clone(),
        classes: (0..k).collect(),
        missing_classes: missing,
        n_features: x.ncols(),
        schema_hash,
    })
}

pub fn predict_proba(model: &FittedModel, x: &Array2<f64>) -> Result<ProbabilityTable> {
    if x.ncols() != model.n_features {
        return Err(Error::SchemaMismatch(format!(
            "model trained on {} features, input has {}",
            model.n_features,
            x.ncols()
        )));
    }
    let compressed = match &model.params {
        Params::Forest(m) => forest::predict_forest(m, x),
        Params::Boosting(m) => boosting::predict_boost(m, x),
        Params::Mlp(m) => mlp::predict_mlp(m, x),
    };
    let k = model.classes.len();
    let present: Vec<usize> = model
        .classes
        .iter()
        .copied()
        .filter(|c| !model.missing_classes.contains(c))
        .collect();
    let mut probs = Array2::zeros((x.nrows(), k));
    for (j, &c) in present.iter().enumerate() {
        for i in 0..x.nrows() {
            probs[[i, c]] = compressed[[i, j]];
        }
    }
    let table = ProbabilityTable {
        classes: model.classes.clone(),
        probs,
    };
    table.assert_rows_normalized(1e-9)?;
    Ok(table)
}

/// Randomized search: draws `budget` configs uniformly from `space`, scores
/// each by holdout macro-F1, returns the best (ties go to the earlier draw).
#[allow(clippy::too_many_arguments)]
pub fn tune(
    space: &[LearnerConfig],
    budget: usize,
    x_train: &Array2<f64>,
    y_train: &[usize],
    x_val: &Array2<f64>,
    y_val: &[usize],
    k: usize,
    seed: u64,
) -> Result<LearnerConfig> {
    if space.is_empty() {
        return Err(Error::EmptySearchSpace);
    }
    assert!(budget >= 1, "budget must be >= 1");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<(f64, LearnerConfig)> = None;
    for _ in 0..budget {
        let cfg = space[rng.gen_range(0..space.len())].clone();
        let model = fit(&cfg, x_train, y_train, k, 0)?;
        let p = predict_proba(&model, x_val)?;
        let score = mlp::macro_f1(&mlp::top1(&p.probs), y_val, k);
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, cfg));
        }
    }
    Ok(best.unwrap().1)
}
