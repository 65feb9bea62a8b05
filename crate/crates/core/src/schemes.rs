//! Classification strategies over the two-level taxonomy.
//!
//! MHDM trains one model over all leaves. HHDM trains a formation router
//! plus one conditional model per formation; the joint distribution is the
//! product router x conditional. BIOGEO is a majority-vote baseline per
//! (formation, bioregion) cell.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{Modality, ProbabilityTable, SampleTable, Scaler};
use crate::error::{Error, Result};
use crate::learners::{self, FittedModel, LearnerConfig};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Mhdm,
    Hhdm,
    Biogeo,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Mhdm => "mhdm",
            StrategyKind::Hhdm => "hhdm",
            StrategyKind::Biogeo => "biogeo",
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<StrategyKind> {
        match s.to_ascii_lowercase().as_str() {
            "mhdm" => Ok(StrategyKind::Mhdm),
            "hhdm" => Ok(StrategyKind::Hhdm),
            "biogeo" => Ok(StrategyKind::Biogeo),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiogeoEntry {
    pub formation: usize,
    pub bioregion: String,
    pub leaf: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum StrategyParams {
    Mhdm {
        model: FittedModel,
    },
    Hhdm {
        router: FittedModel,
        /// One entry per formation; `None` when absent from training.
        conditionals: Vec<Option<FittedModel>>,
    },
    Biogeo {
        cells: Vec<BiogeoEntry>,
        /// Majority leaf per formation; `None` when absent from training.
        formation_majority: Vec<Option<usize>>,
        global_majority: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyModel {
    pub kind: StrategyKind,
    pub taxonomy_hash: u64,
    pub mask: Vec<Modality>,
    /// Names of the feature columns used, in training order.
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    params: StrategyParams,
}

impl StrategyModel {
    /// Router and per-formation conditionals (HHDM only).
    pub fn hhdm_parts(&self) -> Option<(&FittedModel, &[Option<FittedModel>])> {
        match &self.params {
            StrategyParams::Hhdm {
                router,
                conditionals,
            } => Some((router, conditionals.as_slice())),
            _ => None,
        }
    }
}

/// Majority leaf of a count vector; ties go to the lowest leaf index, which
/// is the lexicographically smallest code (leaves are sorted at build time).
fn majority(counts: &BTreeMap<usize, usize>) -> Option<usize> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&leaf, _)| leaf)
}

pub fn train_strategy(
    kind: StrategyKind,
    table: &SampleTable,
    taxonomy: &Taxonomy,
    mask: &[Modality],
    config: &LearnerConfig,
    seed: u64,
) -> Result<StrategyModel> {
    let cols = table.columns_for(mask);
    if cols.is_empty() {
        return Err(Error::EmptyMask);
    }
    let rows: Vec<usize> = (0..table.n_rows()).filter(|&r| table.leaf[r].is_some()).collect();
    if rows.is_empty() {
        return Err(Error::NoTrainingRows);
    }
    let y = table.labels(&rows)?;
    let x_raw = table.submatrix(&rows, &cols);
    let col_modalities: Vec<Modality> = cols.iter().map(|&c| table.modalities[c]).collect();
    let scaler = Scaler::fit(&x_raw, &col_modalities);
    let x = scaler.transform(&x_raw);
    let schema = table.schema_hash();

    let params = match kind {
        StrategyKind::Mhdm => {
            let cfg = config.clone().with_seed(learners::mix_seed(seed, 0));
            let model = learners::fit(&cfg, &x, &y, taxonomy.n_leaves(), schema)?;
            StrategyParams::Mhdm { model }
        }
        StrategyKind::Hhdm => {
            let nf = taxonomy.n_formations();
            let yf: Vec<usize> = y.iter().map(|&l| taxonomy.parent_of(l)).collect();
            let cfg = config.clone().with_seed(learners::mix_seed(seed, u64::MAX));
            let router = learners::fit(&cfg, &x, &yf, nf, schema)?;
            let mut conditionals = Vec::with_capacity(nf);
            for f in 0..nf {
                let local: Vec<usize> = (0..rows.len()).filter(|&i| yf[i] == f).collect();
                if local.is_empty() {
                    conditionals.push(None);
                    continue;
                }
                let leaves = taxonomy.leaves_of(f);
                let to_local: BTreeMap<usize, usize> =
                    leaves.iter().enumerate().map(|(j, &l)| (l, j)).collect();
                let yl: Vec<usize> = local.iter().map(|&i| to_local[&y[i]]).collect();
                let xf = x.select(ndarray::Axis(0), &local);
                let cfg = config.clone().with_seed(learners::mix_seed(seed, 1 + f as u64));
                let model = learners::fit(&cfg, &xf, &yl, leaves.len(), schema)
                    .map_err(|e| e.with_context(format!("formation {}", taxonomy.formations()[f])))?;
                conditionals.push(Some(model));
            }
            StrategyParams::Hhdm {
                router,
                conditionals,
            }
        }
        StrategyKind::Biogeo => {
            let mut per_cell: BTreeMap<(usize, String), BTreeMap<usize, usize>> = BTreeMap::new();
            let mut per_formation: Vec<BTreeMap<usize, usize>> =
                vec![BTreeMap::new(); taxonomy.n_formations()];
            let mut global: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, &r) in rows.iter().enumerate() {
                let leaf = y[i];
                let f = taxonomy.parent_of(leaf);
                *per_cell
                    .entry((f, table.bioregion[r].clone()))
                    .or_default()
                    .entry(leaf)
                    .or_insert(0) += 1;
                *per_formation[f].entry(leaf).or_insert(0) += 1;
                *global.entry(leaf).or_insert(0) += 1;
            }
            let cells = per_cell
                .into_iter()
                .map(|((formation, bioregion), counts)| BiogeoEntry {
                    formation,
                    bioregion,
                    leaf: majority(&counts).unwrap(),
                })
                .collect();
            StrategyParams::Biogeo {
                cells,
                formation_majority: per_formation.iter().map(majority).collect(),
                global_majority: majority(&global).unwrap(),
            }
        }
    };
    Ok(StrategyModel {
        kind,
        taxonomy_hash: taxonomy.content_hash(),
        mask: mask.to_vec(),
        feature_names: cols.iter().map(|&c| table.feature_names[c].clone()).collect(),
        scaler,
        params,
    })
}

/// Scaled feature matrix for prediction, columns matched by name.
fn prediction_matrix(model: &StrategyModel, table: &SampleTable) -> Result<Array2<f64>> {
    let cols: Vec<usize> = model
        .feature_names
        .iter()
        .map(|name| {
            table
                .feature_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing feature column {name:?}")))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    Ok(model.scaler.transform(&table.submatrix(&rows, &cols)))
}

/// Per-formation conditional probability tables (HHDM only). Keys are
/// formation indices with a trained model; table classes are leaf indices.
pub fn predict_conditional(
    model: &StrategyModel,
    table: &SampleTable,
    taxonomy: &Taxonomy,
) -> Result<BTreeMap<usize, ProbabilityTable>> {
    let StrategyParams::Hhdm { conditionals, .. } = &model.params else {
        return Err(Error::KindMismatch {
            expected: "hhdm".into(),
            got: model.kind.to_string(),
        });
    };
    let x = prediction_matrix(model, table)?;
    let mut out = BTreeMap::new();
    for (f, cond) in conditionals.iter().enumerate() {
        let Some(cond) = cond else { continue };
        let p = learners::predict_proba(cond, &x)?;
        out.insert(
            f,
            ProbabilityTable {
                classes: taxonomy.leaves_of(f),
                probs: p.probs,
            },
        );
    }
    Ok(out)
}

/// Joint distribution over all leaves, rows summing to 1.
pub fn predict_joint(
    model: &StrategyModel,
    table: &SampleTable,
    taxonomy: &Taxonomy,
) -> Result<ProbabilityTable> {
    let k = taxonomy.n_leaves();
    let n = table.n_rows();
    let probs = match &model.params {
        StrategyParams::Mhdm { model: m } => {
            let x = prediction_matrix(model, table)?;
            learners::predict_proba(m, &x)?.probs
        }
        StrategyParams::Hhdm {
            router,
            conditionals,
        } => {
            let x = prediction_matrix(model, table)?;
            let r = learners::predict_proba(router, &x)?;
            let mut joint = Array2::zeros((n, k));
            for (f, cond) in conditionals.iter().enumerate() {
                let Some(cond) = cond else { continue };
                let leaves = taxonomy.leaves_of(f);
                let p = learners::predict_proba(cond, &x)?;
                for i in 0..n {
                    let rf = r.probs[[i, f]];
                    for (j, &leaf) in leaves.iter().enumerate() {
                        joint[[i, leaf]] = rf * p.probs[[i, j]];
                    }
                }
            }
            joint
        }
        StrategyParams::Biogeo {
            cells,
            formation_majority,
            global_majority,
        } => {
            let mut probs = Array2::zeros((n, k));
            for i in 0..n {
                // The baseline keys on the plot's observed formation; rows
                // without a label fall back to the global majority.
                let leaf = match table.leaf[i] {
                    Some(l) => {
                        let f = taxonomy.parent_of(l);
                        cells
                            .iter()
                            .find(|c| c.formation == f && c.bioregion == table.bioregion[i])
                            .map(|c| c.leaf)
                            .or(formation_majority[f])
                            .unwrap_or(*global_majority)
                    }
                    None => *global_majority,
                };
                probs[[i, leaf]] = 1.0;
            }
            probs
        }
    };
    let out = ProbabilityTable {
        classes: (0..k).collect(),
        probs,
    };
    out.assert_rows_normalized(1e-9)?;
    Ok(out)
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Versioned serialization container bundling a strategy model with the
/// taxonomy it was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub leaf_codes: Vec<String>,
    pub prefix_length: usize,
    pub model: StrategyModel,
}

impl ModelArtifact {
    pub fn new(model: StrategyModel, taxonomy: &Taxonomy, prefix_length: usize) -> ModelArtifact {
        ModelArtifact {
            version: ARTIFACT_VERSION,
            leaf_codes: taxonomy.leaves().to_vec(),
            prefix_length,
            model,
        }
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        Taxonomy::build(
            &self.leaf_codes,
            &crate::taxonomy::FormationRule::PrefixLength(self.prefix_length),
        )
    }

    pub fn from_json(text: &str) -> Result<ModelArtifact> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model version {}",
                artifact.version
            )));
        }
        Ok(artifact)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct NestedView {
    pub table: ProbabilityTable,
    /// Rows whose in-formation mass was zero (made uniform).
    pub zero_mass: Vec<bool>,
}

/// Restricts a joint table to one formation's leaves and renormalizes.
pub fn nested_view(
    joint: &ProbabilityTable,
    taxonomy: &Taxonomy,
    formation: &str,
) -> Result<NestedView> {
    let f = taxonomy
        .formation_index(formation)
        .ok_or_else(|| Error::UnknownFormation(formation.to_string()))?;
    let leaves = taxonomy.leaves_of(f);
    let cols: Vec<usize> = leaves
        .iter()
        .map(|l| {
            joint
                .classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::ShapeMismatch("joint table missing formation leaf".into()))
        })
        .collect::<Result<_>>()?;
    let n = joint.n_rows();
    let mut probs = Array2::zeros((n, cols.len()));
    let mut zero_mass = vec![false; n];
    for i in 0..n {
        let mass: f64 = cols.iter().map(|&c| joint.probs[[i, c]]).sum();
        if mass > 0.0 {
            for (j, &c) in cols.iter().enumerate() {
                probs[[i, j]] = joint.probs[[i, c]] / mass;
            }
        } else {
            zero_mass[i] = true;
            probs.row_mut(i).fill(1.0 / cols.len() as f64);
        }
    }
    Ok(NestedView {
        table: ProbabilityTable {
            classes: leaves,
            probs,
        },
        zero_mass,
    })
}
