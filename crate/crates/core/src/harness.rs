//! Experiment orchestration: spatial CV driver, ablation runner, and the
//! strategy comparison pipeline behind the CLI.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, MissingPolicy, Modality, ProbabilityTable, SampleTable};
use crate::ensemble::{combine, EnsembleSpec};
use crate::error::{Error, Result};
use crate::learners::{self, BoostConfig, ForestConfig, LearnerConfig, MlpConfig};
use crate::losses::{LossKind, LossSpec, WeightScheme};
use crate::metrics::{class_prf, coverage_error, top_k_accuracy};
use crate::schemes::{predict_joint, train_strategy, StrategyKind, StrategyModel};
use crate::spatial::{assign_blocks, make_folds, tuning_split, BlockGrid, FoldPlan};
use crate::stats::{friedman, nemenyi, ScoreMatrix};
use crate::synth::{generate_synthetic, SyntheticSpec};
use crate::taxonomy::{FormationRule, Taxonomy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomySource {
    /// Derive leaf codes from the dataset's class column.
    Derive { prefix_length: usize },
    /// Leaf codes listed one per line in a text file.
    File { path: String, prefix_length: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: String,
        taxonomy: TaxonomySource,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberSpec {
    pub name: String,
    pub space: Vec<LearnerConfig>,
    pub budget: usize,
}

fn default_schemes() -> Vec<StrategyKind> {
    vec![StrategyKind::Mhdm, StrategyKind::Hhdm, StrategyKind::Biogeo]
}
fn default_mask() -> String {
    "ARMS".into()
}
fn default_n_folds() -> usize {
    4
}
fn default_block_size() -> f64 {
    500.0
}
fn default_tuning_fraction() -> f64 {
    0.1
}
fn default_ks() -> Vec<usize> {
    vec![3, 5]
}

/// Default members: one small search space per learner family.
pub fn default_members(seed: u64) -> Vec<MemberSpec> {
    let _ = seed;
    vec![
        MemberSpec {
            name: "forest".into(),
            space: vec![
                LearnerConfig::Forest(ForestConfig {
                    n_trees: 30,
                    max_depth: 10,
                    min_leaf: 2,
                    mtry_fraction: 0.6,
                    weight_scheme: WeightScheme::Uniform,
                    seed: 0,
                }),
                LearnerConfig::Forest(ForestConfig {
                    n_trees: 30,
                    max_depth: 14,
                    min_leaf: 2,
                    mtry_fraction: 0.4,
                    weight_scheme: WeightScheme::Uniform,
                    seed: 0,
                }),
            ],
            budget: 2,
        },
        MemberSpec {
            name: "boosting".into(),
            space: vec![
                LearnerConfig::Boosting(BoostConfig {
                    n_rounds: 30,
                    learning_rate: 0.2,
                    max_depth: 4,
                    ..BoostConfig::default()
                }),
                LearnerConfig::Boosting(BoostConfig {
                    n_rounds: 50,
                    learning_rate: 0.1,
                    max_depth: 5,
                    ..BoostConfig::default()
                }),
            ],
            budget: 2,
        },
        MemberSpec {
            name: "mlp".into(),
            space: vec![
                LearnerConfig::Mlp {
                    config: MlpConfig {
                        hidden: vec![32],
                        max_epochs: 60,
                        ..MlpConfig::default()
                    },
                    loss: LossSpec::new(LossKind::Ce),
                    weight_scheme: WeightScheme::Uniform,
                },
                LearnerConfig::Mlp {
                    config: MlpConfig {
                        hidden: vec![64, 32],
                        max_epochs: 60,
                        ..MlpConfig::default()
                    },
                    loss: LossSpec::new(LossKind::Ce),
                    weight_scheme: WeightScheme::Uniform,
                },
            ],
            budget: 2,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<StrategyKind>,
    /// Modality preset (A / AR / ARM / ARMS) or a comma list of modality
    /// names; bioregion indicators ride along unless explicitly excluded.
    #[serde(default = "default_mask")]
    pub mask: String,
    #[serde(default)]
    pub members: Vec<MemberSpec>,
    #[serde(default = "default_n_folds")]
    pub n_folds: usize,
    #[serde(default = "default_block_size")]
    pub block_size: f64,
    #[serde(default = "default_tuning_fraction")]
    pub tuning_fraction: f64,
    /// Extra top-k accuracies beyond top-1.
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes listed".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be >= 2".into()));
        }
        if self.block_size <= 0.0 {
            return Err(Error::Config("block_size must be positive".into()));
        }
        if !(self.tuning_fraction > 0.0 && self.tuning_fraction < 1.0) {
            return Err(Error::Config("tuning_fraction must be in (0, 1)".into()));
        }
        parse_mask(&self.mask)?;
        for m in &self.members {
            for c in &m.space {
                c.validate()?;
            }
            if m.budget == 0 {
                return Err(Error::Config(format!("member {} has budget 0", m.name)));
            }
        }
        Ok(())
    }

    pub fn members_or_default(&self) -> Vec<MemberSpec> {
        if self.members.is_empty() {
            default_members(self.seed)
        } else {
            self.members.clone()
        }
    }
}

/// Parses the nested A / AR / ARM / ARMS presets or an explicit comma list.
/// Presets include the bioregion indicators.
pub fn parse_mask(s: &str) -> Result<Vec<Modality>> {
    let preset = |mods: &[Modality]| {
        let mut v = vec![Modality::Bioreg];
        v.extend_from_slice(mods);
        v
    };
    match s.trim() {
        "A" => Ok(preset(&[Modality::Abio])),
        "AR" => Ok(preset(&[Modality::Abio, Modality::Rsbio])),
        "ARM" => Ok(preset(&[Modality::Abio, Modality::Rsbio, Modality::Msi])),
        "ARMS" => Ok(preset(&[
            Modality::Abio,
            Modality::Rsbio,
            Modality::Msi,
            Modality::Sar,
        ])),
        list => {
            let mut out = Vec::new();
            for part in list.split(',') {
                let m: Modality = part.trim().parse()?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            if out.is_empty() {
                return Err(Error::EmptyMask);
            }
            Ok(out)
        }
    }
}

/// Loads or generates the dataset named by the config.
pub fn load_experiment_data(config: &ExperimentConfig) -> Result<(SampleTable, Taxonomy)> {
    match &config.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec),
        DatasetSource::Csv { path, taxonomy } => {
            let taxo = match taxonomy {
                TaxonomySource::File {
                    path: tpath,
                    prefix_length,
                } => {
                    let text = std::fs::read_to_string(tpath)?;
                    let codes: Vec<String> = text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect();
                    Taxonomy::build(&codes, &FormationRule::PrefixLength(*prefix_length))?
                }
                TaxonomySource::Derive { prefix_length } => {
                    let mut rdr = csv::Reader::from_path(path)?;
                    let headers = rdr.headers()?.clone();
                    let ci = headers
                        .iter()
                        .position(|h| h == "class")
                        .ok_or_else(|| Error::SchemaError("missing class column".into()))?;
                    let mut codes: Vec<String> = Vec::new();
                    for rec in rdr.records() {
                        let rec = rec?;
                        let c = rec.get(ci).unwrap_or("").trim().to_string();
                        if !c.is_empty() && !codes.contains(&c) {
                            codes.push(c);
                        }
                    }
                    Taxonomy::build(&codes, &FormationRule::PrefixLength(*prefix_length))?
                }
            };
            let table = load_dataset(path, &taxo, config.missing_policy)?;
            Ok((table, taxo))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Aggregate {
        mean,
        sd: var.sqrt(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberScore {
    pub name: String,
    pub config: LearnerConfig,
    /// Macro-F1 on the block-respecting tuning holdout.
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    pub top1: f64,
    /// "top3", "top5", ... per config.
    pub topk: BTreeMap<String, f64>,
    pub coverage_error: f64,
    pub macro_f1: f64,
    pub members: Vec<MemberScore>,
    pub wall_clock_s: f64,
    pub peak_mem_kb: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyReport {
    pub scheme: StrategyKind,
    pub mask: Vec<Modality>,
    pub folds: Vec<FoldMetrics>,
    /// mean +- sd over folds for top1 / topk / coverage_error / macro_f1.
    pub aggregate: BTreeMap<String, Aggregate>,
    /// Out-of-fold pooled per-class F1 (None where undefined) and support.
    pub class_f1: Vec<Option<f64>>,
    pub class_support: Vec<usize>,
    pub formation_macro_f1: BTreeMap<String, Option<f64>>,
    pub pooled_coverage_error: f64,
    /// Identifies the fold plan so comparisons can verify alignment.
    pub fold_plan_hash: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub reports: Vec<StrategyReport>,
    pub fold_manifest: serde_json::Value,
    pub config_echo: ExperimentConfig,
}

impl CvReport {
    /// Report JSON with the timing fields zeroed; rerunning an identical
    /// config yields byte-identical output.
    pub fn canonical_json(&self) -> Result<String> {
        let mut clone = self.clone();
        for r in &mut clone.reports {
            for f in &mut r.folds {
                f.wall_clock_s = 0.0;
                f.peak_mem_kb = 0;
            }
        }
        Ok(serde_json::to_string_pretty(&clone)?)
    }
}

fn fold_plan_hash(plan: &FoldPlan) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    plan.n_folds.hash(&mut h);
    plan.fold_of_row.hash(&mut h);
    h.finish()
}

fn peak_mem_kb() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

/// Asserts the spatial contract: no test block appears in the training rows.
fn leakage_audit(grid: &BlockGrid, train_rows: &[usize], test_rows: &[usize]) {
    let test_blocks: std::collections::BTreeSet<usize> =
        test_rows.iter().map(|&r| grid.block_of_row[r]).collect();
    for &r in train_rows {
        assert!(
            !test_blocks.contains(&grid.block_of_row[r]),
            "leakage: training row {r} lies in a held-out block"
        );
    }
}

/// Per-fold tuned member configs, reusable by the ablation runner.
pub type TunedConfigs = Vec<Vec<LearnerConfig>>;

struct FoldOutcome {
    metrics: FoldMetrics,
    test_rows: Vec<usize>,
    test_pred: Vec<usize>,
    rank_sum: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    table: &SampleTable,
    taxonomy: &Taxonomy,
    grid: &BlockGrid,
    plan: &FoldPlan,
    fold: usize,
    scheme: StrategyKind,
    mask: &[Modality],
    members: &[MemberSpec],
    ks: &[usize],
    tuning_fraction: f64,
    seed: u64,
    tuned: Option<&Vec<LearnerConfig>>,
) -> Result<(FoldOutcome, Vec<LearnerConfig>)> {
    let started = Instant::now();
    let ctx = |e: Error| e.with_context(format!("fold {fold}"));
    let train_rows = plan.train_rows(fold);
    let test_rows = plan.test_rows(fold);
    leakage_audit(grid, &train_rows, &test_rows);
    let fold_seed = crate::learners::mix_seed(seed, fold as u64);

    let (inner_rows, holdout_rows) =
        tuning_split(table, taxonomy, grid, &train_rows, tuning_fraction, fold_seed)
            .map_err(ctx)?;
    let inner = table.subset(&inner_rows);
    let holdout = table.subset(&holdout_rows);
    let train = table.subset(&train_rows);
    let test = table.subset(&test_rows);
    let truth: Vec<usize> = test_rows.iter().map(|&r| table.leaf[r].unwrap()).collect();
    let hold_truth: Vec<usize> = holdout_rows
        .iter()
        .map(|&r| table.leaf[r].unwrap())
        .collect();

    // BIOGEO has no learner hyperparameters; it runs as a single member.
    let member_plan: Vec<MemberSpec> = if scheme == StrategyKind::Biogeo {
        vec![MemberSpec {
            name: "biogeo".into(),
            space: vec![LearnerConfig::Forest(ForestConfig::default())],
            budget: 1,
        }]
    } else {
        members.to_vec()
    };

    let cols = table.columns_for(mask);
    if cols.is_empty() {
        return Err(ctx(Error::EmptyMask));
    }

    let mut member_tables: Vec<ProbabilityTable> = Vec::new();
    let mut member_scores: Vec<MemberScore> = Vec::new();
    let mut chosen: Vec<LearnerConfig> = Vec::new();
    for (mi, spec) in member_plan.iter().enumerate() {
        let member_seed = crate::learners::mix_seed(fold_seed, 1 + mi as u64);
        let cfg = match tuned {
            Some(cfgs) => cfgs[mi].clone(),
            None if scheme == StrategyKind::Biogeo => spec.space[0].clone(),
            None => {
                // Tuning works at the learner level on masked, scaled
                // features; the winning config is then shared by the scheme.
                let scaler = crate::dataset::Scaler::fit(
                    &table.submatrix(&inner_rows, &cols),
                    &cols.iter().map(|&c| table.modalities[c]).collect::<Vec<_>>(),
                );
                let xi = scaler.transform(&table.submatrix(&inner_rows, &cols));
                let yi = table.labels(&inner_rows)?;
                let xh = scaler.transform(&table.submatrix(&holdout_rows, &cols));
                let yh = table.labels(&holdout_rows)?;
                let space: Vec<LearnerConfig> = spec
                    .space
                    .iter()
                    .map(|c| c.clone().with_seed(member_seed))
                    .collect();
                learners::tune(
                    &space,
                    spec.budget,
                    &xi,
                    &yi,
                    &xh,
                    &yh,
                    taxonomy.n_leaves(),
                    crate::learners::mix_seed(member_seed, 0x7),
                )
                .map_err(ctx)?
            }
        };
        // Score on the holdout with an inner-trained model, then refit on the
        // full fold-train rows for test predictions.
        let scoring_model =
            train_strategy(scheme, &inner, taxonomy, mask, &cfg, member_seed).map_err(ctx)?;
        let hold_joint = predict_joint(&scoring_model, &holdout, taxonomy).map_err(ctx)?;
        let score = macro_f1_of(&hold_joint, &hold_truth, taxonomy);

        let model: StrategyModel =
            train_strategy(scheme, &train, taxonomy, mask, &cfg, member_seed).map_err(ctx)?;
        let joint = predict_joint(&model, &test, taxonomy).map_err(ctx)?;
        member_tables.push(joint);
        member_scores.push(MemberScore {
            name: spec.name.clone(),
            config: cfg.clone(),
            score,
            weight: 0.0,
        });
        chosen.push(cfg);
    }

    let ens = EnsembleSpec::new(
        member_scores.iter().map(|m| m.name.clone()).collect(),
        member_scores.iter().map(|m| m.score).collect(),
    )?;
    let weights = ens.weights();
    for (m, &w) in member_scores.iter_mut().zip(&weights) {
        m.weight = w;
    }
    let combined = combine(&member_tables, &weights).map_err(ctx)?;

    let mut topk = BTreeMap::new();
    for &k in ks {
        let acc = top_k_accuracy(&combined, &truth, k).map_err(ctx)?;
        topk.insert(format!("top{k}"), acc);
    }
    let top1 = top_k_accuracy(&combined, &truth, 1).map_err(ctx)?;
    let cov = coverage_error(&combined, &truth).map_err(ctx)?;
    let pred = combined.argmax();
    let cm = class_prf(&pred, &truth, taxonomy);

    let metrics = FoldMetrics {
        fold,
        n_test: test_rows.len(),
        top1,
        topk,
        coverage_error: cov,
        macro_f1: cm.macro_f1,
        members: member_scores,
        wall_clock_s: started.elapsed().as_secs_f64(),
        peak_mem_kb: peak_mem_kb(),
    };
    Ok((
        FoldOutcome {
            metrics,
            test_rows,
            test_pred: pred,
            rank_sum: cov * truth.len() as f64,
        },
        chosen,
    ))
}

fn macro_f1_of(joint: &ProbabilityTable, truth: &[usize], taxonomy: &Taxonomy) -> f64 {
    class_prf(&joint.argmax(), truth, taxonomy).macro_f1
}

/// Runs spatial-block CV for one scheme; returns the report and the per-fold
/// tuned configs so ablation can rerun with identical hyperparameters.
#[allow(clippy::too_many_arguments)]
pub fn run_scheme_cv(
    table: &SampleTable,
    taxonomy: &Taxonomy,
    grid: &BlockGrid,
    plan: &FoldPlan,
    scheme: StrategyKind,
    mask: &[Modality],
    config: &ExperimentConfig,
    tuned: Option<&TunedConfigs>,
) -> Result<(StrategyReport, TunedConfigs)> {
    let members = config.members_or_default();
    let mut folds = Vec::new();
    let mut all_tuned: TunedConfigs = Vec::new();
    let mut pooled_pred: Vec<Option<usize>> = vec![None; table.n_rows()];
    let mut rank_total = 0.0;
    let mut n_total = 0usize;
    for fold in 0..plan.n_folds {
        let (outcome, chosen) = run_fold(
            table,
            taxonomy,
            grid,
            plan,
            fold,
            scheme,
            mask,
            &members,
            &config.ks,
            config.tuning_fraction,
            config.seed,
            tuned.map(|t| &t[fold]),
        )?;
        for (&r, &p) in outcome.test_rows.iter().zip(&outcome.test_pred) {
            pooled_pred[r] = Some(p);
        }
        rank_total += outcome.rank_sum;
        n_total += outcome.metrics.n_test;
        folds.push(outcome.metrics);
        all_tuned.push(chosen);
    }

    let mut agg = BTreeMap::new();
    agg.insert(
        "top1".into(),
        aggregate(&folds.iter().map(|f| f.top1).collect::<Vec<_>>()),
    );
    for &k in &config.ks {
        let key = format!("top{k}");
        agg.insert(
            key.clone(),
            aggregate(&folds.iter().map(|f| f.topk[&key]).collect::<Vec<_>>()),
        );
    }
    agg.insert(
        "coverage_error".into(),
        aggregate(&folds.iter().map(|f| f.coverage_error).collect::<Vec<_>>()),
    );
    agg.insert(
        "macro_f1".into(),
        aggregate(&folds.iter().map(|f| f.macro_f1).collect::<Vec<_>>()),
    );

    // Pooled out-of-fold class metrics: every labeled row is predicted in
    // exactly one fold.
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&r| pooled_pred[r].is_some() && table.leaf[r].is_some())
        .collect();
    let pred: Vec<usize> = rows.iter().map(|&r| pooled_pred[r].unwrap()).collect();
    let truth: Vec<usize> = rows.iter().map(|&r| table.leaf[r].unwrap()).collect();
    let cm = class_prf(&pred, &truth, taxonomy);
    let formation_macro_f1 = taxonomy
        .formations()
        .iter()
        .enumerate()
        .map(|(f, name)| (name.clone(), cm.formation_macro_f1(taxonomy, f)))
        .collect();

    Ok((
        StrategyReport {
            scheme,
            mask: mask.to_vec(),
            folds,
            aggregate: agg,
            class_f1: cm.per_class.iter().map(|c| c.f1).collect(),
            class_support: cm.per_class.iter().map(|c| c.support).collect(),
            formation_macro_f1,
            pooled_coverage_error: rank_total / n_total as f64,
            fold_plan_hash: fold_plan_hash(plan),
        },
        all_tuned,
    ))
}

/// Full CV pipeline over every configured scheme on one shared fold plan.
pub fn run_cv(config: &ExperimentConfig) -> Result<CvReport> {
    config.validate()?;
    let (table, taxonomy) = load_experiment_data(config)?;
    let mask = parse_mask(&config.mask)?;
    let grid = assign_blocks(&table, config.block_size)?;
    let plan = make_folds(&grid, &table, &taxonomy, config.n_folds, config.seed)?;
    let mut reports = Vec::new();
    for &scheme in &config.schemes {
        let (report, _) = run_scheme_cv(&table, &taxonomy, &grid, &plan, scheme, &mask, config, None)?;
        reports.push(report);
    }
    Ok(CvReport {
        reports,
        fold_manifest: plan.to_manifest(),
        config_echo: config.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub removed: Modality,
    pub coverage_error: f64,
    pub delta_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub scheme: StrategyKind,
    pub full_mask: Vec<Modality>,
    pub full_coverage_error: f64,
    pub rows: Vec<AblationRow>,
}

/// `(CE_ablated - CE_full) / CE_full * 100`.
pub fn delta_percent(ce_ablated: f64, ce_full: f64) -> f64 {
    (ce_ablated - ce_full) / ce_full * 100.0
}

/// Removes one modality at a time, rerunning CV with the hyperparameters and
/// seeds tuned on the full model. Bioregion indicators are kept throughout
/// (they are context, not an ablatable sensor modality).
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport> {
    config.validate()?;
    let (table, taxonomy) = load_experiment_data(config)?;
    let mask = parse_mask(&config.mask)?;
    let ablatable: Vec<Modality> = mask
        .iter()
        .copied()
        .filter(|m| *m != Modality::Bioreg)
        .collect();
    if ablatable.len() < 2 {
        return Err(Error::SingleModality);
    }
    let scheme = config.schemes[0];
    let grid = assign_blocks(&table, config.block_size)?;
    let plan = make_folds(&grid, &table, &taxonomy, config.n_folds, config.seed)?;
    let (full, tuned) =
        run_scheme_cv(&table, &taxonomy, &grid, &plan, scheme, &mask, config, None)?;
    let mut rows = Vec::new();
    for &removed in &ablatable {
        let sub: Vec<Modality> = mask.iter().copied().filter(|m| *m != removed).collect();
        let (report, _) = run_scheme_cv(
            &table,
            &taxonomy,
            &grid,
            &plan,
            scheme,
            &sub,
            config,
            Some(&tuned),
        )?;
        rows.push(AblationRow {
            removed,
            coverage_error: report.pooled_coverage_error,
            delta_pct: delta_percent(report.pooled_coverage_error, full.pooled_coverage_error),
        });
    }
    Ok(AblationReport {
        scheme,
        full_mask: mask,
        full_coverage_error: full.pooled_coverage_error,
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub permutations: usize,
    pub background: usize,
    pub instances_per_formation: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            permutations: crate::attribution::DEFAULT_PERMUTATIONS,
            background: crate::attribution::DEFAULT_BACKGROUND,
            instances_per_formation: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionSummary {
    /// Modality contribution per formation (HHDM conditional models).
    pub per_formation: BTreeMap<String, crate::attribution::ModalityContribution>,
    /// Instance-weighted aggregate over all formations.
    pub overall: crate::attribution::ModalityContribution,
    pub permutations: usize,
    pub background: usize,
}

/// Shapley-based modality attribution: trains an HHDM and explains sampled
/// instances against each formation's conditional model.
pub fn run_attribution(
    config: &ExperimentConfig,
    attr: &AttributionConfig,
) -> Result<AttributionSummary> {
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    config.validate()?;
    let (table, taxonomy) = load_experiment_data(config)?;
    let mask = parse_mask(&config.mask)?;
    let cols = table.columns_for(&mask);
    if cols.is_empty() {
        return Err(Error::EmptyMask);
    }
    let col_modalities: Vec<Modality> = cols.iter().map(|&c| table.modalities[c]).collect();
    let members = config.members_or_default();
    let learner = members[0].space[0].clone();
    let model = train_strategy(
        StrategyKind::Hhdm,
        &table,
        &taxonomy,
        &mask,
        &learner,
        config.seed,
    )?;
    let (_, conditionals) = model.hhdm_parts().expect("hhdm strategy");

    let mut per_formation = BTreeMap::new();
    let mut all_results = Vec::new();
    for (f, cond) in conditionals.iter().enumerate() {
        let Some(cond) = cond else { continue };
        let rows: Vec<usize> = (0..table.n_rows())
            .filter(|&r| table.leaf[r].map(|l| taxonomy.parent_of(l)) == Some(f))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let x_raw = table.submatrix(&rows, &cols);
        let x = model.scaler.transform(&x_raw);
        let mut rng =
            ChaCha20Rng::seed_from_u64(crate::learners::mix_seed(config.seed, 0xA77 + f as u64));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let bg_rows: Vec<usize> = order.iter().take(attr.background).copied().collect();
        let background = x.select(ndarray::Axis(0), &bg_rows);
        let explain: Vec<usize> = order
            .iter()
            .take(attr.instances_per_formation)
            .copied()
            .collect();
        let mut results = Vec::new();
        for &i in &explain {
            let xi: Vec<f64> = x.row(i).to_vec();
            // Target output: probability of the class predicted at the
            // instance itself.
            let base = learners::predict_proba(cond, &x.select(ndarray::Axis(0), &[i]))?;
            let target = base.argmax()[0];
            let predict = |v: &[f64]| -> f64 {
                let m = ndarray::Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
                learners::predict_proba(cond, &m).map(|p| p.probs[[0, target]]).unwrap_or(0.0)
            };
            let seed = crate::learners::mix_seed(config.seed, (f as u64) << 32 | rows[i] as u64);
            results.push(crate::attribution::sampled_shapley(
                &predict,
                &xi,
                &background,
                attr.permutations,
                seed,
            )?);
        }
        per_formation.insert(
            taxonomy.formations()[f].clone(),
            crate::attribution::modality_contribution(&results, &col_modalities),
        );
        all_results.extend(results);
    }
    let overall = crate::attribution::modality_contribution(&all_results, &col_modalities);
    Ok(AttributionSummary {
        per_formation,
        overall,
        permutations: attr.permutations,
        background: attr.background,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormationComparison {
    pub formation: String,
    /// Classes with defined F1 in every strategy.
    pub n_classes_used: usize,
    pub chi2: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    /// Best (lowest mean rank) strategy when significant.
    pub best: Option<String>,
    /// Strategies statistically indistinguishable from the best.
    pub equivalent: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub strategies: Vec<String>,
    pub formations: Vec<FormationComparison>,
}

/// Per-formation Friedman test on class-wise F1 across strategies, with a
/// Nemenyi post-hoc marking the best strategy and its equivalence set.
pub fn compare_strategies(
    reports: &[StrategyReport],
    taxonomy: &Taxonomy,
) -> Result<ComparisonReport> {
    if reports.len() < 2 {
        return Err(Error::MismatchedFolds("need at least 2 reports".into()));
    }
    let hash = reports[0].fold_plan_hash;
    if reports.iter().any(|r| r.fold_plan_hash != hash) {
        return Err(Error::MismatchedFolds(
            "reports computed on different fold plans".into(),
        ));
    }
    let names: Vec<String> = reports
        .iter()
        .map(|r| format!("{}:{}", r.scheme, mask_code(&r.mask)))
        .collect();
    let mut formations = Vec::new();
    for (f, fname) in taxonomy.formations().iter().enumerate() {
        let rows: Vec<(String, Vec<Option<f64>>)> = taxonomy
            .leaves_of(f)
            .into_iter()
            .map(|leaf| {
                (
                    taxonomy.leaves()[leaf].clone(),
                    reports.iter().map(|r| r.class_f1[leaf]).collect(),
                )
            })
            .collect();
        let matrix = match ScoreMatrix::from_rows(rows, names.clone()) {
            Ok(m) => m,
            Err(_) => {
                formations.push(FormationComparison {
                    formation: fname.clone(),
                    n_classes_used: 0,
                    chi2: None,
                    p: None,
                    significant: false,
                    best: None,
                    equivalent: Vec::new(),
                });
                continue;
            }
        };
        let fr = friedman(&matrix)?;
        let significant = fr.p <= 0.05;
        let (best, equivalent) = if significant {
            let nem = nemenyi(&matrix, 0.05)?;
            // Rank 1 = highest F1, so the best strategy minimizes mean rank.
            let best_idx = (0..names.len())
                .min_by(|&a, &b| nem.mean_ranks[a].partial_cmp(&nem.mean_ranks[b]).unwrap())
                .unwrap();
            let beaten: std::collections::BTreeSet<usize> = nem
                .significant_pairs
                .iter()
                .filter(|&&(a, b)| a == best_idx || b == best_idx)
                .map(|&(a, b)| if a == best_idx { b } else { a })
                .collect();
            let equiv = (0..names.len())
                .filter(|i| !beaten.contains(i))
                .map(|i| names[i].clone())
                .collect();
            (Some(names[best_idx].clone()), equiv)
        } else {
            (None, Vec::new())
        };
        formations.push(FormationComparison {
            formation: fname.clone(),
            n_classes_used: matrix.n_blocks(),
            chi2: Some(fr.chi2),
            p: Some(fr.p),
            significant,
            best,
            equivalent,
        });
    }
    Ok(ComparisonReport {
        strategies: names,
        formations,
    })
}

fn mask_code(mask: &[Modality]) -> String {
    mask.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
}
