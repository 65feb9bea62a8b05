//! Command-line driver for the habitat classification toolkit.
//!
//! Thread count obeys the `RAYON_NUM_THREADS` environment variable
//! (default: all cores). Exit codes: 0 success, 1 invalid configuration or
//! input schema, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use habmod::dataset::{load_dataset, write_dataset, MissingPolicy};
use habmod::harness::{
    compare_strategies, run_ablation, run_attribution, run_cv, AttributionConfig,
    ExperimentConfig,
};
use habmod::schemes::{predict_joint, train_strategy, ModelArtifact, StrategyKind};
use habmod::synth::{generate_synthetic, SyntheticSpec};
use habmod::{Error, Result};

#[derive(Parser)]
#[command(
    name = "habmod",
    about = "Habitat classification toolkit: spatial CV, hierarchical strategies, ensembles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV from a spec.
    Synth {
        /// JSON file holding a synthetic data spec.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional path for the taxonomy leaf list (one code per line).
        #[arg(long)]
        taxonomy_out: Option<PathBuf>,
    },
    /// Run spatial-block cross-validation and emit a report.
    Cv {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-fold metrics CSV.
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
    },
    /// Train one strategy on the full dataset and save the model.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Strategy: mhdm, hhdm, or biogeo.
        #[arg(long)]
        scheme: String,
        /// Overrides the config's modality mask (preset or comma list).
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a saved model on a dataset CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV: plot_id, predicted class, probability.
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-modality-out ablation over coverage error.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate all configured schemes and compare them statistically.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shapley-based modality attribution per formation.
    Attribute {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV: formation, modality, share.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        permutations: usize,
        #[arg(long, default_value_t = 100)]
        background: usize,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn prefix_length_of(config: &ExperimentConfig) -> usize {
    use habmod::harness::{DatasetSource, TaxonomySource};
    match &config.dataset {
        DatasetSource::Synthetic(_) => 1,
        DatasetSource::Csv { taxonomy, .. } => match taxonomy {
            TaxonomySource::Derive { prefix_length } => *prefix_length,
            TaxonomySource::File { prefix_length, .. } => *prefix_length,
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            taxonomy_out,
        } => {
            let spec: SyntheticSpec = read_json(&config)?;
            let (table, taxonomy) = generate_synthetic(&spec)?;
            write_dataset(&out, &table, &taxonomy)?;
            if let Some(tpath) = taxonomy_out {
                std::fs::write(tpath, taxonomy.leaves().join("\n") + "\n")?;
            }
            eprintln!(
                "wrote {} rows x {} features to {}",
                table.n_rows(),
                table.n_features(),
                out.display()
            );
        }
        Command::Cv {
            config,
            out,
            metrics_csv,
        } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let report = run_cv(&cfg)?;
            std::fs::write(&out, report.canonical_json()?)?;
            if let Some(csv_path) = metrics_csv {
                let mut w = csv::Writer::from_path(csv_path)?;
                w.write_record([
                    "scheme", "fold", "n_test", "top1", "top3", "top5", "coverage_error",
                    "macro_f1",
                ])?;
                for r in &report.reports {
                    for f in &r.folds {
                        w.write_record([
                            r.scheme.to_string(),
                            f.fold.to_string(),
                            f.n_test.to_string(),
                            f.top1.to_string(),
                            f.topk.get("top3").map_or(String::new(), |v| v.to_string()),
                            f.topk.get("top5").map_or(String::new(), |v| v.to_string()),
                            f.coverage_error.to_string(),
                            f.macro_f1.to_string(),
                        ])?;
                    }
                }
                w.flush()?;
            }
            eprintln!("wrote CV report to {}", out.display());
        }
        Command::Fit {
            config,
            scheme,
            modalities,
            out,
        } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            cfg.validate()?;
            let kind: StrategyKind = scheme.parse()?;
            let mask_str = modalities.unwrap_or_else(|| cfg.mask.clone());
            let mask = habmod::harness::parse_mask(&mask_str)?;
            let (table, taxonomy) = habmod::harness::load_experiment_data(&cfg)?;
            let learner = cfg.members_or_default()[0].space[0].clone();
            let model = train_strategy(kind, &table, &taxonomy, &mask, &learner, cfg.seed)?;
            let artifact = ModelArtifact::new(model, &taxonomy, prefix_length_of(&cfg));
            std::fs::write(&out, artifact.to_json()?)?;
            eprintln!("wrote {kind} model to {}", out.display());
        }
        Command::Predict { model, data, out } => {
            let artifact = ModelArtifact::from_json(&std::fs::read_to_string(&model)?)?;
            let taxonomy = artifact.taxonomy()?;
            let table = load_dataset(&data, &taxonomy, MissingPolicy::default())?;
            let joint = predict_joint(&artifact.model, &table, &taxonomy)?;
            let pred = joint.argmax();
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["plot_id", "pred_class", "pred_prob"])?;
            for (i, &p) in pred.iter().enumerate() {
                w.write_record([
                    table.ids[i].clone(),
                    taxonomy.leaves()[p].clone(),
                    joint.probs[[i, p]].to_string(),
                ])?;
            }
            w.flush()?;
            eprintln!("wrote {} predictions to {}", pred.len(), out.display());
        }
        Command::Ablate { config, out } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let report = run_ablation(&cfg)?;
            write_json(&out, &report)?;
            eprintln!("wrote ablation report to {}", out.display());
        }
        Command::Compare { config, out } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let report = run_cv(&cfg)?;
            let (_, taxonomy) = habmod::harness::load_experiment_data(&cfg)?;
            let comparison = compare_strategies(&report.reports, &taxonomy)?;
            #[derive(Serialize)]
            struct Combined<'a> {
                comparison: &'a habmod::harness::ComparisonReport,
                cv: serde_json::Value,
            }
            let canonical: serde_json::Value = serde_json::from_str(&report.canonical_json()?)?;
            write_json(
                &out,
                &Combined {
                    comparison: &comparison,
                    cv: canonical,
                },
            )?;
            eprintln!("wrote comparison to {}", out.display());
        }
        Command::Attribute {
            config,
            out,
            permutations,
            background,
            instances,
        } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let attr = AttributionConfig {
                permutations,
                background,
                instances_per_formation: instances,
            };
            let summary = run_attribution(&cfg, &attr)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["formation", "modality", "share", "n_samples", "n_degenerate"])?;
            for (formation, contrib) in &summary.per_formation {
                for (m, s) in &contrib.shares {
                    w.write_record([
                        formation.clone(),
                        m.as_str().to_string(),
                        s.to_string(),
                        contrib.n_samples.to_string(),
                        contrib.n_degenerate.to_string(),
                    ])?;
                }
            }
            for (m, s) in &summary.overall.shares {
                w.write_record([
                    "(overall)".to_string(),
                    m.as_str().to_string(),
                    s.to_string(),
                    summary.overall.n_samples.to_string(),
                    summary.overall.n_degenerate.to_string(),
                ])?;
            }
            w.flush()?;
            eprintln!("wrote attribution shares to {}", out.display());
        }
    }
    Ok(())
}

/// 1 for configuration/schema problems the user can fix, 2 for runtime
/// failures.
fn classify(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::SchemaError(_)
        | Error::SchemaMismatch(_)
        | Error::InvalidSpec(_)
        | Error::UnknownLabel(..)
        | Error::NonNumericFeature(..)
        | Error::UnknownFormation(_)
        | Error::EmptyMask
        | Error::EmptyTaxonomy
        | Error::DuplicateCode(_)
        | Error::UnmappableLeaf(_)
        | Error::NonPositiveBlockSize(_)
        | Error::Json(_) => 1,
        Error::FoldContext { source, .. } => classify(source),
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}
