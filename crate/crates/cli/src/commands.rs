use std::fmt::Write as _;
use std::path::Path;

use kgfuse::graph::build_graph;
use kgfuse::ingest::{
    filter_and_dedup, generate_synthetic, load_dataset, random_record, split_dataset, Dataset,
};
use kgfuse::model::{
    check_model_gradients, load_checkpoint, save_checkpoint, FusionVariant, Model, ModelConfig,
};
use kgfuse::train::{evaluate, train, MetricsReport, TrainTrace};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io, CliError, Result};
use crate::report::{record_id_hash, ComparisonReport, ComparisonRow};

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io(path))
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Generates the synthetic dataset and writes `train/val/test.jsonl` into `out`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<SplitCounts> {
    let data = &cfg.data;
    let dataset = generate_synthetic(&data.synthetic)?;
    let (train_set, val, test) = split_dataset(
        &dataset,
        data.train_fraction,
        data.val_fraction,
        data.split_seed,
    )?;
    create_dir(out)?;
    for (name, split) in [("train", &train_set), ("val", &val), ("test", &test)] {
        write(&out.join(format!("{name}.jsonl")), &split.to_jsonl()?)?;
    }
    Ok(SplitCounts {
        train: train_set.len(),
        val: val.len(),
        test: test.len(),
    })
}

/// Loads one split from the data directory and applies the knowledge filter.
pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Dataset> {
    cfg.filter.validate()?;
    let mut ds = load_dataset(cfg.data.split_path(split))?;
    for r in &mut ds.records {
        *r = filter_and_dedup(r, &cfg.filter);
    }
    Ok(ds)
}

fn check_compatible(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let h = &data.header;
    if (h.num_classes, h.d_t, h.d_v) != (model.num_classes, model.d_t, model.d_v) {
        return Err(kgfuse::Error::Config(format!(
            "dataset has {} classes with d_t={}, d_v={}; model expects {} classes with d_t={}, d_v={}",
            h.num_classes, h.d_t, h.d_v, model.num_classes, model.d_t, model.d_v
        ))
        .into());
    }
    Ok(())
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    Ok(Splits {
        train: load_split(cfg, "train")?,
        val: load_split(cfg, "val")?,
        test: load_split(cfg, "test")?,
    })
}

struct Trained {
    model: Model,
    store: kgfuse::numerics::ParamStore,
    trace: TrainTrace,
    test: MetricsReport,
}

fn fit(cfg: &RunConfig, model_cfg: ModelConfig, splits: &Splits) -> Result<Trained> {
    check_compatible(&model_cfg, &splits.train)?;
    let (model, mut store) = Model::new(model_cfg)?;
    let val = (!splits.val.is_empty()).then_some(&splits.val);
    let outcome = train(&model, &mut store, &splits.train, val, &cfg.train)?;
    let test = evaluate(&model, &store, &splits.test)?;
    Ok(Trained {
        model,
        store,
        trace: outcome.trace,
        test,
    })
}

/// Trains on the train split, reports validation metrics per epoch and test metrics at the end.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let splits = load_splits(cfg)?;
    let trained = fit(cfg, cfg.model.clone(), &splits)?;
    create_dir(out)?;
    save_checkpoint(
        out.join("checkpoint.json"),
        &trained.model.config,
        &trained.store,
    )?;
    write(&out.join("trace.csv"), &trained.trace.to_csv())?;
    write(&out.join("metrics.json"), &trained.test.to_json()?)?;
    write(&out.join("config.json"), &cfg.to_json()?)?;
    Ok(trained.test)
}

/// Evaluates a saved checkpoint on the test split.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let (model_cfg, layout, store) = load_checkpoint(cfg.checkpoint_path())?;
    if model_cfg != cfg.model {
        return Err(kgfuse::Error::Config(format!(
            "checkpoint {} was trained with a different model configuration ({})",
            cfg.checkpoint_path().display(),
            config_differences(&cfg.model, &model_cfg).join(", ")
        ))
        .into());
    }
    let test = load_split(cfg, "test")?;
    check_compatible(&model_cfg, &test)?;
    let model = Model::from_parts(model_cfg, layout);
    let report = evaluate(&model, &store, &test)?;
    create_dir(out)?;
    write(&out.join("metrics.json"), &report.to_json()?)?;
    Ok(report)
}

fn config_differences(expected: &ModelConfig, found: &ModelConfig) -> Vec<String> {
    let (Ok(serde_json::Value::Object(a)), Ok(serde_json::Value::Object(b))) =
        (serde_json::to_value(expected), serde_json::to_value(found))
    else {
        return Vec::new();
    };
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, v)| {
            format!(
                "{k}: config {v}, checkpoint {}",
                b.get(k).cloned().unwrap_or_default()
            )
        })
        .collect()
}

fn sweep(
    cfg: &RunConfig,
    out: &Path,
    title: &str,
    first_column: &str,
    show_deltas: bool,
    variants: Vec<(String, ModelConfig)>,
) -> Result<ComparisonReport> {
    let splits = load_splits(cfg)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (name, model_cfg) in variants {
        info!("training {name}");
        let trained = fit(cfg, model_cfg, &splits)?;
        info!(
            "{name}: test acc {:.4}, w-F1 {:.4}",
            trained.test.accuracy, trained.test.weighted_f1
        );
        rows.push(ComparisonRow {
            name,
            weighted_f1: trained.test.weighted_f1,
            accuracy: trained.test.accuracy,
        });
    }
    let report = ComparisonReport {
        title: title.into(),
        first_column: first_column.into(),
        show_deltas,
        seed: cfg.model.seed,
        test_records: splits.test.len(),
        test_record_hash: record_id_hash(&splits.test),
        rows,
    };
    create_dir(out)?;
    write(
        &out.join("comparison.json"),
        &serde_json::to_string_pretty(&report).map_err(kgfuse::Error::from)?,
    )?;
    write(&out.join("comparison.csv"), &report.to_csv())?;
    write(&out.join("comparison.txt"), &report.to_table())?;
    Ok(report)
}

pub const ABLATION_ROWS: [&str; 4] = [
    "KGF",
    "w/o Multi-Knowledge",
    "w/o Graph Fusion",
    "w/o Global",
];

pub fn ablation_variants(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let full = ModelConfig {
        fusion: FusionVariant::Kgf,
        use_knowledge: true,
        use_global_concat: true,
        ..base.clone()
    };
    let configs = [
        full.clone(),
        ModelConfig {
            use_knowledge: false,
            ..full.clone()
        },
        ModelConfig {
            fusion: FusionVariant::ConcatFusion,
            ..full.clone()
        },
        ModelConfig {
            use_global_concat: false,
            ..full
        },
    ];
    ABLATION_ROWS
        .iter()
        .map(|n| n.to_string())
        .zip(configs)
        .collect()
}

/// Full KGF against its three ablations, with deltas relative to the full model.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<ComparisonReport> {
    sweep(
        cfg,
        out,
        "Ablation",
        "Variant",
        true,
        ablation_variants(&cfg.model),
    )
}

/// The five fusion modules in table order, all from the same seed.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<ComparisonReport> {
    let variants = FusionVariant::TABLE_ORDER
        .iter()
        .map(|&fusion| {
            (
                fusion.display_name().to_string(),
                ModelConfig {
                    fusion,
                    ..cfg.model.clone()
                },
            )
        })
        .collect();
    sweep(
        cfg,
        out,
        "Fusion comparison",
        "Fusion Module",
        false,
        variants,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantCheck {
    pub variant: FusionVariant,
    pub max_rel_error: f64,
    pub min_elements_checked: usize,
    pub passed: bool,
    pub failing_tensors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub tol: f64,
    pub variants: Vec<VariantCheck>,
    pub passed: bool,
}

impl GradCheckSummary {
    pub fn to_table(&self) -> String {
        let mut out = format!("Gradient check (tol {:e})\n", self.tol);
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{:<16} max rel error {:.3e}  {}{}",
                v.variant.display_name(),
                v.max_rel_error,
                if v.passed { "PASS" } else { "FAIL" },
                if v.failing_tensors.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", v.failing_tensors.join(", "))
                }
            );
        }
        out
    }
}

/// Finite-difference check of every fusion variant on one random record.
///
/// `corrupt` scales the analytic gradient of the named tensor by `1 + factor`.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    out: &Path,
    corrupt: Option<(String, f64)>,
) -> Result<GradCheckSummary> {
    let section = &cfg.gradcheck;
    let m = &cfg.model;
    let record = random_record(
        section.record_seed,
        m.d_t,
        m.d_v,
        &section.knowledge_counts,
        m.num_classes,
    );
    let graph = build_graph(&record)?;
    let label = record.label.unwrap_or(0);
    let check = kgfuse::numerics::GradCheckConfig {
        corrupt,
        ..section.check_config()
    };
    let mut variants = Vec::new();
    for fusion in FusionVariant::TABLE_ORDER {
        let (model, mut store) = Model::new(ModelConfig {
            fusion,
            ..m.clone()
        })?;
        let report = check_model_gradients(&model, &mut store, &graph, label, &check)?;
        info!("{fusion}: max relative error {:.3e}", report.max_rel_error);
        variants.push(VariantCheck {
            variant: fusion,
            max_rel_error: report.max_rel_error,
            min_elements_checked: report.tensors.iter().map(|t| t.sampled).min().unwrap_or(0),
            passed: report.passed,
            failing_tensors: report.failing().map(|t| t.name.clone()).collect(),
        });
    }
    let summary = GradCheckSummary {
        tol: check.tol,
        passed: variants.iter().all(|v| v.passed),
        variants,
    };
    create_dir(out)?;
    write(
        &out.join("gradcheck.json"),
        &serde_json::to_string_pretty(&summary).map_err(kgfuse::Error::from)?,
    )?;
    write(&out.join("gradcheck.txt"), &summary.to_table())?;
    if !summary.passed {
        let failing: Vec<String> = summary
            .variants
            .iter()
            .filter(|v| !v.passed)
            .map(|v| format!("{}: {}", v.variant, v.failing_tensors.join(", ")))
            .collect();
        return Err(CliError::GradCheckFailed(failing.join("; ")));
    }
    Ok(summary)
}
