use std::path::{Path, PathBuf};

use qhead_core::circuit::CandidateDescriptor;
use qhead_core::data::{generate_synthetic, load_embeddings_with_seed, save_embeddings, FeatureDataset, Split};
use qhead_core::head::{HeadConfig, HeadParams};
use qhead_core::metrics::{param_report, ParamReport};
use qhead_core::training::{evaluate_all, run_fixed, run_search, Arch, EpochLog, SplitMetrics, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{parse_json, read_text, DataSource, RunConfig};
use crate::{CliError, Result};

type Pair = (CandidateDescriptor, CandidateDescriptor);

pub fn load_dataset(cfg: &RunConfig) -> Result<FeatureDataset> {
    Ok(match &cfg.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        DataSource::Path(path) => load_embeddings_with_seed(path, cfg.split_seed)?,
    })
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join(CONFIG_ECHO_FILE), cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("this command needs --{flag}")))
}

pub fn load_architecture(path: &Path, head: &HeadConfig) -> Result<Pair> {
    ArchitectureExport::load(path)?.validate(head)
}

/// Reads `params.json` and checks every group against the config's shapes.
pub fn load_params(path: &Path, head: &HeadConfig) -> Result<HeadParams> {
    let params: HeadParams = parse_json(&read_text(path)?, "params")?;
    let expected = HeadParams::zeros(head);
    if params.qff.angles.len() != expected.qff.angles.len() {
        return Err(CliError::Schema {
            what: "params".into(),
            field: "qff.angles".into(),
            message: format!("expected {} candidate sets", expected.qff.angles.len()),
        });
    }
    for ((group, got), (_, want)) in params.groups().iter().zip(expected.groups().iter()) {
        if got.len() != want.len() {
            return Err(CliError::Schema {
                what: "params".into(),
                field: group.name(),
                message: format!("expected {} values, got {}", want.len(), got.len()),
            });
        }
        if got.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Schema {
                what: "params".into(),
                field: group.name(),
                message: "non-finite value".into(),
            });
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub n_samples: usize,
    pub class_counts: Vec<usize>,
    pub split_sizes: [usize; 3],
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(CliError::Config("generate needs a synthetic data source".into()));
    };
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let path = cfg.out.join(DATASET_FILE);
    save_embeddings(&path, &ds)?;
    Ok(GenerateSummary {
        path,
        n_samples: ds.samples.len(),
        class_counts: ds.class_counts(),
        split_sizes: [Split::Train, Split::Val, Split::Test].map(|s| ds.splits.get(s).len()),
    })
}

/// Everything a search run leaves behind besides the files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub run_id: String,
    pub ensemble: SplitMetrics,
    pub retrained: SplitMetrics,
    pub search_history: Vec<EpochLog>,
    pub retrain_history: Vec<EpochLog>,
}

/// Search, discretize, then retrain the chosen pair from a fresh initialization.
pub fn cmd_search(cfg: &RunConfig) -> Result<(ArchitectureExport, SearchSummary)> {
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let result = run_search(&ds, &cfg.head, &cfg.train)?;
    let run_id = cfg.run_id("search");
    let (ts, qff) = &result.architecture;
    let export = ArchitectureExport::from_search(run_id.clone(), &result.state.weights, (ts, qff));
    write_text(&cfg.out.join(ARCHITECTURE_FILE), &export.to_json())?;
    write_text(&cfg.out.join(TRAJECTORY_FILE), &trajectory_csv(result.trajectory()))?;

    let retrain = TrainConfig {
        epochs: cfg.retrain_epochs.unwrap_or(cfg.train.epochs),
        ..cfg.train.clone()
    };
    let fixed = run_fixed(&ds, (ts, qff), &cfg.head, &retrain)?;
    write_json(&cfg.out.join(PARAMS_FILE), &fixed.params)?;
    write_json(&cfg.out.join(METRICS_FILE), &fixed.metrics)?;
    let summary = SearchSummary {
        run_id,
        ensemble: result.ensemble,
        retrained: fixed.metrics,
        search_history: result.history,
        retrain_history: fixed.history,
    };
    write_json(&cfg.out.join(SEARCH_SUMMARY_FILE), &summary)?;
    Ok((export, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub metrics: SplitMetrics,
    pub history: Vec<EpochLog>,
}

/// Trains a fixed architecture read from `--architecture`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    prepare(cfg)?;
    let (ts, qff) = load_architecture(required(&cfg.architecture, "architecture")?, &cfg.head)?;
    let ds = load_dataset(cfg)?;
    let fixed = run_fixed(&ds, (&ts, &qff), &cfg.head, &cfg.train)?;
    write_json(&cfg.out.join(PARAMS_FILE), &fixed.params)?;
    write_json(&cfg.out.join(METRICS_FILE), &fixed.metrics)?;
    Ok(TrainSummary {
        metrics: fixed.metrics,
        history: fixed.history,
    })
}

/// Scores saved parameters on every split without updating anything.
pub fn cmd_eval(cfg: &RunConfig) -> Result<SplitMetrics> {
    prepare(cfg)?;
    let (ts, qff) = load_architecture(required(&cfg.architecture, "architecture")?, &cfg.head)?;
    let params = load_params(required(&cfg.params, "params")?, &cfg.head)?;
    let ds = load_dataset(cfg)?;
    ds.require_nonempty_splits()?;
    let metrics = evaluate_all(&ds, &params, &cfg.head, Arch::Fixed(ts.index(), qff.index()), cfg.train.threads)?;
    write_json(&cfg.out.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

/// Search-mode breakdown, or fixed-mode when `--architecture` is given.
pub fn cmd_report_params(cfg: &RunConfig) -> Result<ParamReport> {
    prepare(cfg)?;
    let arch = match &cfg.architecture {
        Some(p) => Some(load_architecture(p, &cfg.head)?),
        None => None,
    };
    let report = param_report(&cfg.head, arch.as_ref().map(|(t, q)| (t, q)))?;
    write_json(&cfg.out.join(PARAM_REPORT_FILE), &report)?;
    Ok(report)
}

pub fn param_table(r: &ParamReport) -> String {
    let qff_label = match r.qff_selected {
        Some(i) => format!("qff angles (candidate {i})"),
        None => "qff angles (all candidates)".into(),
    };
    let rows = [
        ("projection".to_string(), r.projection),
        ("lcu logits + phases".into(), r.lcu),
        ("qsvt coefficients".into(), r.qsvt),
        (qff_label, r.qff),
        ("classifier".into(), r.classifier),
        ("structural weights".into(), r.structural),
        ("quantum subtotal".into(), r.quantum),
        ("total".into(), r.total),
    ];
    let mut out = String::new();
    for (name, count) in rows {
        out.push_str(&format!("{name:<32}{count:>10}\n"));
    }
    out
}
