use std::path::PathBuf;

use serde::Serialize;
use wbe_core::helmholtz::store::load_dataset;
use wbe_core::helmholtz::WideBandDataset;
use wbe_core::model::{evaluate, train, EpochRecord, ModelContext, ModelParams, ModelSpec, TrainData, TrainOutcome};

use crate::config::{Command, ExperimentConfig, TrainSection};
use crate::error::Result;
use crate::output::{opt, write_json, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub parameters: usize,
    pub final_val_rel_rmse: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

pub fn model_spec(section: &TrainSection, ds: &WideBandDataset) -> Result<ModelSpec> {
    let freqs = match &section.freqs {
        Some(f) => ds.freqs.subset(f)?,
        None => ds.freqs.clone(),
    };
    let mut spec = ModelSpec::new(section.model, &ds.grids, &freqs);
    spec.conv = section.conv.clone();
    spec.butterfly = section.butterfly.clone();
    spec.validate()?;
    Ok(spec)
}

/// Trains a fresh model and evaluates it on `val_idx`.
pub fn fit(
    section: &TrainSection,
    ds: &WideBandDataset,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<(TrainOutcome, Option<f64>)> {
    let spec = model_spec(section, ds)?;
    let data = TrainData::from_dataset(ds, &spec)?;
    let cfg = section.train_config();
    let params = ModelParams::init(&spec, cfg.init, cfg.seed)?;
    let outcome = train(params, &data, train_idx, val_idx, &cfg)?;
    let ctx = ModelContext::new(&spec)?;
    let (_, rel) = evaluate(&outcome.params, &ctx, &data.subset(val_idx))?;
    Ok((outcome, rel))
}

pub fn write_history(path: &std::path::Path, history: &[EpochRecord]) -> Result<()> {
    let mut t = Table::new(["epoch", "train_mse", "val_rel_rmse", "lr"]);
    for h in history {
        t.push([h.epoch.to_string(), h.train_mse.to_string(), h.val_rel_rmse.to_string(), h.lr.to_string()]);
    }
    t.write(path)
}

pub fn run(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate_for(Command::Train)?;
    let section = cfg.train.as_ref().expect("validated");
    let (ds, _) = load_dataset(cfg.dataset_dir())?;
    let (train_idx, val_idx) = section.split(ds.len())?;
    let (outcome, rel) = fit(section, &ds, &train_idx, &val_idx)?;

    let checkpoint = cfg.out.join("checkpoint");
    outcome.checkpoint(&section.train_config()).save(&checkpoint)?;
    write_history(&cfg.out.join("history.csv"), &outcome.history)?;
    let report = TrainReport {
        parameters: outcome.params.count(),
        final_val_rel_rmse: rel,
        history: outcome.history,
        checkpoint,
    };
    write_json(
        &cfg.out.join("train_summary.json"),
        &serde_json::json!({
            "model": section.model,
            "parameters": report.parameters,
            "train_samples": train_idx.len(),
            "val_samples": val_idx.len(),
            "final_val_rel_rmse": report.final_val_rel_rmse,
        }),
    )?;
    println!(
        "{} model, {} parameters: final validation rel_rmse {}",
        section.model,
        report.parameters,
        opt(rel)
    );
    Ok(report)
}
