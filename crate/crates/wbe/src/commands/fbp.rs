use ndarray::{Array2, Array3, Axis};
use serde::Serialize;
use wbe_core::born::{fbp_reconstruct, FbpConfig, FbpResult};
use wbe_core::helmholtz::store::load_dataset;
use wbe_core::helmholtz::WideBandDataset;
use wbe_core::model::metric_rel_rmse;
use wbe_core::{par, write_tensor, FrequencySet, Tensor};

use crate::config::{Command, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{opt, write_json, write_pgm, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FbpSampleReport {
    pub index: usize,
    /// `None` for an all-zero ground truth.
    pub rel_rmse: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpReport {
    pub samples: Vec<FbpSampleReport>,
    pub reconstructions: Vec<Array2<f64>>,
    pub mean_rel_rmse: Option<f64>,
}

/// Frequency indices of `wanted` inside the dataset, all of them when `None`.
pub fn frequency_indices(ds: &WideBandDataset, wanted: Option<&[f64]>) -> Result<(FrequencySet, Vec<usize>)> {
    match wanted {
        None => Ok((ds.freqs.clone(), (0..ds.freqs.len()).collect())),
        Some(w) => {
            let set = ds.freqs.subset(w)?;
            let idx = set.freqs().iter().map(|&f| ds.freqs.index_of(f).expect("subset")).collect();
            Ok((set, idx))
        }
    }
}

/// Per-sample FBP reconstructions using the frequencies in `freq_idx`.
pub fn reconstruct(ds: &WideBandDataset, freq_idx: &[usize], config: &FbpConfig) -> Result<FbpReport> {
    let freqs = FrequencySet::new(freq_idx.iter().map(|&k| ds.freqs.freqs()[k]).collect())?;
    let results: Vec<FbpResult> = par::try_map_range(ds.len(), |i| {
        let data: Vec<_> = freq_idx.iter().map(|&k| ds.sample(i, k)).collect();
        fbp_reconstruct(&data, &freqs, &ds.grids, config)
    })?;
    let mut samples = Vec::with_capacity(results.len());
    let mut relative = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let rel = metric_rel_rmse(std::slice::from_ref(&r.eta), std::slice::from_ref(&ds.media[i].values))?;
        if !r.converged() {
            log::warn!("sample {i}: CG did not reach the tolerance at every frequency");
        }
        relative.extend(rel);
        samples.push(FbpSampleReport {
            index: i,
            rel_rmse: rel,
            converged: r.converged(),
            iterations: r.per_frequency.iter().map(|p| p.iterations).sum(),
            max_relative_residual: r.per_frequency.iter().map(|p| p.relative_residual).fold(0.0, f64::max),
        });
    }
    let mean_rel_rmse = (!relative.is_empty()).then(|| relative.iter().sum::<f64>() / relative.len() as f64);
    Ok(FbpReport {
        samples,
        reconstructions: results.into_iter().map(|r| r.eta).collect(),
        mean_rel_rmse,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<FbpReport> {
    cfg.validate_for(Command::Fbp)?;
    let section = cfg.fbp.as_ref().expect("validated");
    let (ds, _) = load_dataset(cfg.dataset_dir())?;
    if ds.is_empty() {
        return Err(HarnessError::config("dataset has no samples"));
    }
    let (freqs, idx) = frequency_indices(&ds, section.freqs.as_deref())?;
    let report = reconstruct(&ds, &idx, &section.fbp_config())?;

    let dir = cfg.out.join("fbp");
    let n = ds.grids.n_eta;
    let mut stack = Array3::zeros((ds.len(), n, n));
    for (mut slot, r) in stack.axis_iter_mut(Axis(0)).zip(&report.reconstructions) {
        slot.assign(r);
    }
    crate::output::create_parent(&dir.join("x"))?;
    write_tensor(dir.join("recon.wbt"), &Tensor::from_real_array(&stack)?)?;
    let mut table = Table::new(["sample", "rel_rmse", "converged", "iterations", "max_relative_residual"]);
    for s in &report.samples {
        table.push([
            s.index.to_string(),
            opt(s.rel_rmse),
            s.converged.to_string(),
            s.iterations.to_string(),
            s.max_relative_residual.to_string(),
        ]);
    }
    table.write(&dir.join("metrics.csv"))?;
    if section.pgm {
        for (i, r) in report.reconstructions.iter().enumerate() {
            write_pgm(&dir.join(format!("recon_{i:04}.pgm")), r, Some("fbp/recon.wbt"))?;
        }
    }
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "freqs": freqs.freqs(),
            "mean_rel_rmse": report.mean_rel_rmse,
            "all_converged": report.samples.iter().all(|s| s.converged),
        }),
    )?;
    match report.mean_rel_rmse {
        Some(m) => println!("fbp mean rel_rmse {m:.6} over {} samples", ds.len()),
        None => println!("fbp: every ground truth is zero, rel_rmse undefined"),
    }
    Ok(report)
}
