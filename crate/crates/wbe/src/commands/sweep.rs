use serde::Serialize;
use wbe_core::helmholtz::store::load_dataset;
use wbe_core::par;

use super::train::fit;
use crate::config::{Command, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::Table;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub train_size: usize,
    pub freqs: Vec<f64>,
    pub rel_rmse: Option<f64>,
    pub error: Option<String>,
}

pub fn freq_label(freqs: &[f64]) -> String {
    let parts: Vec<String> = freqs.iter().map(|f| f.to_string()).collect();
    format!("f={}", parts.join("+"))
}

/// Trains one model per (size, frequency set) cell; the last `test_size`
/// samples are the common test set. A failing cell is recorded and skipped.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate_for(Command::Sweep)?;
    let sweep = cfg.sweep.as_ref().expect("validated");
    let base = cfg.train.as_ref().expect("validated");
    let (ds, _) = load_dataset(cfg.dataset_dir())?;
    let largest = sweep.sizes.iter().copied().max().unwrap_or(0);
    if largest + sweep.test_size > ds.len() {
        return Err(HarnessError::config(format!(
            "sweep needs {} + {} samples, the dataset has {}",
            largest,
            sweep.test_size,
            ds.len()
        )));
    }
    let test_idx: Vec<usize> = (ds.len() - sweep.test_size..ds.len()).collect();
    let n_sets = sweep.freq_sets.len();
    let cells = par::map_range(sweep.sizes.len() * n_sets, |c| {
        let (size, freqs) = (sweep.sizes[c / n_sets], sweep.freq_sets[c % n_sets].clone());
        let mut section = base.clone();
        section.freqs = Some(freqs.clone());
        let train_idx: Vec<usize> = (0..size).collect();
        let (rel_rmse, error) = match fit(&section, &ds, &train_idx, &test_idx) {
            Ok((_, rel)) => (rel, None),
            Err(e) => {
                log::error!("sweep cell (size {size}, {}) failed: {e}", freq_label(&freqs));
                (None, Some(e.to_string()))
            }
        };
        SweepCell {
            train_size: size,
            freqs,
            rel_rmse,
            error,
        }
    });

    let mut header = vec!["train_size".to_string()];
    header.extend(sweep.freq_sets.iter().map(|f| freq_label(f)));
    let mut matrix = Table::new(header);
    for (r, &size) in sweep.sizes.iter().enumerate() {
        let mut row = vec![size.to_string()];
        row.extend(cells[r * n_sets..(r + 1) * n_sets].iter().map(|c| crate::output::opt(c.rel_rmse)));
        matrix.push(row);
    }
    matrix.write(&cfg.out.join("sweep.csv"))?;
    let mut long = Table::new(["train_size", "freqs", "rel_rmse", "error"]);
    for c in &cells {
        long.push([
            c.train_size.to_string(),
            freq_label(&c.freqs),
            crate::output::opt(c.rel_rmse),
            c.error.clone().unwrap_or_default(),
        ]);
    }
    long.write(&cfg.out.join("sweep_cells.csv"))?;
    for c in &cells {
        println!(
            "size {:>4} {:<24} rel_rmse {}",
            c.train_size,
            freq_label(&c.freqs),
            crate::output::opt(c.rel_rmse)
        );
    }
    Ok(cells)
}
