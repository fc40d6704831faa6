use ndarray::{Array3, Axis};
use serde::Serialize;
use wbe_core::born::{rotation_shift, shift_data};
use wbe_core::helmholtz::store::{load_dataset, DatasetMeta};
use wbe_core::helmholtz::WideBandDataset;
use wbe_core::media::rotate_medium;
use wbe_core::model::{evaluate, Checkpoint, ModelContext, TrainData};

use super::gen::simulate;
use super::train::fit;
use crate::config::{Command, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{opt, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationRow {
    pub quarter_turns: usize,
    pub degrees: usize,
    pub rel_rmse: Option<f64>,
}

/// Rotates every medium counter-clockwise by `q` quarter turns and applies the
/// matching exact shift to its far fields.
pub fn rotate_dataset(ds: &WideBandDataset, q: usize) -> Result<WideBandDataset> {
    let shift = rotation_shift(ds.grids.n_sc, q)?;
    let media = ds.media.iter().map(|m| rotate_medium(m, q)).collect::<Result<Vec<_>, _>>()?;
    let data = ds
        .data
        .iter()
        .map(|d| {
            let mut out = Array3::zeros(d.raw_dim());
            for (mut o, i) in out.axis_iter_mut(Axis(0)).zip(d.axis_iter(Axis(0))) {
                o.assign(&shift_data(&i.to_owned(), shift));
            }
            out
        })
        .collect();
    Ok(WideBandDataset {
        grids: ds.grids,
        freqs: ds.freqs.clone(),
        media,
        data,
    })
}

fn resimulated(ds: &WideBandDataset, q: usize, meta: &DatasetMeta, cfg: &ExperimentConfig) -> Result<WideBandDataset> {
    let media = ds.media.iter().map(|m| rotate_medium(m, q)).collect::<Result<Vec<_>, _>>()?;
    let solver = match &meta.solver {
        Some(s) => s.clone(),
        None => cfg.dataset.as_ref().expect("validated").solver.clone(),
    };
    simulate(&media, &ds.freqs, &ds.grids, meta.forward, &solver)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RotationRow>> {
    cfg.validate_for(Command::RotateTest)?;
    let section = cfg.rotate_test.as_ref().expect("validated");
    let train_section = cfg.train.as_ref().expect("validated");
    let (ds, meta) = load_dataset(cfg.dataset_dir())?;
    if ds.grids.n_sc % 4 != 0 {
        return Err(HarnessError::config(format!("n_sc = {} is not divisible by 4", ds.grids.n_sc)));
    }
    let (train_idx, val_idx) = train_section.split(ds.len())?;
    let rotated = |q: usize, full: bool| -> Result<WideBandDataset> {
        let base = if full { ds.clone() } else { ds.select(&val_idx) };
        if section.resimulate && q % 4 != 0 {
            resimulated(&base, q, &meta, cfg)
        } else {
            rotate_dataset(&base, q)
        }
    };

    let mut rows = Vec::with_capacity(section.quarter_turns.len());
    if section.retrain {
        for &q in &section.quarter_turns {
            let rds = rotated(q, true)?;
            let (_, rel) = fit(train_section, &rds, &train_idx, &val_idx)?;
            rows.push(RotationRow {
                quarter_turns: q,
                degrees: 90 * q,
                rel_rmse: rel,
            });
        }
    } else {
        let ck = Checkpoint::load(cfg.checkpoint_dir())?;
        let spec = &ck.params.spec;
        if spec.n_sc != ds.grids.n_sc || spec.n_eta != ds.grids.n_eta {
            return Err(HarnessError::config("checkpoint and dataset grids differ"));
        }
        let ctx = ModelContext::new(spec)?;
        for &q in &section.quarter_turns {
            let rds = rotated(q, false)?;
            let data = TrainData::from_dataset(&rds, spec)?;
            let (_, rel) = evaluate(&ck.params, &ctx, &data)?;
            rows.push(RotationRow {
                quarter_turns: q,
                degrees: 90 * q,
                rel_rmse: rel,
            });
        }
    }

    let mut table = Table::new(["quarter_turns", "degrees", "rel_rmse"]);
    for r in &rows {
        table.push([r.quarter_turns.to_string(), r.degrees.to_string(), opt(r.rel_rmse)]);
        println!("rotation {:>3} deg: rel_rmse {}", r.degrees, opt(r.rel_rmse));
    }
    table.write(&cfg.out.join("rotate_test.csv"))?;
    Ok(rows)
}
