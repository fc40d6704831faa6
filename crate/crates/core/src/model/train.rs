use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{model_inputs, predict, record_forward, Init, ModelContext, ModelParams, ModelSpec, Tape};
use crate::born::{rotation_shift, shift_data};
use crate::error::{Error, Result};
use crate::helmholtz::WideBandDataset;
use crate::media::rotate_values;
use crate::par;
use crate::rng::Rng;
use crate::tensor::{read_tensor, write_tensor, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub seed: u64,
    pub init: Init,
    /// Trains on all four quarter-turn rotations of every training sample.
    pub augment_rotations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch: 16,
            epochs: 100,
            decay_rate: 0.96,
            decay_steps: 50,
            seed: 0,
            init: Init::KernelInit,
            augment_rotations: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || !(self.decay_rate > 0.0) || self.decay_steps == 0 {
            return Err(Error::invalid("lr, batch, decay_rate and decay_steps must be positive"));
        }
        Ok(())
    }
}

/// Staircase schedule: `lr * decay_rate^floor(t / decay_steps)`.
pub fn adam_lr(cfg: &TrainConfig, t: usize) -> f64 {
    cfg.lr * cfg.decay_rate.powi((t / cfg.decay_steps) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: usize,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            t: 0,
            m: params.tensors.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: params.tensors.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
        }
    }

    /// One Adam update; returns the learning rate used.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[ArrayD<f64>], cfg: &TrainConfig) -> Result<f64> {
        if grads.len() != params.tensors.len() {
            return Err(Error::shape("gradient list does not match the parameters"));
        }
        self.t += 1;
        let lr = adam_lr(cfg, self.t);
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.shape() != g.shape() {
                return Err(Error::shape("gradient shape differs from its parameter"));
            }
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            });
        }
        Ok(lr)
    }
}

/// Mean of squared entrywise differences.
pub fn loss_mse(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!("prediction {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Mean over samples of `||pred - truth|| / ||truth||`; zero-norm truths are
/// skipped with a warning. `None` when no sample qualifies.
pub fn metric_rel_rmse(preds: &[Array2<f64>], truths: &[Array2<f64>]) -> Result<Option<f64>> {
    if preds.len() != truths.len() {
        return Err(Error::shape("prediction and truth counts differ"));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (i, (p, t)) in preds.iter().zip(truths).enumerate() {
        if p.dim() != t.dim() {
            return Err(Error::shape(format!("sample {i}: {:?} vs {:?}", p.dim(), t.dim())));
        }
        let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nt == 0.0 {
            log::warn!("sample {i} has an all-zero ground truth; excluded from rel_rmse");
            continue;
        }
        let d = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        total += d / nt;
        used += 1;
    }
    Ok((used > 0).then(|| total / used as f64))
}

/// Inputs and targets in model frequency order.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub inputs: Vec<Vec<Array2<Complex64>>>,
    pub targets: Vec<Array2<f64>>,
}

impl TrainData {
    pub fn from_dataset(dataset: &WideBandDataset, spec: &ModelSpec) -> Result<Self> {
        if dataset.grids.n_sc != spec.n_sc || dataset.grids.n_eta != spec.n_eta {
            return Err(Error::shape(format!(
                "dataset grids (n_sc {}, n_eta {}) differ from the model (n_sc {}, n_eta {})",
                dataset.grids.n_sc, dataset.grids.n_eta, spec.n_sc, spec.n_eta
            )));
        }
        Ok(TrainData {
            inputs: (0..dataset.len()).map(|i| model_inputs(dataset, i, spec)).collect::<Result<_>>()?,
            targets: dataset.media.iter().map(|m| m.values.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> TrainData {
        TrainData {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    /// Every medium turned counter-clockwise by `quarter_turns` with its far
    /// fields shifted to match. Exact: no resampling is involved.
    pub fn rotated(&self, quarter_turns: usize) -> Result<TrainData> {
        let Some(first) = self.inputs.first().and_then(|x| x.first()) else {
            return Ok(self.clone());
        };
        let shift = rotation_shift(first.nrows(), quarter_turns)?;
        Ok(TrainData {
            inputs: self
                .inputs
                .iter()
                .map(|x| x.iter().map(|lam| shift_data(lam, shift)).collect())
                .collect(),
            targets: self.targets.iter().map(|t| rotate_values(t, quarter_turns)).collect(),
        })
    }

    fn extend(&mut self, other: TrainData) {
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradient(
    params: &ModelParams,
    ctx: &ModelContext,
    inputs: &[Array2<Complex64>],
    target: &Array2<f64>,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let mut tape = Tape::new();
    let f = record_forward(&mut tape, params, ctx, inputs)?;
    let n = params.spec.n_eta;
    if target.dim() != (n, n) {
        return Err(Error::shape(format!("target is {:?}, model outputs ({n}, {n})", target.dim())));
    }
    let t = tape.input(target.clone().into_shape_with_order((1, n, n)).expect("same size").into_dyn());
    let loss = tape.mse(f.output, t)?;
    let value = tape.value(loss).iter().next().copied().unwrap_or(f64::NAN);
    let grads = tape.backward(loss, params.tensors.len(), &params.shapes())?;
    Ok((value, grads))
}

/// Batch-mean loss and gradients, reduced in a fixed tree order.
pub fn batch_gradient(
    params: &ModelParams,
    ctx: &ModelContext,
    data: &TrainData,
    batch: &[usize],
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let per_sample = par::map_slice(batch, |&i| sample_gradient(params, ctx, &data.inputs[i], &data.targets[i]));
    let per_sample = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let (loss, mut grads) = par::tree_reduce(per_sample, |(la, mut ga), (lb, gb)| {
        for (a, b) in ga.iter_mut().zip(gb) {
            *a += &b;
        }
        (la + lb, ga)
    })
    .ok_or_else(|| Error::invalid("empty batch"))?;
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.mapv_inplace(|v| v * scale);
    }
    Ok((loss * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_rel_rmse: f64,
    pub lr: f64,
}

pub fn evaluate(params: &ModelParams, ctx: &ModelContext, data: &TrainData) -> Result<(Vec<Array2<f64>>, Option<f64>)> {
    let preds = par::map_slice(&data.inputs, |x| predict(params, ctx, x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rel = metric_rel_rmse(&preds, &data.targets)?;
    Ok((preds, rel))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// State of the batch-shuffling generator after the last epoch.
    pub rng: Rng,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            epoch: self.history.len(),
            rng_seed: self.rng.seed(),
            rng_counter: self.rng.counter(),
            train: Some(cfg.clone()),
        }
    }
}

/// Trains on `train_idx`, validating on `val_idx` after every epoch. Batches are
/// drawn from a seed-determined shuffle.
pub fn train(
    mut params: ModelParams,
    data: &TrainData,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_finite()?;
    if train_idx.iter().chain(val_idx).any(|&i| i >= data.len()) {
        return Err(Error::invalid("split index beyond the dataset"));
    }
    if cfg.epochs > 0 && train_idx.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let ctx = ModelContext::new(&params.spec)?;
    let val = data.subset(val_idx);
    let mut adam = AdamState::new(&params);
    let mut rng = Rng::new(cfg.seed).fork(1);
    let augmented;
    let (data, mut order) = if cfg.augment_rotations {
        let base = data.subset(train_idx);
        let mut all = base.clone();
        for q in 1..4 {
            all.extend(base.rotated(q)?);
        }
        augmented = all;
        (&augmented, (0..augmented.len()).collect::<Vec<_>>())
    } else {
        (data, train_idx.to_vec())
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut lr = adam_lr(cfg, adam.t);
        for batch in order.chunks(cfg.batch) {
            let (loss, grads) = batch_gradient(&params, &ctx, data, batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NanLoss { step: adam.t + 1 });
            }
            total += loss * batch.len() as f64;
            lr = adam.step(&mut params, &grads, cfg)?;
        }
        let (_, rel) = evaluate(&params, &ctx, &val)?;
        let record = EpochRecord {
            epoch,
            train_mse: total / order.len() as f64,
            val_rel_rmse: rel.unwrap_or(f64::NAN),
            lr,
        };
        log::info!(
            "epoch {epoch}: train mse {:.4e}, val rel_rmse {:.4}",
            record.train_mse,
            record.val_rel_rmse
        );
        history.push(record);
    }
    Ok(TrainOutcome { params, history, rng })
}

/// Parameters plus training metadata, stored as one WBT1 file per tensor and a
/// JSON manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: usize,
    pub rng_seed: u64,
    pub rng_counter: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: super::ModelKind,
    spec: ModelSpec,
    epoch: usize,
    rng_seed: u64,
    rng_counter: u64,
    train: Option<TrainConfig>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let mut tensors = Vec::new();
        for (i, (name, t)) in self.params.names.iter().zip(&self.params.tensors).enumerate() {
            let file = format!("{i:04}_{}.wbt", name.replace('.', "_"));
            write_tensor(dir.join(&file), &Tensor::from_real_array(t)?)?;
            tensors.push(ManifestEntry {
                name: name.clone(),
                file,
                dims: t.shape().to_vec(),
            });
        }
        let manifest = Manifest {
            kind: self.params.spec.kind,
            spec: self.params.spec.clone(),
            epoch: self.epoch,
            rng_seed: self.rng_seed,
            rng_counter: self.rng_counter,
            train: self.train.clone(),
            tensors,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io_at(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.spec.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for e in &m.tensors {
            let t = read_tensor(dir.join(&e.file))?.to_real_array()?;
            if t.shape() != e.dims.as_slice() {
                return Err(Error::shape(format!("{}: stored {:?}, manifest {:?}", e.name, t.shape(), e.dims)));
            }
            names.push(e.name.clone());
            tensors.push(t);
        }
        let params = ModelParams {
            spec: m.spec,
            names,
            tensors,
        };
        // names and shapes must match a fresh initialisation of the stored model
        let expected = ModelParams::init(&params.spec, Init::Glorot, 0)?;
        if expected.names != params.names || expected.shapes() != params.shapes() {
            return Err(Error::shape("checkpoint tensors do not match the model specification"));
        }
        Ok(Checkpoint {
            params,
            epoch: m.epoch,
            rng_seed: m.rng_seed,
            rng_counter: m.rng_counter,
            train: m.train,
        })
    }
}
