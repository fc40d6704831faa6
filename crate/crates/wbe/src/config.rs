//! Experiment configuration. One JSON document holds a section per command;
//! unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wbe_core::born::{AdjointKind, FbpConfig};
use wbe_core::grid::DEFAULT_RECEIVER_RADIUS;
use wbe_core::helmholtz::store::ForwardKind;
use wbe_core::helmholtz::HelmholtzConfig;
use wbe_core::media::FamilyParams;
use wbe_core::model::{ButterflySpec, ConvSpec, Init, ModelKind, TrainConfig};
use wbe_core::{Family, FrequencySet, Grids};

use crate::error::{HarnessError, Result};

pub const SEED_ENV: &str = "WBE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Fbp,
    Train,
    RotateTest,
    Sweep,
    Export,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Fbp => "fbp",
            Command::Train => "train",
            Command::RotateTest => "rotate-test",
            Command::Sweep => "sweep",
            Command::Export => "export",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory for everything a command writes.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub fbp: Option<FbpSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default, rename = "rotate-test")]
    pub rotate_test: Option<RotateSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub export: Option<ExportSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("wbe-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Dataset directory; `<out>/dataset` when absent.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    pub family: Family,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_eta: usize,
    pub n_sc: usize,
    /// Radial samples of the polar grid; defaults to `n_eta`.
    #[serde(default)]
    pub n_rho: Option<usize>,
    #[serde(default = "default_radius")]
    pub receiver_radius: f64,
    /// Defaults to 2.5, 5 and 10 rescaled by `n_sc / 80`.
    #[serde(default)]
    pub freqs: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub family_params: FamilyParams,
    #[serde(default)]
    pub solver: HelmholtzConfig,
    #[serde(default)]
    pub forward: ForwardKind,
}

fn default_radius() -> f64 {
    DEFAULT_RECEIVER_RADIUS
}

impl DatasetSection {
    pub fn grids(&self) -> Result<Grids> {
        Ok(Grids::new(self.n_sc, self.n_eta, self.n_rho.unwrap_or(self.n_eta), self.receiver_radius)?)
    }

    pub fn freq_set(&self) -> Result<FrequencySet> {
        Ok(match &self.freqs {
            Some(f) => FrequencySet::new(f.clone())?,
            None => FrequencySet::scaled_default(self.n_sc),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(HarnessError::config("dataset.N must be positive"));
        }
        self.grids()?;
        self.freq_set()?;
        if self.family == Family::Custom {
            return Err(HarnessError::config("dataset.family 'custom' cannot be generated"));
        }
        if self.family_params.contrast < 0.0 || !self.family_params.contrast.is_finite() {
            return Err(HarnessError::config("dataset.family_params.contrast must be finite and >= 0"));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpSection {
    pub epsilon: f64,
    pub epsilon_relative: bool,
    pub power_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub adjoint: AdjointKind,
    /// Frequencies to use; all dataset frequencies when absent.
    pub freqs: Option<Vec<f64>>,
    /// Also write one PGM image per reconstruction.
    pub pgm: bool,
}

impl Default for FbpSection {
    fn default() -> Self {
        let c = FbpConfig::default();
        FbpSection {
            epsilon: c.epsilon,
            epsilon_relative: c.epsilon_relative,
            power_iters: c.power_iters,
            cg_tol: c.cg_tol,
            cg_max_iter: c.cg_max_iter,
            adjoint: c.adjoint,
            freqs: None,
            pgm: false,
        }
    }
}

impl FbpSection {
    pub fn fbp_config(&self) -> FbpConfig {
        FbpConfig {
            epsilon: self.epsilon,
            epsilon_relative: self.epsilon_relative,
            power_iters: self.power_iters,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
            adjoint: self.adjoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub model: ModelKind,
    pub init: Init,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub seed: u64,
    /// Adds the three other quarter-turn rotations of every training sample.
    pub augment_rotations: bool,
    /// Leading fraction of the dataset used for training; the rest validates.
    pub train_fraction: f64,
    /// Model frequencies; all dataset frequencies when absent.
    pub freqs: Option<Vec<f64>>,
    pub conv: ConvSpec,
    pub butterfly: ButterflySpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            model: ModelKind::Uncompressed,
            init: t.init,
            lr: t.lr,
            batch: t.batch,
            epochs: t.epochs,
            decay_rate: t.decay_rate,
            decay_steps: t.decay_steps,
            seed: t.seed,
            augment_rotations: t.augment_rotations,
            train_fraction: 0.8,
            freqs: None,
            conv: ConvSpec::default(),
            butterfly: ButterflySpec::default(),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            decay_rate: self.decay_rate,
            decay_steps: self.decay_steps,
            seed: self.seed,
            init: self.init,
            augment_rotations: self.augment_rotations,
        }
    }

    /// `(train, validation)` index lists for a dataset of `n` samples.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let n_train = (self.train_fraction * n as f64).round() as usize;
        if n_train == 0 || n_train >= n {
            return Err(HarnessError::config(format!(
                "train_fraction {} leaves an empty split of {n} samples",
                self.train_fraction
            )));
        }
        Ok(((0..n_train).collect(), (n_train..n).collect()))
    }

    fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HarnessError::config("train.train_fraction must lie in (0, 1)"));
        }
        if let Some(f) = &self.freqs {
            FrequencySet::new(f.clone())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotateSection {
    pub quarter_turns: Vec<usize>,
    /// Checkpoint directory; `<out>/checkpoint` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Re-simulate the rotated media instead of shifting the far fields.
    pub resimulate: bool,
    /// Train a fresh model per rotation on rotated training data.
    pub retrain: bool,
}

impl Default for RotateSection {
    fn default() -> Self {
        RotateSection {
            quarter_turns: vec![0, 1, 2, 3],
            checkpoint: None,
            resimulate: false,
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub sizes: Vec<usize>,
    pub freq_sets: Vec<Vec<f64>>,
    /// Trailing samples of the dataset held out for testing.
    pub test_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Pgm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    pub input: PathBuf,
    pub format: ExportFormat,
    /// Selects one slice along the leading axis of a 3D tensor.
    #[serde(default)]
    pub index: Option<usize>,
    /// Output file; `<out>/<input stem>.<format>` when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Replaces every seed by `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(d) = &mut self.dataset {
            d.seed = seed;
        }
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
    }

    /// Applies `WBE_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.override_seed(seed);
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset
            .as_ref()
            .and_then(|d| d.dir.clone())
            .unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.rotate_test
            .as_ref()
            .and_then(|r| r.checkpoint.clone())
            .unwrap_or_else(|| self.out.join("checkpoint"))
    }

    fn require<'a, T>(&self, section: &'a Option<T>, name: &str, cmd: Command) -> Result<&'a T> {
        section
            .as_ref()
            .ok_or_else(|| HarnessError::config(format!("'{}' needs a \"{name}\" section", cmd.name())))
    }

    /// Checks everything `cmd` will read before it touches the filesystem.
    pub fn validate_for(&self, cmd: Command) -> Result<()> {
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if let Some(f) = &self.fbp {
            f.fbp_config().validate()?;
            if let Some(fr) = &f.freqs {
                FrequencySet::new(fr.clone())?;
            }
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        match cmd {
            Command::Gen => {
                self.require(&self.dataset, "dataset", cmd)?;
            }
            Command::Fbp => {
                self.require(&self.fbp, "fbp", cmd)?;
            }
            Command::Train => {
                self.require(&self.train, "train", cmd)?;
            }
            Command::RotateTest => {
                let r = self.require(&self.rotate_test, "rotate-test", cmd)?;
                let t = self.require(&self.train, "train", cmd)?;
                if r.quarter_turns.is_empty() {
                    return Err(HarnessError::config("rotate-test.quarter_turns is empty"));
                }
                if let Some(q) = r.quarter_turns.iter().find(|&&q| q > 3) {
                    return Err(HarnessError::config(format!("rotate-test.quarter_turns: {q} not in 0..=3")));
                }
                if r.resimulate {
                    self.require(&self.dataset, "dataset", cmd)?;
                }
                if r.retrain && t.epochs == 0 {
                    log::warn!("rotate-test.retrain with zero epochs evaluates untrained models");
                }
            }
            Command::Sweep => {
                let s = self.require(&self.sweep, "sweep", cmd)?;
                self.require(&self.train, "train", cmd)?;
                if s.sizes.is_empty() || s.freq_sets.is_empty() || s.test_size == 0 || s.sizes.contains(&0) {
                    return Err(HarnessError::config("sweep needs non-empty sizes, freq_sets and test_size"));
                }
                for f in &s.freq_sets {
                    FrequencySet::new(f.clone())?;
                }
            }
            Command::Export => {
                self.require(&self.export, "export", cmd)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"{
        "out": "runs/a",
        "dataset": {"family": "smooth", "N": 4, "n_eta": 16, "n_sc": 16, "seed": 3},
        "fbp": {"epsilon": 0.02},
        "train": {"model": "compressed", "epochs": 2, "butterfly": {"levels": 2, "rank": 2, "n_sr": 1}},
        "rotate-test": {"quarter_turns": [0, 2]},
        "sweep": {"sizes": [2], "freq_sets": [[0.5]], "test_size": 1},
        "export": {"input": "x.wbt", "format": "pgm"}
    }"#;

    #[test]
    fn full_document_parses_and_validates() {
        let c = ExperimentConfig::from_json(FULL).unwrap();
        for cmd in [Command::Gen, Command::Fbp, Command::Train, Command::RotateTest, Command::Sweep, Command::Export] {
            c.validate_for(cmd).unwrap();
        }
        assert_eq!(c.dataset_dir(), PathBuf::from("runs/a/dataset"));
        assert_eq!(c.train.as_ref().unwrap().split(10).unwrap().0.len(), 8);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"fbp": {"eps": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"dataset": {"family": "smooth", "N": 1, "n_eta": 8, "n_sc": 8, "solver": {"pml": 3}}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"butterfly": {"depth": 2}}}"#).is_err());
    }

    #[test]
    fn missing_sections_and_bad_values_are_config_errors() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        for cmd in [Command::Gen, Command::Fbp, Command::Train, Command::Sweep, Command::Export] {
            assert_eq!(c.validate_for(cmd).unwrap_err().exit_code(), 1);
        }
        let bad = ExperimentConfig::from_json(r#"{"train": {"lr": -1}}"#).unwrap();
        assert_eq!(bad.validate_for(Command::Train).unwrap_err().exit_code(), 1);
        let bad = ExperimentConfig::from_json(r#"{"dataset": {"family": "tri5", "N": 1, "n_eta": 8, "n_sc": 8, "freqs": [2, 1]}}"#).unwrap();
        assert!(bad.validate_for(Command::Gen).is_err());
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut c = ExperimentConfig::from_json(FULL).unwrap();
        c.override_seed(99);
        assert_eq!(c.dataset.as_ref().unwrap().seed, 99);
        assert_eq!(c.train.as_ref().unwrap().seed, 99);
    }
}
