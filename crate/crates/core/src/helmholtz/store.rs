//! Dataset directories: `media.wbt`, one `lambda_f<freq>.wbt` per frequency and
//! `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis, Ix3};
use serde::{Deserialize, Serialize};

use super::{HelmholtzConfig, WideBandDataset};
use crate::error::{Error, Result};
use crate::grid::{FrequencySet, Grids};
use crate::media::{Family, FamilyParams, Medium};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// How the far fields of a dataset were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardKind {
    #[default]
    Pde,
    /// The linearised operator; used for solver-independent checks.
    Born,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n_sc: usize,
    pub n_eta: usize,
    pub n_rho: usize,
    pub freqs: Vec<f64>,
    #[serde(rename = "R")]
    pub receiver_radius: f64,
    pub seed: u64,
    pub family: Family,
    #[serde(default)]
    pub family_params: Option<FamilyParams>,
    #[serde(default)]
    pub forward: ForwardKind,
    #[serde(default)]
    pub solver: Option<HelmholtzConfig>,
}

impl DatasetMeta {
    pub fn grids(&self) -> Result<Grids> {
        Grids::new(self.n_sc, self.n_eta, self.n_rho, self.receiver_radius)
    }
}

pub fn lambda_file_name(freq: f64) -> String {
    format!("lambda_f{freq}.wbt")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io_at(path, e))
}

/// Writes the dataset; `meta` must describe the same grids and frequencies.
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &WideBandDataset, meta: &DatasetMeta) -> Result<()> {
    let dir = dir.as_ref();
    let g = &dataset.grids;
    if meta.grids()? != *g || meta.freqs != dataset.freqs.freqs() {
        return Err(Error::invalid("dataset metadata disagrees with the dataset"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let n = dataset.len();
    let mut media = Array3::<f64>::zeros((n, g.n_eta, g.n_eta));
    for (mut slot, m) in media.axis_iter_mut(Axis(0)).zip(&dataset.media) {
        slot.assign(&m.values);
    }
    write_tensor(dir.join("media.wbt"), &Tensor::from_real_array(&media)?)?;
    for (k, &f) in dataset.freqs.freqs().iter().enumerate() {
        write_tensor(dir.join(lambda_file_name(f)), &Tensor::from_complex_array(&dataset.data[k])?)?;
    }
    write_json(&dir.join("meta.json"), meta)
}

pub fn load_meta(dir: impl AsRef<Path>) -> Result<DatasetMeta> {
    let path: PathBuf = dir.as_ref().join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(WideBandDataset, DatasetMeta)> {
    let dir = dir.as_ref();
    let meta = load_meta(dir)?;
    let grids = meta.grids()?;
    let freqs = FrequencySet::new(meta.freqs.clone())?;
    let media = read_tensor(dir.join("media.wbt"))?
        .to_real_array()?
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::shape(format!("media.wbt: {e}")))?;
    let n = media.len_of(Axis(0));
    if media.dim() != (n, grids.n_eta, grids.n_eta) {
        return Err(Error::shape(format!("media.wbt is {:?}, n_eta = {}", media.dim(), grids.n_eta)));
    }
    let media = media
        .axis_iter(Axis(0))
        .map(|m| Medium {
            values: m.to_owned(),
            family: meta.family,
        })
        .collect::<Vec<_>>();
    let mut data = Vec::with_capacity(freqs.len());
    for &f in freqs.freqs() {
        let name = lambda_file_name(f);
        let lam = read_tensor(dir.join(&name))?
            .to_complex_array()?
            .into_dimensionality::<Ix3>()
            .map_err(|e| Error::shape(format!("{name}: {e}")))?;
        if lam.dim() != (n, grids.n_sc, grids.n_sc) {
            return Err(Error::shape(format!("{name} is {:?}, expected ({n}, {s}, {s})", lam.dim(), s = grids.n_sc)));
        }
        data.push(lam);
    }
    Ok((
        WideBandDataset {
            grids,
            freqs,
            media,
            data,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::born::apply_f;
    use crate::media::{generate, FamilyParams};
    use crate::rng::Rng;

    #[test]
    fn roundtrip_preserves_everything() {
        let grids = Grids::square(8).unwrap();
        let freqs = FrequencySet::new(vec![0.5, 1.25]).unwrap();
        let mut rng = Rng::new(3);
        let media: Vec<_> = (0..3)
            .map(|_| generate(Family::Smooth, 8, &FamilyParams::default(), &mut rng).unwrap())
            .collect();
        let data = (0..2)
            .map(|k| {
                let mut a = Array3::zeros((3, 8, 8));
                for (i, m) in media.iter().enumerate() {
                    a.index_axis_mut(Axis(0), i).assign(&apply_f(m, freqs.omega(k), &grids).unwrap().values);
                }
                a
            })
            .collect();
        let ds = WideBandDataset {
            grids,
            freqs: freqs.clone(),
            media,
            data,
        };
        let meta = DatasetMeta {
            n_sc: 8,
            n_eta: 8,
            n_rho: 8,
            freqs: vec![0.5, 1.25],
            receiver_radius: grids.receiver_radius,
            seed: 3,
            family: Family::Smooth,
            family_params: Some(FamilyParams::default()),
            forward: ForwardKind::Born,
            solver: None,
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, &meta).unwrap();
        assert!(dir.path().join("lambda_f1.25.wbt").exists());
        let (back, meta_back) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta_back, meta);

        let mut wrong = meta.clone();
        wrong.freqs = vec![0.5];
        assert!(save_dataset(dir.path().join("x"), &ds, &wrong).is_err());
        fs::remove_file(dir.path().join("lambda_f0.5.wbt")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::IoAt { .. })));
    }
}
