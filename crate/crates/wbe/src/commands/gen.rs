use std::path::PathBuf;

use ndarray::{Array3, Axis};
use wbe_core::born::apply_f;
use wbe_core::helmholtz::store::{save_dataset, DatasetMeta, ForwardKind};
use wbe_core::helmholtz::{simulate_dataset, HelmholtzConfig, WideBandDataset};
use wbe_core::media::{generate, Medium};
use wbe_core::{par, FrequencySet, Grids, Rng};

use crate::config::{Command, DatasetSection, ExperimentConfig};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GenReport {
    pub dir: PathBuf,
    pub samples: usize,
    pub freqs: Vec<f64>,
}

/// Sample `i` is drawn from its own forked stream, so the media do not depend
/// on scheduling.
pub fn generate_media(section: &DatasetSection) -> Result<Vec<Medium>> {
    let root = Rng::new(section.seed);
    Ok(par::try_map_range(section.n, |i| {
        let mut rng = root.fork(i as u64);
        generate(section.family, section.n_eta, &section.family_params, &mut rng)
    })?)
}

/// Far fields of `media` with the PDE solver or the linearised operator.
pub fn simulate(
    media: &[Medium],
    freqs: &FrequencySet,
    grids: &Grids,
    forward: ForwardKind,
    solver: &HelmholtzConfig,
) -> Result<WideBandDataset> {
    match forward {
        ForwardKind::Pde => Ok(simulate_dataset(media, freqs, grids, solver)?),
        ForwardKind::Born => {
            let n_f = freqs.len();
            let fields = par::try_map_range(media.len() * n_f, |t| apply_f(&media[t / n_f], freqs.omega(t % n_f), grids))?;
            let mut data = vec![Array3::zeros((media.len(), grids.n_sc, grids.n_sc)); n_f];
            for (t, ff) in fields.into_iter().enumerate() {
                data[t % n_f].index_axis_mut(Axis(0), t / n_f).assign(&ff.values);
            }
            Ok(WideBandDataset {
                grids: *grids,
                freqs: freqs.clone(),
                media: media.to_vec(),
                data,
            })
        }
    }
}

pub fn meta_for(section: &DatasetSection) -> Result<DatasetMeta> {
    let grids = section.grids()?;
    Ok(DatasetMeta {
        n_sc: grids.n_sc,
        n_eta: grids.n_eta,
        n_rho: grids.n_rho,
        freqs: section.freq_set()?.freqs().to_vec(),
        receiver_radius: grids.receiver_radius,
        seed: section.seed,
        family: section.family,
        family_params: Some(section.family_params.clone()),
        forward: section.forward,
        solver: (section.forward == ForwardKind::Pde).then(|| section.solver.clone()),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<GenReport> {
    cfg.validate_for(Command::Gen)?;
    let section = cfg.dataset.as_ref().expect("validated");
    let grids = section.grids()?;
    let freqs = section.freq_set()?;
    let media = generate_media(section)?;
    log::info!(
        "simulating {} {} media at {} frequencies ({:?})",
        media.len(),
        section.family,
        freqs.len(),
        section.forward
    );
    let ds = simulate(&media, &freqs, &grids, section.forward, &section.solver)?;
    let dir = cfg.dataset_dir();
    save_dataset(&dir, &ds, &meta_for(section)?)?;
    println!("wrote {} samples to {}", ds.len(), dir.display());
    Ok(GenReport {
        dir,
        samples: ds.len(),
        freqs: freqs.freqs().to_vec(),
    })
}
