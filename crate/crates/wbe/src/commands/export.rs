use std::path::PathBuf;

use ndarray::{Array2, Axis, Ix2};
use wbe_core::read_tensor;

use crate::config::{Command, ExperimentConfig, ExportFormat, ExportSection};
use crate::error::{HarnessError, Result};
use crate::output::{write_matrix_csv, write_pgm};

/// The 2D image selected by `section`.
pub fn load_image(section: &ExportSection) -> Result<Array2<f64>> {
    let t = read_tensor(&section.input)?;
    let a = t
        .to_real_array()
        .map_err(|_| HarnessError::config(format!("{}: export needs a real tensor", section.input.display())))?;
    let a = match section.index {
        Some(i) if a.ndim() == 3 => {
            if i >= a.shape()[0] {
                return Err(HarnessError::config(format!("index {i} beyond {} slices", a.shape()[0])));
            }
            a.index_axis(Axis(0), i).to_owned()
        }
        Some(_) => return Err(HarnessError::config("export.index needs a 3D tensor")),
        None => a,
    };
    let dims = a.shape().to_vec();
    a.into_dimensionality::<Ix2>()
        .map_err(|_| HarnessError::config(format!("export needs a 2D tensor, got dims {dims:?}")))
}

pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate_for(Command::Export)?;
    let section = cfg.export.as_ref().expect("validated");
    let image = load_image(section)?;
    let ext = match section.format {
        ExportFormat::Pgm => "pgm",
        ExportFormat::Csv => "csv",
    };
    let path = section.output.clone().unwrap_or_else(|| {
        let stem = section.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "tensor".into());
        let stem = match section.index {
            Some(i) => format!("{stem}_{i}"),
            None => stem,
        };
        cfg.out.join(format!("{stem}.{ext}"))
    });
    match section.format {
        ExportFormat::Pgm => {
            write_pgm(&path, &image, Some(&section.input.display().to_string()))?;
        }
        ExportFormat::Csv => write_matrix_csv(&path, &image)?,
    }
    println!("wrote {}", path.display());
    Ok(path)
}
