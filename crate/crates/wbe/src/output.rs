//! PGM and CSV writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Min-max scaling used for an 8-bit image: `gray = round(255 (v - min) / (max - min))`,
/// or 128 everywhere when `max == min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmSidecar {
    pub rows: usize,
    pub cols: usize,
    pub min: f64,
    pub max: f64,
    pub source: Option<String>,
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(())
}

pub fn to_gray(image: &Array2<f64>) -> Result<(Vec<u8>, f64, f64)> {
    if let Some(i) = image.iter().position(|v| !v.is_finite()) {
        return Err(wbe_core::Error::NonFinite(i).into());
    }
    let min = image.iter().copied().fold(f64::INFINITY, f64::min);
    let max = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let pixels = image
        .iter()
        .map(|&v| if range > 0.0 { (255.0 * (v - min) / range).round() as u8 } else { 128 })
        .collect();
    Ok((pixels, min, max))
}

/// Writes a binary PGM (`P5 <cols> <rows> 255`) plus its scaling sidecar.
pub fn write_pgm(path: &Path, image: &Array2<f64>, source: Option<&str>) -> Result<PgmSidecar> {
    let (rows, cols) = image.dim();
    let (pixels, min, max) = to_gray(image)?;
    create_parent(path)?;
    let mut bytes = format!("P5 {cols} {rows} 255\n").into_bytes();
    bytes.extend(pixels);
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))?;
    let sidecar = PgmSidecar {
        rows,
        cols,
        min,
        max,
        source: source.map(str::to_owned),
    };
    let sc = sidecar_path(path);
    fs::write(&sc, serde_json::to_string_pretty(&sidecar)?).map_err(|e| HarnessError::io(&sc, e))?;
    Ok(sidecar)
}

/// Reads back a PGM written by [`write_pgm`]: `(cols, rows, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| HarnessError::config(format!("{}: no PGM header", path.display())))?;
    let header = String::from_utf8_lossy(&bytes[..end]);
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse = |s: &str| s.parse::<usize>().map_err(|_| HarnessError::config(format!("bad PGM header {header:?}")));
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(HarnessError::config(format!("bad PGM header {header:?}")));
    }
    let (cols, rows) = (parse(fields[1])?, parse(fields[2])?);
    let pixels = bytes[end + 1..].to_vec();
    if pixels.len() != rows * cols {
        return Err(HarnessError::config(format!("{}: {} pixels for {cols}x{rows}", path.display(), pixels.len())));
    }
    Ok((cols, rows, pixels))
}

/// CSV dump with a `c0,c1,...` header; values are written in shortest
/// round-trip form.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|c| format!("c{c}")))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| HarnessError::config(format!("{}: bad number {field:?}", path.display())))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| HarnessError::config(e.to_string()))
}

/// A CSV table with a header row, written at once.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
        Ok(())
    }
}

/// Formats an optional metric; missing values become empty cells.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    create_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())
        .map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let sc = write_pgm(&p, &Array2::from_elem((3, 5), 0.25), None).unwrap();
        assert_eq!((sc.min, sc.max), (0.25, 0.25));
        let (cols, rows, px) = read_pgm(&p).unwrap();
        assert_eq!((cols, rows), (5, 3));
        assert!(px.iter().all(|&g| g == 128));
        let back: PgmSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn header_and_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let img = Array2::from_shape_fn((80, 80), |(i, j)| (i * 80 + j) as f64);
        write_pgm(&p, &img, Some("media.wbt")).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5 80 80 255\n"));
        let (_, _, px) = read_pgm(&p).unwrap();
        assert_eq!((px[0], px[80 * 80 - 1]), (0, 255));
        assert!(write_pgm(&p, &Array2::from_elem((2, 2), f64::NAN), None).is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = wbe_core::Rng::new(seed);
            let m = Array2::from_shape_fn((rows, cols), |_| rng.uniform(-1e3, 1e3) * 10f64.powi(rng.below(20) as i32 - 10));
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            write_matrix_csv(&p, &m).unwrap();
            let back = read_matrix_csv(&p).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
