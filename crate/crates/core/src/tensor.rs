//! Dense tensors and the `WBT1` binary container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size        | content                          |
//! |--------|-------------|----------------------------------|
//! | 0      | 4           | magic `WBT1`                     |
//! | 4      | 4 (u32)     | version, always 1                |
//! | 8      | 4 (u32)     | dtype: 1 = f64, 2 = complex128   |
//! | 12     | 4 (u32)     | ndim                             |
//! | 16     | 8*ndim (u64)| dims                             |
//! | ...    |             | row-major payload; complex values are interleaved (re, im) |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array, ArrayD, Dimension, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WBT1";
pub const VERSION: u32 = 1;
const MAX_AXIS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 1,
    Complex128 = 2,
}

impl DType {
    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DType::F64),
            2 => Ok(DType::Complex128),
            other => Err(Error::UnknownDType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::Real(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        }
    }
}

/// Row-major tensor of f64 or complex128 values. An empty `dims` is a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != len {
        return Err(Error::shape(format!(
            "dims {dims:?} need {expected} values, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Tensor {
            dims,
            data: TensorData::Real(data),
        })
    }

    pub fn complex(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_len(&dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Tensor {
            dims,
            data: TensorData::Complex(data),
        })
    }

    pub fn from_real_array<D: Dimension>(a: &Array<f64, D>) -> Result<Self> {
        Tensor::real(a.shape().to_vec(), a.iter().copied().collect())
    }

    pub fn from_complex_array<D: Dimension>(a: &Array<Complex64, D>) -> Result<Self> {
        Tensor::complex(a.shape().to_vec(), a.iter().copied().collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::Real(_) => DType::F64,
            TensorData::Complex(_) => DType::Complex128,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match &self.data {
            TensorData::Complex(v) => Some(v),
            TensorData::Real(_) => None,
        }
    }

    pub fn to_real_array(&self) -> Result<ArrayD<f64>> {
        let v = self
            .as_real()
            .ok_or_else(|| Error::shape("expected an f64 tensor, found complex128"))?;
        ArrayD::from_shape_vec(IxDyn(&self.dims), v.to_vec()).map_err(|e| Error::shape(e.to_string()))
    }

    pub fn to_complex_array(&self) -> Result<ArrayD<Complex64>> {
        let v = self
            .as_complex()
            .ok_or_else(|| Error::shape("expected a complex128 tensor, found f64"))?;
        ArrayD::from_shape_vec(IxDyn(&self.dims), v.to_vec()).map_err(|e| Error::shape(e.to_string()))
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> Result<()> {
        for (axis, &d) in self.dims.iter().enumerate() {
            if d as u64 > MAX_AXIS {
                return Err(Error::DimOverflow { axis, len: d as u64 });
            }
        }
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.dtype().code().to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::Real(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::Complex(v) => {
                for z in v {
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_or_truncated(r, &mut magic, 4)?;
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(read_u32(r)?)?;
        let ndim = read_u32(r)? as usize;
        let mut dims = Vec::with_capacity(ndim.min(64));
        for axis in 0..ndim {
            let d = read_u64(r)?;
            if d > MAX_AXIS {
                return Err(Error::DimOverflow { axis, len: d });
            }
            dims.push(d as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        let width = match dtype {
            DType::F64 => 8,
            DType::Complex128 => 16,
        };
        let bytes = count
            .checked_mul(width)
            .ok_or_else(|| Error::shape(format!("payload size of {dims:?} overflows")))?;
        let mut payload = Vec::new();
        r.take(bytes as u64).read_to_end(&mut payload)?;
        if payload.len() != bytes {
            return Err(Error::Truncated {
                expected: bytes as u64,
                found: payload.len() as u64,
            });
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        match dtype {
            DType::F64 => Tensor::real(dims, payload.chunks_exact(8).map(f).collect()),
            DType::Complex128 => Tensor::complex(
                dims,
                payload
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            ),
        }
    }
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], expected: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected,
                found: filled as u64,
            });
        }
        filled += n;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, 4)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b, 8)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    tensor.encode(&mut w)?;
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    Tensor::decode(&mut BufReader::new(file))
}
