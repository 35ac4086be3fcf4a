//! The CSEG tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 0..4         | magic `CSEG`                             |
//! | 4            | version, always 1                        |
//! | 5            | dtype code: 0 = u8, 1 = u16, 2 = f32     |
//! | 6            | ndim, 1..=4                              |
//! | 7..7+4*ndim  | dims as u32                              |
//! | rest         | row-major payload                        |

use std::path::Path;

use crate::error::{arg_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"CSEG";
pub const VERSION: u8 = 1;
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    U8,
    U16,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::U16 => 1,
            DType::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::U16),
            2 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::U8(_) => DType::U8,
            TensorData::U16(_) => DType::U16,
            TensorData::F32(_) => DType::F32,
        }
    }
}

/// A dense row-major array of 1 to 4 axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(arg_err!("tensor must have 1..=4 axes, got {}", dims.len()));
        }
        if dims.contains(&0) {
            return Err(arg_err!("zero-length axis in dims {dims:?}"));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(arg_err!("axis length exceeds u32 in dims {dims:?}"));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(arg_err!(
                "dims {dims:?} describe {count} values but {} were supplied",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f32. Exact for u8 and u16.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::U8(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::U16(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::F32(v) => v.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + self.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses an in-memory CSEG image. `path` is only used for error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let corrupt = |reason: String| Error::Corruption {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let got = &bytes[..bytes.len().min(4)];
            return Err(format(format!("bad magic {:?}", String::from_utf8_lossy(got))));
        }
        if bytes.len() < 7 {
            return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
        }
        if bytes[4] != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                reason: format!("version {}", bytes[4]),
            });
        }
        let dtype = DType::from_code(bytes[5]).ok_or_else(|| Error::Version {
            path: path.to_path_buf(),
            reason: format!("dtype code {}", bytes[5]),
        })?;
        let ndim = bytes[6] as usize;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(format(format!("ndim {ndim} outside 1..=4")));
        }
        let header = 7 + 4 * ndim;
        if bytes.len() < header {
            return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if dims.contains(&0) {
            return Err(corrupt(format!("zero-length axis in dims {dims:?}")));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("dims {dims:?} overflow")))?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| corrupt(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header..];
        if payload.len() != expected {
            return Err(corrupt(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let data = match dtype {
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::U16 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Tensor::decode(&bytes, path)
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves a partial tensor behind.
pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    super::write_atomic(path, &t.encode())
}
