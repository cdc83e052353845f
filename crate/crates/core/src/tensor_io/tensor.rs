//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | field   | size          |
//! |---------|---------------|
//! | magic   | 4 (`SEMC`)    |
//! | version | u16           |
//! | dtype   | u8            |
//! | rank    | u8            |
//! | dims    | rank × u64    |
//! | payload | row-major     |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"SEMC";
pub const FORMAT_VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

const FIXED_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U32 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U32),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decoded header of a tensor file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub version: u16,
    pub dtype: DType,
    pub dims: Vec<u64>,
}

impl TensorHeader {
    pub fn element_count(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn header_len(&self) -> u64 {
        (FIXED_HEADER_LEN + 8 * self.dims.len()) as u64
    }

    pub fn file_len(&self) -> u64 {
        self.header_len() + self.element_count() * self.dtype.size() as u64
    }
}

/// An n-dimensional (rank ≤ 4) row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u64>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        if dims.len() > MAX_RANK {
            return Err(Error::RankTooLarge(dims.len()));
        }
        let expected = checked_product(&dims)?;
        if expected != data.len() as u64 {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Builds a tensor of the requested dtype from real values.
    ///
    /// For `U32` every value must be a non-negative integer that fits.
    pub fn from_f64(values: &[f64], dims: Vec<u64>, dtype: DType) -> Result<Self> {
        let data = match dtype {
            DType::F32 => TensorData::F32(values.iter().map(|&v| v as f32).collect()),
            DType::F64 => TensorData::F64(values.to_vec()),
            DType::U32 => TensorData::U32(
                values
                    .iter()
                    .map(|&v| {
                        if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) {
                            Ok(v as u32)
                        } else {
                            Err(Error::Invalid(format!("{v} is not representable as u32")))
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Self::new(dims, data)
    }

    pub fn from_matrix(matrix: &Matrix, dtype: DType) -> Result<Self> {
        Self::from_f64(
            matrix.as_slice(),
            vec![matrix.rows() as u64, matrix.cols() as u64],
            dtype,
        )
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Interprets a rank-2 tensor as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "expected a rank-2 tensor, got dims {:?}",
                self.dims
            )));
        }
        Matrix::from_vec(self.dims[0] as usize, self.dims[1] as usize, self.to_f64())
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader {
            version: FORMAT_VERSION,
            dtype: self.dtype(),
            dims: self.dims.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(header.file_len() as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = decode_header(bytes)?;
        let expected = header.file_len();
        let found = bytes.len() as u64;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if found > expected {
            return Err(Error::TrailingBytes { expected, found });
        }
        let payload = &bytes[header.header_len() as usize..];
        let data = match header.dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Self::new(header.dims, data)
    }
}

fn checked_product(dims: &[u64]) -> Result<u64> {
    dims.iter().try_fold(1u64, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))
    })
}

fn decode_header(bytes: &[u8]) -> Result<TensorHeader> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::Truncated {
            expected: FIXED_HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = DType::from_code(bytes[6])?;
    let rank = bytes[7] as usize;
    if rank > MAX_RANK {
        return Err(Error::RankTooLarge(rank));
    }
    let dims_end = FIXED_HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Truncated {
            expected: dims_end as u64,
            found: bytes.len() as u64,
        });
    }
    let dims: Vec<u64> = bytes[FIXED_HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    checked_product(&dims)?;
    Ok(TensorHeader {
        version,
        dtype,
        dims,
    })
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&tensor.encode())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

/// Reads only the header and checks the file size against it.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut buf = [0u8; FIXED_HEADER_LEN + 8 * MAX_RANK];
    let mut filled = 0;
    while filled < buf.len() {
        let n = file
            .read(&mut buf[filled..])
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    let header = decode_header(&buf[..filled])?;
    let expected = header.file_len();
    if file_len < expected {
        return Err(Error::Truncated {
            expected,
            found: file_len,
        });
    }
    if file_len > expected {
        return Err(Error::TrailingBytes {
            expected,
            found: file_len,
        });
    }
    Ok(header)
}
