//! `COTT` tensor container.
//!
//! Layout: magic `COTT`, version `u8 = 1`, dtype `u8` (0 = f32, 1 = u8),
//! ndim `u8`, `ndim` little-endian `u32` dims, then the row-major payload
//! in little-endian order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"COTT";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U8(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let t = Self { dims, data };
        t.validate()?;
        Ok(t)
    }

    pub fn f32(dims: &[usize], values: Vec<f32>) -> Result<Self> {
        Self::new(dims.iter().map(|d| *d as u32).collect(), TensorData::F32(values))
    }

    pub fn u8(dims: &[usize], values: Vec<u8>) -> Result<Self> {
        Self::new(dims.iter().map(|d| *d as u32).collect(), TensorData::U8(values))
    }

    /// Stores f64 values narrowed to f32.
    pub fn from_f64(dims: &[usize], values: &[f64]) -> Result<Self> {
        Self::f32(dims, values.iter().map(|v| *v as f32).collect())
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|d| *d as usize).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::Format("too many dimensions".into()));
        }
        let n: u64 = self.dims.iter().map(|d| *d as u64).product();
        if n != self.data.len() as u64 {
            return Err(Error::Format(format!("payload has {} values, dims imply {n}", self.data.len())));
        }
        Ok(())
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::Format("expected f32 tensor, found u8".into())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Format("expected u8 tensor, found f32".into())),
        }
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        Ok(self.as_f32()?.iter().map(|v| *v as f64).collect())
    }

    /// Checks the dims against `expected`.
    pub fn expect_dims(&self, expected: &[usize]) -> Result<()> {
        if self.dims_usize() != expected {
            return Err(Error::ShapeMismatch { expected: format!("{expected:?}"), actual: format!("{:?}", self.dims) });
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION, self.data.dtype(), self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::U8(v) => w.write_all(v)?,
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; 7];
        r.read_exact(&mut head).map_err(|_| Error::Format("truncated header".into()))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if head[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", head[4])));
        }
        let (dtype, ndim) = (head[5], head[6] as usize);
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::Format("truncated dims".into()))?;
            dims.push(u32::from_le_bytes(b));
        }
        let n: usize = dims.iter().map(|d| *d as usize).product();
        let data = match dtype {
            0 => {
                let mut bytes = vec![0u8; n * 4];
                r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated payload".into()))?;
                TensorData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
            1 => {
                let mut bytes = vec![0u8; n];
                r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated payload".into()))?;
                TensorData::U8(bytes)
            }
            other => return Err(Error::Format(format!("unknown dtype {other}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
