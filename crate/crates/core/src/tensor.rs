//! Binary tensor container used to exchange arrays with external model
//! backends and to cache their outputs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MET3RT01"
//! count      u32      number of arrays
//! per array:
//!   name_len u16
//!   name     name_len bytes of UTF-8
//!   dtype    u8       0 = f32, 1 = f64, 2 = u8
//!   ndim     u8
//!   dims     ndim × u64
//!   payload  row-major elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MET3RT01";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let expected: u64 = dims.iter().product();
        if expected != data.len() as u64 {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor {name}: name or rank too large")));
        }
        Ok(Self { name, dims, data })
    }

    pub fn from_f64<D: ndarray::Dimension>(
        name: impl Into<String>,
        a: &ndarray::Array<f64, D>,
    ) -> Self {
        let dims = a.shape().iter().map(|d| *d as u64).collect();
        let data = TensorData::F64(a.iter().copied().collect());
        Self::new(name, dims, data).expect("array shape matches its element count")
    }

    pub fn from_f32<D: ndarray::Dimension>(
        name: impl Into<String>,
        a: &ndarray::Array<f32, D>,
    ) -> Self {
        let dims = a.shape().iter().map(|d| *d as u64).collect();
        let data = TensorData::F32(a.iter().copied().collect());
        Self::new(name, dims, data).expect("array shape matches its element count")
    }

    /// Elements widened to `f64`, in any dynamic shape.
    pub fn to_f64_dyn(&self) -> ArrayD<f64> {
        let shape: Vec<usize> = self.dims.iter().map(|d| *d as usize).collect();
        let values: Vec<f64> = match &self.data {
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|x| *x as f64).collect(),
        };
        ArrayD::from_shape_vec(IxDyn(&shape), values).expect("validated on construction")
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        self.to_f64_dyn()
            .into_dimensionality()
            .map_err(|_| Error::ShapeMismatch(format!("{}: expected rank 2, dims {:?}", self.name, self.dims)))
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        self.to_f64_dyn()
            .into_dimensionality()
            .map_err(|_| Error::ShapeMismatch(format!("{}: expected rank 3, dims {:?}", self.name, self.dims)))
    }
}

/// An ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: Tensor) -> &mut Self {
        self.tensors.push(tensor);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("container has no array named {name:?}")))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u16).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.data.code(), t.dims.len() as u8])?;
            for d in &t.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match &t.data {
                TensorData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                TensorData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                TensorData::U8(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let count = u32::from_le_bytes(read_array(r)?);
        let mut tensors = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let [dtype, ndim] = read_array::<2, _>(r)?;
            let mut dims = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(read_array(r)?));
            }
            let n = dims
                .iter()
                .try_fold(1u64, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::Format(format!("{name}: element count overflows")))?
                as usize;
            let data = match dtype {
                0 => TensorData::F32(read_elems(r, n, f32::from_le_bytes)?),
                1 => TensorData::F64(read_elems(r, n, f64::from_le_bytes)?),
                2 => {
                    let mut v = vec![0u8; n];
                    read_exact(r, &mut v)?;
                    TensorData::U8(v)
                }
                other => return Err(Error::Format(format!("{name}: unknown dtype code {other}"))),
            };
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated tensor container".into()),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_elems<const N: usize, T, R: Read>(
    r: &mut R,
    n: usize,
    decode: fn([u8; N]) -> T,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut chunk = vec![0u8; 1 << 16];
    let mut remaining = n * N;
    while remaining > 0 {
        let take = remaining.min(chunk.len());
        read_exact(r, &mut chunk[..take])?;
        out.extend(
            chunk[..take]
                .chunks_exact(N)
                .map(|c| decode(c.try_into().expect("exact chunk"))),
        );
        remaining -= take;
    }
    Ok(out)
}
