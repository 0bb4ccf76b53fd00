//! Flat little-endian tensor container.
//!
//! Layout: magic `RSTN`, `u16` version, `u32` tensor count, then per tensor a
//! `u8` dtype (0 = f64, 1 = i64), `u8` rank, `u64` dims, `f64` scale and the
//! row-major data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RSTN";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Array2<f64>),
    I64(Array2<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: TensorData,
    /// Real value of one integer step; 1 for float tensors.
    pub scale: f64,
}

impl Tensor {
    pub fn float(m: Array2<f64>) -> Self {
        Self {
            data: TensorData::F64(m),
            scale: 1.0,
        }
    }

    pub fn to_f64(&self) -> Array2<f64> {
        match &self.data {
            TensorData::F64(m) => m.clone(),
            TensorData::I64(m) => m.mapv(|v| v as f64 * self.scale),
        }
    }
}

fn cerr(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[Tensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        let (dtype, (r, c)) = match &t.data {
            TensorData::F64(m) => (0u8, m.dim()),
            TensorData::I64(m) => (1u8, m.dim()),
        };
        w.write_u8(dtype)?;
        w.write_u8(2)?;
        w.write_u64::<LittleEndian>(r as u64)?;
        w.write_u64::<LittleEndian>(c as u64)?;
        w.write_f64::<LittleEndian>(t.scale)?;
        match &t.data {
            TensorData::F64(m) => {
                for v in m.iter() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            TensorData::I64(m) => {
                for v in m.iter() {
                    w.write_i64::<LittleEndian>(*v)?;
                }
            }
        }
    }
    w.flush()
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    let io = |e: std::io::Error| cerr(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(cerr("bad magic, not a tensor container"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(cerr(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(io)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let dtype = r.read_u8().map_err(io)?;
        let rank = r.read_u8().map_err(io)?;
        if rank != 2 {
            return Err(cerr(format!("only rank-2 tensors are supported, got rank {rank}")));
        }
        let rows = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let cols = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let scale = r.read_f64::<LittleEndian>().map_err(io)?;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= 1 << 32)
            .ok_or_else(|| cerr(format!("implausible tensor size {rows}x{cols}")))?;
        let data = match dtype {
            0 => {
                let mut v = vec![0.0; len];
                r.read_f64_into::<LittleEndian>(&mut v).map_err(io)?;
                TensorData::F64(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
            }
            1 => {
                let mut v = vec![0; len];
                r.read_i64_into::<LittleEndian>(&mut v).map_err(io)?;
                TensorData::I64(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
            }
            other => return Err(cerr(format!("unknown dtype tag {other}"))),
        };
        out.push(Tensor { data, scale });
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(f), tensors).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Tensor>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensors(BufReader::new(f))
}

/// Real-valued matrices stored in a container, e.g. per-encoder activations.
pub fn read_matrices(path: &Path) -> Result<Vec<Array2<f64>>> {
    Ok(load(path)?.iter().map(Tensor::to_f64).collect())
}

pub fn write_matrices(path: &Path, mats: &[Array2<f64>]) -> Result<()> {
    let ts: Vec<Tensor> = mats.iter().cloned().map(Tensor::float).collect();
    save(path, &ts)
}
