//! Model checkpoint file format.
//!
//! Binary, versioned, little-endian:
//!
//! ```text
//! magic   b"VTCP"
//! u32     format version (currently 1)
//! u32     tensor count
//! repeat per tensor:
//!   u32        name length in bytes
//!   [u8]       UTF-8 name
//!   u32        rank
//!   [u32]      dims
//!   [f32 LE]   row-major payload, product(dims) values
//! ```
//!
//! Payloads are always 32-bit floats regardless of the in-memory precision;
//! loading into an `f64` model widens them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Parameterized, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"VTCP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing tensor {0}")]
    Missing(String),
    #[error("tensor {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn save<T: Scalar, P: AsRef<Path>>(
    path: P,
    model: &mut dyn Parameterized<T>,
) -> Result<(), CheckpointError> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit_params(&mut |name, p, _| {
        tensors.push((
            name.to_string(),
            p.shape().to_vec(),
            p.data().iter().map(|&v| v.as_f64() as f32).collect(),
        ));
    });
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar, P: AsRef<Path>>(
    path: P,
    model: &mut dyn Parameterized<T>,
) -> Result<(), CheckpointError> {
    let tensors = read_tensors(path)?;
    let mut failure: Option<CheckpointError> = None;
    model.visit_params(&mut |name, p, _| {
        if failure.is_some() {
            return;
        }
        match tensors.iter().find(|(n, _, _)| n == name) {
            None => failure = Some(CheckpointError::Missing(name.to_string())),
            Some((_, shape, data)) => {
                if shape != p.shape() {
                    failure = Some(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        expected: p.shape().to_vec(),
                        found: shape.clone(),
                    });
                } else {
                    for (dst, &src) in p.data_mut().iter_mut().zip(data) {
                        *dst = T::from_f64(src as f64);
                    }
                }
            }
        }
    });
    match failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

pub fn read_tensors<P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Malformed(format!(
                "tensor name of {name_len} bytes"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("non-UTF-8 tensor name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(tensors)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// True if two parameterized models hold bit-identical parameters.
pub fn params_equal<T: Scalar>(
    a: &mut dyn Parameterized<T>,
    b: &mut dyn Parameterized<T>,
) -> bool {
    let mut pa: Vec<(String, Tensor<T>)> = Vec::new();
    a.visit_params(&mut |n, p, _| pa.push((n.to_string(), p.clone())));
    let mut equal = true;
    let mut idx = 0;
    b.visit_params(&mut |n, p, _| {
        if idx >= pa.len() || pa[idx].0 != n || pa[idx].1 != *p {
            equal = false;
        }
        idx += 1;
    });
    equal && idx == pa.len()
}
