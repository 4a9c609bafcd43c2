//! Flat parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "LSIGHTCK"
//! version    u32      FORMAT_VERSION
//! header_len u32      length of the JSON header in bytes
//! header     bytes    UTF-8 JSON (model hyperparameters, normalization stats, ...)
//! count      u32      number of parameters
//! repeated count times:
//!   name_len u32, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows * cols f64 values, row-major
//! ```

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"LSIGHTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint parameter name is not UTF-8")]
    Name,
    #[error("checkpoint parameter {0} does not match the model layout")]
    Layout(String),
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    header: &serde_json::Value,
    params: &ParamStore,
) -> Result<(), CheckpointError> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(header)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, value) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(value.rows() as u32).to_le_bytes())?;
        out.write_all(&(value.cols() as u32).to_le_bytes())?;
        for v in value.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(serde_json::Value, ParamStore), CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = read_u32(&mut input)? as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Name)?;
        let rows = read_u32(&mut input)? as usize;
        let cols = read_u32(&mut input)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if params.id(&name).is_some() {
            return Err(CheckpointError::Layout(name));
        }
        params.insert(name, Matrix::from_vec(rows, cols, data));
    }
    Ok((header, params))
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
