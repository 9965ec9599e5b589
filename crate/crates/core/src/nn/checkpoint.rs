//! Flat little-endian checkpoint format:
//!
//! ```text
//! "JSRC" | version: u32 | n_dims: u32 | layer_dims: n_dims x u32
//!        | weights of every layer (row-major f64) | biases of every layer (f64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::MlpModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"JSRC";
const VERSION: u32 = 1;
// Guards allocation when reading corrupt headers.
const MAX_DIMS: u32 = 1 << 16;

pub fn write_checkpoint<W: Write>(model: &MlpModel, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let dims = model.layer_dims();
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("layer size {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for tensor in model.tensors() {
        for v in tensor {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MlpModel> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = read_u32(&mut input)?;
    if !(2..=MAX_DIMS).contains(&n) {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let dims = (0..n).map(|_| read_u32(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let mut model = MlpModel::zeros(&dims).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = [0u8; 8];
    for tensor in model.tensors_mut() {
        for v in tensor.iter_mut() {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
