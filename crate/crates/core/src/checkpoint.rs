//! Ordered tensor lists on disk: `ABKC`, u32 version, u64 count, then each
//! tensor in its own binary encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ABKC";
const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[Tensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad checkpoint magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Checkpoint("unsupported checkpoint version".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    (0..count).map(|_| Tensor::read_from(r)).collect()
}

pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    read_tensors(&mut r)
}
