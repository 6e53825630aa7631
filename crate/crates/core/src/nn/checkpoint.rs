//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"FNTENSOR"
//! count   u64
//! record  × count:
//!   path_len u32, path utf-8 bytes,
//!   ndim u32, dims u64 × ndim,
//!   payload f64 × product(dims)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FNTENSOR";

pub fn write_tensors<W: Write>(mut w: W, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (path, t) in tensors {
        w.write_all(&(path.len() as u32).to_le_bytes())?;
        w.write_all(path.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { row: 0, msg: "not a tensor checkpoint".into() });
    }
    let count = read_u64(&mut r)? as usize;
    let mut out = BTreeMap::new();
    for row in 1..=count {
        let len = read_u32(&mut r)? as usize;
        let mut path = vec![0u8; len];
        r.read_exact(&mut path)?;
        let path = String::from_utf8(path)
            .map_err(|_| Error::Format { row, msg: "path is not utf-8".into() })?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        if out.insert(path.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format { row, msg: format!("duplicate path {path}") });
        }
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_tensors(std::io::BufWriter::new(f), tensors)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let f = std::fs::File::open(path)?;
    read_tensors(std::io::BufReader::new(f))
}
