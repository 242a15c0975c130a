//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DRIF" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 | dtype: u8 (0 = f32, 1 = f64) | rank: u32 | dims: u32 × rank | values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DRIF";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub value: Tensor,
}

fn corrupt(msg: impl Into<String>) -> TensorError {
    TensorError::CheckpointCorrupt(msg.into())
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(r.value.rank() as u32).to_le_bytes())?;
        for &d in r.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in r.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated record"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("missing header"))?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut len[1..]).map_err(|_| corrupt("truncated name length"))?;
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype).map_err(|_| corrupt("truncated dtype"))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let data = match dtype[0] {
            DTYPE_F64 => {
                let mut buf = vec![0u8; numel * 8];
                r.read_exact(&mut buf).map_err(|_| corrupt(format!("truncated values for `{name}`")))?;
                buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            }
            DTYPE_F32 => {
                let mut buf = vec![0u8; numel * 4];
                r.read_exact(&mut buf).map_err(|_| corrupt(format!("truncated values for `{name}`")))?;
                buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
            other => return Err(corrupt(format!("unknown dtype tag {other}"))),
        };
        let value = Tensor::new(dims, data).map_err(|e| corrupt(format!("`{name}`: {e}")))?;
        records.push(Record { name, value });
    }
    Ok(records)
}

pub fn records_of(store: &ParamStore) -> Vec<Record> {
    store.iter().map(|(_, p)| Record { name: p.name.clone(), value: p.value.clone() }).collect()
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), &records_of(store))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    read_records(BufReader::new(File::open(path)?))
}

/// Copies record values into a store whose parameter set must match exactly.
pub fn restore(store: &mut ParamStore, records: &[Record]) -> Result<()> {
    if records.len() != store.len() {
        return Err(corrupt(format!(
            "checkpoint has {} parameters, model has {}",
            records.len(),
            store.len()
        )));
    }
    for r in records {
        let id = store.id(&r.name).ok_or_else(|| TensorError::UnknownParameter(r.name.clone()))?;
        let slot = store.value_mut(id);
        if slot.shape() != r.value.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "`{}`: checkpoint {:?}, model {:?}",
                r.name,
                r.value.shape(),
                slot.shape()
            )));
        }
        *slot = r.value.clone();
    }
    Ok(())
}
