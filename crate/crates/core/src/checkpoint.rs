//! Binary checkpoint format.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DFSM" version count
//! count x { name_len name_bytes rank dims[rank] f32_payload }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, ParamStore, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DFSM";
pub const VERSION: u32 = 1;

/// Named tensors in file order.
pub type Entries = Vec<(String, Tensor<f32>)>;

fn put_u32(out: &mut impl Write, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn get_u32(inp: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

/// Serializes parameters as f32, in registration order.
pub fn write<T: Float>(out: &mut impl Write, store: &ParamStore<T>) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    put_u32(out, VERSION).map_err(io)?;
    put_u32(out, to_u32(store.len(), "entry count")?).map_err(io)?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        put_u32(out, to_u32(name.len(), "name length")?).map_err(io)?;
        out.write_all(name).map_err(io)?;
        put_u32(out, 4).map_err(io)?;
        for d in p.tensor.shape().0 {
            put_u32(out, to_u32(d, "dimension")?).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(4 * p.tensor.numel());
        for v in p.tensor.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read(inp: &mut impl Read) -> Result<Entries> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = get_u32(inp)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(inp)? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = get_u32(inp)? as usize;
        let mut name = vec![0u8; len];
        inp.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated entry name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let rank = get_u32(inp)? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("{name}: rank {rank} exceeds 4")));
        }
        let mut dims = [1usize; 4];
        for d in dims[4 - rank..].iter_mut() {
            *d = get_u32(inp)? as usize;
        }
        let shape = Shape(dims);
        let mut raw = vec![0u8; 4 * shape.numel()];
        inp.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("{name}: truncated payload: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if inp.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

pub fn save<T: Float>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write(&mut BufWriter::new(file), store)
}

pub fn load(path: &Path) -> Result<Entries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read(&mut BufReader::new(file))
}

/// Copies `entries` into `store`. Every parameter must be present with the
/// same shape and no unknown names may appear.
pub fn apply<T: Float>(store: &mut ParamStore<T>, entries: &Entries) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Mismatch(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let p = store
            .by_name_mut(name)
            .ok_or_else(|| Error::Mismatch(format!("checkpoint tensor {name} is not a model parameter")))?;
        if p.tensor.shape() != t.shape() {
            return Err(Error::Mismatch(format!(
                "{name}: checkpoint shape {} vs model shape {}",
                t.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = t.cast();
    }
    Ok(())
}
