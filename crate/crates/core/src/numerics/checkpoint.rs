//! Binary checkpoint format.
//!
//! ```text
//! "OAZR1\n"
//! u32 LE   tensor count
//! repeated: u32 LE name length, name bytes, u32 LE rank, rank x u32 LE dims
//! then every payload as f32 LE, in manifest order
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"OAZR1\n";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    write_u32(&mut out, store.len())?;
    for (name, value) in store.iter() {
        write_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        write_u32(&mut out, value.shape().len())?;
        for &d in value.shape() {
            write_u32(&mut out, d)?;
        }
    }
    for (_, value) in store.iter() {
        for &v in value.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut magic = [0u8; 6];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = read_u32(&mut input)?;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut input)?;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let rank = read_u32(&mut input)?;
        let dims = (0..rank)
            .map(|_| read_u32(&mut input))
            .collect::<Result<Vec<_>>>()?;
        manifest.push((name, dims));
    }
    let mut store = ParamStore::new();
    for (name, dims) in manifest {
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated payload for `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(name, Tensor::new(dims, data)?)?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

fn write_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}
