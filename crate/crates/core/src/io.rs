//! Tensor container file ("MVPT") and JSON sidecar helpers.
//!
//! Layout: magic bytes `MVPT`, u32 version (= 1), u32 tensor count; then per
//! tensor: u16 name length + UTF-8 name, u8 rank, rank x u32 dims, u8 dtype
//! tag (0 = little-endian f32), payload. All integers little-endian.
//! Checkpoints, datasets, and probe weights all use this one format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MVPT";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_tensors_to(w: &mut impl Write, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::format("too many tensors for container"))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let nlen = u16::try_from(name.len())
            .map_err(|_| Error::format(format!("tensor name too long: {name}")))?;
        w.write_all(&nlen.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::format(format!("rank too large for {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::format(format!("dim too large in {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&[DTYPE_F32])?;
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors_from(r: &mut impl Read) -> Result<BTreeMap<String, Tensor>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}, not a tensor container")));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported container version {version}")));
    }
    let count = read_u32(r, "tensor count")?;
    let mut out = BTreeMap::new();
    for i in 0..count {
        let nlen = read_u16(r, "name length")? as usize;
        let mut name = vec![0u8; nlen];
        read_exact(r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format(format!("tensor {i}: name is not UTF-8")))?;
        let mut rank = [0u8; 1];
        read_exact(r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        let mut len = 1usize;
        for _ in 0..rank[0] {
            let d = read_u32(r, "dim")? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::format(format!("tensor {name}: shape overflow")))?;
            shape.push(d);
        }
        let mut dtype = [0u8; 1];
        read_exact(r, &mut dtype, "dtype")?;
        if dtype[0] != DTYPE_F32 {
            return Err(Error::format(format!("tensor {name}: unknown dtype tag {}", dtype[0])));
        }
        let mut payload = vec![0u8; len * 4];
        read_exact(r, &mut payload, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::format(format!("duplicate tensor name {name}")));
        }
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors_to(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensors_from(&mut r)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format!("truncated container while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}
