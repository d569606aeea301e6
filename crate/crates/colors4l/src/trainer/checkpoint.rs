//! Versioned binary checkpoint container ("CSL1").
//!
//! Layout: magic `CSL1`, `u32` format version, length-prefixed UTF-8
//! snapshot string, `u32` tensor count, then per tensor: length-prefixed
//! name, `u8` dtype code (0 = f32), `u8` rank, `u32` dims, raw
//! little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CSL1";

/// One named f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        TensorRecord {
            name: name.into(),
            dims,
            data,
        }
    }
}

pub fn write_checkpoint(path: &Path, snapshot: &str, tensors: &[TensorRecord]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(snapshot.len() as u32).to_le_bytes());
    buf.extend_from_slice(snapshot.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let numel: usize = t.dims.iter().product();
        if numel != t.data.len() {
            return Err(Error::Contract(format!(
                "tensor {}: dims {:?} do not match {} elements",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(0); // dtype f32
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::data(self.path, "truncated checkpoint"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<TensorRecord>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        data: &data,
        pos: 0,
        path,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::data(path, "bad magic (not a CSL checkpoint)"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version}, this build reads {VERSION}"
        )));
    }
    let snap_len = cur.u32()? as usize;
    let snapshot = std::str::from_utf8(cur.take(snap_len)?)
        .map_err(|_| Error::data(path, "snapshot is not UTF-8"))?
        .to_string();
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::data(path, "tensor name is not UTF-8"))?
            .to_string();
        let dtype = cur.u8()?;
        if dtype != 0 {
            return Err(Error::data(path, format!("unsupported dtype code {dtype}")));
        }
        let rank = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(TensorRecord { name, dims, data });
    }
    if cur.pos != data.len() {
        return Err(Error::data(path, "trailing bytes after last tensor"));
    }
    Ok((snapshot, tensors))
}

/// Snapshot every tensor of a model under `prefix.`.
pub fn collect_tensors<M: crate::nn::VisitParams<f32>>(model: &mut M, prefix: &str) -> Vec<TensorRecord> {
    let mut out = Vec::new();
    model.visit_params(prefix, &mut |name, _kind, p| {
        out.push(TensorRecord::new(name, p.dims(), p.value().to_vec()));
    });
    out
}

/// Restore model tensors from records; every model tensor must be present
/// with a matching shape.
pub fn assign_tensors<M: crate::nn::VisitParams<f32>>(
    model: &mut M,
    prefix: &str,
    records: &[TensorRecord],
) -> Result<()> {
    let by_name: std::collections::HashMap<&str, &TensorRecord> =
        records.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut missing = Vec::new();
    model.visit_params(prefix, &mut |name, _kind, p| match by_name.get(name.as_str()) {
        Some(rec) if rec.dims == p.dims() => {
            p.value_mut().copy_from_slice(&rec.data);
        }
        Some(rec) => missing.push(format!("{name}: shape {:?} vs checkpoint {:?}", p.dims(), rec.dims)),
        None => missing.push(format!("{name}: absent from checkpoint")),
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::IncompatibleCheckpoint(missing.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.ckpt");
        let tensors = vec![
            TensorRecord::new("a.w", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.5]),
            TensorRecord::new("a.b", vec![1], vec![0.125]),
        ];
        write_checkpoint(&path, "{\"k\":1}", &tensors).unwrap();
        let (snap, back) = read_checkpoint(&path).unwrap();
        assert_eq!(snap, "{\"k\":1}");
        assert_eq!(back, tensors);
    }

    #[test]
    fn truncated_file_is_corrupt_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.ckpt");
        write_checkpoint(&path, "snap", &[TensorRecord::new("x", vec![4], vec![1.0; 4])]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::DataFormat { .. })));
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.ckpt");
        write_checkpoint(&path, "snap", &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::IncompatibleCheckpoint(_))));
    }
}
