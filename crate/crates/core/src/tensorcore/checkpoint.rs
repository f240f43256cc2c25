//! Model checkpoint container.
//!
//! Layout: the 8-byte magic `LUNGSEG1`, the architecture header as
//! little-endian `u32`s (depth, base channels), then every parameter tensor in
//! declaration order as four little-endian `u32` dims followed by its values as
//! little-endian `f32`.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LUNGSEG1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub depth: u32,
    pub base_channels: u32,
    pub tensors: Vec<Tensor<f32>>,
}

pub fn write_checkpoint(mut w: impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&ckpt.depth.to_le_bytes())?;
    w.write_all(&ckpt.base_channels.to_le_bytes())?;
    for t in &ckpt.tensors {
        for d in t.shape() {
            let d =
                u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim {d} too large")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    let mut bytes = all.as_slice();
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let depth = take_u32(&mut bytes)?;
    let base_channels = take_u32(&mut bytes)?;
    let mut tensors = Vec::new();
    while !bytes.is_empty() {
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = take_u32(&mut bytes)? as usize;
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut bytes, len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    Ok(Checkpoint {
        depth,
        base_channels,
        tensors,
    })
}
