//! `SCM1` binary checkpoint format.
//!
//! ```text
//! magic        4 bytes  "SCM1"
//! version      u16 LE
//! layer count  u32 LE
//! per layer:
//!   kind tag   u8
//!   rank       u8
//!   extents    rank x u32 LE
//!   values     prod(extents) x f32 LE
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCM1";
pub const FORMAT_VERSION: u16 = 1;

/// What a stored layer holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerKind {
    /// Numeric configuration record.
    Config = 0,
    ConvWeight = 1,
    ConvBias = 2,
}

impl LayerKind {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(LayerKind::Config),
            1 => Ok(LayerKind::ConvWeight),
            2 => Ok(LayerKind::ConvBias),
            other => Err(Error::Format(format!("unknown layer kind tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub tensor: Tensor,
}

pub fn encode(layers: &[Layer]) -> Vec<u8> {
    let mut out = Vec::new();
    write_layers(&mut out, layers).expect("writing to a Vec cannot fail");
    out
}

pub fn write_layers<W: Write>(w: &mut W, layers: &[Layer]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        let shape = layer.tensor.shape();
        w.write_all(&[layer.kind as u8, shape.len() as u8])?;
        for &e in shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(layer.tensor.numel() * 4);
        for v in layer.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Layer>> {
    read_layers(&mut std::io::Cursor::new(bytes))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated while reading {what}: {e}")))
}

pub fn read_layers<R: Read>(r: &mut R) -> Result<Vec<Layer>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut v = [0u8; 2];
    read_exact(r, &mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut c = [0u8; 4];
    read_exact(r, &mut c, "layer count")?;
    let count = u32::from_le_bytes(c) as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let mut head = [0u8; 2];
        read_exact(r, &mut head, "layer header")?;
        let kind = LayerKind::from_tag(head[0])?;
        let mut shape = Vec::with_capacity(head[1] as usize);
        for _ in 0..head[1] {
            let mut e = [0u8; 4];
            read_exact(r, &mut e, "extent")?;
            shape.push(u32::from_le_bytes(e) as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > (1 << 26) {
            return Err(Error::Format(format!("layer {i} too large: {shape:?}")));
        }
        let mut raw = vec![0u8; numel * 4];
        read_exact(r, &mut raw, "layer values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        layers.push(Layer {
            kind,
            tensor: Tensor::new(shape, data)?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    Ok(layers)
}
