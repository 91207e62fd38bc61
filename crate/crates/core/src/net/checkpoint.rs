//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "MAVNETCK"
//! version      u32 LE   (1)
//! meta_len     u32 LE   then meta_len bytes of UTF-8 metadata
//! n_layers     u32 LE
//! per layer:   kind u8, role u8, then u32 LE dims
//!              dense:  inputs, outputs
//!              conv1d: in_channels, out_channels, width, stride, in_len
//! parameters:  for each parametric layer in order, weight (row-major)
//!              then bias, as f64 LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{LayerKind, LayerSpec, Network, Params, Role};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAVNETCK";
const VERSION: u32 = 1;

/// A network plus free-form metadata (the harness stores JSON there).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: String,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn role_tag(role: Role) -> u8 {
    match role {
        Role::Frozen => 0,
        Role::Finetune => 1,
        Role::Adapt => 2,
    }
}

fn role_from(tag: u8) -> Result<Role> {
    Ok(match tag {
        0 => Role::Frozen,
        1 => Role::Finetune,
        2 => Role::Adapt,
        t => return Err(bad(format!("unknown role tag {t}"))),
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad("dimension exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &Network, metadata: &str) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, metadata.len())?;
    buf.extend_from_slice(metadata.as_bytes());
    put_u32(&mut buf, net.specs().len())?;
    for spec in net.specs() {
        match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                buf.extend_from_slice(&[0, role_tag(spec.role)]);
                put_u32(&mut buf, inputs)?;
                put_u32(&mut buf, outputs)?;
            }
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                width,
                stride,
                in_len,
            } => {
                buf.extend_from_slice(&[1, role_tag(spec.role)]);
                for v in [in_channels, out_channels, width, stride, in_len] {
                    put_u32(&mut buf, v)?;
                }
            }
            LayerKind::Relu => buf.extend_from_slice(&[2, role_tag(spec.role)]),
            LayerKind::Softmax => buf.extend_from_slice(&[3, role_tag(spec.role)]),
        }
    }
    for p in net.params().iter().flatten() {
        for v in p.weight.iter().chain(p.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = c.u32()?;
    let metadata = String::from_utf8(c.take(meta_len)?.to_vec()).map_err(|_| bad("metadata is not UTF-8"))?;
    let n_layers = c.u32()?;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = c.u8()?;
        let role = role_from(c.u8()?)?;
        let kind = match kind {
            0 => LayerKind::Dense {
                inputs: c.u32()?,
                outputs: c.u32()?,
            },
            1 => LayerKind::Conv1d {
                in_channels: c.u32()?,
                out_channels: c.u32()?,
                width: c.u32()?,
                stride: c.u32()?,
                in_len: c.u32()?,
            },
            2 => LayerKind::Relu,
            3 => LayerKind::Softmax,
            t => return Err(bad(format!("unknown layer tag {t}"))),
        };
        specs.push(LayerSpec { kind, role });
    }
    // Shapes come from the specs; validate them before reading parameter blocks.
    let shell = super::init_network(&specs, 0)?;
    let mut params = Vec::with_capacity(specs.len());
    for p in shell.params() {
        params.push(match p {
            None => None,
            Some(p) => {
                let (rows, cols) = p.weight.dim();
                let weight = Array2::from_shape_vec((rows, cols), c.f64s(rows * cols)?).expect("sized");
                let bias = Array1::from(c.f64s(rows)?);
                Some(Params { weight, bias })
            }
        });
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok(Checkpoint {
        network: Network::from_parts(specs, params)?,
        metadata,
    })
}

pub fn save_checkpoint(path: &Path, net: &Network, metadata: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), net, metadata)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(std::fs::File::open(path)?)
}
