//! Binary parameter files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic       8 bytes   "SPOOLNET"
//! version     u32
//! n_layers    u32
//! dims        (n_layers + 1) x u64, input width first
//! activations n_layers x u8
//! params      per layer: weights (row-major, out x in) then bias, as f64
//! ```

use std::path::Path;

use super::{Activation, Dense, DenseNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPOOLNET";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_net(net: &DenseNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * net.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for d in net.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for l in net.layers() {
        out.push(l.activation().code());
    }
    for v in net.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_net(buf: &[u8]) -> std::result::Result<DenseNet, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let n_layers = c.u32()? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(format!("implausible layer count {n_layers}"));
    }
    let dims = (0..=n_layers)
        .map(|_| c.u64().map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 24) {
        return Err(format!("implausible layer widths {dims:?}"));
    }
    let acts = c
        .take(n_layers)?
        .iter()
        .map(|&code| Activation::from_code(code).ok_or_else(|| format!("unknown activation code {code}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut layers = Vec::with_capacity(n_layers);
    for (w, act) in dims.windows(2).zip(acts) {
        let weights = (0..w[0] * w[1]).map(|_| c.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        let bias = (0..w[1]).map(|_| c.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        layers.push(Dense::from_parts(w[0], w[1], act, weights, bias).map_err(|e| e.to_string())?);
    }
    if c.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - c.pos));
    }
    DenseNet::from_layers(layers).map_err(|e| e.to_string())
}

pub fn write_net(path: &Path, net: &DenseNet) -> Result<()> {
    std::fs::write(path, encode_net(net)).map_err(|e| Error::io(path, e))
}

pub fn read_net(path: &Path) -> Result<DenseNet> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_net(&buf).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}
