//! Versioned binary container for [`MlpParams`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic  b"PKDPARAM"
//! 8       4           format version (u32, currently 1)
//! 12      4           number of widths W (u32)
//! 16      4*W         layer widths (u32 each): input, hidden..., classes
//! ...     8*k         per layer: weights (fan_in*fan_out f64, row-major),
//!                     then bias (fan_out f64)
//! end-4   4           CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layer, MlpParams, MlpSpec};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"PKDPARAM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let widths = params.spec().widths();
    let mut buf = Vec::with_capacity(16 + 4 * widths.len() + 8 * params.param_count() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for &w in widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MlpParams> {
    if bytes.len() < 20 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    if &body[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n_widths = r.u32()? as usize;
    if n_widths > body.len() / 4 {
        return Err(Error::Checkpoint("implausible width count".into()));
    }
    let widths = (0..n_widths).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec::new(widths).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if body.len() - r.pos != 8 * spec.param_count() {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, spec needs {}",
            body.len() - r.pos,
            8 * spec.param_count()
        )));
    }
    let mut layers = Vec::with_capacity(spec.layer_count());
    for w in spec.widths().windows(2) {
        let weights = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            weights: Matrix::new(w[0], w[1], weights).map_err(|e| Error::Checkpoint(e.to_string()))?,
            bias,
        });
    }
    MlpParams::from_layers(spec, layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
