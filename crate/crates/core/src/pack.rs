//! Bit-packed export of quantized models.
//!
//! File layout (all integers big-endian):
//!
//! ```text
//! "ADMQPACK"  8-byte magic
//! u8          format version (1)
//! u32         tensor count
//! per tensor, in parameter order (weight_0, bias_0, weight_1, ...):
//!   f64       alpha (0 for raw tensors)
//!   u8        mode: 0 binary, 1 ternary, 2 raw float64
//!   u8        rank, then u32 per dimension
//!   payload   binary: 1 bit/weight (1 = +alpha, 0 = -alpha)
//!             ternary: 2 bits/weight (00 = 0, 01 = +alpha, 10 = -alpha)
//!             raw: one f64 per value
//! ```
//!
//! Packed codes fill each byte from the most significant bit down, in
//! row-major order; the last byte of a payload is zero-padded.

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::quant::{is_feasible, QuantMode, QuantScheme};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ADMQPACK";
pub const VERSION: u8 = 1;

const MODE_BINARY: u8 = 0;
const MODE_TERNARY: u8 = 1;
const MODE_RAW: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PackedTensor {
    pub mode: QuantMode,
    pub alpha: f64,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl PackedTensor {
    fn mode_byte(&self) -> u8 {
        match self.mode {
            QuantMode::Binary => MODE_BINARY,
            QuantMode::Ternary => MODE_TERNARY,
            QuantMode::Excluded => MODE_RAW,
        }
    }

    /// Bytes of the record header (alpha, mode, rank, dimensions).
    pub fn header_len(&self) -> usize {
        8 + 1 + 1 + 4 * self.shape.len()
    }
}

fn payload_len(mode: QuantMode, n: usize) -> usize {
    match mode {
        QuantMode::Binary => n.div_ceil(8),
        QuantMode::Ternary => n.div_ceil(4),
        QuantMode::Excluded => 8 * n,
    }
}

/// Packs a tensor whose values lie in the level set `mode` at scale `alpha`;
/// `QuantMode::Excluded` stores raw floats.
pub fn pack_tensor(t: &Tensor, mode: QuantMode, alpha: f64) -> Result<PackedTensor> {
    let payload = match mode {
        QuantMode::Excluded => t.data().iter().flat_map(|v| v.to_be_bytes()).collect(),
        QuantMode::Binary | QuantMode::Ternary => {
            if !(alpha > 0.0) || !is_feasible(t, mode, alpha) {
                return Err(Error::Quant(format!(
                    "tensor is not in the {mode:?} level set with scale {alpha}"
                )));
            }
            let bits = mode.bits_per_weight() as usize;
            let per_byte = 8 / bits;
            let mut out = vec![0u8; payload_len(mode, t.len())];
            for (i, &v) in t.data().iter().enumerate() {
                let code: u8 = match (mode, v == alpha) {
                    (QuantMode::Binary, true) => 1,
                    (QuantMode::Binary, false) => 0,
                    (_, true) => 0b01,
                    (_, false) if v == 0.0 => 0b00,
                    _ => 0b10,
                };
                let shift = 8 - bits * (i % per_byte + 1);
                out[i / per_byte] |= code << shift;
            }
            out
        }
    };
    Ok(PackedTensor {
        mode,
        alpha: if mode.is_quantized() { alpha } else { 0.0 },
        shape: t.shape().to_vec(),
        payload,
    })
}

pub fn unpack_tensor(p: &PackedTensor) -> Result<Tensor> {
    let n: usize = p.shape.iter().product();
    if p.payload.len() != payload_len(p.mode, n) {
        return Err(Error::Checkpoint(format!(
            "payload of {} bytes for {n} {:?} values",
            p.payload.len(),
            p.mode
        )));
    }
    let data: Vec<f64> = match p.mode {
        QuantMode::Excluded => p
            .payload
            .chunks_exact(8)
            .map(|b| f64::from_be_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        mode => {
            let bits = mode.bits_per_weight() as usize;
            let per_byte = 8 / bits;
            let mask = (1u8 << bits) - 1;
            (0..n)
                .map(|i| {
                    let shift = 8 - bits * (i % per_byte + 1);
                    let code = (p.payload[i / per_byte] >> shift) & mask;
                    match (mode, code) {
                        (QuantMode::Binary, 1) => Ok(p.alpha),
                        (QuantMode::Binary, _) => Ok(-p.alpha),
                        (_, 0b00) => Ok(0.0),
                        (_, 0b01) => Ok(p.alpha),
                        (_, 0b10) => Ok(-p.alpha),
                        _ => Err(Error::Checkpoint(format!(
                            "invalid ternary code at element {i}"
                        ))),
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    Tensor::new(p.shape.clone(), data)
}

/// Every parameter of a quantized model: weights packed per `scheme`, biases raw.
pub fn pack_model(model: &Model, scheme: &QuantScheme) -> Result<Vec<PackedTensor>> {
    if scheme.len() != model.num_weight_layers() {
        return Err(Error::Config(format!(
            "scheme covers {} layers, model has {}",
            scheme.len(),
            model.num_weight_layers()
        )));
    }
    let mut out = Vec::new();
    let params = model.params();
    for (i, lq) in scheme.layers.iter().enumerate() {
        let weight = params[2 * i];
        let packed = match lq.alpha {
            Some(alpha) => {
                pack_tensor(weight, lq.mode, alpha).map_err(|_| Error::Infeasible { layer: i })?
            }
            None => pack_tensor(weight, QuantMode::Excluded, 0.0)?,
        };
        out.push(packed);
        out.push(pack_tensor(params[2 * i + 1], QuantMode::Excluded, 0.0)?);
    }
    Ok(out)
}

pub fn encode(tensors: &[PackedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_be_bytes());
    for t in tensors {
        out.extend_from_slice(&t.alpha.to_be_bytes());
        out.push(t.mode_byte());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&t.payload);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "packed file truncated at byte {}",
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<PackedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(
            "not a packed model file (bad magic)".into(),
        ));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported packed format version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let alpha = f64::from_be_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let mode = match r.u8()? {
            MODE_BINARY => QuantMode::Binary,
            MODE_TERNARY => QuantMode::Ternary,
            MODE_RAW => QuantMode::Excluded,
            m => {
                return Err(Error::Checkpoint(format!(
                    "unknown mode byte {m} at byte {}",
                    at + 8
                )))
            }
        };
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(payload_len(mode, n))?.to_vec();
        out.push(PackedTensor {
            mode,
            alpha,
            shape,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Decodes a packed file back into parameter tensors.
pub fn unpack(bytes: &[u8]) -> Result<Vec<Tensor>> {
    decode(bytes)?.iter().map(unpack_tensor).collect()
}

/// Size accounting for an export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackStats {
    /// Packed bytes of weight payloads (biases and headers excluded).
    pub weight_payload_bytes: usize,
    /// The same weights stored as 64-bit floats.
    pub weight_f64_bytes: usize,
    pub file_bytes: usize,
}

pub fn pack_stats(tensors: &[PackedTensor]) -> PackStats {
    // weights sit at even positions
    let weights = tensors.iter().step_by(2);
    let (mut packed, mut raw) = (0, 0);
    for t in weights {
        packed += t.payload.len();
        raw += 8 * t.shape.iter().product::<usize>();
    }
    PackStats {
        weight_payload_bytes: packed,
        weight_f64_bytes: raw,
        file_bytes: encode(tensors).len(),
    }
}
