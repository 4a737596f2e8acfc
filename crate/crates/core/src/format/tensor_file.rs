//! `BNNT` raw tensors.
//!
//! Layout: `"BNNT"`, channels, height and width as u32, bit width J as u8,
//! dtype tag as u8 (0 = u8, 1 = i32, 2 = u16), then the row-major payload.

use super::{put_len, Reader};
use crate::error::{Error, Result};
use crate::graph::Value;
use crate::tensor::{AccTensor, Dims, QuantTensor};

const MAGIC: &[u8; 4] = b"BNNT";
const DTYPE_U8: u8 = 0;
const DTYPE_I32: u8 = 1;
const DTYPE_U16: u8 = 2;

/// Bit-width field written for accumulator tensors.
const ACC_BITS: u8 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawTensor {
    Quant(QuantTensor),
    Acc(AccTensor),
}

impl RawTensor {
    pub fn dims(&self) -> Dims {
        match self {
            RawTensor::Quant(t) => t.dims(),
            RawTensor::Acc(t) => t.dims(),
        }
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        match value {
            Value::Quant(t) => Ok(RawTensor::Quant(t.clone())),
            Value::Acc(t) => Ok(RawTensor::Acc(t.clone())),
            Value::Bits(_) => Err(Error::Format("binarized values have no tensor encoding".into())),
        }
    }
}

pub fn write_tensor(t: &RawTensor) -> Result<Vec<u8>> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(14 + dims.len() * 4);
    out.extend_from_slice(MAGIC);
    for d in [dims.channels, dims.height, dims.width] {
        put_len(&mut out, d, "tensor extent")?;
    }
    match t {
        RawTensor::Quant(q) if q.bits() <= 8 => {
            out.extend_from_slice(&[q.bits(), DTYPE_U8]);
            out.extend(q.data().iter().map(|&v| v as u8));
        }
        RawTensor::Quant(q) => {
            out.extend_from_slice(&[q.bits(), DTYPE_U16]);
            out.extend(q.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        RawTensor::Acc(a) => {
            out.extend_from_slice(&[ACC_BITS, DTYPE_I32]);
            out.extend(a.data().iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    Ok(out)
}

pub fn read_tensor(bytes: &[u8]) -> Result<RawTensor> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a BNNT tensor file".into()));
    }
    let dims = Dims::new(r.len("channels")?, r.len("height")?, r.len("width")?);
    let bits = r.u8("bit width")?;
    let dtype = r.u8("dtype")?;
    let n = dims.len();
    let width = match dtype {
        DTYPE_U8 => 1,
        DTYPE_U16 => 2,
        DTYPE_I32 => 4,
        other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
    };
    if r.remaining() != n * width {
        return Err(Error::Format(format!(
            "payload holds {} bytes, a {dims} tensor of dtype {dtype} needs {}",
            r.remaining(),
            n * width
        )));
    }
    let payload = r.take(n * width, "payload")?;
    match dtype {
        DTYPE_U8 => {
            if bits > 8 {
                return Err(Error::Format(format!("{bits}-bit values cannot be stored as u8")));
            }
            let data = payload.iter().map(|&b| u16::from(b)).collect();
            Ok(RawTensor::Quant(QuantTensor::new(dims, bits, data)?))
        }
        DTYPE_U16 => {
            let data = payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
            Ok(RawTensor::Quant(QuantTensor::new(dims, bits, data)?))
        }
        _ => {
            let data = payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(RawTensor::Acc(AccTensor::new(dims, data)?))
        }
    }
}
