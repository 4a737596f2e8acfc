//! The quantization and activation unit, and batch-norm folding.
//!
//! Requantization is per-channel fixed point:
//! `clamp(((x·M + 2^(s−1)) >> s) + offset, 0, 2^J − 1)`, rounding half up.
//! The clamp floor doubles as the ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_bits, max_value, AccTensor, QuantTensor};

/// Per-channel requantization parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequantParams {
    pub bits: u8,
    pub multiplier: Vec<u32>,
    pub shift: Vec<u8>,
    pub offset: Vec<i32>,
}

impl RequantParams {
    /// Pass values through unchanged apart from the clamp.
    pub fn identity(channels: usize, bits: u8) -> Self {
        RequantParams {
            bits,
            multiplier: vec![1; channels],
            shift: vec![0; channels],
            offset: vec![0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.multiplier.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        let n = self.multiplier.len();
        if self.shift.len() != n || self.offset.len() != n {
            return Err(Error::Config(format!(
                "requant vectors disagree: {} multipliers, {} shifts, {} offsets",
                n,
                self.shift.len(),
                self.offset.len()
            )));
        }
        if let Some(s) = self.shift.iter().find(|&&s| s > 31) {
            return Err(Error::Config(format!("requant shift {s} exceeds 31")));
        }
        Ok(())
    }

    /// Requantizes one accumulator value of channel `c`.
    #[inline]
    pub fn apply(&self, c: usize, x: i32) -> u16 {
        let s = u32::from(self.shift[c]);
        let round = if s == 0 { 0 } else { 1i64 << (s - 1) };
        let scaled = (i64::from(x) * i64::from(self.multiplier[c]) + round) >> s;
        (scaled + i64::from(self.offset[c])).clamp(0, i64::from(max_value(self.bits))) as u16
    }
}

/// Requantizes accumulators to `rq.bits`-bit activations.
pub fn quant_act(input: &AccTensor, rq: &RequantParams) -> Result<QuantTensor> {
    rq.validate()?;
    let dims = input.dims();
    if rq.channels() != dims.channels {
        return Err(Error::Shape(format!(
            "requant has {} channels, input has {}",
            rq.channels(),
            dims.channels
        )));
    }
    let plane = dims.plane();
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| rq.apply(i / plane.max(1), x))
        .collect();
    QuantTensor::new(dims, rq.bits, data)
}

/// Inference-time batch normalization, `scale·(y − mean)/√(var + eps) + shift`,
/// with outputs expressed directly in activation units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Per-channel affine form `(gain, offset)` with `bn(y) = gain·y + offset`.
    pub fn affine(&self) -> Result<Vec<(f64, f64)>> {
        let n = self.mean.len();
        if self.var.len() != n || self.scale.len() != n || self.shift.len() != n {
            return Err(Error::InvalidInput("batch-norm vectors disagree in length".into()));
        }
        (0..n)
            .map(|c| {
                let denom = self.var[c] + self.eps;
                if denom.is_nan() || denom <= 0.0 || !denom.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "channel {c}: variance + eps = {denom} is not positive"
                    )));
                }
                let gain = self.scale[c] / denom.sqrt();
                let offset = self.shift[c] - gain * self.mean[c];
                if !gain.is_finite() || !offset.is_finite() {
                    return Err(Error::InvalidInput(format!("channel {c}: non-finite parameters")));
                }
                if gain < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "channel {c}: negative gain {gain} would reverse the requantizer; \
                         negate the channel's weights before folding"
                    )));
                }
                Ok((gain, offset))
            })
            .collect()
    }

    /// Float reference: `clamp(round_half_up(bn(y)), 0, 2^J − 1)`.
    pub fn quantize_reference(&self, c: usize, y: f64, bits: u8) -> Result<u16> {
        let (gain, offset) = self.affine()?[c];
        Ok((gain * y + offset + 0.5)
            .floor()
            .clamp(0.0, f64::from(max_value(bits))) as u16)
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// `gain ≈ M / 2^s` with `M < 2^32`, most precise shift first, then reduced.
fn fixed_point(gain: f64, channel: usize) -> Result<(u32, u8)> {
    if gain == 0.0 {
        return Ok((0, 0));
    }
    let limit = f64::from(u32::MAX);
    let mut chosen = None;
    for s in (0..=31u8).rev() {
        let m = round_half_up(gain * 2f64.powi(i32::from(s)));
        if m <= limit {
            chosen = Some((m as u64, s));
            break;
        }
    }
    let (mut m, mut s) = chosen.ok_or_else(|| {
        Error::Overflow(format!("channel {channel}: gain {gain} does not fit a 32-bit multiplier"))
    })?;
    while s > 0 && m % 2 == 0 && m != 0 {
        m /= 2;
        s -= 1;
    }
    Ok((m as u32, s))
}

fn fold(bn: &BatchNorm, bias: Option<&[i32]>, bits: u8) -> Result<(RequantParams, Vec<i32>)> {
    check_bits(bits)?;
    let affine = bn.affine()?;
    if let Some(b) = bias {
        if b.len() != affine.len() {
            return Err(Error::Shape(format!(
                "{} biases for {} batch-norm channels",
                b.len(),
                affine.len()
            )));
        }
    }
    let mut rq = RequantParams::identity(affine.len(), bits);
    let mut new_bias = Vec::with_capacity(affine.len());
    for (c, &(gain, offset)) in affine.iter().enumerate() {
        let (m, s) = fixed_point(gain, c)?;
        // move as much of the additive term as possible into the integer bias,
        // the remainder is applied after the shift
        let shift_in_bias = match bias {
            Some(_) if gain > 0.0 => round_half_up(offset / gain),
            _ => 0.0,
        };
        let base = bias.map_or(0, |b| b[c]);
        let folded = f64::from(base) + shift_in_bias;
        if folded.abs() >= 2f64.powi(31) {
            return Err(Error::Overflow(format!("channel {c}: folded bias {folded}")));
        }
        let residual = round_half_up(offset - gain * shift_in_bias);
        if residual.abs() >= 2f64.powi(31) {
            return Err(Error::Overflow(format!("channel {c}: requant offset {residual}")));
        }
        rq.multiplier[c] = m;
        rq.shift[c] = s;
        rq.offset[c] = residual as i32;
        new_bias.push(folded as i32);
    }
    Ok((rq, new_bias))
}

/// Absorbs a batch norm that follows a MAC layer into the layer's integer
/// bias and a requantizer, so that `quant_act(conv'(x), rq)` matches the float
/// composition to within one output step.
pub fn fold_bn(folded_bias: &[i32], bn: &BatchNorm, bits: u8) -> Result<(RequantParams, Vec<i32>)> {
    fold(bn, Some(folded_bias), bits)
}

/// Batch norm after a layer that has no bias to absorb the additive term.
pub fn bn_requant(bn: &BatchNorm, bits: u8) -> Result<RequantParams> {
    fold(bn, None, bits).map(|(rq, _)| rq)
}
