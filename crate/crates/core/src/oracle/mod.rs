//! Brute-force reference implementations.
//!
//! Nothing here touches the packed kernels: weights are unpacked bit by bit
//! into plain signed integers, every layer is a direct nested loop over
//! `i64` values with ordinary multiplication, and the bias used is the
//! unfolded β stored next to each weight set. The engine is checked against
//! these functions by [`equivalence_campaign`] and [`verify_model`].

mod campaign;

use std::collections::BTreeMap;

use crate::bitcore::{BinaryWeightSet, Mode};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, Model, NodeParams, Value};
use crate::layers::{BinaryTarget, RequantParams};
use crate::tensor::{Dims, QuantTensor};

pub use campaign::{equivalence_campaign, verify_model, CampaignBounds, CampaignReport, Mismatch, VerifyReport, CASES};

/// A dense tensor of unbounded integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefTensor {
    pub dims: Dims,
    pub data: Vec<i64>,
}

impl RefTensor {
    pub fn new(dims: Dims, data: Vec<i64>) -> Self {
        assert_eq!(dims.len(), data.len(), "reference tensor size");
        RefTensor { dims, data }
    }

    fn at(&self, c: usize, y: usize, x: usize) -> i64 {
        self.data[(c * self.dims.height + y) * self.dims.width + x]
    }

    /// Zero outside the tensor.
    fn padded(&self, c: usize, y: isize, x: isize) -> i64 {
        if y < 0 || x < 0 || y as usize >= self.dims.height || x as usize >= self.dims.width {
            0
        } else {
            self.at(c, y as usize, x as usize)
        }
    }
}

impl From<&QuantTensor> for RefTensor {
    fn from(t: &QuantTensor) -> Self {
        RefTensor::new(t.dims(), t.data().iter().map(|&v| i64::from(v)).collect())
    }
}

/// Weights as plain signed integers: ±1 in XNOR mode, {0,1} in AND mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedWeights {
    pub mode: Mode,
    pub lanes: usize,
    pub rows: Vec<Vec<i8>>,
    pub beta: Vec<i64>,
}

impl SignedWeights {
    /// Reads each weight bit straight out of the packed words.
    pub fn unpack(set: &BinaryWeightSet, beta: &[i32]) -> Self {
        let rows = (0..set.out_channels())
            .map(|c| {
                let words = set.channel_words(c);
                (0..set.lanes())
                    .map(|k| {
                        let bit = (words[k / 64] >> (k % 64)) & 1;
                        match (set.mode(), bit) {
                            (Mode::Xnor, 1) => 1,
                            (Mode::Xnor, _) => -1,
                            (Mode::And, b) => b as i8,
                        }
                    })
                    .collect()
            })
            .collect();
        SignedWeights {
            mode: set.mode(),
            lanes: set.lanes(),
            rows,
            beta: beta.iter().map(|&b| i64::from(b)).collect(),
        }
    }
}

/// `Σ a_i·w_i + β`.
pub fn ref_mac(activations: &[u32], weights: &[i8], beta: i64) -> i64 {
    assert_eq!(activations.len(), weights.len(), "lane count");
    activations
        .iter()
        .zip(weights)
        .map(|(&a, &w)| i64::from(a) * i64::from(w))
        .sum::<i64>()
        + beta
}

fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Dense convolution; filter `o` row holds lanes in (channel, ky, kx) order.
pub fn ref_conv2d(input: &RefTensor, w: &SignedWeights, kernel: usize, stride: usize, pad: usize) -> RefTensor {
    let d = input.dims;
    let (oh, ow) = (out_extent(d.height, kernel, stride, pad), out_extent(d.width, kernel, stride, pad));
    let mut out = Vec::with_capacity(w.rows.len() * oh * ow);
    for (o, row) in w.rows.iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = w.beta[o];
                for c in 0..d.channels {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let x = (ox * stride + kx) as isize - pad as isize;
                            let wv = row[(c * kernel + ky) * kernel + kx];
                            acc += input.padded(c, y, x) * i64::from(wv);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    RefTensor::new(Dims::new(w.rows.len(), oh, ow), out)
}

/// Depthwise convolution: filter `c` applies to channel `c` only.
pub fn ref_dwconv2d(input: &RefTensor, w: &SignedWeights, kernel: usize, stride: usize, pad: usize) -> RefTensor {
    let d = input.dims;
    let (oh, ow) = (out_extent(d.height, kernel, stride, pad), out_extent(d.width, kernel, stride, pad));
    let mut out = Vec::with_capacity(d.channels * oh * ow);
    for c in 0..d.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = w.beta[c];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let x = (ox * stride + kx) as isize - pad as isize;
                        acc += input.padded(c, y, x) * i64::from(w.rows[c][ky * kernel + kx]);
                    }
                }
                out.push(acc);
            }
        }
    }
    RefTensor::new(Dims::new(d.channels, oh, ow), out)
}

/// Convolves the first `w.rows.len()` channels size-preservingly and copies the rest.
pub fn ref_pconv2d(input: &RefTensor, w: &SignedWeights, kernel: usize) -> RefTensor {
    let d = input.dims;
    let conv = w.rows.len();
    let plane = d.height * d.width;
    let head = RefTensor::new(Dims::new(conv, d.height, d.width), input.data[..conv * plane].to_vec());
    let mut data = ref_conv2d(&head, w, kernel, 1, kernel / 2).data;
    data.extend_from_slice(&input.data[conv * plane..]);
    RefTensor::new(d, data)
}

/// A binarized operand as plain integers, one row per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefBits {
    pub target: BinaryTarget,
    pub rows: Vec<Vec<i8>>,
}

/// ZeroOne: 1 where x > t, else 0. PlusMinusOne: +1 where x ≥ t, else −1.
pub fn ref_binarize(input: &RefTensor, target: BinaryTarget, threshold: f64) -> RefBits {
    let plane = input.dims.height * input.dims.width;
    let rows = input
        .data
        .chunks(plane.max(1))
        .take(input.dims.channels)
        .map(|row| {
            row.iter()
                .map(|&x| {
                    let x = x as f64;
                    match target {
                        BinaryTarget::ZeroOne => i8::from(x > threshold),
                        BinaryTarget::PlusMinusOne => {
                            if x >= threshold {
                                1
                            } else {
                                -1
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    RefBits { target, rows }
}

/// `out[c][n] = Σ_k left[c][k]·right[n][k]`, shaped `C × 1 × N`.
pub fn ref_bmm(left: &RefTensor, right: &RefBits) -> RefTensor {
    let lanes = left.dims.height * left.dims.width;
    let mut out = Vec::with_capacity(left.dims.channels * right.rows.len());
    for c in 0..left.dims.channels {
        let row = &left.data[c * lanes..(c + 1) * lanes];
        for r in &right.rows {
            out.push(row.iter().zip(r).map(|(&a, &b)| a * i64::from(b)).sum());
        }
    }
    RefTensor::new(Dims::new(left.dims.channels, 1, right.rows.len()), out)
}

/// `clamp(round_half_up(x·M / 2^s) + offset, 0, 2^J − 1)` by exact division.
pub fn ref_requant(x: i64, multiplier: u32, shift: u8, offset: i32, bits: u8) -> i64 {
    let den = 1i128 << shift;
    let num = 2 * i128::from(x) * i128::from(multiplier) + den;
    let rounded = num.div_euclid(2 * den) as i64;
    (rounded + i64::from(offset)).clamp(0, (1i64 << bits) - 1)
}

pub fn ref_quant_act(input: &RefTensor, rq: &RequantParams) -> RefTensor {
    let plane = input.dims.height * input.dims.width;
    let data = input
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = i / plane.max(1);
            ref_requant(x, rq.multiplier[c], rq.shift[c], rq.offset[c], rq.bits)
        })
        .collect();
    RefTensor::new(input.dims, data)
}

pub fn ref_upsample(input: &RefTensor, factor: usize) -> RefTensor {
    let d = input.dims;
    let dims = Dims::new(d.channels, d.height * factor, d.width * factor);
    let mut data = Vec::with_capacity(dims.len());
    for c in 0..d.channels {
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(input.at(c, y / factor, x / factor));
            }
        }
    }
    RefTensor::new(dims, data)
}

/// Appends a column-coordinate channel then a row-coordinate channel,
/// each quantized to `bits` by rounding half up in floating point.
pub fn ref_coord_embed(input: &RefTensor, bits: u8) -> RefTensor {
    let d = input.dims;
    let top = ((1u32 << bits) - 1) as f64;
    let coord = |i: usize, n: usize| -> i64 {
        if n <= 1 {
            0
        } else {
            (i as f64 * top / (n - 1) as f64 + 0.5).floor() as i64
        }
    };
    let mut data = input.data.clone();
    for _ in 0..d.height {
        for x in 0..d.width {
            data.push(coord(x, d.width));
        }
    }
    for y in 0..d.height {
        for _ in 0..d.width {
            data.push(coord(y, d.height));
        }
    }
    RefTensor::new(Dims::new(d.channels + 2, d.height, d.width), data)
}

pub fn ref_add(a: &RefTensor, b: &RefTensor) -> RefTensor {
    assert_eq!(a.dims, b.dims, "addend shapes");
    RefTensor::new(a.dims, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

/// A value in the reference interpreter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RefValue {
    /// Tensor values plus the activation width when the value is quantized.
    Tensor(RefTensor, Option<u8>),
    Bits(RefBits),
}

impl RefValue {
    fn tensor(&self) -> Result<&RefTensor> {
        match self {
            RefValue::Tensor(t, _) => Ok(t),
            RefValue::Bits(_) => Err(Error::Shape("binarized value where a tensor was expected".into())),
        }
    }

    /// Converts an engine value for comparison.
    pub fn from_value(v: &Value) -> Self {
        match v {
            Value::Quant(t) => RefValue::Tensor(t.into(), Some(t.bits())),
            Value::Acc(t) => RefValue::Tensor(
                RefTensor::new(t.dims(), t.data().iter().map(|&x| i64::from(x)).collect()),
                None,
            ),
            Value::Bits(b) => RefValue::Bits(RefBits {
                target: b.target,
                rows: b
                    .rows
                    .iter()
                    .map(|r| {
                        r.iter()
                            .map(|bit| match (b.target, bit) {
                                (BinaryTarget::ZeroOne, b) => i8::from(b),
                                (BinaryTarget::PlusMinusOne, true) => 1,
                                (BinaryTarget::PlusMinusOne, false) => -1,
                            })
                            .collect()
                    })
                    .collect(),
            }),
        }
    }
}

fn signed(params: Option<&NodeParams>) -> Result<SignedWeights> {
    let w = params
        .and_then(|p| p.weights.as_ref())
        .ok_or_else(|| Error::Config("missing weights".into()))?;
    Ok(SignedWeights::unpack(&w.set, &w.beta))
}

/// Evaluates one node from its input values.
pub fn ref_node(kind: &LayerKind, params: Option<&NodeParams>, inputs: &[&RefValue]) -> Result<RefValue> {
    let t = |i: usize| inputs[i].tensor();
    Ok(match *kind {
        LayerKind::Bconv2d { kernel, stride, pad, .. } | LayerKind::DownsampleConv { kernel, stride, pad, .. } => {
            RefValue::Tensor(ref_conv2d(t(0)?, &signed(params)?, kernel, stride, pad), None)
        }
        LayerKind::Bdwconv2d { kernel, stride, pad, .. } => {
            RefValue::Tensor(ref_dwconv2d(t(0)?, &signed(params)?, kernel, stride, pad), None)
        }
        LayerKind::Pconv2d { kernel, .. } => RefValue::Tensor(ref_pconv2d(t(0)?, &signed(params)?, kernel), None),
        LayerKind::BnFoldMarker {} => inputs[0].clone(),
        LayerKind::QuantAct { bits, .. } => {
            let rq = params
                .and_then(|p| p.requant.as_ref())
                .ok_or_else(|| Error::Config("missing requantization".into()))?;
            RefValue::Tensor(ref_quant_act(t(0)?, rq), Some(bits))
        }
        LayerKind::Bmm { .. } => {
            let RefValue::Bits(right) = inputs[1] else {
                return Err(Error::Shape("bmm right operand is not binarized".into()));
            };
            RefValue::Tensor(ref_bmm(t(0)?, right), None)
        }
        LayerKind::UpsampleNearest { factor } => match inputs[0] {
            RefValue::Tensor(x, bits) => RefValue::Tensor(ref_upsample(x, factor), *bits),
            RefValue::Bits(_) => return Err(Error::Shape("upsample of binarized value".into())),
        },
        LayerKind::EltwiseAdd {} => RefValue::Tensor(ref_add(t(0)?, t(1)?), None),
        LayerKind::CoordEmbed {} => match inputs[0] {
            RefValue::Tensor(x, Some(bits)) => RefValue::Tensor(ref_coord_embed(x, *bits), Some(*bits)),
            _ => return Err(Error::Shape("coordinate embedding needs a quantized tensor".into())),
        },
        LayerKind::BinarizeAct { target, threshold } => RefValue::Bits(ref_binarize(t(0)?, target, threshold)),
    })
}

/// Runs the whole model through the reference layers.
pub fn ref_execute(model: &Model, inputs: &BTreeMap<String, QuantTensor>) -> Result<BTreeMap<String, RefValue>> {
    let graph = model.graph();
    let mut values: BTreeMap<String, RefValue> = inputs
        .iter()
        .map(|(k, v)| (k.clone(), RefValue::Tensor(v.into(), Some(v.bits()))))
        .collect();
    for &i in graph.order() {
        let node = &graph.graph().nodes[i];
        let args = graph
            .sources(i)
            .iter()
            .map(|s| values.get(s).ok_or_else(|| Error::node(s, "value not supplied")))
            .collect::<Result<Vec<_>>>()?;
        let out = ref_node(&node.kind, model.node_params(&node.id), &args).map_err(|e| Error::node(&node.id, e.to_string()))?;
        values.insert(node.id.clone(), out);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_by_hand() {
        assert_eq!(ref_mac(&[3, 5, 7], &[1, -1, 1], 2), 7);
        assert_eq!(ref_mac(&[3, 5, 7], &[0, 1, 1], -1), 11);
    }

    #[test]
    fn requant_rounds_half_up() {
        // 5·1/2 = 2.5 → 3; −5/2 = −2.5 → −2
        assert_eq!(ref_requant(5, 1, 1, 0, 8), 3);
        assert_eq!(ref_requant(-5, 1, 1, 10, 8), 8);
        assert_eq!(ref_requant(1000, 1, 0, 0, 8), 255);
        assert_eq!(ref_requant(-1, 1, 0, 0, 8), 0);
    }

    #[test]
    fn conv_with_padding_by_hand() {
        let x = RefTensor::new(Dims::new(1, 2, 2), vec![1, 2, 3, 4]);
        let w = SignedWeights {
            mode: Mode::Xnor,
            lanes: 9,
            rows: vec![vec![1; 9]],
            beta: vec![0],
        };
        let y = ref_conv2d(&x, &w, 3, 1, 1);
        assert_eq!(y.data, vec![10; 4]);
        let y = ref_conv2d(&x, &w, 3, 2, 1);
        assert_eq!((y.dims, y.data), (Dims::new(1, 1, 1), vec![10]));
    }

    #[test]
    fn coordinates_by_hand() {
        let x = RefTensor::new(Dims::new(0, 3, 2), vec![]);
        let y = ref_coord_embed(&x, 8);
        assert_eq!(y.data, vec![0, 255, 0, 255, 0, 255, 0, 0, 128, 128, 255, 255]);
    }

    #[test]
    fn bmm_by_hand() {
        let left = RefTensor::new(Dims::new(2, 1, 3), vec![1, 2, 3, 4, 5, 6]);
        let bits = ref_binarize(&RefTensor::new(Dims::new(1, 1, 3), vec![0, 5, 9]), BinaryTarget::PlusMinusOne, 5.0);
        assert_eq!(bits.rows, vec![vec![-1, 1, 1]]);
        assert_eq!(ref_bmm(&left, &bits).data, vec![4, 7]);
    }
}
