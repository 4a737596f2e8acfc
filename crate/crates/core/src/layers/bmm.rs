//! Runtime binarization and binary matrix multiplication.
//!
//! One BMM operand is a multi-bit activation; the other is an activation
//! binarized at run time, which then plays the role of the weights. Because
//! that operand only exists at run time, its correction term is folded here,
//! once per binarized row, from the row's ±1 sum.

use serde::{Deserialize, Serialize};

use crate::bitcore::{fold_bias, mac_batch_into, BinaryWeightSet, BitPlaneBlock, Mode, PackedBits, Provenance};
use crate::error::{Error, Result};
use crate::tensor::{AccTensor, Dims, QuantTensor};

/// Value set a tensor is binarized to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTarget {
    /// bit = x > t, read as {0,1}.
    #[serde(rename = "zero_one")]
    ZeroOne,
    /// bit = x ≥ t, read as +1 (set) or −1 (clear).
    #[serde(rename = "plus_minus_one")]
    PlusMinusOne,
}

impl BinaryTarget {
    pub fn mode(self) -> Mode {
        match self {
            BinaryTarget::ZeroOne => Mode::And,
            BinaryTarget::PlusMinusOne => Mode::Xnor,
        }
    }
}

/// A binarized activation: one packed row per channel, `H·W` lanes each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryActivation {
    pub target: BinaryTarget,
    pub rows: Vec<PackedBits>,
    /// Σ of the ±1 values per row; present only for [`BinaryTarget::PlusMinusOne`].
    pub weight_sums: Option<Vec<i64>>,
}

impl BinaryActivation {
    pub fn lanes(&self) -> usize {
        self.rows.first().map_or(0, PackedBits::lanes)
    }
}

/// Binarizes each channel of a `C×H×W` tensor into a row of `H·W` bits.
pub fn binarize_act<T>(dims: Dims, data: &[T], target: BinaryTarget, threshold: f64) -> Result<BinaryActivation>
where
    T: Copy + Into<i64>,
{
    if !threshold.is_finite() {
        return Err(Error::InvalidInput(format!("threshold {threshold} is not finite")));
    }
    if data.len() != dims.len() {
        return Err(Error::Shape(format!("{} values for a {dims} tensor", data.len())));
    }
    let plane = dims.plane();
    let rows: Vec<PackedBits> = (0..dims.channels)
        .map(|c| {
            PackedBits::from_bools(data[c * plane..(c + 1) * plane].iter().map(|&v| {
                let v = v.into() as f64;
                match target {
                    BinaryTarget::ZeroOne => v > threshold,
                    BinaryTarget::PlusMinusOne => v >= threshold,
                }
            }))
        })
        .collect();
    let weight_sums = (target == BinaryTarget::PlusMinusOne).then(|| {
        rows.iter()
            .map(|r| 2 * r.count_ones() as i64 - r.lanes() as i64)
            .collect()
    });
    Ok(BinaryActivation {
        target,
        rows,
        weight_sums,
    })
}

/// `left (rows × K)` times the binarized operand, whose `n` rows of `K` bits
/// act as the columns of the right-hand matrix.
///
/// `left` is read as a `C × (H·W)` matrix. The result has dims `(C, 1, n)`.
/// `beta`, when given, holds one additive term per binarized row.
pub fn bmm(
    left: &QuantTensor,
    right: &BinaryActivation,
    mode: Mode,
    beta: Option<&[i32]>,
) -> Result<AccTensor> {
    if right.target.mode() != mode {
        return Err(Error::InvalidInput(format!(
            "{:?}-binarized operand cannot run in mode {mode}",
            right.target
        )));
    }
    let dims = left.dims();
    let inner = dims.plane();
    let cols = right.rows.len();
    if cols > 0 && right.lanes() != inner {
        return Err(Error::Shape(format!(
            "left rows have {inner} elements, binarized rows have {}",
            right.lanes()
        )));
    }
    let zero = vec![0; cols];
    let beta = beta.unwrap_or(&zero);
    if beta.len() != cols {
        return Err(Error::Shape(format!("{} biases for {cols} columns", beta.len())));
    }
    let bits = left.bits();
    let weights = match mode {
        Mode::And => BinaryWeightSet::fold(&right.rows, beta, bits, Provenance::Mask)?,
        Mode::Xnor => {
            let sums = right
                .weight_sums
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("±1 operand without weight sums".into()))?;
            if sums.len() != cols {
                return Err(Error::Shape(format!("{} weight sums for {cols} rows", sums.len())));
            }
            let folded = beta
                .iter()
                .zip(sums)
                .map(|(&b, &sum)| fold_bias(b, sum, inner, bits))
                .collect::<Result<Vec<_>>>()?;
            BinaryWeightSet::from_parts(Mode::Xnor, bits, &right.rows, folded, Provenance::Sign)?
        }
    };
    let mut data = vec![0i32; dims.channels * cols];
    let mut block = BitPlaneBlock::zeros(inner, bits)?;
    for (r, out_row) in data.chunks_exact_mut(cols.max(1)).enumerate() {
        block.repack(left.channel(r).iter().map(|&v| u32::from(v)))?;
        mac_batch_into(&block, &weights, out_row)?;
    }
    AccTensor::new(Dims::new(dims.channels, 1, cols), data)
}
