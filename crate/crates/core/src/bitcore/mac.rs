//! Multiply-free MAC kernels.
//!
//! Each output is `Σ_j 2^j · popcount(op(plane_j, w') & mask) + folded_bias`,
//! where `op` is XNOR in mode 0 and AND in mode 1. Only bitwise logic,
//! popcounts, shifts and adds appear on this path.

use super::pack::BitPlaneBlock;
use super::weights::{BinaryWeightSet, Mode};
use crate::error::{Error, Result};

/// One MAC output. Construction of the operands bounds it to 32 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacResult(i32);

impl MacResult {
    pub fn value(self) -> i32 {
        self.0
    }
}

impl From<MacResult> for i32 {
    fn from(r: MacResult) -> i32 {
        r.0
    }
}

fn check_operands(block: &BitPlaneBlock, weights: &BinaryWeightSet) -> Result<()> {
    if block.lanes() != weights.lanes() {
        return Err(Error::Shape(format!(
            "activation block has {} lanes, weights have {}",
            block.lanes(),
            weights.lanes()
        )));
    }
    if block.bits() != weights.bits() {
        return Err(Error::Shape(format!(
            "activations are {} bits wide, weights were folded for {} bits",
            block.bits(),
            weights.bits()
        )));
    }
    Ok(())
}

#[inline]
fn xnor_planes(block: &BitPlaneBlock, w: &[u64]) -> u64 {
    let mask = block.valid_mask();
    (0..usize::from(block.bits()))
        .map(|j| {
            let count: u32 = block
                .plane(j)
                .iter()
                .zip(w)
                .zip(mask)
                .map(|((a, w), m)| (!(a ^ w) & m).count_ones())
                .sum();
            u64::from(count) << j
        })
        .sum()
}

#[inline]
fn and_planes(block: &BitPlaneBlock, w: &[u64]) -> u64 {
    let mask = block.valid_mask();
    (0..usize::from(block.bits()))
        .map(|j| {
            let count: u32 = block
                .plane(j)
                .iter()
                .zip(w)
                .zip(mask)
                .map(|((a, w), m)| (a & w & m).count_ones())
                .sum();
            u64::from(count) << j
        })
        .sum()
}

#[inline]
fn channel_unchecked(block: &BitPlaneBlock, weights: &BinaryWeightSet, c: usize) -> i32 {
    let w = weights.channel_words(c);
    let hits = match weights.mode() {
        Mode::Xnor => xnor_planes(block, w),
        Mode::And => and_planes(block, w),
    };
    // hits <= I·(2^J−1); with the bias this stays below 2^31 by construction
    (hits as i64 + i64::from(weights.folded_bias()[c])) as i32
}

fn single(
    block: &BitPlaneBlock,
    weights: &BinaryWeightSet,
    channel: usize,
    mode: Mode,
) -> Result<MacResult> {
    if weights.mode() != mode {
        return Err(Error::Mode {
            expected: mode.code(),
            found: weights.mode().code(),
        });
    }
    check_operands(block, weights)?;
    if channel >= weights.out_channels() {
        return Err(Error::Shape(format!(
            "channel {channel} out of {}",
            weights.out_channels()
        )));
    }
    Ok(MacResult(channel_unchecked(block, weights, channel)))
}

/// Mode-0 MAC of one output channel: XNOR-popcount over every bit-plane.
pub fn mac_xnor(
    block: &BitPlaneBlock,
    weights: &BinaryWeightSet,
    channel: usize,
) -> Result<MacResult> {
    single(block, weights, channel, Mode::Xnor)
}

/// Mode-1 MAC of one output channel: AND-popcount over every bit-plane.
pub fn mac_and(
    block: &BitPlaneBlock,
    weights: &BinaryWeightSet,
    channel: usize,
) -> Result<MacResult> {
    single(block, weights, channel, Mode::And)
}

/// Every output channel of `weights` against one activation block.
pub fn mac_batch(block: &BitPlaneBlock, weights: &BinaryWeightSet) -> Result<Vec<MacResult>> {
    let mut out = vec![0; weights.out_channels()];
    mac_batch_into(block, weights, &mut out)?;
    Ok(out.into_iter().map(MacResult).collect())
}

/// [`mac_batch`] writing raw accumulator values into `out`.
pub fn mac_batch_into(
    block: &BitPlaneBlock,
    weights: &BinaryWeightSet,
    out: &mut [i32],
) -> Result<()> {
    check_operands(block, weights)?;
    if out.len() != weights.out_channels() {
        return Err(Error::Shape(format!(
            "output slice of {} for {} channels",
            out.len(),
            weights.out_channels()
        )));
    }
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = channel_unchecked(block, weights, c);
    }
    Ok(())
}

/// One output channel in either mode, dispatching on the weights' mode.
pub fn mac_channel(block: &BitPlaneBlock, weights: &BinaryWeightSet, channel: usize) -> Result<MacResult> {
    single(block, weights, channel, weights.mode())
}
