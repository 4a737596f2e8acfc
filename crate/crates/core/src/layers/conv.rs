//! Binary-weight convolutions built on the packed MAC kernels.
//!
//! The reduction vector of an output pixel is the receptive field in
//! (channel, ky, kx) order. Zero padding enters it as ordinary zero-valued
//! lanes, so `I = C_in · k_h · k_w` at every pixel including the borders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitcore::{mac_batch_into, mac_channel, BinaryWeightSet, BitPlaneBlock};
use crate::error::{Error, Result};
use crate::tensor::{AccTensor, Dims, QuantTensor};

/// Kernel extent, stride and symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// Stride 1 with padding that preserves the spatial size (odd kernels).
    pub const fn same(kernel: usize) -> Self {
        Self::square(kernel, 1, kernel / 2)
    }

    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Output height and width for an input of `height` × `width`.
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::Shape(format!("degenerate geometry {self:?}")));
        }
        let (ph, pw) = (height + 2 * self.pad, width + 2 * self.pad);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "{}x{} kernel larger than padded {ph}x{pw} input",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// Activation at padded coordinates, zero outside the input.
#[inline]
fn tap(input: &QuantTensor, c: usize, y: isize, x: isize) -> u32 {
    let dims = input.dims();
    if y < 0 || x < 0 || y as usize >= dims.height || x as usize >= dims.width {
        0
    } else {
        u32::from(input.get(c, y as usize, x as usize))
    }
}

fn field<'a>(
    input: &'a QuantTensor,
    channels: std::ops::Range<usize>,
    geom: &'a ConvGeometry,
    oy: usize,
    ox: usize,
) -> impl Iterator<Item = u32> + 'a {
    let y0 = (oy * geom.stride) as isize - geom.pad as isize;
    let x0 = (ox * geom.stride) as isize - geom.pad as isize;
    channels.flat_map(move |c| {
        (0..geom.kernel_h).flat_map(move |ky| {
            (0..geom.kernel_w).map(move |kx| tap(input, c, y0 + ky as isize, x0 + kx as isize))
        })
    })
}

/// Scatters pixel-major `[pixel][channel]` values into a channel-major tensor.
fn transpose_into(pixel_major: &[i32], channels: usize, dims: Dims) -> AccTensor {
    let plane = dims.plane();
    let mut data = vec![0; channels * plane];
    for (p, px) in pixel_major.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + p] = v;
        }
    }
    AccTensor::new(dims, data).expect("sized from dims")
}

/// Full convolution with a bank of binary filters (either mode).
pub fn bconv2d(
    input: &QuantTensor,
    weights: &BinaryWeightSet,
    geom: &ConvGeometry,
) -> Result<AccTensor> {
    let dims = input.dims();
    let lanes = dims.channels * geom.taps();
    if lanes != weights.lanes() {
        return Err(Error::Shape(format!(
            "receptive field of {} input channels x {}x{} is {lanes} lanes, weights have {}",
            dims.channels,
            geom.kernel_h,
            geom.kernel_w,
            weights.lanes()
        )));
    }
    let (oh, ow) = geom.output_hw(dims.height, dims.width)?;
    let out_c = weights.out_channels();
    let mut pixel_major = vec![0i32; oh * ow * out_c];
    if !pixel_major.is_empty() {
        pixel_major
            .par_chunks_mut(ow * out_c)
            .enumerate()
            .try_for_each(|(oy, row)| -> Result<()> {
                let mut block = BitPlaneBlock::zeros(lanes, input.bits())?;
                for (ox, px) in row.chunks_exact_mut(out_c).enumerate() {
                    block.repack(field(input, 0..dims.channels, geom, oy, ox))?;
                    mac_batch_into(&block, weights, px)?;
                }
                Ok(())
            })?;
    }
    Ok(transpose_into(&pixel_major, out_c, Dims::new(out_c, oh, ow)))
}

/// Depthwise convolution: filter `c` of `weights` sees only input channel `c`.
pub fn bdwconv2d(
    input: &QuantTensor,
    weights: &BinaryWeightSet,
    geom: &ConvGeometry,
) -> Result<AccTensor> {
    let dims = input.dims();
    if weights.out_channels() != dims.channels || weights.lanes() != geom.taps() {
        return Err(Error::Shape(format!(
            "depthwise filters are {}x{} lanes, input needs {}x{}",
            weights.out_channels(),
            weights.lanes(),
            dims.channels,
            geom.taps()
        )));
    }
    let (oh, ow) = geom.output_hw(dims.height, dims.width)?;
    let mut data = vec![0i32; dims.channels * oh * ow];
    if !data.is_empty() {
        data.par_chunks_mut(oh * ow)
            .enumerate()
            .try_for_each(|(c, plane)| -> Result<()> {
                let mut block = BitPlaneBlock::zeros(geom.taps(), input.bits())?;
                for (p, slot) in plane.iter_mut().enumerate() {
                    block.repack(field(input, c..c + 1, geom, p / ow, p % ow))?;
                    *slot = mac_channel(&block, weights, c)?.value();
                }
                Ok(())
            })?;
    }
    AccTensor::new(Dims::new(dims.channels, oh, ow), data)
}

/// Number of leading channels a partial convolution convolves.
pub fn partial_channels(channels: usize, split_ratio: f64) -> Result<usize> {
    if !(split_ratio.is_finite() && split_ratio > 0.0 && split_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "split ratio {split_ratio} outside (0, 1]"
        )));
    }
    let conv = (channels as f64 * split_ratio + 1e-9).floor() as usize;
    if conv == 0 {
        return Err(Error::Config(format!(
            "split ratio {split_ratio} of {channels} channels convolves nothing"
        )));
    }
    Ok(conv)
}

/// Partial convolution: the first `⌊C·split_ratio⌋` channels go through a
/// size-preserving binary convolution, the rest are copied through unchanged.
///
/// The result is a mixed tensor: convolved channels hold accumulator values,
/// pass-through channels hold the original activations widened to i32.
pub fn pconv2d(
    input: &QuantTensor,
    weights: &BinaryWeightSet,
    kernel: usize,
    split_ratio: f64,
) -> Result<AccTensor> {
    let dims = input.dims();
    let conv = partial_channels(dims.channels, split_ratio)?;
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "partial convolution needs an odd kernel, got {kernel}"
        )));
    }
    if weights.out_channels() != conv {
        return Err(Error::Shape(format!(
            "partial convolution over {conv} channels has {} filters",
            weights.out_channels()
        )));
    }
    let plane = dims.plane();
    let head = QuantTensor::new(
        Dims::new(conv, dims.height, dims.width),
        input.bits(),
        input.data()[..conv * plane].to_vec(),
    )?;
    let mut data = bconv2d(&head, weights, &ConvGeometry::same(kernel))?.into_data();
    data.extend(input.data()[conv * plane..].iter().map(|&v| i32::from(v)));
    AccTensor::new(dims, data)
}
