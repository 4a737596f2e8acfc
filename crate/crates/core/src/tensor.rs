//! Dense channel-major tensors shared by the kernels, the runtime and the oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widest activation supported by the engine.
pub const MAX_BITS: u8 = 16;
/// Activation width used when none is given.
pub const DEFAULT_BITS: u8 = 8;

/// Tensor extent in (channels, height, width) order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Dims {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidInput(format!(
            "bit width {bits} outside 1..={MAX_BITS}"
        )));
    }
    Ok(())
}

/// Largest value representable with `bits` unsigned bits.
#[inline]
pub const fn max_value(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Multi-bit unsigned activations, `bits` wide, stored row-major in C,H,W order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTensor {
    dims: Dims,
    bits: u8,
    data: Vec<u16>,
}

impl QuantTensor {
    pub fn new(dims: Dims, bits: u8, data: Vec<u16>) -> Result<Self> {
        check_bits(bits)?;
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} values supplied for a {dims} tensor",
                data.len()
            )));
        }
        let limit = max_value(bits);
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| u32::from(v) > limit)
        {
            return Err(Error::Range {
                index,
                value: value.into(),
                bits,
            });
        }
        Ok(QuantTensor { dims, bits, data })
    }

    pub fn zeros(dims: Dims, bits: u8) -> Result<Self> {
        Self::new(dims, bits, vec![0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u16 {
        self.data[self.dims.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[u16] {
        let plane = self.dims.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Widens every element into an accumulator tensor.
    pub fn to_acc(&self) -> AccTensor {
        AccTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| i32::from(v)).collect(),
        }
    }
}

/// Signed 32-bit accumulator values, the output of the MAC and adder arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccTensor {
    dims: Dims,
    data: Vec<i32>,
}

impl AccTensor {
    pub fn new(dims: Dims, data: Vec<i32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} values supplied for a {dims} tensor",
                data.len()
            )));
        }
        Ok(AccTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        AccTensor {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[self.dims.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[i32] {
        let plane = self.dims.plane();
        &self.data[c * plane..(c + 1) * plane]
    }
}
