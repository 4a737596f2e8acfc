use crate::error::{Error, Result};
use crate::tensor::{check_bits, max_value};

/// Lanes stored per machine word.
pub const WORD_BITS: usize = 64;

#[inline]
pub const fn words_for(lanes: usize) -> usize {
    lanes.div_ceil(WORD_BITS)
}

/// Mask with the first `lanes` bits set, spread over `words_for(lanes)` words.
pub fn prefix_mask(lanes: usize) -> Vec<u64> {
    let mut mask = vec![u64::MAX; words_for(lanes)];
    let tail = lanes % WORD_BITS;
    if tail != 0 {
        if let Some(last) = mask.last_mut() {
            *last = (1u64 << tail) - 1;
        }
    }
    mask
}

/// A packed vector of single bits. Lane `k` lives at bit `k % 64` of word `k / 64`;
/// bits at or beyond `lanes` are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PackedBits {
    lanes: usize,
    words: Vec<u64>,
}

impl PackedBits {
    pub fn zeros(lanes: usize) -> Self {
        PackedBits {
            lanes,
            words: vec![0; words_for(lanes)],
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut lanes = 0;
        for bit in bits {
            if lanes % WORD_BITS == 0 {
                words.push(0);
            }
            if bit {
                words[lanes / WORD_BITS] |= 1 << (lanes % WORD_BITS);
            }
            lanes += 1;
        }
        PackedBits { lanes, words }
    }

    /// Wraps raw words, rejecting set bits past the last lane.
    pub fn from_words(lanes: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(lanes) {
            return Err(Error::Shape(format!(
                "{} words supplied for {lanes} lanes, expected {}",
                words.len(),
                words_for(lanes)
            )));
        }
        let mask = prefix_mask(lanes);
        if words.iter().zip(&mask).any(|(w, m)| w & !m != 0) {
            return Err(Error::InvalidInput(format!(
                "set bits beyond lane {lanes} in packed word array"
            )));
        }
        Ok(PackedBits { lanes, words })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, lane: usize) -> bool {
        assert!(lane < self.lanes, "lane {lane} out of {}", self.lanes);
        self.words[lane / WORD_BITS] >> (lane % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, lane: usize, bit: bool) {
        assert!(lane < self.lanes, "lane {lane} out of {}", self.lanes);
        let word = &mut self.words[lane / WORD_BITS];
        let flag = 1u64 << (lane % WORD_BITS);
        if bit {
            *word |= flag;
        } else {
            *word &= !flag;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.lanes).map(|lane| self.get(lane))
    }
}

/// The J bit-planes of one reduction vector of activations.
///
/// Plane `j` holds bit `j` of every activation, packed like [`PackedBits`].
/// All planes share one word count and one prefix `valid_mask`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlaneBlock {
    lanes: usize,
    bits: u8,
    words_per_plane: usize,
    planes: Vec<u64>,
    valid_mask: Vec<u64>,
}

impl BitPlaneBlock {
    /// An all-zero block; the buffer can be refilled with [`BitPlaneBlock::repack`].
    pub fn zeros(lanes: usize, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let words_per_plane = words_for(lanes);
        Ok(BitPlaneBlock {
            lanes,
            bits,
            words_per_plane,
            planes: vec![0; words_per_plane * usize::from(bits)],
            valid_mask: prefix_mask(lanes),
        })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn words_per_plane(&self) -> usize {
        self.words_per_plane
    }

    #[inline]
    pub fn plane(&self, j: usize) -> &[u64] {
        &self.planes[j * self.words_per_plane..(j + 1) * self.words_per_plane]
    }

    pub fn valid_mask(&self) -> &[u64] {
        &self.valid_mask
    }

    fn store_chunk(&mut self, at: usize, chunk: &[u32; WORD_BITS], wpp: usize) {
        const LOW_BITS: u64 = 0x0101_0101_0101_0101;
        // lanes 8g..8g+8 side by side as bytes, low and high halves of each value
        let mut lo = [0u64; 8];
        let mut hi = [0u64; 8];
        for (i, &v) in chunk.iter().enumerate() {
            let at = (i % 8) << 3;
            lo[i / 8] |= u64::from(v & 0xff) << at;
            hi[i / 8] |= u64::from(v >> 8 & 0xff) << at;
        }
        for j in 0..usize::from(self.bits) {
            let bytes = if j < 8 { &lo } else { &hi };
            let mut word = 0u64;
            for (g, &x) in bytes.iter().enumerate() {
                // gather bit 0 of each byte into the low byte
                let mut t = x >> (j % 8) & LOW_BITS;
                t |= t >> 7;
                t |= t >> 14;
                t |= t >> 28;
                word |= (t & 0xff) << (g << 3);
            }
            self.planes[j * wpp + at] = word;
        }
    }

    /// Overwrites the planes with the decomposition of `values`, reusing the buffers.
    pub fn repack<I>(&mut self, values: I) -> Result<()>
    where
        I: IntoIterator<Item = u32>,
    {
        let limit = max_value(self.bits);
        let wpp = self.words_per_plane;
        // 64 lanes at a time, transposed into one word per plane
        let mut chunk = [0u32; WORD_BITS];
        let mut count = 0;
        for (index, value) in values.into_iter().enumerate() {
            if index >= self.lanes {
                return Err(Error::Shape(format!(
                    "more than {} values supplied to a block",
                    self.lanes
                )));
            }
            if value > limit {
                return Err(Error::Range {
                    index,
                    value,
                    bits: self.bits,
                });
            }
            chunk[index % WORD_BITS] = value;
            count += 1;
            if count % WORD_BITS == 0 {
                self.store_chunk(count / WORD_BITS - 1, &chunk, wpp);
            }
        }
        if count % WORD_BITS != 0 && count <= self.lanes {
            chunk[count % WORD_BITS..].fill(0);
            self.store_chunk(count / WORD_BITS, &chunk, wpp);
        }
        if count != self.lanes {
            return Err(Error::Shape(format!(
                "{count} values supplied to a block of {} lanes",
                self.lanes
            )));
        }
        Ok(())
    }
}

/// Decomposes `activations` into `bits` bit-planes.
pub fn pack_bitplanes(activations: &[u32], bits: u8) -> Result<BitPlaneBlock> {
    let mut block = BitPlaneBlock::zeros(activations.len(), bits)?;
    block.repack(activations.iter().copied())?;
    Ok(block)
}

/// Recombines each lane as the weighted sum of its plane bits.
pub fn unpack_bitplanes(block: &BitPlaneBlock) -> Vec<u32> {
    (0..block.lanes)
        .map(|lane| {
            let word = lane / WORD_BITS;
            let shift = lane % WORD_BITS;
            (0..usize::from(block.bits)).fold(0u32, |acc, j| {
                acc | (((block.plane(j)[word] >> shift) & 1) as u32) << j
            })
        })
        .collect()
}
