//! Binary weight sets and the offline correction-term folding.
//!
//! A ±1 weight `w` is stored as the bit `w' = (w + 1) / 2`. The XNOR path then
//! over-counts by a constant that depends only on the weights, so that constant
//! is computed here once per output channel and merged into the bias. The MAC
//! kernels only ever see the merged value.

use serde::{Deserialize, Serialize};

use super::pack::{words_for, PackedBits};
use crate::error::{Error, Result};
use crate::tensor::{check_bits, max_value};

/// Operation mode of the bitwise unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Mode {
    /// m = 0: weights are ±1, bits combined with XNOR.
    Xnor = 0,
    /// m = 1: weights are {0,1}, bits combined with AND.
    And = 1,
}

impl Mode {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl From<Mode> for u8 {
    fn from(mode: Mode) -> u8 {
        mode.code()
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(code: u8) -> Result<Mode> {
        match code {
            0 => Ok(Mode::Xnor),
            1 => Ok(Mode::And),
            other => Err(Error::InvalidInput(format!("unknown mode {other}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Where the weight bits came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Sign binarization of real values: bit 1 encodes +1, bit 0 encodes −1.
    Sign,
    /// Native {0,1} masks.
    Mask,
}

impl Provenance {
    pub fn mode(self) -> Mode {
        match self {
            Provenance::Sign => Mode::Xnor,
            Provenance::Mask => Mode::And,
        }
    }
}

/// Maps real weights to ±1 by sign (zero maps to +1) and packs the result.
///
/// Returns the packed bits and the sum of the ±1 weights, `2·popcount − I`.
pub fn binarize_weights_sign(weights: &[f32]) -> Result<(PackedBits, i64)> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if let Some(index) = weights.iter().position(|w| w.is_nan()) {
        return Err(Error::InvalidInput(format!("NaN weight at index {index}")));
    }
    let bits = PackedBits::from_bools(weights.iter().map(|&w| w >= 0.0));
    let sum = 2 * bits.count_ones() as i64 - weights.len() as i64;
    Ok((bits, sum))
}

/// Correction term `((Σw − I) / 2) · (2^J − 1)` for a ±1 weight vector.
pub fn gamma(weight_sum: i64, lanes: usize, bits: u8) -> Result<i64> {
    check_bits(bits)?;
    let lanes = lanes as i64;
    if weight_sum.abs() > lanes || (weight_sum - lanes) % 2 != 0 {
        return Err(Error::Invariant(format!(
            "weight sum {weight_sum} is not reachable with {lanes} ±1 weights"
        )));
    }
    // n·(2^J − 1) as a shift and a subtraction
    let n = (weight_sum - lanes) / 2;
    Ok((n << bits) - n)
}

/// `β + γ`, checked against the 32-bit accumulator.
pub fn fold_bias(beta: i32, weight_sum: i64, lanes: usize, bits: u8) -> Result<i32> {
    let folded = i64::from(beta) + gamma(weight_sum, lanes, bits)?;
    i32::try_from(folded)
        .map_err(|_| Error::Overflow(format!("folded bias {folded} exceeds 32 bits")))
}

/// Verifies `I·(2^J−1) + |bias| < 2^31`, the bound that keeps every MAC in i32.
pub(crate) fn check_accumulator(lanes: usize, bits: u8, bias: i32) -> Result<()> {
    let peak = (lanes as u128) * u128::from(max_value(bits)) + u128::from(bias.unsigned_abs());
    if peak >= 1u128 << 31 {
        return Err(Error::Overflow(format!(
            "{lanes} lanes of {bits}-bit activations with bias {bias} can reach {peak}, \
             beyond the 32-bit accumulator"
        )));
    }
    Ok(())
}

/// Packed 1-bit weights for a bank of output channels, with folded biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryWeightSet {
    mode: Mode,
    bits: u8,
    lanes: usize,
    out_channels: usize,
    words_per_channel: usize,
    packed: Vec<u64>,
    folded_bias: Vec<i32>,
    provenance: Provenance,
}

impl BinaryWeightSet {
    /// Converter path: folds `beta` with the correction term of each row.
    ///
    /// `bits` is the activation width J the set will be applied to.
    pub fn fold(
        rows: &[PackedBits],
        beta: &[i32],
        bits: u8,
        provenance: Provenance,
    ) -> Result<Self> {
        check_bits(bits)?;
        if rows.len() != beta.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                rows.len(),
                beta.len()
            )));
        }
        let lanes = rows.first().map_or(0, PackedBits::lanes);
        let folded = rows
            .iter()
            .zip(beta)
            .map(|(row, &b)| match provenance {
                Provenance::Sign => {
                    let sum = 2 * row.count_ones() as i64 - row.lanes() as i64;
                    fold_bias(b, sum, row.lanes(), bits)
                }
                Provenance::Mask => Ok(b),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(provenance.mode(), bits, lanes, rows, folded, provenance)
    }

    /// Real-valued ±1 weights, one row of `lanes` values per output channel.
    pub fn from_signs(weights: &[f32], lanes: usize, beta: &[i32], bits: u8) -> Result<Self> {
        let rows = split_rows(weights, lanes, beta.len())?
            .map(|row| binarize_weights_sign(row).map(|(packed, _)| packed))
            .collect::<Result<Vec<_>>>()?;
        Self::fold(&rows, beta, bits, Provenance::Sign)
    }

    /// Real-valued weights thresholded to {0,1}: bit = (w > threshold).
    pub fn from_threshold(
        weights: &[f32],
        lanes: usize,
        threshold: f32,
        beta: &[i32],
        bits: u8,
    ) -> Result<Self> {
        let rows = split_rows(weights, lanes, beta.len())?
            .map(|row| {
                if let Some(i) = row.iter().position(|w| w.is_nan()) {
                    return Err(Error::InvalidInput(format!("NaN weight at lane {i}")));
                }
                Ok(PackedBits::from_bools(row.iter().map(|&w| w > threshold)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::fold(&rows, beta, bits, Provenance::Mask)
    }

    /// Loader path: the biases are taken as already folded.
    pub fn from_parts(
        mode: Mode,
        bits: u8,
        rows: &[PackedBits],
        folded_bias: Vec<i32>,
        provenance: Provenance,
    ) -> Result<Self> {
        check_bits(bits)?;
        if provenance.mode() != mode {
            return Err(Error::InvalidInput(format!(
                "{provenance:?} weights cannot run in mode {mode}"
            )));
        }
        if rows.len() != folded_bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                rows.len(),
                folded_bias.len()
            )));
        }
        let lanes = rows.first().map_or(0, PackedBits::lanes);
        Self::assemble(mode, bits, lanes, rows, folded_bias, provenance)
    }

    fn assemble(
        mode: Mode,
        bits: u8,
        lanes: usize,
        rows: &[PackedBits],
        folded_bias: Vec<i32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(row) = rows.iter().find(|r| r.lanes() != lanes) {
            return Err(Error::Shape(format!(
                "ragged weight rows: {} and {lanes} lanes",
                row.lanes()
            )));
        }
        for &b in &folded_bias {
            check_accumulator(lanes, bits, b)?;
        }
        let words_per_channel = words_for(lanes);
        let packed = rows.iter().flat_map(|r| r.words().iter().copied()).collect();
        Ok(BinaryWeightSet {
            mode,
            bits,
            lanes,
            out_channels: rows.len(),
            words_per_channel,
            packed,
            folded_bias,
            provenance,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Activation width the biases were folded for.
    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn words_per_channel(&self) -> usize {
        self.words_per_channel
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    #[inline]
    pub fn channel_words(&self, c: usize) -> &[u64] {
        &self.packed[c * self.words_per_channel..(c + 1) * self.words_per_channel]
    }

    pub fn row(&self, c: usize) -> PackedBits {
        PackedBits::from_words(self.lanes, self.channel_words(c).to_vec())
            .expect("rows are validated at construction")
    }

    pub fn folded_bias(&self) -> &[i32] {
        &self.folded_bias
    }

    /// Recovers β per channel using `γ = −(I − popcount(w'))·(2^J − 1)`.
    ///
    /// This is the closed form, evaluated from the packed bits alone; mode 1
    /// returns the stored bias unchanged.
    pub fn unfolded_bias(&self) -> Vec<i64> {
        (0..self.out_channels)
            .map(|c| {
                let bias = i64::from(self.folded_bias[c]);
                match self.mode {
                    Mode::And => bias,
                    Mode::Xnor => {
                        let ones: i64 = self
                            .channel_words(c)
                            .iter()
                            .map(|w| i64::from(w.count_ones()))
                            .sum();
                        let gamma = -(self.lanes as i64 - ones) * i64::from(max_value(self.bits));
                        bias - gamma
                    }
                }
            })
            .collect()
    }
}

fn split_rows(
    weights: &[f32],
    lanes: usize,
    channels: usize,
) -> Result<impl Iterator<Item = &[f32]>> {
    if lanes == 0 || weights.len() != lanes * channels {
        return Err(Error::Shape(format!(
            "{} weights cannot form {channels} rows of {lanes} lanes",
            weights.len()
        )));
    }
    Ok(weights.chunks_exact(lanes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_binarization_examples() {
        let (bits, sum) = binarize_weights_sign(&[0.5, -0.2]).unwrap();
        assert_eq!(bits.iter().collect::<Vec<_>>(), vec![true, false]);
        assert_eq!(sum, 0);

        let (bits, sum) = binarize_weights_sign(&[-1.0, -1.0, -1.0]).unwrap();
        assert_eq!(bits.count_ones(), 0);
        assert_eq!(sum, -3);

        let (bits, sum) = binarize_weights_sign(&[0.0]).unwrap();
        assert!(bits.get(0));
        assert_eq!(sum, 1);

        // negative zero compares equal to zero, so it also maps to +1
        let (bits, _) = binarize_weights_sign(&[-0.0]).unwrap();
        assert!(bits.get(0));
    }

    #[test]
    fn sign_binarization_rejects_nan_and_empty() {
        assert!(matches!(
            binarize_weights_sign(&[1.0, f32::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(binarize_weights_sign(&[]).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(4, 4, 8).unwrap(), 0);
        assert_eq!(gamma(-1, 3, 8).unwrap(), -510);
        assert_eq!(gamma(0, 2, 2).unwrap(), -3);
    }

    #[test]
    fn gamma_rejects_parity_violation() {
        assert!(matches!(gamma(1, 4, 8), Err(Error::Invariant(_))));
        assert!(matches!(gamma(6, 4, 8), Err(Error::Invariant(_))));
    }

    #[test]
    fn fold_bias_examples() {
        assert_eq!(fold_bias(10, 4, 4, 8).unwrap(), 10);
        assert_eq!(fold_bias(0, 0, 2, 2).unwrap(), -3);
        assert_eq!(fold_bias(-510, -1, 3, 8).unwrap(), -1020);
    }

    #[test]
    fn fold_bias_overflow() {
        let lanes = 1 << 20;
        let err = fold_bias(i32::MIN, -(lanes as i64), lanes, 8).unwrap_err();
        assert!(matches!(err, Error::Overflow(_)));
    }

    #[test]
    fn accumulator_bound_is_enforced() {
        // 2^23 lanes of 8-bit values reach 2^31 - 2^23
        let wide = vec![PackedBits::zeros(1 << 23)];
        assert!(BinaryWeightSet::fold(&wide, &[0], 8, Provenance::Mask).is_ok());
        assert!(matches!(
            BinaryWeightSet::fold(&wide, &[1 << 23], 8, Provenance::Mask),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn all_positive_layer_keeps_beta() {
        let set = BinaryWeightSet::from_signs(&[0.3, 1.0, 0.0, 2.0], 4, &[17], 8).unwrap();
        assert_eq!(set.folded_bias(), &[17]);
        assert_eq!(set.mode(), Mode::Xnor);
    }

    #[test]
    fn mask_weights_are_not_folded() {
        let set =
            BinaryWeightSet::from_threshold(&[0.9, 0.1, -1.0, 0.7], 4, 0.5, &[-4], 8).unwrap();
        assert_eq!(set.mode(), Mode::And);
        assert_eq!(set.folded_bias(), &[-4]);
        assert_eq!(set.row(0).iter().collect::<Vec<_>>(), vec![true, false, false, true]);
    }

    #[test]
    fn provenance_must_match_mode() {
        let rows = vec![PackedBits::from_bools([true])];
        assert!(BinaryWeightSet::from_parts(Mode::And, 8, &rows, vec![0], Provenance::Sign).is_err());
        assert!(BinaryWeightSet::from_parts(Mode::Xnor, 8, &rows, vec![0], Provenance::Sign).is_ok());
    }

    #[test]
    fn rejects_ragged_rows_and_short_blobs() {
        let rows = vec![PackedBits::zeros(3), PackedBits::zeros(4)];
        assert!(BinaryWeightSet::fold(&rows, &[0, 0], 8, Provenance::Sign).is_err());
        assert!(BinaryWeightSet::from_signs(&[1.0; 7], 4, &[0, 0], 8).is_err());
    }

    proptest! {
        #[test]
        fn gamma_closed_form(signs in proptest::collection::vec(any::<bool>(), 1..300), bits in 1u8..=16) {
            let weights: Vec<f32> = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
            let (packed, sum) = binarize_weights_sign(&weights).unwrap();
            let lanes = weights.len() as i64;
            let closed = -(lanes - packed.count_ones() as i64) * i64::from(max_value(bits));
            prop_assert_eq!(gamma(sum, weights.len(), bits).unwrap(), closed);
        }

        #[test]
        fn unfolding_recovers_beta(
            signs in proptest::collection::vec(any::<bool>(), 1..200),
            beta in -10_000i32..10_000,
        ) {
            let weights: Vec<f32> = signs.iter().map(|&s| if s { 0.5 } else { -0.5 }).collect();
            let set = BinaryWeightSet::from_signs(&weights, weights.len(), &[beta], 8).unwrap();
            prop_assert_eq!(set.unfolded_bias(), vec![i64::from(beta)]);
        }
    }
}
