//! Bit-plane packing and the two multiply-free MAC kernels.
//!
//! Activations are `J`-bit unsigned integers decomposed into `J` bit-planes;
//! weights are single bits. Mode 0 treats a weight bit as ±1 and uses XNOR,
//! mode 1 treats it as {0,1} and uses AND. The weight-only correction that
//! mode 0 needs is folded into the bias when a [`BinaryWeightSet`] is built,
//! so the kernels in [`mac`] never see it.

pub mod mac;
pub mod pack;
pub mod weights;

pub use mac::{mac_and, mac_batch, mac_batch_into, mac_channel, mac_xnor, MacResult};
pub use pack::{pack_bitplanes, unpack_bitplanes, words_for, BitPlaneBlock, PackedBits, WORD_BITS};
pub use weights::{binarize_weights_sign, fold_bias, gamma, BinaryWeightSet, Mode, Provenance};
