//! Decoder toolkit for binary linear codes: plain and weighted (trainable)
//! belief propagation, stream-based training-data samplers, and a BER/FER
//! Monte-Carlo harness over the AWGN channel.
//!
//! The pieces compose into one pipeline: a [`code::CodeSpec`] parsed from an
//! alist file defines the Tanner graph; [`channel`] turns codewords into LLR
//! words; [`bp`] decodes them and [`wbp`] is the unrolled, weighted variant
//! whose weights [`training`] fits with the BCE multiloss, hand-written
//! reverse-mode gradients and RMSProp; [`sampling`] chooses which freshly
//! generated words enter each training batch; [`eval`] measures BER/FER
//! curves.
//!
//! # Example
//!
//! ```
//! use rand::SeedableRng;
//! use wbp_core::bp::{bp_decode, DecoderConfig};
//! use wbp_core::channel::{self, LlrWord};
//! use wbp_core::code::{parse_dense, BitWord};
//!
//! // A (7,4) Hamming code given as a dense parity-check matrix.
//! let code = parse_dense(
//!     "3 7\n\
//!      1 0 0 1 1 0 1\n\
//!      0 1 0 1 0 1 1\n\
//!      0 0 1 0 1 1 1\n",
//! )?;
//!
//! // Send the zero codeword at 4 dB and decode the received LLRs.
//! let sigma = channel::snr_to_sigma(4.0, code.rate())?;
//! let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
//! let z: LlrWord = channel::zero_codeword_llr(code.n(), sigma, &mut rng);
//! let result = bp_decode(&code, &z, &DecoderConfig::default())?;
//! assert_eq!(result.bits, BitWord::zeros(7));
//! # Ok::<(), wbp_core::Error>(())
//! ```

pub mod bp;
pub mod channel;
pub mod code;
pub mod error;
pub mod eval;
mod fmt;
mod par;
pub mod rng;
pub mod sampling;
pub mod training;
pub mod wbp;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
