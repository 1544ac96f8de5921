//! BPSK modulation, AWGN noise, LLR computation and hard decision.
//!
//! Conventions: bit 0 maps to +1, bit 1 to -1, and LLRs are
//! `z_v = log P(c_v=0|y_v) / P(c_v=1|y_v) = 2 y_v / sigma^2`, so a positive
//! LLR favors bit 0. SNR is Eb/N0 in dB with `sigma = 1/sqrt(2 R 10^(snr/10))`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::code::BitWord;
use crate::error::{Error, Result};

/// Real channel symbols (BPSK plus noise), length N.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedWord(pub Vec<f64>);

impl ReceivedWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-bit log-likelihood ratios, length N. Positive favors bit 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrWord(pub Vec<f64>);

impl LlrWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// An AWGN channel at a fixed SNR for a code of the given rate.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSpec {
    pub snr_db: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl ChannelSpec {
    pub fn new(snr_db: f64, rate: f64) -> Result<Self> {
        let sigma = snr_to_sigma(snr_db, rate)?;
        Ok(ChannelSpec {
            snr_db,
            rate,
            sigma,
        })
    }
}

/// Noise standard deviation for an Eb/N0 of `snr_db` at code rate `rate`.
pub fn snr_to_sigma(snr_db: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!("rate must be in (0, 1], got {rate}")));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    Ok(1.0 / (2.0 * rate * 10f64.powf(snr_db / 10.0)).sqrt())
}

/// BPSK mapping: bit 0 -> +1, bit 1 -> -1.
pub fn modulate_bpsk(c: &BitWord) -> ReceivedWord {
    ReceivedWord(
        c.bits()
            .iter()
            .map(|&b| if b == 0 { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// Add i.i.d. Gaussian noise with standard deviation `sigma`.
pub fn awgn<R: Rng + ?Sized>(x: &ReceivedWord, sigma: f64, rng: &mut R) -> ReceivedWord {
    ReceivedWord(
        x.0.iter()
            .map(|&xi| xi + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Channel LLRs for AWGN with known sigma: `z_v = 2 y_v / sigma^2`.
pub fn llr(y: &ReceivedWord, sigma: f64) -> Result<LlrWord> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let scale = 2.0 / (sigma * sigma);
    Ok(LlrWord(y.0.iter().map(|&yi| scale * yi).collect()))
}

/// Hard decision: bit 1 iff z_v < 0; the tie z_v = 0 maps to bit 0.
pub fn hard_decision(z: &LlrWord) -> BitWord {
    BitWord::new(z.0.iter().map(|&zi| if zi < 0.0 { 1 } else { 0 }).collect())
}

/// Draw one zero-codeword LLR word of length `n` at noise level `sigma`.
///
/// Composes `modulate_bpsk(0) -> awgn -> llr`; this is the sampling primitive
/// used by training, the samplers and the Monte-Carlo harness (the zero
/// codeword suffices by symmetry).
pub fn zero_codeword_llr<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> LlrWord {
    let scale = 2.0 / (sigma * sigma);
    LlrWord(
        (0..n)
            .map(|_| scale * (1.0 + sigma * rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
}
