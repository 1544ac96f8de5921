//! Plain (unweighted) loopy belief propagation with flooding schedule,
//! message clipping and syndrome-based early termination.
//!
//! Messages live in the LLR domain. One iteration is a variable-to-check
//! layer followed by a check-to-variable layer; the variable-to-check sums
//! and the check-to-variable outputs are both clipped to `[-clip, +clip]`,
//! and arctanh arguments are clamped into `[-1+g, 1-g]`. After every
//! iteration the full marginalization (summing all check neighbors) is
//! computed; with early termination enabled the decoder stops as soon as its
//! hard decision has a zero syndrome.

use crate::channel::LlrWord;
use crate::code::{BitWord, CodeSpec};
use crate::error::{Error, Result};

/// Iteration count, clipping bound and guard settings shared by the plain and
/// weighted decoders.
#[derive(Debug, Clone, Copy)]
pub struct DecoderConfig {
    /// Number of BP iterations.
    pub tau: usize,
    /// LLR-domain message magnitude bound.
    pub clip: f64,
    /// Stop once the running hard decision satisfies all checks.
    pub early_termination: bool,
    /// Clamp arctanh arguments into [-1+guard, 1-guard].
    pub arctanh_guard: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            tau: 5,
            clip: 10.0,
            early_termination: true,
            arctanh_guard: 1e-7,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        if !(self.arctanh_guard > 0.0 && self.arctanh_guard < 1e-3) {
            return Err(Error::Config(format!(
                "arctanh_guard must be in (0, 1e-3), got {}",
                self.arctanh_guard
            )));
        }
        Ok(())
    }

    pub fn without_early_termination(self) -> Self {
        DecoderConfig {
            early_termination: false,
            ..self
        }
    }
}

/// Outcome of a decode: hard decisions, per-bit posterior LLRs, iterations
/// actually executed and whether a zero-syndrome word was reached.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub bits: BitWord,
    /// Posterior LLRs of the final marginalization (positive favors bit 0).
    pub soft: Vec<f64>,
    pub iterations_used: usize,
    /// True iff `bits` satisfies every parity check.
    pub converged: bool,
}

impl DecodeResult {
    /// Success indicator: the decoded word equals the transmitted one.
    pub fn succeeded(&self, sent: &BitWord) -> bool {
        self.bits == *sent
    }
}

/// Anything that decodes an LLR word; implemented by the plain and weighted
/// decoders so samplers and the Monte-Carlo harness can take either.
pub trait Decoder: Sync {
    fn decode(&self, z: &LlrWord) -> Result<DecodeResult>;
}

/// Plain BP over a shared code.
#[derive(Debug, Clone, Copy)]
pub struct BpDecoder<'a> {
    pub code: &'a CodeSpec,
    pub cfg: DecoderConfig,
}

impl<'a> BpDecoder<'a> {
    pub fn new(code: &'a CodeSpec, cfg: DecoderConfig) -> Self {
        BpDecoder { code, cfg }
    }
}

impl Decoder for BpDecoder<'_> {
    fn decode(&self, z: &LlrWord) -> Result<DecodeResult> {
        bp_decode(self.code, z, &self.cfg)
    }
}

/// `out[i] = product of vals[j] for j != i`, computed by prefix/suffix passes
/// (no division). Both decoders route their check-node products through this
/// so that all-ones weighted BP reproduces plain BP bit-for-bit.
pub(crate) fn exclusive_products(vals: &[f64], out: &mut [f64]) {
    debug_assert_eq!(vals.len(), out.len());
    let mut acc = 1.0;
    for (o, &v) in out.iter_mut().zip(vals) {
        *o = acc;
        acc *= v;
    }
    acc = 1.0;
    for (o, &v) in out.iter_mut().zip(vals).rev() {
        *o *= acc;
        acc *= v;
    }
}

pub(crate) fn hard_bits(posterior: &[f64]) -> Vec<u8> {
    posterior.iter().map(|&p| u8::from(p < 0.0)).collect()
}

/// Decode `z` with plain BP.
pub fn bp_decode(code: &CodeSpec, z: &LlrWord, cfg: &DecoderConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    if z.len() != code.n() {
        return Err(Error::LengthMismatch {
            expected: code.n(),
            got: z.len(),
        });
    }
    let n = code.n();
    let num_edges = code.num_edges();
    let zs = z.as_slice();
    let guard = 1.0 - cfg.arctanh_guard;

    // All messages start at zero.
    let mut u = vec![0.0f64; num_edges]; // tanh(v->c message / 2)
    let mut c2v = vec![0.0f64; num_edges]; // LLR-domain c->v messages
    let mut posterior = vec![0.0f64; n];
    let max_check_deg = (0..code.num_checks())
        .map(|c| code.check_neighbors(c).len())
        .max()
        .unwrap_or(0);
    let mut vals = vec![0.0f64; max_check_deg];
    let mut prods = vec![0.0f64; max_check_deg];

    for iter in 1..=cfg.tau {
        // Variable-to-check: clipped sum of channel LLR and the other
        // incoming check messages, stored in the tanh domain.
        for v in 0..n {
            let range = code.var_edge_range(v);
            for a in range.clone() {
                let mut s = zs[v];
                for b in range.clone() {
                    if b != a {
                        s += c2v[b];
                    }
                }
                let sc = s.clamp(-cfg.clip, cfg.clip);
                u[a] = (0.5 * sc).tanh();
            }
        }

        // Check-to-variable: exclusive product, guarded arctanh, clip.
        for c in 0..code.num_checks() {
            let ids = code.check_edge_ids(c);
            let d = ids.len();
            for (slot, &id) in vals[..d].iter_mut().zip(ids) {
                *slot = u[id];
            }
            exclusive_products(&vals[..d], &mut prods[..d]);
            for (&id, &p) in ids.iter().zip(&prods[..d]) {
                let r = 2.0 * p.clamp(-guard, guard).atanh();
                c2v[id] = r.clamp(-cfg.clip, cfg.clip);
            }
        }

        // Full marginalization over all check neighbors.
        for v in 0..n {
            let mut s = zs[v];
            for b in code.var_edge_range(v) {
                s += c2v[b];
            }
            posterior[v] = s;
        }
        if posterior.iter().any(|p| p.is_nan()) {
            return Err(Error::Numeric(format!(
                "NaN in BP marginals at iteration {iter}"
            )));
        }

        if cfg.early_termination {
            let bits = hard_bits(&posterior);
            if code.syndrome_is_zero(&bits) {
                return Ok(DecodeResult {
                    bits: BitWord::new(bits),
                    soft: posterior,
                    iterations_used: iter,
                    converged: true,
                });
            }
        }
    }

    let bits = hard_bits(&posterior);
    let converged = code.syndrome_is_zero(&bits);
    Ok(DecodeResult {
        bits: BitWord::new(bits),
        soft: posterior,
        iterations_used: cfg.tau,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code;
    use crate::testing;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        assert!(DecoderConfig {
            tau: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecoderConfig {
            clip: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecoderConfig {
            arctanh_guard: 0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn spc_all_reliable_terminates_after_one_iteration() {
        let code = testing::spc(3);
        let res = bp_decode(
            &code,
            &LlrWord(vec![2.0, 2.0, 2.0]),
            &DecoderConfig::default(),
        )
        .unwrap();
        assert_eq!(res.bits, BitWord::zeros(3));
        assert_eq!(res.iterations_used, 1);
        assert!(res.converged);
    }

    #[test]
    fn repetition_2_1_hand_computed_iteration() {
        // H = [[1,1]], z = (+1, -3): the check relays each bit's evidence to
        // the other, so both posteriors land at -2 and the word decodes to 11.
        let code = testing::spc(2);
        let cfg = DecoderConfig {
            tau: 1,
            ..Default::default()
        };
        let res = bp_decode(&code, &LlrWord(vec![1.0, -3.0]), &cfg).unwrap();
        assert!((res.soft[0] + 2.0).abs() < 1e-9, "{}", res.soft[0]);
        assert!((res.soft[1] + 2.0).abs() < 1e-9, "{}", res.soft[1]);
        assert_eq!(res.bits.bits(), &[1, 1]);
        assert!(res.converged);
    }

    #[test]
    fn spc_3_2_hand_computed_posterior() {
        // posterior_3 = -1 + 2 artanh(tanh(1)^2) ~= +0.325, so the weak
        // negative bit is pulled back to 0.
        let code = testing::spc(3);
        let cfg = DecoderConfig {
            tau: 1,
            ..Default::default()
        };
        let res = bp_decode(&code, &LlrWord(vec![2.0, 2.0, -1.0]), &cfg).unwrap();
        let expect = -1.0 + 2.0 * (1f64.tanh() * 1f64.tanh()).atanh();
        assert!((res.soft[2] - expect).abs() < 1e-12);
        assert!((res.soft[2] - 0.32500).abs() < 1e-4);
        assert_eq!(res.bits, BitWord::zeros(3));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let code = testing::spc(3);
        assert!(bp_decode(&code, &LlrWord(vec![1.0]), &DecoderConfig::default()).is_err());
    }

    #[test]
    fn decode_is_deterministic() {
        let code = testing::hamming_7_4();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..50 {
            let z = LlrWord((0..7).map(|_| rng.random_range(-4.0..4.0)).collect());
            let a = bp_decode(&code, &z, &DecoderConfig::default()).unwrap();
            let b = bp_decode(&code, &z, &DecoderConfig::default()).unwrap();
            assert_eq!(a.bits, b.bits);
            assert_eq!(a.soft, b.soft);
            assert_eq!(a.iterations_used, b.iterations_used);
        }
    }

    #[test]
    fn early_termination_returns_valid_codewords() {
        let code = testing::hamming_7_4();
        let cfg = DecoderConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..300 {
            let z = LlrWord((0..7).map(|_| rng.random_range(-3.0..3.0)).collect());
            let res = bp_decode(&code, &z, &cfg).unwrap();
            if res.converged {
                assert!(code::syndrome(&code, &res.bits).unwrap().is_zero());
                assert!(res.iterations_used <= cfg.tau);
            } else {
                assert_eq!(res.iterations_used, cfg.tau);
            }
        }
    }

    #[test]
    fn codeword_support_negation_permutes_output() {
        // Flipping z on the support of a codeword flips the decoded bits and
        // posterior signs on exactly that support.
        let code = testing::hamming_7_4();
        let cw = vec![1u8, 0, 1, 1, 0, 1, 0]; // parity rows all even
        assert!(code.syndrome_is_zero(&cw));
        let cfg = DecoderConfig::default().without_early_termination();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..100 {
            let z: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let flipped: Vec<f64> = z
                .iter()
                .zip(&cw)
                .map(|(&zi, &ci)| if ci == 1 { -zi } else { zi })
                .collect();
            let a = bp_decode(&code, &LlrWord(z), &cfg).unwrap();
            let b = bp_decode(&code, &LlrWord(flipped), &cfg).unwrap();
            for v in 0..7 {
                let want = if cw[v] == 1 { -a.soft[v] } else { a.soft[v] };
                assert!((b.soft[v] - want).abs() < 1e-12, "bit {v}");
                assert_eq!(b.bits[v], a.bits[v] ^ cw[v]);
            }
        }
    }

    #[test]
    fn full_negation_flips_even_spc_posteriors() {
        let code = testing::spc(4);
        let cfg = DecoderConfig::default().without_early_termination();
        let z: Vec<f64> = vec![0.7, -1.1, 2.0, 0.4];
        let a = bp_decode(&code, &LlrWord(z.clone()), &cfg).unwrap();
        let neg = LlrWord(z.iter().map(|&x| -x).collect());
        let b = bp_decode(&code, &neg, &cfg).unwrap();
        for v in 0..4 {
            assert!((a.soft[v] + b.soft[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn exclusive_products_matches_naive() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = rng.random_range(1..8);
            let vals: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; d];
            exclusive_products(&vals, &mut out);
            for i in 0..d {
                let naive: f64 = vals
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &v)| v)
                    .product();
                assert!((out[i] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipping_bounds_messages_and_posteriors_stay_finite() {
        let code = testing::hamming_7_4();
        let cfg = DecoderConfig::default();
        let z = LlrWord(vec![500.0, -500.0, 500.0, 500.0, -500.0, 500.0, -500.0]);
        let res = bp_decode(&code, &z, &cfg).unwrap();
        assert!(res.soft.iter().all(|p| p.is_finite()));
    }
}
