//! Integration checks of the decoding stack: brute-force MAP oracle on
//! cycle-free codes, plain/weighted equivalence, and the shipped code files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use wbp_core::bp::{bp_decode, DecoderConfig};
use wbp_core::channel::{self, LlrWord};
use wbp_core::code::{parse_alist, CodeSpec};
use wbp_core::wbp::{wbp_decode, WbpWeights, WeightTying};

fn spc(n: usize) -> CodeSpec {
    CodeSpec::from_h(vec![vec![1u8; n]]).unwrap()
}

fn repetition_3_1() -> CodeSpec {
    CodeSpec::from_h(vec![vec![1, 1, 0], vec![0, 1, 1]]).unwrap()
}

fn hamming_7_4() -> CodeSpec {
    CodeSpec::from_h(vec![
        vec![1, 0, 0, 1, 1, 0, 1],
        vec![0, 1, 0, 1, 0, 1, 1],
        vec![0, 0, 1, 0, 1, 1, 1],
    ])
    .unwrap()
}

/// All codewords of a small code by exhaustive enumeration.
fn enumerate_codewords(code: &CodeSpec) -> Vec<Vec<u8>> {
    let n = code.n();
    assert!(n <= 20, "enumeration oracle is for small codes");
    (0u32..1 << n)
        .map(|x| (0..n).map(|v| ((x >> v) & 1) as u8).collect::<Vec<u8>>())
        .filter(|bits| code.syndrome_is_zero(bits))
        .collect()
}

fn log_sigmoid(t: f64) -> f64 {
    // ln sigma(t) = -softplus(-t), stable at both ends
    if t > 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Exact bitwise-MAP posterior LLRs by summing over all codewords.
fn map_posteriors(codewords: &[Vec<u8>], z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let logw: Vec<f64> = codewords
        .iter()
        .map(|cw| {
            cw.iter()
                .zip(z)
                .map(|(&b, &zv)| log_sigmoid(if b == 0 { zv } else { -zv }))
                .sum()
        })
        .collect();
    (0..n)
        .map(|v| {
            let zeros: Vec<f64> = codewords
                .iter()
                .zip(&logw)
                .filter(|(cw, _)| cw[v] == 0)
                .map(|(_, &w)| w)
                .collect();
            let ones: Vec<f64> = codewords
                .iter()
                .zip(&logw)
                .filter(|(cw, _)| cw[v] == 1)
                .map(|(_, &w)| w)
                .collect();
            log_sum_exp(&zeros) - log_sum_exp(&ones)
        })
        .collect()
}

fn assert_tree_exact(code: &CodeSpec, words: usize, seed: u64) {
    let codewords = enumerate_codewords(code);
    let cfg = DecoderConfig {
        early_termination: false,
        ..Default::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..words {
        // |z| <= 2 keeps every message far from the clip bound.
        let z: Vec<f64> = (0..code.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let exact = map_posteriors(&codewords, &z);
        let res = bp_decode(code, &LlrWord(z), &cfg).unwrap();
        for (a, b) in res.soft.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max |BP - MAP| = {worst:.3e}");
}

#[test]
fn bp_is_exact_on_single_parity_check_trees() {
    assert_tree_exact(&spc(3), 1000, 101);
    assert_tree_exact(&spc(5), 300, 102);
}

#[test]
fn bp_is_exact_on_the_repetition_tree() {
    assert_tree_exact(&repetition_3_1(), 1000, 103);
}

#[test]
fn bp_is_not_map_on_the_loopy_hamming_graph() {
    // Sanity check that the oracle measures something: on a graph with
    // cycles the posteriors genuinely differ.
    let code = hamming_7_4();
    let codewords = enumerate_codewords(&code);
    assert_eq!(codewords.len(), 16);
    let cfg = DecoderConfig {
        early_termination: false,
        ..Default::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    let mut max_gap = 0.0f64;
    for _ in 0..200 {
        let z: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let exact = map_posteriors(&codewords, &z);
        let res = bp_decode(&code, &LlrWord(z), &cfg).unwrap();
        for (a, b) in res.soft.iter().zip(&exact) {
            max_gap = max_gap.max((a - b).abs());
        }
    }
    assert!(max_gap > 1e-3, "loopy BP unexpectedly exact: {max_gap:.3e}");
}

#[test]
fn weighted_forward_with_ones_equals_bp_on_trees_and_loops() {
    let cfg = DecoderConfig::default();
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    for code in [spc(4), repetition_3_1(), hamming_7_4()] {
        let weights = WbpWeights::init(&code, cfg.tau, WeightTying::Full);
        for _ in 0..500 {
            let sigma = channel::snr_to_sigma(rng.random_range(0.0..8.0), code.rate()).unwrap();
            let z = channel::zero_codeword_llr(code.n(), sigma, &mut rng);
            let a = bp_decode(&code, &z, &cfg).unwrap();
            let b = wbp_decode(&weights, &code, &z, &cfg).unwrap();
            assert_eq!(a.bits, b.bits);
            assert_eq!(a.soft, b.soft);
        }
    }
}

fn load_asset(name: &str) -> CodeSpec {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../codes")
        .join(name);
    let text = std::fs::read_to_string(path).unwrap();
    parse_alist(&text).unwrap()
}

#[test]
fn shipped_codes_parse_with_expected_shapes() {
    let cases = [
        ("bch_63_36.alist", 63, 36, 5),
        ("bch_63_45.alist", 63, 45, 3),
        ("bch_127_64.alist", 127, 64, 10),
        ("hamming_7_4.alist", 7, 4, 1),
    ];
    for (file, n, k, t_h) in cases {
        let code = load_asset(file).with_t_h(t_h);
        assert_eq!(code.n(), n, "{file}");
        assert_eq!(code.k(), k, "{file}");
        assert_eq!(code.t_h(), t_h);
        assert!((code.rate() - k as f64 / n as f64).abs() < 1e-15);
    }
}

#[test]
fn shipped_codes_round_trip_through_the_serializer() {
    for file in ["bch_63_36.alist", "bch_63_45.alist", "bch_127_64.alist"] {
        let code = load_asset(file);
        let ser = wbp_core::code::to_alist(&code);
        let reparsed = parse_alist(&ser).unwrap();
        assert_eq!(reparsed.h(), code.h(), "{file}");
        assert_eq!(wbp_core::code::to_alist(&reparsed), ser, "{file}");
    }
}

#[test]
fn shipped_codes_decode_the_zero_codeword_at_high_snr() {
    let cfg = DecoderConfig::default();
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    for file in ["bch_63_36.alist", "bch_63_45.alist", "bch_127_64.alist"] {
        let code = load_asset(file);
        let sigma = channel::snr_to_sigma(8.0, code.rate()).unwrap();
        let mut decoded = 0;
        for _ in 0..50 {
            let z = channel::zero_codeword_llr(code.n(), sigma, &mut rng);
            let res = bp_decode(&code, &z, &cfg).unwrap();
            if res.bits.is_zero() {
                decoded += 1;
            }
        }
        assert!(decoded >= 45, "{file}: {decoded}/50 decoded at 8 dB");
    }
}
