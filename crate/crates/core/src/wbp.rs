//! Weighted belief propagation: the unrolled, parameterized forward pass.
//!
//! The variable-to-check rule carries learnable pair weights (one weight per
//! ordered pair of incoming/outgoing edges at a variable) and moves the
//! message into the tanh domain; the check-to-variable rule is unweighted and
//! maps back to the LLR domain; every iteration ends with a sigmoid
//! marginalization tap producing per-bit probabilities in `[0, 1]`. With all
//! weights at one the forward pass reproduces plain BP bit-for-bit -- both
//! decoders share the same kernels and clipping schedule.
//!
//! Channel weights and the per-variable output weights are fixed to one; the
//! single set of output edge weights is shared by all marginalization taps.

use std::io::{BufRead, Write};

use crate::bp::{exclusive_products, hard_bits, DecodeResult, Decoder, DecoderConfig};
use crate::channel::LlrWord;
use crate::code::{BitWord, CodeSpec};
use crate::error::{Error, Result};

/// Whether pair weights distinguish the outgoing edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTying {
    /// One weight per (incoming edge, outgoing edge) pair -- the full rule.
    Full,
    /// One weight per incoming edge, shared across outgoing edges.
    Tied,
}

/// All trainable parameters of the weighted decoder for one code.
#[derive(Debug, Clone, PartialEq)]
pub struct WbpWeights {
    pub code_name: String,
    pub code_checksum: u64,
    pub tau: usize,
    pub tying: WeightTying,
    /// Per iteration: the pair-weight tensor. `Full` layout: variable v owns
    /// the slice starting at `code.pair_offset(v)`, as `d_v` consecutive
    /// blocks of `d_v - 1` weights -- outgoing edge position major, incoming
    /// edge position minor (skipping the outgoing one). `Tied` layout: one
    /// weight per incoming edge id.
    pub pair: Vec<Vec<f64>>,
    /// Output marginalization weight per edge id, shared across all taps.
    pub out_edge: Vec<f64>,
}

impl WbpWeights {
    /// All-ones initialization: the resulting forward pass equals plain BP.
    pub fn init(code: &CodeSpec, tau: usize, tying: WeightTying) -> Self {
        let pair_len = match tying {
            WeightTying::Full => code.pair_len(),
            WeightTying::Tied => code.num_edges(),
        };
        WbpWeights {
            code_name: code.name().to_string(),
            code_checksum: code.checksum(),
            tau,
            tying,
            pair: vec![vec![1.0; pair_len]; tau],
            out_edge: vec![1.0; code.num_edges()],
        }
    }

    pub fn num_weights(&self) -> usize {
        self.pair.iter().map(|l| l.len()).sum::<usize>() + self.out_edge.len()
    }

    /// Check that these weights were built for `code` (name, structural
    /// checksum and tensor shapes must all agree).
    pub fn matches_code(&self, code: &CodeSpec) -> Result<()> {
        if self.code_name != code.name() {
            return Err(Error::ArtifactMismatch(format!(
                "weights are for code {:?}, not {:?}",
                self.code_name,
                code.name()
            )));
        }
        if self.code_checksum != code.checksum() {
            return Err(Error::ArtifactMismatch(format!(
                "weights checksum {:016x} does not match code checksum {:016x}",
                self.code_checksum,
                code.checksum()
            )));
        }
        let expect_pair = match self.tying {
            WeightTying::Full => code.pair_len(),
            WeightTying::Tied => code.num_edges(),
        };
        if self.pair.len() != self.tau
            || self.pair.iter().any(|l| l.len() != expect_pair)
            || self.out_edge.len() != code.num_edges()
        {
            return Err(Error::Shape(format!(
                "weight tensors do not match the code adjacency (expected {} x {expect_pair} + {})",
                self.tau,
                code.num_edges()
            )));
        }
        Ok(())
    }

    /// Serialize to the versioned text container. Values are stored as raw
    /// IEEE-754 bit patterns so load/save round-trips are bit-exact.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "wbp-weights v1")?;
        writeln!(w, "code {}", self.code_name)?;
        writeln!(w, "checksum {:016x}", self.code_checksum)?;
        writeln!(w, "tau {}", self.tau)?;
        writeln!(
            w,
            "tying {}",
            match self.tying {
                WeightTying::Full => "full",
                WeightTying::Tied => "tied",
            }
        )?;
        writeln!(w, "edges {}", self.out_edge.len())?;
        writeln!(w, "pair_len {}", self.pair.first().map_or(0, |l| l.len()))?;
        let write_tensor = |w: &mut W, vals: &[f64]| -> Result<()> {
            for chunk in vals.chunks(8) {
                let line: Vec<String> = chunk
                    .iter()
                    .map(|v| format!("{:016x}", v.to_bits()))
                    .collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            Ok(())
        };
        for (t, layer) in self.pair.iter().enumerate() {
            writeln!(w, "layer {}", t + 1)?;
            write_tensor(&mut w, layer)?;
        }
        writeln!(w, "out")?;
        write_tensor(&mut w, &self.out_edge)?;
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = WeightReader {
            lines: r.lines().enumerate(),
        };
        let (ln, header) = lines.next_line("header")?;
        if header.trim() != "wbp-weights v1" {
            return Err(Error::parse(
                ln,
                format!("unsupported weights header {header:?}"),
            ));
        }
        let code_name = lines.field("code")?;
        let checksum_text = lines.field("checksum")?;
        let code_checksum = u64::from_str_radix(&checksum_text, 16)
            .map_err(|_| Error::parse(0, "checksum is not a hex u64"))?;
        let tau: usize = lines
            .field("tau")?
            .parse()
            .map_err(|_| Error::parse(0, "tau is not an integer"))?;
        let tying = match lines.field("tying")?.as_str() {
            "full" => WeightTying::Full,
            "tied" => WeightTying::Tied,
            other => return Err(Error::parse(0, format!("unknown tying {other:?}"))),
        };
        let edges: usize = lines
            .field("edges")?
            .parse()
            .map_err(|_| Error::parse(0, "edges is not an integer"))?;
        let pair_len: usize = lines
            .field("pair_len")?
            .parse()
            .map_err(|_| Error::parse(0, "pair_len is not an integer"))?;

        let mut pair = Vec::with_capacity(tau);
        for t in 0..tau {
            let idx: usize = lines
                .field("layer")?
                .parse()
                .map_err(|_| Error::parse(0, "layer index is not an integer"))?;
            if idx != t + 1 {
                return Err(Error::parse(
                    0,
                    format!("expected layer {}, got {idx}", t + 1),
                ));
            }
            pair.push(lines.read_tensor(pair_len)?);
        }
        let (ln, line) = lines.next_line("out")?;
        if line.trim() != "out" {
            return Err(Error::parse(ln, format!("expected \"out\", got {line:?}")));
        }
        let out_edge = lines.read_tensor(edges)?;
        let (ln, line) = lines.next_line("end")?;
        if line.trim() != "end" {
            return Err(Error::parse(ln, format!("expected \"end\", got {line:?}")));
        }

        Ok(WbpWeights {
            code_name,
            code_checksum,
            tau,
            tying,
            pair,
            out_edge,
        })
    }
}

struct WeightReader<R: BufRead> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
}

impl<R: BufRead> WeightReader<R> {
    fn next_line(&mut self, what: &str) -> Result<(usize, String)> {
        for (idx, line) in self.lines.by_ref() {
            let line = line?;
            if !line.trim().is_empty() {
                return Ok((idx + 1, line));
            }
        }
        Err(Error::parse(
            0,
            format!("unexpected end of weights file, expected {what}"),
        ))
    }

    /// Expect a `key value` line and return the value.
    fn field(&mut self, key: &str) -> Result<String> {
        let (ln, line) = self.next_line(key)?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| Error::parse(ln, format!("expected {key:?} line, got {line:?}")))
    }

    fn read_tensor(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut vals = Vec::with_capacity(len);
        while vals.len() < len {
            let (ln, line) = self.next_line("weight values")?;
            for tok in line.split_whitespace() {
                let bits = u64::from_str_radix(tok, 16)
                    .map_err(|_| Error::parse(ln, format!("bad weight token {tok:?}")))?;
                vals.push(f64::from_bits(bits));
            }
            if vals.len() > len {
                return Err(Error::parse(ln, "too many weight values in tensor"));
            }
        }
        Ok(vals)
    }
}

/// Everything the forward pass computed, kept for the backward pass: the
/// tanh-domain variable-to-check messages, the check-to-variable messages,
/// the guarded arctanh inputs, per-tap outputs and all clamp masks.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    /// The weights' iteration count (taps the multiloss expects).
    pub tau_requested: usize,
    /// Taps actually produced (equals tau unless early termination fired).
    pub tau_run: usize,
    /// Per tap, per variable: x_hat in [0, 1].
    pub taps: Vec<Vec<f64>>,
    /// Per tap, per variable: the LLR-domain marginal (x_hat's negated logit).
    pub marginals: Vec<Vec<f64>>,
    /// Per layer, per edge: tanh-domain variable-to-check messages.
    pub v2c_tanh: Vec<Vec<f64>>,
    /// Per layer, per edge: clipped LLR-domain check-to-variable messages.
    pub c2v: Vec<Vec<f64>>,
    /// Per layer, per edge: the guarded product fed to arctanh.
    pub prods: Vec<Vec<f64>>,
    /// Clamp-activation masks, true exactly where the clamp changed a value.
    pub v2c_clip_mask: Vec<Vec<bool>>,
    pub guard_mask: Vec<Vec<bool>>,
    pub c2v_clip_mask: Vec<Vec<bool>>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl ForwardRecord {
    /// Hard decision of the final tap (bit 1 iff x_hat > 0.5; ties to 0).
    pub fn final_bits(&self) -> BitWord {
        BitWord::new(hard_bits(&self.marginals[self.tau_run - 1]))
    }

    pub fn to_decode_result(&self) -> DecodeResult {
        DecodeResult {
            bits: self.final_bits(),
            soft: self.marginals[self.tau_run - 1].clone(),
            iterations_used: self.iterations_used,
            converged: self.converged,
        }
    }
}

/// sigma(-g), evaluated without overflow for large |g|.
pub(crate) fn sigmoid_neg(g: f64) -> f64 {
    if g >= 0.0 {
        let e = (-g).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + g.exp())
    }
}

fn validate_forward(
    w: &WbpWeights,
    code: &CodeSpec,
    z: &LlrWord,
    cfg: &DecoderConfig,
) -> Result<()> {
    cfg.validate()?;
    w.matches_code(code)?;
    if cfg.tau != w.tau {
        return Err(Error::Shape(format!(
            "decoder config tau {} does not match weights tau {}",
            cfg.tau, w.tau
        )));
    }
    if z.len() != code.n() {
        return Err(Error::LengthMismatch {
            expected: code.n(),
            got: z.len(),
        });
    }
    Ok(())
}

/// One iteration's variable-to-check layer: weighted sums, clip, tanh.
#[allow(clippy::too_many_arguments)]
fn v2c_layer(
    w: &WbpWeights,
    code: &CodeSpec,
    layer: usize,
    zs: &[f64],
    prev_c2v: &[f64],
    clip: f64,
    u: &mut [f64],
    mut clip_mask: Option<&mut [bool]>,
) {
    let pair = &w.pair[layer];
    for v in 0..code.n() {
        let range = code.var_edge_range(v);
        let deg = range.len();
        for (i, a) in range.clone().enumerate() {
            let mut s = zs[v];
            match w.tying {
                WeightTying::Full => {
                    let block = code.pair_offset(v) + i * (deg - 1);
                    let mut slot = 0;
                    for (j, b) in range.clone().enumerate() {
                        if j != i {
                            s += pair[block + slot] * prev_c2v[b];
                            slot += 1;
                        }
                    }
                }
                WeightTying::Tied => {
                    for (j, b) in range.clone().enumerate() {
                        if j != i {
                            s += pair[b] * prev_c2v[b];
                        }
                    }
                }
            }
            let clipped = s > clip || s < -clip;
            if let Some(mask) = clip_mask.as_deref_mut() {
                mask[a] = clipped;
            }
            let sc = if clipped { s.clamp(-clip, clip) } else { s };
            u[a] = (0.5 * sc).tanh();
        }
    }
}

/// One iteration's check-to-variable layer: exclusive products, guarded
/// arctanh, clip back into the LLR range.
#[allow(clippy::too_many_arguments)]
fn c2v_layer(
    code: &CodeSpec,
    u: &[f64],
    guard: f64,
    clip: f64,
    c2v: &mut [f64],
    mut prods_out: Option<&mut [f64]>,
    mut guard_mask: Option<&mut [bool]>,
    mut clip_mask: Option<&mut [bool]>,
    vals: &mut [f64],
    prods: &mut [f64],
) {
    let bound = 1.0 - guard;
    for c in 0..code.num_checks() {
        let ids = code.check_edge_ids(c);
        let d = ids.len();
        for (slot, &id) in vals[..d].iter_mut().zip(ids) {
            *slot = u[id];
        }
        exclusive_products(&vals[..d], &mut prods[..d]);
        for (&id, &p) in ids.iter().zip(&prods[..d]) {
            let guarded = p > bound || p < -bound;
            let pc = if guarded { p.clamp(-bound, bound) } else { p };
            let r = 2.0 * pc.atanh();
            let clipped = r > clip || r < -clip;
            let rc = if clipped { r.clamp(-clip, clip) } else { r };
            c2v[id] = rc;
            if let Some(out) = prods_out.as_deref_mut() {
                out[id] = pc;
            }
            if let Some(mask) = guard_mask.as_deref_mut() {
                mask[id] = guarded;
            }
            if let Some(mask) = clip_mask.as_deref_mut() {
                mask[id] = clipped;
            }
        }
    }
}

/// The marginalization tap: LLR-domain posterior per variable.
fn tap_layer(w: &WbpWeights, code: &CodeSpec, zs: &[f64], c2v: &[f64], marginal: &mut [f64]) {
    for v in 0..code.n() {
        let mut s = zs[v];
        for b in code.var_edge_range(v) {
            s += w.out_edge[b] * c2v[b];
        }
        marginal[v] = s;
    }
}

/// Run the weighted forward pass, recording every intermediate needed by the
/// backward pass. With `cfg.early_termination` the pass stops at the first
/// tap whose hard decision has a zero syndrome (training forwards disable
/// this so all tau taps exist for the multiloss).
pub fn wbp_forward(
    w: &WbpWeights,
    code: &CodeSpec,
    z: &LlrWord,
    cfg: &DecoderConfig,
) -> Result<ForwardRecord> {
    validate_forward(w, code, z, cfg)?;
    let n = code.n();
    let num_edges = code.num_edges();
    let zs = z.as_slice();
    let max_check_deg = (0..code.num_checks())
        .map(|c| code.check_neighbors(c).len())
        .max()
        .unwrap_or(0);
    let mut vals = vec![0.0f64; max_check_deg];
    let mut scratch = vec![0.0f64; max_check_deg];

    let mut rec = ForwardRecord {
        tau_requested: w.tau,
        tau_run: 0,
        taps: Vec::with_capacity(w.tau),
        marginals: Vec::with_capacity(w.tau),
        v2c_tanh: Vec::with_capacity(w.tau),
        c2v: Vec::with_capacity(w.tau),
        prods: Vec::with_capacity(w.tau),
        v2c_clip_mask: Vec::with_capacity(w.tau),
        guard_mask: Vec::with_capacity(w.tau),
        c2v_clip_mask: Vec::with_capacity(w.tau),
        iterations_used: 0,
        converged: false,
    };

    let mut prev_c2v = vec![0.0f64; num_edges];
    for t in 0..w.tau {
        let mut u = vec![0.0f64; num_edges];
        let mut v2c_mask = vec![false; num_edges];
        v2c_layer(
            w,
            code,
            t,
            zs,
            &prev_c2v,
            cfg.clip,
            &mut u,
            Some(&mut v2c_mask),
        );

        let mut c2v = vec![0.0f64; num_edges];
        let mut prods = vec![0.0f64; num_edges];
        let mut guard_mask = vec![false; num_edges];
        let mut c2v_mask = vec![false; num_edges];
        c2v_layer(
            code,
            &u,
            cfg.arctanh_guard,
            cfg.clip,
            &mut c2v,
            Some(&mut prods),
            Some(&mut guard_mask),
            Some(&mut c2v_mask),
            &mut vals,
            &mut scratch,
        );

        let mut marginal = vec![0.0f64; n];
        tap_layer(w, code, zs, &c2v, &mut marginal);
        if marginal.iter().any(|m| m.is_nan()) {
            return Err(Error::Numeric(format!(
                "NaN in WBP marginals at iteration {}",
                t + 1
            )));
        }
        let tap: Vec<f64> = marginal.iter().map(|&g| sigmoid_neg(g)).collect();

        rec.taps.push(tap);
        rec.marginals.push(marginal);
        rec.v2c_tanh.push(u);
        rec.prods.push(prods);
        rec.v2c_clip_mask.push(v2c_mask);
        rec.guard_mask.push(guard_mask);
        rec.c2v_clip_mask.push(c2v_mask);
        rec.tau_run = t + 1;
        rec.iterations_used = t + 1;

        let stop = cfg.early_termination && code.syndrome_is_zero(&hard_bits(&rec.marginals[t]));
        rec.c2v.push(c2v);
        if stop {
            rec.converged = true;
            return Ok(rec);
        }
        prev_c2v.copy_from_slice(&rec.c2v[t]);
    }
    rec.converged = code.syndrome_is_zero(&hard_bits(&rec.marginals[rec.tau_run - 1]));
    Ok(rec)
}

/// Decode without recording intermediates; numerically identical to
/// [`wbp_forward`] followed by [`ForwardRecord::to_decode_result`].
pub fn wbp_decode(
    w: &WbpWeights,
    code: &CodeSpec,
    z: &LlrWord,
    cfg: &DecoderConfig,
) -> Result<DecodeResult> {
    validate_forward(w, code, z, cfg)?;
    let n = code.n();
    let num_edges = code.num_edges();
    let zs = z.as_slice();
    let max_check_deg = (0..code.num_checks())
        .map(|c| code.check_neighbors(c).len())
        .max()
        .unwrap_or(0);
    let mut vals = vec![0.0f64; max_check_deg];
    let mut scratch = vec![0.0f64; max_check_deg];

    let mut prev_c2v = vec![0.0f64; num_edges];
    let mut u = vec![0.0f64; num_edges];
    let mut c2v = vec![0.0f64; num_edges];
    let mut marginal = vec![0.0f64; n];

    for t in 0..w.tau {
        v2c_layer(w, code, t, zs, &prev_c2v, cfg.clip, &mut u, None);
        c2v_layer(
            code,
            &u,
            cfg.arctanh_guard,
            cfg.clip,
            &mut c2v,
            None,
            None,
            None,
            &mut vals,
            &mut scratch,
        );
        tap_layer(w, code, zs, &c2v, &mut marginal);
        if marginal.iter().any(|m| m.is_nan()) {
            return Err(Error::Numeric(format!(
                "NaN in WBP marginals at iteration {}",
                t + 1
            )));
        }
        if cfg.early_termination {
            let bits = hard_bits(&marginal);
            if code.syndrome_is_zero(&bits) {
                return Ok(DecodeResult {
                    bits: BitWord::new(bits),
                    soft: marginal,
                    iterations_used: t + 1,
                    converged: true,
                });
            }
        }
        prev_c2v.copy_from_slice(&c2v);
    }
    let bits = hard_bits(&marginal);
    let converged = code.syndrome_is_zero(&bits);
    Ok(DecodeResult {
        bits: BitWord::new(bits),
        soft: marginal,
        iterations_used: w.tau,
        converged,
    })
}

/// Weighted BP over a shared code and weight set.
#[derive(Debug, Clone, Copy)]
pub struct WbpDecoder<'a> {
    pub code: &'a CodeSpec,
    pub weights: &'a WbpWeights,
    pub cfg: DecoderConfig,
}

impl<'a> WbpDecoder<'a> {
    pub fn new(code: &'a CodeSpec, weights: &'a WbpWeights, cfg: DecoderConfig) -> Result<Self> {
        weights.matches_code(code)?;
        if cfg.tau != weights.tau {
            return Err(Error::Shape(format!(
                "decoder config tau {} does not match weights tau {}",
                cfg.tau, weights.tau
            )));
        }
        Ok(WbpDecoder { code, weights, cfg })
    }
}

impl Decoder for WbpDecoder<'_> {
    fn decode(&self, z: &LlrWord) -> Result<DecodeResult> {
        wbp_decode(self.weights, self.code, z, &self.cfg)
    }
}
