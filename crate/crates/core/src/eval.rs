//! Monte-Carlo BER/FER measurement over the AWGN channel.
//!
//! Frames are zero-codeword draws streamed through channel and decoder until
//! the error target is met or the frame cap is reached. Frame `f` of SNR
//! point `p` always uses the random stream `(p << 32) | f`, and stopping is
//! only ever checked on merged integer tallies at round boundaries, so a
//! report depends on nothing but (decoder, code, seed) -- not on the worker
//! count. A round never exceeds the number of frames that could still be
//! needed, so an always-failing decoder stops at exactly the error target.

use std::io::Write;
use std::time::Instant;

use crate::bp::Decoder;
use crate::channel;
use crate::code::CodeSpec;
use crate::error::{Error, Result};
use crate::fmt::fmt_sig;
use crate::par::run_chunked;
use crate::rng;

const ROUND_MAX: u64 = 4096;
const CHUNK: u64 = 128;

/// Whether the stopping rule counts frame errors or bit errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCountMode {
    FrameErrors,
    BitErrors,
}

/// Per-point stopping rule.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub min_errors: u64,
    pub max_frames: u64,
    pub mode: ErrorCountMode,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            min_errors: 1000,
            max_frames: 100_000_000,
            mode: ErrorCountMode::FrameErrors,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_errors < 1 {
            return Err(Error::Config("eval.min_errors must be at least 1".into()));
        }
        if self.max_frames < 1 || self.max_frames > u32::MAX as u64 {
            return Err(Error::Config(format!(
                "eval.max_frames must be in 1..={}",
                u32::MAX
            )));
        }
        Ok(())
    }
}

/// Measurements at one SNR point.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub frame_errors: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub fer: f64,
    pub avg_iterations: f64,
    /// True when the error target was not reached before the frame cap.
    pub censored: bool,
    pub wall_secs: f64,
}

/// A full BER/FER curve.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub points: Vec<EvalPoint>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    frames: u64,
    frame_errors: u64,
    bit_errors: u64,
    iter_sum: u64,
}

impl Tally {
    fn merge(&mut self, other: &Tally) {
        self.frames += other.frames;
        self.frame_errors += other.frame_errors;
        self.bit_errors += other.bit_errors;
        self.iter_sum += other.iter_sum;
    }

    fn errors(&self, mode: ErrorCountMode) -> u64 {
        match mode {
            ErrorCountMode::FrameErrors => self.frame_errors,
            ErrorCountMode::BitErrors => self.bit_errors,
        }
    }
}

/// Measure BER/FER of `decoder` at every SNR in `snr_list`.
pub fn monte_carlo<D: Decoder>(
    decoder: &D,
    code: &CodeSpec,
    snr_list: &[f64],
    stop: &StopRule,
    master_seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    stop.validate()?;
    if snr_list.is_empty() {
        return Err(Error::Config("eval.snr_db must not be empty".into()));
    }
    let n = code.n();
    let mut report = EvalReport::default();

    for (snr_idx, &snr_db) in snr_list.iter().enumerate() {
        let sigma = channel::snr_to_sigma(snr_db, code.rate())?;
        let t0 = Instant::now();
        let mut tally = Tally::default();

        while tally.errors(stop.mode) < stop.min_errors && tally.frames < stop.max_frames {
            // Never draw more frames than could still be needed: even an
            // always-failing decoder contributes at most one frame error (or
            // N bit errors) per frame.
            let missing = stop.min_errors - tally.errors(stop.mode);
            let upper = match stop.mode {
                ErrorCountMode::FrameErrors => missing,
                ErrorCountMode::BitErrors => missing.div_ceil(n as u64),
            };
            let round = ROUND_MAX
                .min(stop.max_frames - tally.frames)
                .min(upper.max(1));
            let base = tally.frames;
            let chunks = round.div_ceil(CHUNK);
            let partials: Vec<Result<Tally>> = run_chunked(chunks as usize, workers, |ci| {
                let lo = base + ci as u64 * CHUNK;
                let hi = (lo + CHUNK).min(base + round);
                let mut t = Tally::default();
                for f in lo..hi {
                    let stream_id = ((snr_idx as u64) << 32) | f;
                    let mut frame_rng = rng::stream(master_seed, stream_id);
                    let z = channel::zero_codeword_llr(n, sigma, &mut frame_rng);
                    let res = decoder.decode(&z)?;
                    let errs = res.bits.weight() as u64;
                    t.frames += 1;
                    t.iter_sum += res.iterations_used as u64;
                    if errs > 0 {
                        t.frame_errors += 1;
                        t.bit_errors += errs;
                    }
                }
                Ok(t)
            });
            for p in partials {
                tally.merge(&p?);
            }
        }

        let frames = tally.frames.max(1) as f64;
        report.points.push(EvalPoint {
            snr_db,
            frames: tally.frames,
            frame_errors: tally.frame_errors,
            bit_errors: tally.bit_errors,
            ber: tally.bit_errors as f64 / (frames * n as f64),
            fer: tally.frame_errors as f64 / frames,
            avg_iterations: tally.iter_sum as f64 / frames,
            censored: tally.errors(stop.mode) < stop.min_errors,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

/// Report CSV; wall-clock time deliberately stays out so reruns are
/// byte-identical.
pub fn write_report<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "snr_db,frames,frame_errors,bit_errors,ber,fer,avg_iterations,censored"
    )?;
    for p in &report.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_sig(p.snr_db),
            p.frames,
            p.frame_errors,
            p.bit_errors,
            fmt_sig(p.ber),
            fmt_sig(p.fer),
            fmt_sig(p.avg_iterations),
            p.censored
        )?;
    }
    Ok(())
}

/// Companion metadata for a report.
pub fn write_metadata<W: Write>(
    code: &CodeSpec,
    decoder_kind: &str,
    weights_checksum: Option<u64>,
    seed: u64,
    workers: usize,
    report: &EvalReport,
    mut w: W,
) -> Result<()> {
    writeln!(w, "code {}", code.name())?;
    writeln!(w, "code_checksum {:016x}", code.checksum())?;
    writeln!(w, "decoder {decoder_kind}")?;
    match weights_checksum {
        Some(c) => writeln!(w, "weights_checksum {c:016x}")?,
        None => writeln!(w, "weights_checksum none")?,
    }
    writeln!(w, "seed {seed}")?;
    writeln!(w, "workers {workers}")?;
    let total: f64 = report.points.iter().map(|p| p.wall_secs).sum();
    writeln!(w, "wall_secs {total:.3}")?;
    Ok(())
}
