//! Stream-based training-data samplers.
//!
//! Three mechanisms decide which freshly generated channel words enter a
//! training batch: rejection sampling on the hard-decision Hamming distance,
//! decoder-driven distance filtering (drop words the current decoder already
//! gets right and words it cannot hope to fix), and reliability-prior
//! sampling (weight words by a bivariate Gaussian over their per-word
//! reliability statistics and draw without replacement). The prior itself
//! can be fitted empirically from words that plain BP decodes only when
//! given extra iterations.

use std::io::Write;

use rand::Rng;

use crate::bp::{bp_decode, Decoder, DecoderConfig};
use crate::channel::{self, LlrWord};
use crate::code::{hamming_distance, BitWord, CodeSpec};
use crate::error::{Error, Result};
use crate::fmt::fmt_sig;
use crate::par::run_chunked;
use crate::wbp::sigmoid_neg;

/// Clamp for log arguments in the reliability statistics.
const LOG_CLAMP: f64 = 1e-12;
/// Abort rejection sampling when the acceptance rate sits below this floor.
const ACCEPTANCE_FLOOR: f64 = 1e-4;
/// Attempts before the acceptance floor is first checked.
const ACCEPTANCE_PROBE: u64 = 20_000;
/// Resampling rounds before a filtering sampler gives up.
const MAX_RESAMPLE_ROUNDS: usize = 20;

/// The admissible hard-decision distances {1, ..., d_max}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceSet {
    d_max: usize,
}

impl DistanceSet {
    pub fn new(d_max: usize) -> Result<Self> {
        if d_max < 1 {
            return Err(Error::Config("d_max must be at least 1".into()));
        }
        Ok(DistanceSet { d_max })
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn contains(&self, d: usize) -> bool {
        d >= 1 && d <= self.d_max
    }
}

/// A channel draw tagged with its SNR and hard-decision distance from the
/// transmitted word.
#[derive(Debug, Clone)]
pub struct SampledWord {
    pub z: LlrWord,
    pub snr_db: f64,
    pub d_in: usize,
}

/// Per-word reliability statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityPoint {
    /// Average bit probability deviation, in [0, 1].
    pub abp: f64,
    /// Mean bit cross entropy, nonnegative (nats).
    pub mbce: f64,
}

/// Bivariate Gaussian prior over (abp, mbce).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityPrior {
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl ReliabilityPrior {
    pub fn new(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<Self> {
        if sigma[0][1] != sigma[1][0] {
            return Err(Error::Config("prior covariance must be symmetric".into()));
        }
        let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
        if !(sigma[0][0] > 0.0 && det > 0.0) {
            return Err(Error::Config(
                "prior covariance must be positive definite".into(),
            ));
        }
        Ok(ReliabilityPrior { mu, sigma })
    }

    pub fn diagonal(mu: [f64; 2], var: [f64; 2]) -> Result<Self> {
        ReliabilityPrior::new(mu, [[var[0], 0.0], [0.0, var[1]]])
    }
}

/// A concrete sampling distribution: SNR set, optional distance constraint,
/// optional reliability prior, target batch size and the oversampling factor
/// for the reliability pre-batch.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub snr_set: Vec<f64>,
    pub distance_set: Option<DistanceSet>,
    pub prior: Option<ReliabilityPrior>,
    pub target_batch: usize,
    pub oversample_factor: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_set.is_empty() {
            return Err(Error::Config("snr_set must not be empty".into()));
        }
        if self.target_batch < 1 {
            return Err(Error::Config("target_batch must be at least 1".into()));
        }
        if self.oversample_factor < 1 {
            return Err(Error::Config("oversample_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Configuration of the prior-selection study.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    /// Iteration counts to probe, ascending; the first entry is the
    /// production iteration count.
    pub tau_set: Vec<usize>,
    /// Words to draw for the empirical study.
    pub batch: usize,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_set.is_empty() {
            return Err(Error::Config("tau_set must not be empty".into()));
        }
        if self.tau_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tau_set must be strictly ascending".into()));
        }
        if self.tau_set[0] < 1 {
            return Err(Error::Config("tau_set entries must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            tau_set: vec![5, 7, 10, 15],
            batch: 20_000,
        }
    }
}

/// One row of the prior study: a word's reliability statistics and the
/// smallest probed iteration count that decoded it (if any).
#[derive(Debug, Clone)]
pub struct ScatterRecord {
    pub word_id: usize,
    pub snr_db: f64,
    pub abp: f64,
    pub mbce: f64,
    pub min_decode_tau: Option<usize>,
}

/// Pre-batch accounting for the filtering samplers.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    /// Words drawn from the channel before filtering.
    pub drawn: usize,
    /// Words the filter removed.
    pub removed: usize,
}

impl BatchStats {
    pub fn filtered_fraction(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            self.removed as f64 / self.drawn as f64
        }
    }
}

fn check_same_len(c: &BitWord, z: &LlrWord) -> Result<()> {
    if c.len() != z.len() {
        return Err(Error::LengthMismatch {
            expected: c.len(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Average bit probability deviation: mean over bits of
/// `|c_i - sigma(-z_i)|`. Zero for perfectly reliable words, 0.5 at z = 0.
pub fn abp(c: &BitWord, z: &LlrWord) -> Result<f64> {
    check_same_len(c, z)?;
    let n = c.len();
    let sum: f64 = c
        .bits()
        .iter()
        .zip(z.as_slice())
        .map(|(&ci, &zi)| (ci as f64 - sigmoid_neg(zi)).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Mean bit cross entropy between the transmitted bits and the channel
/// output probabilities, log arguments clamped at 1e-12.
pub fn mbce(c: &BitWord, z: &LlrWord) -> Result<f64> {
    check_same_len(c, z)?;
    let n = c.len();
    let sum: f64 = c
        .bits()
        .iter()
        .zip(z.as_slice())
        .map(|(&ci, &zi)| {
            let p1 = sigmoid_neg(zi);
            let term = ci as f64 * p1.max(LOG_CLAMP).ln()
                + (1.0 - ci as f64) * (1.0 - p1).max(LOG_CLAMP).ln();
            term.abs()
        })
        .sum();
    Ok(sum / n as f64)
}

/// Both reliability statistics of one word.
pub fn reliability_point(c: &BitWord, z: &LlrWord) -> Result<ReliabilityPoint> {
    Ok(ReliabilityPoint {
        abp: abp(c, z)?,
        mbce: mbce(c, z)?,
    })
}

fn draw_word<R: Rng + ?Sized>(n: usize, snrs: &[(f64, f64)], rng: &mut R) -> (LlrWord, f64, usize) {
    let (snr_db, sigma) = snrs[rng.random_range(0..snrs.len())];
    let z = channel::zero_codeword_llr(n, sigma, rng);
    let d_in = z.as_slice().iter().filter(|&&zi| zi < 0.0).count();
    (z, snr_db, d_in)
}

fn snr_sigma_table(code: &CodeSpec, snr_set: &[f64]) -> Result<Vec<(f64, f64)>> {
    snr_set
        .iter()
        .map(|&s| Ok((s, channel::snr_to_sigma(s, code.rate())?)))
        .collect()
}

/// Draw zero-codeword words (SNR uniform over `snr_set`) and keep only those
/// whose hard-decision distance from the zero codeword lies in `a`. Aborts
/// when the acceptance rate falls below 1e-4.
pub fn sample_distance_constrained<R: Rng + ?Sized>(
    code: &CodeSpec,
    snr_set: &[f64],
    a: &DistanceSet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SampledWord>> {
    if snr_set.is_empty() {
        return Err(Error::Config("snr_set must not be empty".into()));
    }
    let snrs = snr_sigma_table(code, snr_set)?;
    let mut out = Vec::with_capacity(count);
    let mut attempts: u64 = 0;
    while out.len() < count {
        attempts += 1;
        let (z, snr_db, d_in) = draw_word(code.n(), &snrs, rng);
        if a.contains(d_in) {
            out.push(SampledWord { z, snr_db, d_in });
        } else if attempts >= ACCEPTANCE_PROBE
            && (out.len() as f64) < ACCEPTANCE_FLOOR * attempts as f64
        {
            return Err(Error::Sampling(format!(
                "acceptance rate {:.2e} after {attempts} draws is below {ACCEPTANCE_FLOOR:.0e}; \
                 distances 1..={} are unreachable at SNRs {snr_set:?}",
                out.len() as f64 / attempts as f64,
                a.d_max()
            )));
        }
    }
    Ok(out)
}

/// Remove every word the decoder already decodes exactly (d_out = 0) or
/// decodes no closer than it arrived (d_out >= d_in); survivors keep order.
///
/// The decoder must run without early termination so d_out comes from the
/// full forward pass.
pub fn filter_by_distance<D: Decoder>(
    dec: &D,
    batch: Vec<SampledWord>,
    c: &BitWord,
) -> Result<Vec<SampledWord>> {
    let mut kept = Vec::with_capacity(batch.len());
    for word in batch {
        let res = dec.decode(&word.z)?;
        let d_out = hamming_distance(&res.bits, c)?;
        if !(d_out == 0 || d_out >= word.d_in) {
            kept.push(word);
        }
    }
    Ok(kept)
}

/// Bivariate normal density of a reliability point under the prior.
pub fn gaussian_weight(p: &ReliabilityPoint, prior: &ReliabilityPrior) -> Result<f64> {
    let s = &prior.sigma;
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if det <= 0.0 {
        return Err(Error::Config("prior covariance is singular".into()));
    }
    let dx = p.abp - prior.mu[0];
    let dy = p.mbce - prior.mu[1];
    // Inverse of a 2x2 symmetric matrix.
    let maha = (dx * dx * s[1][1] - 2.0 * dx * dy * s[0][1] + dy * dy * s[0][0]) / det;
    Ok((-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

/// Fenwick tree over nonnegative weights for O(log n) sampling with removal.
struct Fenwick {
    n: usize,
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut idx = i + 1;
            while idx <= n {
                tree[idx] += w;
                idx += idx & idx.wrapping_neg();
            }
        }
        Fenwick { n, tree }
    }

    fn total(&self) -> f64 {
        let mut idx = self.n;
        let mut sum = 0.0;
        while idx > 0 {
            sum += self.tree[idx];
            idx -= idx & idx.wrapping_neg();
        }
        sum
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut idx = i + 1;
        while idx <= self.n {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut step = self.n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= self.n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Sequentially draw `b` distinct items with probability proportional to the
/// remaining weights. If all remaining weight is exhausted before `b` items
/// are drawn, the remaining slots are filled in index order.
pub fn weighted_sample_without_replacement<T, R: Rng + ?Sized>(
    batch: Vec<T>,
    weights: &[f64],
    b: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if weights.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} items",
            weights.len(),
            batch.len()
        )));
    }
    if b > batch.len() {
        return Err(Error::Config(format!(
            "cannot draw {b} items from a batch of {}",
            batch.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Config("weights must be nonnegative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Sampling("all sampling weights are zero".into()));
    }

    let mut current = weights.to_vec();
    let mut fen = Fenwick::new(weights);
    let mut picked = vec![false; batch.len()];
    let mut order = Vec::with_capacity(b);
    for _ in 0..b {
        let total = fen.total();
        if total <= 0.0 {
            break;
        }
        let mut idx = fen.find(rng.random::<f64>() * total);
        if idx >= batch.len() || current[idx] == 0.0 {
            // Float residue pushed the search past the last live item.
            idx = (0..batch.len())
                .rev()
                .find(|&i| !picked[i] && current[i] > 0.0)
                .expect("live item exists while total > 0");
        }
        picked[idx] = true;
        fen.add(idx, -current[idx]);
        current[idx] = 0.0;
        order.push(idx);
    }
    // Exhausted weights: fill deterministically.
    if order.len() < b {
        for i in 0..batch.len() {
            if order.len() == b {
                break;
            }
            if !picked[i] {
                picked[i] = true;
                order.push(i);
            }
        }
    }

    let mut slots: Vec<Option<T>> = batch.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("index drawn twice"))
        .collect())
}

/// Fit the reliability prior empirically: draw words, probe plain BP at each
/// iteration count in `pcfg.tau_set` (ascending, full iterations, no early
/// termination) and fit a diagonal Gaussian to the words that failed at the
/// first count but decoded at a larger one. Returns the prior and the full
/// scatter for plotting.
pub fn choose_prior<R: Rng + ?Sized>(
    code: &CodeSpec,
    snr_set: &[f64],
    pcfg: &PriorConfig,
    count: usize,
    rng: &mut R,
    workers: usize,
) -> Result<(ReliabilityPrior, Vec<ScatterRecord>)> {
    pcfg.validate()?;
    if count == 0 {
        return Err(Error::Degenerate(
            "prior study needs at least one word".into(),
        ));
    }
    if snr_set.is_empty() {
        return Err(Error::Config("snr_set must not be empty".into()));
    }
    let snrs = snr_sigma_table(code, snr_set)?;
    let zero = BitWord::zeros(code.n());

    // Draw sequentially for determinism, label in parallel.
    let words: Vec<(LlrWord, f64)> = (0..count)
        .map(|_| {
            let (z, snr_db, _) = draw_word(code.n(), &snrs, rng);
            (z, snr_db)
        })
        .collect();

    const CHUNK: usize = 256;
    let chunks = words.len().div_ceil(CHUNK);
    let labeled: Vec<Result<Vec<ScatterRecord>>> = run_chunked(chunks, workers, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(words.len());
        let mut out = Vec::with_capacity(hi - lo);
        for (off, (z, snr_db)) in words[lo..hi].iter().enumerate() {
            let point = reliability_point(&zero, z)?;
            let mut min_decode_tau = None;
            for &tau in &pcfg.tau_set {
                let cfg = DecoderConfig {
                    tau,
                    early_termination: false,
                    ..Default::default()
                };
                let res = bp_decode(code, z, &cfg)?;
                if res.bits == zero {
                    min_decode_tau = Some(tau);
                    break;
                }
            }
            out.push(ScatterRecord {
                word_id: lo + off,
                snr_db: *snr_db,
                abp: point.abp,
                mbce: point.mbce,
                min_decode_tau,
            });
        }
        Ok(out)
    });
    let mut records = Vec::with_capacity(count);
    for chunk in labeled {
        records.extend(chunk?);
    }

    let tau1 = pcfg.tau_set[0];
    let target: Vec<&ScatterRecord> = records
        .iter()
        .filter(|r| matches!(r.min_decode_tau, Some(t) if t > tau1))
        .collect();
    if target.is_empty() {
        return Err(Error::Degenerate(format!(
            "no word decoded only with added iterations (tau > {tau1}); widen the SNR set or \
             increase the word count, or configure the prior directly"
        )));
    }
    if target.len() < 2 {
        return Err(Error::Degenerate(
            "target set has a single word; its covariance is degenerate".into(),
        ));
    }
    let m = target.len() as f64;
    let mean_abp = target.iter().map(|r| r.abp).sum::<f64>() / m;
    let mean_mbce = target.iter().map(|r| r.mbce).sum::<f64>() / m;
    let var_abp = target
        .iter()
        .map(|r| (r.abp - mean_abp).powi(2))
        .sum::<f64>()
        / (m - 1.0);
    let var_mbce = target
        .iter()
        .map(|r| (r.mbce - mean_mbce).powi(2))
        .sum::<f64>()
        / (m - 1.0);
    const VAR_FLOOR: f64 = 1e-8;
    if var_abp < VAR_FLOOR || var_mbce < VAR_FLOOR {
        return Err(Error::Degenerate(format!(
            "target-set variance ({var_abp:.3e}, {var_mbce:.3e}) is below the {VAR_FLOOR:.0e} floor"
        )));
    }
    let prior = ReliabilityPrior::diagonal([mean_abp, mean_mbce], [var_abp, var_mbce])?;
    Ok((prior, records))
}

/// Draw the oversampled pre-batch, optionally distance-filter it, weight the
/// survivors by the Gaussian prior over their reliability statistics, and
/// draw the target batch without replacement.
pub fn sample_by_reliability<D: Decoder, R: Rng + ?Sized>(
    dec: &D,
    code: &CodeSpec,
    scfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<SampledWord>, BatchStats)> {
    scfg.validate()?;
    let prior = scfg
        .prior
        .as_ref()
        .ok_or_else(|| Error::Config("reliability sampling needs a prior".into()))?;
    let b = scfg.target_batch;
    let q_size = b * scfg.oversample_factor;
    let zero = BitWord::zeros(code.n());
    let snrs = snr_sigma_table(code, &scfg.snr_set)?;

    let mut stats = BatchStats::default();
    let mut pool: Vec<SampledWord> = Vec::with_capacity(q_size);
    for round in 0.. {
        let q = match &scfg.distance_set {
            Some(a) => sample_distance_constrained(code, &scfg.snr_set, a, q_size, rng)?,
            None => (0..q_size)
                .map(|_| {
                    let (z, snr_db, d_in) = draw_word(code.n(), &snrs, rng);
                    SampledWord { z, snr_db, d_in }
                })
                .collect(),
        };
        stats.drawn += q.len();
        let kept = if scfg.distance_set.is_some() {
            let before = q.len();
            let kept = filter_by_distance(dec, q, &zero)?;
            stats.removed += before - kept.len();
            kept
        } else {
            q
        };
        pool.extend(kept);
        if pool.len() >= b {
            break;
        }
        if round + 1 >= MAX_RESAMPLE_ROUNDS {
            return Err(Error::Sampling(format!(
                "distance filter kept {} of {} words over {MAX_RESAMPLE_ROUNDS} rounds, \
                 need a batch of {b}",
                pool.len(),
                stats.drawn
            )));
        }
    }

    let weights: Vec<f64> = pool
        .iter()
        .map(|w| {
            let p = reliability_point(&zero, &w.z)?;
            gaussian_weight(&p, prior)
        })
        .collect::<Result<_>>()?;
    let norm: f64 = weights.iter().sum();
    if norm <= 0.0 {
        return Err(Error::Sampling(
            "every pre-batch word has zero prior density; the prior is too far from the data"
                .into(),
        ));
    }
    let normalized: Vec<f64> = weights.iter().map(|w| w / norm).collect();
    let batch = weighted_sample_without_replacement(pool, &normalized, b, rng)?;
    Ok((batch, stats))
}

/// Emit the prior-study scatter as CSV.
pub fn write_scatter_csv<W: Write>(records: &[ScatterRecord], mut w: W) -> Result<()> {
    writeln!(w, "word_id,snr_db,abp,mbce,min_decode_tau")?;
    for r in records {
        let tau = r
            .min_decode_tau
            .map_or_else(|| "none".to_string(), |t| t.to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            r.word_id,
            fmt_sig(r.snr_db),
            fmt_sig(r.abp),
            fmt_sig(r.mbce),
            tau
        )?;
    }
    Ok(())
}
