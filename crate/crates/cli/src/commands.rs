//! The three commands: train, evaluate, prior.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use wbp_core::bp::{BpDecoder, DecoderConfig};
use wbp_core::code::CodeSpec;
use wbp_core::error::{Error, Result};
use wbp_core::eval::{monte_carlo, write_metadata, write_report};
use wbp_core::sampling::{choose_prior, write_scatter_csv};
use wbp_core::training::{train, write_history_csv};
use wbp_core::wbp::{WbpDecoder, WbpWeights};

use crate::config::RunConfig;

pub struct Context {
    pub config: RunConfig,
    pub code: CodeSpec,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Context {
    /// Load config and code, apply flag/env overrides, create the output
    /// directory and drop the resolved-config echo there.
    pub fn prepare(
        config_path: &Path,
        seed_flag: Option<u64>,
        workers_flag: Option<usize>,
        out_flag: Option<PathBuf>,
    ) -> Result<Context> {
        let raw = RunConfig::load(config_path)?;
        let code = raw.load_code(config_path)?;
        let seed = seed_flag.or(raw.seed).unwrap_or(0);
        let workers = match workers_flag.or(raw.workers) {
            Some(0) | None => std::thread::available_parallelism().map_or(1, |p| p.get()),
            Some(w) => w,
        };
        let out_dir = out_flag
            .or_else(|| std::env::var_os("WBP_OUT_DIR").map(PathBuf::from))
            .or_else(|| raw.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("wbp-out"));
        std::fs::create_dir_all(&out_dir)?;

        let config = raw.resolve(&code, config_path, seed, workers);
        let echo = config.echo_toml()?;
        std::fs::write(out_dir.join("config_echo.toml"), echo)?;
        Ok(Context {
            config,
            code,
            seed,
            workers,
            out_dir,
        })
    }

    fn decoder_config(&self, early_termination: bool) -> DecoderConfig {
        let dec = self.config.decoder.clone().unwrap_or_default();
        DecoderConfig {
            tau: dec.tau.unwrap_or(5),
            clip: dec.clip.unwrap_or(10.0),
            early_termination,
            arctanh_guard: dec.arctanh_guard.unwrap_or(1e-7),
        }
    }
}

pub fn cmd_train(ctx: &Context) -> Result<()> {
    let tcfg = ctx.config.train_config(ctx.workers)?;
    let (weights, history) = train(&ctx.code, &tcfg, ctx.seed)?;

    let weights_path = ctx.out_dir.join("weights.wbp");
    let mut wf = BufWriter::new(File::create(&weights_path)?);
    weights.save(&mut wf)?;
    wf.flush()?;

    let mut hf = BufWriter::new(File::create(ctx.out_dir.join("history.csv"))?);
    write_history_csv(&history, &mut hf)?;
    hf.flush()?;

    println!(
        "trained {} steps on {} ({} weights), best validation FER {}",
        history.records.len(),
        ctx.code.name(),
        weights.num_weights(),
        history
            .best_val_fer
            .map_or_else(|| "n/a".to_string(), |f| format!("{f:.6}")),
    );
    println!("weights -> {}", weights_path.display());
    Ok(())
}

pub fn cmd_evaluate(ctx: &Context, weights_path: Option<&Path>) -> Result<()> {
    let stop = ctx.config.stop_rule();
    let snr_list = ctx
        .config
        .eval
        .as_ref()
        .and_then(|e| e.snr_db.clone())
        .ok_or_else(|| Error::Config("eval.snr_db is not resolved".into()))?;
    let cfg = ctx.decoder_config(true);

    let (report, kind, checksum) = match weights_path {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "weights file does not exist: {}",
                    path.display()
                )));
            }
            let weights = WbpWeights::load(BufReader::new(File::open(path)?))?;
            weights.matches_code(&ctx.code)?;
            if weights.tau != cfg.tau {
                return Err(Error::ArtifactMismatch(format!(
                    "weights were trained with tau {} but the config decodes with tau {}",
                    weights.tau, cfg.tau
                )));
            }
            let dec = WbpDecoder::new(&ctx.code, &weights, cfg)?;
            let report = monte_carlo(&dec, &ctx.code, &snr_list, &stop, ctx.seed, ctx.workers)?;
            (report, "wbp", Some(weights_checksum(&weights)))
        }
        None => {
            let dec = BpDecoder::new(&ctx.code, cfg);
            let report = monte_carlo(&dec, &ctx.code, &snr_list, &stop, ctx.seed, ctx.workers)?;
            (report, "bp", None)
        }
    };

    let csv_path = ctx.out_dir.join("eval.csv");
    let mut cf = BufWriter::new(File::create(&csv_path)?);
    write_report(&report, &mut cf)?;
    cf.flush()?;
    let mut mf = BufWriter::new(File::create(ctx.out_dir.join("eval_meta.txt"))?);
    write_metadata(
        &ctx.code,
        kind,
        checksum,
        ctx.seed,
        ctx.workers,
        &report,
        &mut mf,
    )?;
    mf.flush()?;

    for p in &report.points {
        println!(
            "snr {:>5} dB: fer {:.6e} ber {:.6e} over {} frames{}",
            p.snr_db,
            p.fer,
            p.ber,
            p.frames,
            if p.censored { " (censored)" } else { "" }
        );
    }
    println!("report -> {}", csv_path.display());
    Ok(())
}

/// Stable checksum of a weights file's tensors, recorded in eval metadata.
fn weights_checksum(w: &WbpWeights) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    eat(w.code_checksum);
    eat(w.tau as u64);
    for layer in &w.pair {
        for v in layer {
            eat(v.to_bits());
        }
    }
    for v in &w.out_edge {
        eat(v.to_bits());
    }
    hash
}

pub fn cmd_prior(ctx: &Context) -> Result<()> {
    let pcfg = ctx.config.prior_config();
    let snr_set = ctx
        .config
        .prior
        .as_ref()
        .and_then(|p| p.snr_set.clone())
        .ok_or_else(|| Error::Config("prior.snr_set is not resolved".into()))?;
    let mut rng = wbp_core::rng::stream(ctx.seed, 0);
    let (prior, records) = choose_prior(
        &ctx.code,
        &snr_set,
        &pcfg,
        pcfg.batch,
        &mut rng,
        ctx.workers,
    )?;

    let scatter_path = ctx.out_dir.join("scatter.csv");
    let mut sf = BufWriter::new(File::create(&scatter_path)?);
    write_scatter_csv(&records, &mut sf)?;
    sf.flush()?;

    let target = records
        .iter()
        .filter(|r| matches!(r.min_decode_tau, Some(t) if t > pcfg.tau_set[0]))
        .count();
    println!(
        "fitted prior from {target} of {} words (decodable only with tau > {}):",
        records.len(),
        pcfg.tau_set[0]
    );
    println!("mu    = ({:.6}, {:.6})", prior.mu[0], prior.mu[1]);
    println!(
        "sigma = diag({:.6e}, {:.6e})",
        prior.sigma[0][0], prior.sigma[1][1]
    );
    println!("scatter -> {}", scatter_path.display());
    Ok(())
}
