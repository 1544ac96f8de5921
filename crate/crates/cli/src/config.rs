//! Run configuration: one sectioned TOML file drives every command.
//!
//! Any field may be omitted; defaults follow the code length (batch sizes,
//! distance bounds and the reliability prior differ between the length-63
//! and length-127 codes). `resolve` expands every default so the config
//! echoed into the output directory reproduces the run when fed back in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use wbp_core::code::{parse_alist, parse_dense, CodeSpec};
use wbp_core::error::{Error, Result};
use wbp_core::eval::{ErrorCountMode, StopRule};
use wbp_core::sampling::{PriorConfig, ReliabilityPrior};
use wbp_core::training::{SamplingStrategy, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// 0 means "use available parallelism".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub code: CodeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<CodeFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_h: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFormat {
    Alist,
    Dense,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arctanh_guard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Random,
    Distance,
    Reliability,
    ReliabilityDistance,
}

impl From<StrategyName> for SamplingStrategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Random => SamplingStrategy::Random,
            StrategyName::Distance => SamplingStrategy::Distance,
            StrategyName::Reliability => SamplingStrategy::Reliability,
            StrategyName::ReliabilityDistance => SamplingStrategy::ReliabilityDistance,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_set: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_per_snr: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmsprop_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmsprop_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tied_weights: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refill_filtered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oversample_factor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_mu: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_var: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_set: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_set: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Frame,
    Bit,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_errors: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<CountMode>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!(
                "config file does not exist: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Code-file location: relative paths are taken relative to the config
    /// file's directory.
    pub fn code_path(&self, config_path: &Path) -> PathBuf {
        let raw = &self.code.path;
        if raw.is_absolute() {
            raw.clone()
        } else {
            config_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(raw)
        }
    }

    /// Load the parity-check matrix named by the config.
    pub fn load_code(&self, config_path: &Path) -> Result<CodeSpec> {
        let path = self.code_path(config_path);
        if !path.exists() {
            return Err(Error::Config(format!(
                "code file does not exist: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(&path)?;
        let code = match self.code.format.unwrap_or(CodeFormat::Alist) {
            CodeFormat::Alist => parse_alist(&text)?,
            CodeFormat::Dense => parse_dense(&text)?,
        };
        let name = match &self.code.name {
            Some(n) => n.clone(),
            None => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "code".to_string()),
        };
        Ok(code.with_name(name).with_t_h(self.code.t_h.unwrap_or(0)))
    }

    /// Expand every omitted field to its effective default for `code`. The
    /// code path is absolutized so the echoed config works from anywhere.
    pub fn resolve(
        &self,
        code: &CodeSpec,
        config_path: &Path,
        seed: u64,
        workers: usize,
    ) -> RunConfig {
        let short = code.n() <= 63;
        let base = TrainConfig::defaults_for(code);
        let mut cfg = self.clone();
        cfg.seed = Some(seed);
        cfg.workers = Some(workers);
        let abs = self.code_path(config_path);
        cfg.code.path = abs.canonicalize().unwrap_or(abs);
        cfg.code.format = Some(cfg.code.format.unwrap_or(CodeFormat::Alist));
        cfg.code.name = Some(code.name().to_string());
        cfg.code.t_h = Some(code.t_h());

        let dec = cfg.decoder.get_or_insert_with(Default::default);
        dec.tau.get_or_insert(base.tau);
        dec.clip.get_or_insert(base.clip);
        dec.arctanh_guard.get_or_insert(base.arctanh_guard);

        let tr = cfg.training.get_or_insert_with(Default::default);
        let strategy = *tr.strategy.get_or_insert(StrategyName::Random);
        tr.snr_set.get_or_insert_with(|| base.snr_set.clone());
        tr.batch_per_snr.get_or_insert(base.batch_per_snr);
        tr.learning_rate.get_or_insert(base.learning_rate);
        tr.rmsprop_beta.get_or_insert(base.rmsprop_beta);
        tr.rmsprop_eps.get_or_insert(base.rmsprop_eps);
        tr.tied_weights.get_or_insert(base.tied_weights);
        tr.refill_filtered.get_or_insert(base.refill_filtered);
        tr.oversample_factor.get_or_insert(base.oversample_factor);
        tr.d_max.get_or_insert(match strategy {
            StrategyName::ReliabilityDistance => {
                if short {
                    3
                } else {
                    5
                }
            }
            _ => {
                if short {
                    2
                } else {
                    4
                }
            }
        });
        tr.prior_mu
            .get_or_insert(if short { [0.025, 0.1] } else { [0.03, 0.1] });
        tr.prior_var.get_or_insert([6.25e-4, 5.625e-3]);
        tr.val_every.get_or_insert(base.val_every);
        tr.patience.get_or_insert(base.patience);
        tr.val_snr_db.get_or_insert(base.val_snr_db);
        tr.val_frames.get_or_insert(base.val_frames);
        tr.max_steps.get_or_insert(base.max_steps);

        let pr = cfg.prior.get_or_insert_with(Default::default);
        pr.tau_set
            .get_or_insert_with(|| PriorConfig::default().tau_set);
        pr.batch.get_or_insert(PriorConfig::default().batch);
        pr.snr_set
            .get_or_insert_with(|| tr.snr_set.clone().expect("resolved above"));

        let ev = cfg.eval.get_or_insert_with(Default::default);
        ev.snr_db
            .get_or_insert_with(|| (1..=10).map(|s| s as f64).collect());
        ev.min_errors.get_or_insert(1000);
        ev.max_frames.get_or_insert(100_000_000);
        ev.count.get_or_insert(CountMode::Frame);
        cfg
    }

    /// The training configuration of a resolved config.
    pub fn train_config(&self, workers: usize) -> Result<TrainConfig> {
        let tr = self
            .training
            .as_ref()
            .ok_or_else(|| Error::Config("missing [training] section".into()))?;
        let dec = self.decoder.clone().unwrap_or_default();
        let strategy: SamplingStrategy = tr
            .strategy
            .ok_or_else(|| Error::Config("training.strategy is not resolved".into()))?
            .into();
        let prior = match (tr.prior_mu, tr.prior_var) {
            (Some(mu), Some(var)) => Some(ReliabilityPrior::diagonal(mu, var)?),
            _ => None,
        };
        Ok(TrainConfig {
            snr_set: tr.snr_set.clone().unwrap_or_default(),
            batch_per_snr: tr.batch_per_snr.unwrap_or(1),
            learning_rate: tr.learning_rate.unwrap_or(0.01),
            rmsprop_beta: tr.rmsprop_beta.unwrap_or(0.99),
            rmsprop_eps: tr.rmsprop_eps.unwrap_or(1e-8),
            tau: dec.tau.unwrap_or(5),
            clip: dec.clip.unwrap_or(10.0),
            arctanh_guard: dec.arctanh_guard.unwrap_or(1e-7),
            tied_weights: tr.tied_weights.unwrap_or(false),
            strategy,
            d_max: tr.d_max,
            oversample_factor: tr.oversample_factor.unwrap_or(5),
            prior: if strategy.uses_prior() { prior } else { None },
            refill_filtered: tr.refill_filtered.unwrap_or(false),
            val_every: tr.val_every.unwrap_or(100),
            patience: tr.patience.unwrap_or(10),
            val_snr_db: tr.val_snr_db.unwrap_or(6.0),
            val_frames: tr.val_frames.unwrap_or(2000),
            max_steps: tr.max_steps.unwrap_or(100_000),
            workers,
        })
    }

    pub fn stop_rule(&self) -> StopRule {
        let ev = self.eval.clone().unwrap_or_default();
        StopRule {
            min_errors: ev.min_errors.unwrap_or(1000),
            max_frames: ev.max_frames.unwrap_or(100_000_000),
            mode: match ev.count.unwrap_or(CountMode::Frame) {
                CountMode::Frame => ErrorCountMode::FrameErrors,
                CountMode::Bit => ErrorCountMode::BitErrors,
            },
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        let pr = self.prior.clone().unwrap_or_default();
        let dflt = PriorConfig::default();
        PriorConfig {
            tau_set: pr.tau_set.unwrap_or(dflt.tau_set),
            batch: pr.batch.unwrap_or(dflt.batch),
        }
    }

    pub fn echo_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot echo config: {e}")))
    }
}
