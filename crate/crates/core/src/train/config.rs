//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::cbs::CbsConfig;
use crate::cld::{CldConfig, Strategy, TargetSource};
use crate::loss::LossWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which pieces of the system a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Single stream, plain cross-entropy on the given labels.
    Baseline,
    /// Clean-label masks only; no balancing, no noisy branch.
    CldOnly,
    /// Class-balanced masks only; no label filtering, no noisy branch.
    CbsOnly,
    /// Both masks, single stream.
    CldCbs,
    /// Full system: both masks plus the noisy branch and feature fusion.
    NaCld,
}

impl Ablation {
    pub fn uses_cld(self) -> bool {
        matches!(self, Ablation::CldOnly | Ablation::CldCbs | Ablation::NaCld)
    }

    pub fn uses_cbs(self) -> bool {
        matches!(self, Ablation::CbsOnly | Ablation::CldCbs | Ablation::NaCld)
    }

    pub fn dual_stream(self) -> bool {
        matches!(self, Ablation::NaCld)
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Ablation::Baseline),
            "cld_only" => Ok(Ablation::CldOnly),
            "cbs_only" => Ok(Ablation::CbsOnly),
            "cld_cbs" => Ok(Ablation::CldCbs),
            "na_cld" => Ok(Ablation::NaCld),
            other => Err(format!(
                "unknown ablation '{other}' (expected baseline|cld_only|cbs_only|cld_cbs|na_cld)"
            )),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::Baseline => "baseline",
            Ablation::CldOnly => "cld_only",
            Ablation::CbsOnly => "cbs_only",
            Ablation::CldCbs => "cld_cbs",
            Ablation::NaCld => "na_cld",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Validation dataset; when absent, evaluation runs against the training
    /// set's clean labels.
    pub val_dir: Option<PathBuf>,
    /// Evaluate every N epochs (the final epoch is always evaluated).
    pub eval_every: usize,
    /// Checkpoint every N epochs (the final epoch is always checkpointed).
    pub checkpoint_every: usize,
    pub cld: CldConfig,
    pub cbs: CbsConfig,
    pub model_widths: Vec<usize>,
    pub model_strides: Vec<usize>,
    pub fusion_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 6,
            lr0: 1e-3,
            poly_power: 0.9,
            momentum: 0.9,
            weights: LossWeights::default(),
            ablation: Ablation::NaCld,
            seed: 0,
            data_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            val_dir: None,
            eval_every: 1,
            checkpoint_every: 1,
            cld: CldConfig::default(),
            cbs: CbsConfig::default(),
            model_widths: vec![8, 16, 32, 64],
            model_strides: vec![2, 2, 2, 1],
            fusion_hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return bad(format!("poly_power must be positive, got {}", self.poly_power));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        self.weights.validate().map_err(ConfigError::Invalid)?;
        self.cld.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cbs.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval_every < 1 || self.checkpoint_every < 1 {
            return bad("eval_every and checkpoint_every must be >= 1".into());
        }
        if self.data_dir.as_os_str().is_empty() {
            return bad("data_dir is required".into());
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir is required".into());
        }
        if self.model_widths.is_empty() || self.model_widths.len() != self.model_strides.len() {
            return bad("model.widths and model.strides must be non-empty and equal length".into());
        }
        if self.fusion_hidden == 0 {
            return bad("model.fusion_hidden must be positive".into());
        }
        Ok(())
    }

    /// Parses the flat `key = value` format. `#` starts a comment; unknown
    /// keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse { line: lineno + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Applies one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| format!("{key}: {e}"))
        }
        fn int_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
            value
                .split(',')
                .map(|v| v.trim().parse().map_err(|e| format!("{key}: {e}")))
                .collect()
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "poly_power" => self.poly_power = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "lambda1" => self.weights.lambda1 = num(key, value)?,
            "lambda2" => self.weights.lambda2 = num(key, value)?,
            "ablation" => self.ablation = Ablation::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "val_dir" => self.val_dir = Some(PathBuf::from(value)),
            "eval_every" => self.eval_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "cld.strategy" => {
                self.cld.strategy = match value.to_ascii_lowercase().as_str() {
                    "strategy1" | "1" => Strategy::Strategy1,
                    "strategy2" | "2" => Strategy::Strategy2,
                    other => return Err(format!("unknown strategy '{other}'")),
                }
            }
            "cld.gamma" => self.cld.gamma = num(key, value)?,
            "cld.warmup_epochs" => self.cld.warmup_epochs = num(key, value)?,
            "cld.target_source" => {
                self.cld.target_source = match value.to_ascii_lowercase().as_str() {
                    "vote" => TargetSource::Vote,
                    "given" => TargetSource::Given,
                    other => return Err(format!("unknown target source '{other}'")),
                }
            }
            "cbs.rho" => self.cbs.rho = num(key, value)?,
            "cbs.resample_each_batch" => self.cbs.resample_each_batch = num(key, value)?,
            "model.widths" => self.model_widths = int_list(key, value)?,
            "model.strides" => self.model_strides = int_list(key, value)?,
            "model.fusion_hidden" => self.fusion_hidden = num(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Serializes back to the flat format, in a fixed key order.
    pub fn to_flat_kv(&self) -> String {
        let strategy = match self.cld.strategy {
            Strategy::Strategy1 => "strategy1",
            Strategy::Strategy2 => "strategy2",
        };
        let target_source = match self.cld.target_source {
            TargetSource::Vote => "vote",
            TargetSource::Given => "given",
        };
        let ints = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("lr0", self.lr0.to_string());
        push("poly_power", self.poly_power.to_string());
        push("momentum", self.momentum.to_string());
        push("lambda1", self.weights.lambda1.to_string());
        push("lambda2", self.weights.lambda2.to_string());
        push("ablation", self.ablation.to_string());
        push("seed", self.seed.to_string());
        push("data_dir", self.data_dir.display().to_string());
        push("out_dir", self.out_dir.display().to_string());
        if let Some(v) = &self.val_dir {
            push("val_dir", v.display().to_string());
        }
        push("eval_every", self.eval_every.to_string());
        push("checkpoint_every", self.checkpoint_every.to_string());
        push("cld.strategy", strategy.to_string());
        push("cld.gamma", self.cld.gamma.to_string());
        push("cld.warmup_epochs", self.cld.warmup_epochs.to_string());
        push("cld.target_source", target_source.to_string());
        push("cbs.rho", self.cbs.rho.to_string());
        push("cbs.resample_each_batch", self.cbs.resample_each_batch.to_string());
        push("model.widths", ints(&self.model_widths));
        push("model.strides", ints(&self.model_strides));
        push("model.fusion_hidden", self.fusion_hidden.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "\
# experiment
epochs = 12
batch_size=4
ablation = cld_cbs
cld.gamma = 0.8
cld.strategy = strategy1
cbs.rho = 7
model.widths = 4,8,16,32
model.strides = 2,2,2,1
data_dir = /tmp/data
out_dir = /tmp/out
";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.epochs, 12);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.ablation, Ablation::CldCbs);
        assert_eq!(cfg.cld.gamma, 0.8);
        assert_eq!(cfg.cld.strategy, Strategy::Strategy1);
        assert_eq!(cfg.cbs.rho, 7.0);
        assert_eq!(cfg.model_widths, vec![4, 8, 16, 32]);
        assert!(cfg.validate().is_ok());

        let echoed = TrainConfig::parse(&cfg.to_flat_kv()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_error() {
        assert!(TrainConfig::parse("no_such_key = 1").is_err());
        assert!(TrainConfig::parse("epochs = many").is_err());
        assert!(TrainConfig::parse("ablation = everything").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected_before_training() {
        let mut cfg = TrainConfig::default();
        cfg.data_dir = PathBuf::from("/tmp/x");
        cfg.out_dir = PathBuf::from("/tmp/y");
        assert!(cfg.validate().is_ok());
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        cfg.lr0 = -0.5;
        assert!(cfg.validate().is_err());
        cfg.lr0 = 1e-3;
        cfg.cld.gamma = 1.5;
        assert!(cfg.validate().is_err());
    }
}
