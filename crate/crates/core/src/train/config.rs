use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::TrainError;

/// Label type the network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Phoc,
    Softmax,
}

impl FromStr for TrainMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "phoc" => Ok(TrainMode::Phoc),
            "softmax" => Ok(TrainMode::Softmax),
            other => Err(TrainError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Phoc => "phoc",
            TrainMode::Softmax => "softmax",
        }
    }
}

/// How the per-sample loss gradient is scaled over the label vector. The
/// logged loss is always the mean over attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNormalization {
    /// Gradient of the sum over attributes (the convention of the original
    /// Caffe training setup).
    Sum,
    /// Gradient of the mean over attributes.
    Mean,
}

impl FromStr for LossNormalization {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "sum" => Ok(LossNormalization::Sum),
            "mean" => Ok(LossNormalization::Mean),
            other => Err(TrainError::InvalidConfig(format!("unknown loss normalization {other:?}"))),
        }
    }
}

impl LossNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            LossNormalization::Sum => "sum",
            LossNormalization::Mean => "mean",
        }
    }
}

/// SGD hyperparameters and run length. Defaults are the PHOCNet settings:
/// batch 10, momentum 0.9, weight decay 5e-5, learning rate 1e-4 divided by
/// 10 at iteration 70 000 of 80 000.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub total_iterations: u64,
    pub lr_drop_iteration: u64,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub log_every: u64,
    pub threads: usize,
    pub loss_normalization: LossNormalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            momentum: 0.9,
            weight_decay: 5e-5,
            base_lr: 1e-4,
            total_iterations: 80_000,
            lr_drop_iteration: 70_000,
            lr_drop_factor: 10.0,
            seed: 42,
            mode: TrainMode::Phoc,
            log_every: 100,
            threads: 1,
            loss_normalization: LossNormalization::Sum,
        }
    }
}

const KEYS: [&str; 12] = [
    "batch_size",
    "momentum",
    "weight_decay",
    "base_lr",
    "total_iterations",
    "lr_drop_iteration",
    "lr_drop_factor",
    "seed",
    "mode",
    "log_every",
    "threads",
    "loss_normalization",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::InvalidConfig(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    /// Softmax baseline: 500 000 iterations with the drop at 250 000.
    pub fn softmax_preset() -> Self {
        Self {
            total_iterations: 500_000,
            lr_drop_iteration: 250_000,
            mode: TrainMode::Softmax,
            ..Self::default()
        }
    }

    pub fn preset(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Phoc => Self::default(),
            TrainMode::Softmax => Self::softmax_preset(),
        }
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "total_iterations" => self.total_iterations = parse(key, value)?,
            "lr_drop_iteration" => self.lr_drop_iteration = parse(key, value)?,
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "log_every" => self.log_every = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "loss_normalization" => self.loss_normalization = value.trim().parse()?,
            other => return Err(TrainError::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| TrainError::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Reads a config file. A `mode` key selects the preset the remaining
    /// keys override.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut probe = Self::default();
        probe.apply_kv(&text)?;
        let mut config = Self::preset(probe.mode);
        config.apply_kv(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "momentum = {}", self.momentum);
        let _ = writeln!(out, "weight_decay = {:e}", self.weight_decay);
        let _ = writeln!(out, "base_lr = {:e}", self.base_lr);
        let _ = writeln!(out, "total_iterations = {}", self.total_iterations);
        let _ = writeln!(out, "lr_drop_iteration = {}", self.lr_drop_iteration);
        let _ = writeln!(out, "lr_drop_factor = {}", self.lr_drop_factor);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "mode = {}", self.mode.as_str());
        let _ = writeln!(out, "log_every = {}", self.log_every);
        let _ = writeln!(out, "threads = {}", self.threads);
        let _ = writeln!(out, "loss_normalization = {}", self.loss_normalization.as_str());
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_owned()));
        if self.batch_size == 0 || self.total_iterations == 0 || self.log_every == 0 || self.threads == 0 {
            return bad("batch_size, total_iterations, log_every and threads must be positive");
        }
        if !(self.base_lr > 0.0 && self.lr_drop_factor > 0.0) {
            return bad("base_lr and lr_drop_factor must be positive");
        }
        if !(self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return bad("momentum and weight_decay must be non-negative");
        }
        if self.lr_drop_iteration > self.total_iterations {
            return bad("lr_drop_iteration exceeds total_iterations");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let c = TrainConfig {
            seed: 7,
            base_lr: 3e-3,
            threads: 2,
            loss_normalization: LossNormalization::Mean,
            ..TrainConfig::softmax_preset()
        };
        let mut back = TrainConfig::default();
        back.apply_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_selects_preset_by_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        fs::write(&path, "# baseline\nmode = softmax\nbatch_size=4  # small\n").unwrap();
        let c = TrainConfig::from_file(&path).unwrap();
        assert_eq!(c.total_iterations, 500_000);
        assert_eq!(c.lr_drop_iteration, 250_000);
        assert_eq!(c.batch_size, 4);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainConfig::default();
        assert!(c.apply_kv("nonsense").is_err());
        assert!(c.apply_kv("colour = red").is_err());
        assert!(c.apply_kv("batch_size = ten").is_err());
        let c = TrainConfig {
            lr_drop_iteration: 90_000,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
