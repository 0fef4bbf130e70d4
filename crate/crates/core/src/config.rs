//! Run configuration: named presets, flat `key = value` files and overrides.
//!
//! Precedence is flags over file over preset. The preset itself may be
//! chosen in the file or by flag (`preset = dcase2018`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densenet::ArchSpec;
use crate::features::FeatureConfig;
use crate::metrics::TuneObjective;
use crate::tensor::AdamConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("unknown preset `{0}` (expected dcase2017 or dcase2018)")]
    UnknownPreset(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Densenet63,
    Densenet120,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Constant rate with early stopping, then a fixed number of epochs at
    /// `finetune_lr` starting from the best weights.
    Finetune {
        finetune_epochs: usize,
        finetune_lr: f64,
    },
    /// Rate halves every `every` epochs.
    Halve { every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub arch: ArchKind,
    pub growth_rate: Option<usize>,
    pub block_layers: Option<Vec<usize>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub schedule: LrSchedule,
    pub max_epochs: usize,
    /// Stop after this many epochs without dev F1 improvement.
    pub patience: Option<usize>,
    pub batch_size: usize,
    /// Probability threshold used for the dev F1 that selects checkpoints.
    pub monitor_threshold: f32,
    pub ensemble_size: usize,
    pub augment_target: Option<usize>,
    pub tau: f32,
    pub rounds: usize,
    pub warm_start: bool,
    pub objective: TuneObjective,
    pub n_mels: usize,
    pub win_s: f64,
    pub hop_s: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn dcase2017() -> Self {
        RunConfig {
            preset: "dcase2017".into(),
            arch: ArchKind::Densenet63,
            growth_rate: None,
            block_layers: None,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
            schedule: LrSchedule::Finetune {
                finetune_epochs: 10,
                finetune_lr: 0.001,
            },
            max_epochs: 200,
            patience: Some(20),
            batch_size: 200,
            monitor_threshold: 0.5,
            ensemble_size: 6,
            augment_target: None,
            tau: 0.9,
            rounds: 2,
            warm_start: true,
            objective: TuneObjective::Tagging,
            n_mels: 64,
            win_s: 0.025,
            hop_s: 0.010,
            seed: 0,
        }
    }

    pub fn dcase2018() -> Self {
        RunConfig {
            preset: "dcase2018".into(),
            arch: ArchKind::Densenet120,
            lr: 0.001,
            schedule: LrSchedule::Halve { every: 10 },
            max_epochs: 30,
            patience: None,
            batch_size: 48,
            objective: TuneObjective::Event,
            ..RunConfig::dcase2017()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "dcase2017" => Ok(Self::dcase2017()),
            "dcase2018" => Ok(Self::dcase2018()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Preset, then `file`, then `overrides`, then validation.
    pub fn resolve(
        preset: Option<&str>,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let file_pairs = match file {
            Some(p) => parse_kv(&fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?)?,
            None => Vec::new(),
        };
        let find = |pairs: &[(String, String)]| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "preset")
                .map(|(_, v)| v.clone())
        };
        let name = find(overrides)
            .or_else(|| preset.map(String::from))
            .or_else(|| find(&file_pairs))
            .unwrap_or_else(|| "dcase2017".into());
        let mut cfg = Self::preset(&name)?;
        for (k, v) in file_pairs.iter().chain(overrides) {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "arch" => {
                self.arch = match v {
                    "densenet63" => ArchKind::Densenet63,
                    "densenet120" => ArchKind::Densenet120,
                    _ => return Err(invalid(key, v, "expected densenet63 or densenet120")),
                }
            }
            "growth_rate" => self.growth_rate = opt(key, v, parse_num)?,
            "block_layers" => self.block_layers = opt(key, v, parse_list)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = opt(key, v, parse_num)?,
            "schedule" => {
                self.schedule = match v {
                    "finetune" => LrSchedule::Finetune {
                        finetune_epochs: 10,
                        finetune_lr: 0.001,
                    },
                    "halve" => LrSchedule::Halve { every: 10 },
                    _ => return Err(invalid(key, v, "expected finetune or halve")),
                }
            }
            "finetune_epochs" | "finetune_lr" => match &mut self.schedule {
                LrSchedule::Finetune {
                    finetune_epochs,
                    finetune_lr,
                } => {
                    if key == "finetune_epochs" {
                        *finetune_epochs = parse_num(key, v)?;
                    } else {
                        *finetune_lr = parse_num(key, v)?;
                    }
                }
                LrSchedule::Halve { .. } => {
                    return Err(invalid(key, v, "schedule is not finetune"))
                }
            },
            "halve_every" => match &mut self.schedule {
                LrSchedule::Halve { every } => *every = parse_num(key, v)?,
                LrSchedule::Finetune { .. } => {
                    return Err(invalid(key, v, "schedule is not halve"))
                }
            },
            "max_epochs" => self.max_epochs = parse_num(key, v)?,
            "patience" => self.patience = opt(key, v, parse_num)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "monitor_threshold" => self.monitor_threshold = parse_num(key, v)?,
            "ensemble_size" => self.ensemble_size = parse_num(key, v)?,
            "augment_target" => self.augment_target = opt(key, v, parse_num)?,
            "tau" => self.tau = parse_num(key, v)?,
            "rounds" => self.rounds = parse_num(key, v)?,
            "warm_start" => self.warm_start = parse_num(key, v)?,
            "objective" => {
                self.objective = match v {
                    "tagging" => TuneObjective::Tagging,
                    "segment" => TuneObjective::Segment,
                    "event" => TuneObjective::Event,
                    _ => return Err(invalid(key, v, "expected tagging, segment or event")),
                }
            }
            "n_mels" => self.n_mels = parse_num(key, v)?,
            "win_s" => self.win_s = parse_num(key, v)?,
            "hop_s" => self.hop_s = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(key, &value, reason))
            }
        };
        check(self.lr > 0.0, "lr", self.lr.to_string(), "must be positive")?;
        check(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "beta1/beta2",
            format!("{}/{}", self.beta1, self.beta2),
            "must lie in [0, 1)",
        )?;
        check(
            self.adam_eps > 0.0,
            "adam_eps",
            self.adam_eps.to_string(),
            "must be positive",
        )?;
        check(
            self.weight_decay >= 0.0,
            "weight_decay",
            self.weight_decay.to_string(),
            "must be non-negative",
        )?;
        check(
            self.max_epochs > 0,
            "max_epochs",
            self.max_epochs.to_string(),
            "must be positive",
        )?;
        check(
            self.batch_size > 0,
            "batch_size",
            self.batch_size.to_string(),
            "must be positive",
        )?;
        check(
            self.patience != Some(0),
            "patience",
            "0".into(),
            "must be positive",
        )?;
        check(
            self.ensemble_size > 0,
            "ensemble_size",
            self.ensemble_size.to_string(),
            "must be positive",
        )?;
        check(
            self.tau > 0.5 && self.tau <= 1.0,
            "tau",
            self.tau.to_string(),
            "must lie in (0.5, 1]",
        )?;
        check(
            self.rounds >= 1,
            "rounds",
            self.rounds.to_string(),
            "must be at least 1",
        )?;
        check(
            self.monitor_threshold > 0.0 && self.monitor_threshold < 1.0,
            "monitor_threshold",
            self.monitor_threshold.to_string(),
            "must lie in (0, 1)",
        )?;
        check(
            self.n_mels > 0,
            "n_mels",
            self.n_mels.to_string(),
            "must be positive",
        )?;
        check(
            self.win_s > 0.0 && self.hop_s > 0.0,
            "win_s/hop_s",
            format!("{}/{}", self.win_s, self.hop_s),
            "must be positive",
        )?;
        if let Some(c) = self.clip_norm {
            check(c > 0.0, "clip_norm", c.to_string(), "must be positive")?;
        }
        match self.schedule {
            LrSchedule::Finetune { finetune_lr, .. } => check(
                finetune_lr > 0.0,
                "finetune_lr",
                finetune_lr.to_string(),
                "must be positive",
            )?,
            LrSchedule::Halve { every } => check(
                every > 0,
                "halve_every",
                every.to_string(),
                "must be positive",
            )?,
        }
        if let Some(g) = self.growth_rate {
            check(g > 0, "growth_rate", g.to_string(), "must be positive")?;
        }
        if let Some(b) = &self.block_layers {
            check(
                b.len() == 4 && b.iter().all(|&n| n > 0),
                "block_layers",
                format!("{b:?}"),
                "need four positive layer counts",
            )?;
        }
        Ok(())
    }

    pub fn arch_spec(&self, n_classes: usize) -> ArchSpec {
        let mut spec = match self.arch {
            ArchKind::Densenet63 => ArchSpec::densenet63(n_classes),
            ArchKind::Densenet120 => ArchSpec::densenet120(n_classes),
        };
        if self.growth_rate.is_some() || self.block_layers.is_some() {
            let g = self.growth_rate.unwrap_or(spec.growth_rate);
            let b = self
                .block_layers
                .clone()
                .unwrap_or_else(|| spec.block_layers.clone());
            spec = spec.scaled(g, b);
        }
        spec.n_mels = self.n_mels;
        spec
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            win_s: self.win_s,
            hop_s: self.hop_s,
            n_mels: self.n_mels,
            ..FeatureConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr as f32,
            beta1: self.beta1 as f32,
            beta2: self.beta2 as f32,
            eps: self.adam_eps as f32,
            weight_decay: self.weight_decay as f32,
            clip_norm: self.clip_norm.map(|c| c as f32),
        }
    }

    /// Learning rate for a main-phase epoch (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Finetune { .. } => self.lr,
            LrSchedule::Halve { every } => self.lr * 0.5f64.powi((epoch / every) as i32),
        }
    }

    /// Canonical `key = value` listing; parses back to the same config.
    pub fn to_kv(&self) -> String {
        let opt_s = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", self.preset.clone());
        kv(
            "arch",
            match self.arch {
                ArchKind::Densenet63 => "densenet63",
                ArchKind::Densenet120 => "densenet120",
            }
            .into(),
        );
        kv(
            "growth_rate",
            opt_s(self.growth_rate.map(|g| g.to_string())),
        );
        kv(
            "block_layers",
            opt_s(
                self.block_layers
                    .as_ref()
                    .map(|b| b.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
            ),
        );
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("clip_norm", opt_s(self.clip_norm.map(|c| c.to_string())));
        match self.schedule {
            LrSchedule::Finetune {
                finetune_epochs,
                finetune_lr,
            } => {
                kv("schedule", "finetune".into());
                kv("finetune_epochs", finetune_epochs.to_string());
                kv("finetune_lr", finetune_lr.to_string());
            }
            LrSchedule::Halve { every } => {
                kv("schedule", "halve".into());
                kv("halve_every", every.to_string());
            }
        }
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", opt_s(self.patience.map(|p| p.to_string())));
        kv("batch_size", self.batch_size.to_string());
        kv("monitor_threshold", self.monitor_threshold.to_string());
        kv("ensemble_size", self.ensemble_size.to_string());
        kv(
            "augment_target",
            opt_s(self.augment_target.map(|t| t.to_string())),
        );
        kv("tau", self.tau.to_string());
        kv("rounds", self.rounds.to_string());
        kv("warm_start", self.warm_start.to_string());
        kv(
            "objective",
            match self.objective {
                TuneObjective::Tagging => "tagging",
                TuneObjective::Segment => "segment",
                TuneObjective::Event => "event",
            }
            .into(),
        );
        kv("n_mels", self.n_mels.to_string());
        kv("win_s", self.win_s.to_string());
        kv("hop_s", self.hop_s.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// FNV-1a over [`RunConfig::to_kv`], as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_kv().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e: T::Err| invalid(key, v, &e.to_string()))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn opt<T>(
    key: &str,
    v: &str,
    f: fn(&str, &str) -> Result<T, ConfigError>,
) -> Result<Option<T>, ConfigError> {
    if v == "none" {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
