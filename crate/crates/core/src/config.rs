//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::{EncoderConfig, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::query::QueryConfig;
use crate::trainer::TrainConfig;

/// Architecture of an encoder + query head pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub query: QueryConfig,
}

/// Everything a `train` run needs besides the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        key: key.to_string(),
        reason: format!("cannot parse `{value}`"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn parse_levels(key: &str, value: &str) -> Result<[usize; NUM_LEVELS]> {
    let v: Vec<usize> = parse_list(key, value)?;
    v.try_into().map_err(|v: Vec<usize>| Error::Config {
        key: key.to_string(),
        reason: format!("expected {NUM_LEVELS} values, got {}", v.len()),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config {
            key: key.to_string(),
            reason: format!("expected a boolean, got `{other}`"),
        }),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// `(key, value)` pairs of a config body, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ModelConfig {
    /// Apply one key; returns `false` when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let enc = &mut self.encoder;
        let q = &mut self.query;
        match key {
            "level_dims" => enc.level_dims = parse_levels(key, value)?,
            "decimation" => enc.decimation = parse_levels(key, value)?,
            "encoder_k" => enc.neighbors_k = parse_value(key, value)?,
            "encoder_seed" => enc.seed = parse_value(key, value)?,
            "query_k" => q.k = parse_value(key, value)?,
            "head_widths" => q.head_widths = parse_list(key, value)?,
            "distance_power" => q.distance_power = parse_value(key, value)?,
            "epsilon" => q.epsilon = parse_value(key, value)?,
            "query_levels" => q.levels = parse_list(key, value)?,
            "votes" => q.votes = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.query.validate()
    }

    pub fn to_text(&self) -> String {
        let (e, q) = (&self.encoder, &self.query);
        let mut s = String::new();
        let _ = writeln!(s, "level_dims = {}", join(&e.level_dims));
        let _ = writeln!(s, "decimation = {}", join(&e.decimation));
        let _ = writeln!(s, "encoder_k = {}", e.neighbors_k);
        let _ = writeln!(s, "encoder_seed = {}", e.seed);
        let _ = writeln!(s, "query_k = {}", q.k);
        let _ = writeln!(s, "head_widths = {}", join(&q.head_widths));
        let _ = writeln!(s, "distance_power = {}", q.distance_power);
        let _ = writeln!(s, "epsilon = {:e}", q.epsilon);
        let _ = writeln!(s, "query_levels = {}", join(&q.levels));
        let _ = writeln!(s, "votes = {}", q.votes);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config {
                    key: k,
                    reason: "unknown key".into(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let a = &mut self.augment;
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_value(key, value)?,
            "queries_per_step" => self.queries_per_step = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "lr_decay" => self.lr_decay = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "class_weighting" => self.class_weighting = parse_bool(key, value)?,
            "retrain" => self.retrain = value.parse()?,
            "augment" => a.enabled = parse_bool(key, value)?,
            "flip" => a.flip = parse_bool(key, value)?,
            "rotate" => a.rotate = parse_bool(key, value)?,
            "noise_sigma" => a.noise_sigma = parse_value(key, value)?,
            "noise_clip" => a.noise_clip = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "steps_per_epoch = {}", self.steps_per_epoch);
        let _ = writeln!(s, "queries_per_step = {}", self.queries_per_step);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "class_weighting = {}", self.class_weighting);
        let _ = writeln!(s, "retrain = {}", self.retrain);
        let _ = writeln!(s, "augment = {}", a.enabled);
        let _ = writeln!(s, "flip = {}", a.flip);
        let _ = writeln!(s, "rotate = {}", a.rotate);
        let _ = writeln!(s, "noise_sigma = {}", a.noise_sigma);
        let _ = writeln!(s, "noise_clip = {}", a.noise_clip);
        s
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            if !cfg.model.set(&k, &v)? && !cfg.train.set(&k, &v)? {
                return Err(Error::Config {
                    key: k,
                    reason: "unknown key".into(),
                });
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        format!("{}{}", self.model.to_text(), self.train.to_text())
    }
}
