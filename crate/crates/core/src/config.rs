//! Line-oriented `key = value` configuration.
//!
//! ```text
//! # comments run to the end of the line
//! transform = drt
//! k = 2
//! aga.population_size = 24
//! shield.alpha = 25
//! ```
//!
//! `transform` is applied before every other key, so `levels` and friends
//! refine the chosen transform's defaults whatever their position.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedMode, EmbedParams};
use crate::error::{Error, Result};
use crate::rs::ShieldParams;
use crate::transform::{TransformKind, TransformParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub embed: EmbedParams,
    pub shield: ShieldParams,
}

impl Default for Config {
    fn default() -> Self {
        Self { embed: EmbedParams::default(), shield: ShieldParams::default() }
    }
}

pub const KEYS: &[&str] = &[
    "transform",
    "seed",
    "k",
    "eta",
    "v",
    "mode",
    "opap",
    "aga_mapping",
    "levels",
    "support_c",
    "degree_d",
    "quant_step",
    "block_size",
    "aga.population_size",
    "aga.base_pc",
    "aga.base_pm",
    "aga.pm_max",
    "aga.stagnation_epsilon",
    "aga.max_generations",
    "aga.elitism_count",
    "shield.th",
    "shield.alpha",
    "shield.trials",
    "shield.stop_ratio",
    "shield.population_size",
    "shield.max_generations",
    "rs.group_size",
    "rs.masks",
    "rs.seed",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidParam(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidParam(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl Config {
    pub fn for_transform(kind: TransformKind) -> Self {
        Self { embed: EmbedParams::for_transform(kind), ..Self::default() }
    }

    /// Parses configuration text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    /// Applies `key = value` pairs, `transform` first, then validates.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        if let Some(t) = pairs.get("transform") {
            self.set("transform", t)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k.as_str() != "transform") {
            self.set(k, v)?;
        }
        self.validate()
    }

    /// Sets one key without validating the whole configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let e = &mut self.embed;
        let t = &mut e.transform;
        let s = &mut self.shield;
        match key {
            "transform" => {
                let kind: TransformKind = value.parse()?;
                *t = TransformParams::for_kind(kind);
            }
            "seed" => {
                let seed: u64 = num(key, value)?;
                e.seed = seed;
                e.aga.seed = seed;
                s.seed = seed;
                s.ga.seed = seed;
            }
            "k" => e.k = num(key, value)?,
            "eta" => e.eta = num(key, value)?,
            "v" => e.v = num(key, value)?,
            "mode" => e.mode = value.parse::<EmbedMode>()?,
            "opap" => e.use_opap = boolean(key, value)?,
            "aga_mapping" => e.use_aga_mapping = boolean(key, value)?,
            "levels" => t.levels = num(key, value)?,
            "support_c" => t.support_c = num(key, value)?,
            "degree_d" => t.degree_d = num(key, value)?,
            "quant_step" => t.quant_step = num(key, value)?,
            "block_size" => {
                t.block_size = num(key, value)?;
                s.block_size = t.block_size;
            }
            "aga.population_size" => e.aga.population_size = num(key, value)?,
            "aga.base_pc" => e.aga.base_pc = num(key, value)?,
            "aga.base_pm" => e.aga.base_pm = num(key, value)?,
            "aga.pm_max" => e.aga.pm_max = num(key, value)?,
            "aga.stagnation_epsilon" => e.aga.stagnation_epsilon = num(key, value)?,
            "aga.max_generations" => e.aga.max_generations = num(key, value)?,
            "aga.elitism_count" => e.aga.elitism_count = num(key, value)?,
            "shield.th" => s.th = num(key, value)?,
            "shield.alpha" => s.alpha = num(key, value)?,
            "shield.trials" => s.trials = num(key, value)?,
            "shield.stop_ratio" => s.stop_ratio = num(key, value)?,
            "shield.population_size" => s.ga.population_size = num(key, value)?,
            "shield.max_generations" => s.ga.max_generations = num(key, value)?,
            "rs.group_size" => s.rs.group_size = num(key, value)?,
            "rs.masks" => s.rs.masks = num(key, value)?,
            "rs.seed" => s.rs.seed = num(key, value)?,
            _ => return Err(Error::InvalidParam(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.shield.validate()
    }
}

/// Splits configuration text into pairs. Duplicate keys are rejected.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidParam(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::InvalidParam(format!("line {}: empty key or value", n + 1)));
        }
        if !KEYS.contains(&k) {
            return Err(Error::InvalidParam(format!("line {}: unknown config key {k:?}", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::InvalidParam(format!("line {}: duplicate key {k:?}", n + 1)));
        }
    }
    Ok(out)
}
