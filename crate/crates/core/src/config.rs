//! `key = value` run configuration files.
//!
//! One assignment per line, `#` starts a comment. A `preset` line selects the
//! base model configuration and may appear anywhere; every other key
//! overrides a single field. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::blocks::{ConvBlockKind, FftmMode};
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::train::TrainConfig;

pub const MODEL_KEYS: [&str; 11] = [
    "channels",
    "n_ssg",
    "n_fssg",
    "gamma",
    "state",
    "expand",
    "conv_block",
    "fftm",
    "levels",
    "use_freq_loss",
    "lambda_f",
];

pub const TRAIN_KEYS: [&str; 12] = [
    "iterations",
    "batch",
    "patch",
    "lr_init",
    "lr_final",
    "beta1",
    "beta2",
    "weight_decay",
    "seed",
    "log_every",
    "ckpt_every",
    "clip",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_preset("dfssm").unwrap()
    }
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        Ok(RunConfig {
            preset: name.to_string(),
            model: ModelConfig::preset(name)?,
            train: TrainConfig::default(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", no + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), (no + 1, v)).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} set twice", no + 1)));
            }
        }
        let preset = entries.remove("preset").map_or("dfssm".to_string(), |(_, v)| v);
        let mut cfg = RunConfig::from_preset(&preset)?;
        for (k, (no, v)) in &entries {
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {no}: {m}")),
                other => other,
            })?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Overrides one field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "preset" => return Err(Error::Config("preset can only be chosen once, at parse time".into())),
            "channels" => m.channels = num(key, value)?,
            "n_ssg" => m.n_ssg = num(key, value)?,
            "n_fssg" => m.n_fssg = num(key, value)?,
            "gamma" => m.gamma = num(key, value)?,
            "state" => m.state = num(key, value)?,
            "expand" => m.expand = num(key, value)?,
            "conv_block" => m.conv_block = ConvBlockKind::parse(value)?,
            "fftm" => m.fftm = FftmMode::parse(value)?,
            "levels" => m.levels = num(key, value)?,
            "use_freq_loss" => m.use_freq_loss = num(key, value)?,
            "lambda_f" => m.lambda_f = num(key, value)?,
            "iterations" => t.iterations = num(key, value)?,
            "batch" => t.batch = num(key, value)?,
            "patch" => t.patch = num(key, value)?,
            "lr_init" => t.lr_init = num(key, value)?,
            "lr_final" => t.lr_final = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "log_every" => t.log_every = num(key, value)?,
            "ckpt_every" => t.ckpt_every = num(key, value)?,
            "clip" => t.clip = if value == "none" { None } else { Some(num(key, value)?) },
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key, in a form [`RunConfig::parse`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("preset", self.preset.clone());
        put("channels", m.channels.to_string());
        put("n_ssg", m.n_ssg.to_string());
        put("n_fssg", m.n_fssg.to_string());
        put("gamma", m.gamma.to_string());
        put("state", m.state.to_string());
        put("expand", m.expand.to_string());
        put("conv_block", m.conv_block.name().to_string());
        put("fftm", m.fftm.name().to_string());
        put("levels", m.levels.to_string());
        put("use_freq_loss", m.use_freq_loss.to_string());
        put("lambda_f", m.lambda_f.to_string());
        put("iterations", t.iterations.to_string());
        put("batch", t.batch.to_string());
        put("patch", t.patch.to_string());
        put("lr_init", t.lr_init.to_string());
        put("lr_final", t.lr_final.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("seed", t.seed.to_string());
        put("log_every", t.log_every.to_string());
        put("ckpt_every", t.ckpt_every.to_string());
        put("clip", t.clip.map_or("none".to_string(), |c| c.to_string()));
        s
    }
}

/// Seed of the named sub-stream (`"data"`, `"init"`, `"augment"`, ...) of a
/// run seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the seed
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    crate::train::batch_seed(seed ^ h, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips_every_key() {
        let mut cfg = RunConfig::from_preset("toy").unwrap();
        cfg.train.clip = Some(0.5);
        cfg.model.lambda_f = 0.02;
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), 1 + MODEL_KEYS.len() + TRAIN_KEYS.len());
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn preset_applies_before_overrides() {
        let cfg = RunConfig::parse("channels = 16  # wider\n\npreset = toy\nclip = none\n").unwrap();
        assert_eq!(cfg.preset, "toy");
        assert_eq!(cfg.model.channels, 16);
        assert_eq!(cfg.model.n_fssg, ModelConfig::preset("toy").unwrap().n_fssg);
        assert_eq!(cfg.train.clip, None);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_files_are_config_errors() {
        for (text, needle) in [
            ("batch = 2\nbatch = 3", "twice"),
            ("colour = red", "unknown key"),
            ("batch 2", "line 1"),
            ("lr_init = fast", "lr_init"),
            ("preset = huge", "huge"),
            ("channels = 7", "even"),
        ] {
            match RunConfig::parse(text) {
                Err(Error::Config(m)) => assert!(m.contains(needle), "{text:?}: {m}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn substreams_differ_by_name_and_seed() {
        assert_eq!(substream(3, "init"), substream(3, "init"));
        assert_ne!(substream(3, "init"), substream(3, "augment"));
        assert_ne!(substream(3, "init"), substream(4, "init"));
    }
}
