use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Variant;
use crate::datagen::WorldConfig;
use crate::error::{Error, Result};
use crate::models::TransferVariant;
use crate::nncore::HISTORY_SLOTS;

/// Everything one pipeline run depends on. Loaded from `key=value` text;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub dim: usize,
    /// Width of the tiny-model embeddings that become history features.
    pub history_dim: usize,
    pub tiny_hidden: usize,
    pub complete_hidden: Vec<usize>,
    pub shared_attention: bool,
    pub batch_norm: bool,
    pub retention_k: usize,
    pub history_months: usize,
    pub tpm_lr: f64,
    pub tpm_batch: usize,
    pub tpm_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub cpm_epochs: usize,
    pub actr_epochs: usize,
    /// Start each weekly model from last week's instead of from scratch.
    pub cpm_warm_start: bool,
    pub variant: Variant,
    pub transfer: TransferVariant,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            dim: 16,
            history_dim: 16,
            tiny_hidden: 32,
            complete_hidden: vec![128, 64, 32],
            shared_attention: false,
            batch_norm: true,
            retention_k: 3,
            history_months: 3,
            tpm_lr: 0.01,
            tpm_batch: 512,
            tpm_epochs: 1,
            lr: 0.001,
            batch: 256,
            cpm_epochs: 1,
            actr_epochs: 1,
            cpm_warm_start: false,
            variant: Variant::Full,
            transfer: TransferVariant::All,
            seeds: vec![1, 2, 3],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_bias(key: &str, v: &str) -> Result<Option<f64>> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

impl RunConfig {
    /// Leading entries of [`Self::KEYS`] that configure the generator.
    pub const WORLD_KEYS: usize = 20;

    pub const KEYS: &'static [&'static str] = &[
        "users",
        "items",
        "ad_items",
        "latent_dim",
        "horizon_months",
        "drift_rate",
        "drift_planes",
        "natural_per_month",
        "ad_per_month",
        "natural_ctr",
        "ad_ctr",
        "natural_bias",
        "ad_bias",
        "interaction_scale",
        "item_bias_std",
        "user_bias_std",
        "ad_quality_std",
        "ad_hour_std",
        "activity_sigma",
        "popularity_sigma",
        "dim",
        "history_dim",
        "tiny_hidden",
        "complete_hidden",
        "shared_attention",
        "batch_norm",
        "retention_k",
        "history_months",
        "tpm_lr",
        "tpm_batch",
        "tpm_epochs",
        "lr",
        "batch",
        "cpm_epochs",
        "actr_epochs",
        "cpm_warm_start",
        "variant",
        "transfer",
        "seeds",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.world;
        match key {
            "users" => w.users = parse_num(key, value)?,
            "items" => w.items = parse_num(key, value)?,
            "ad_items" => w.ad_items = parse_num(key, value)?,
            "latent_dim" => w.latent_dim = parse_num(key, value)?,
            "horizon_months" => w.horizon_months = parse_num(key, value)?,
            "drift_rate" => w.drift_rate = parse_num(key, value)?,
            "drift_planes" => w.drift_planes = parse_num(key, value)?,
            "natural_per_month" => w.natural_per_month = parse_num(key, value)?,
            "ad_per_month" => w.ad_per_month = parse_num(key, value)?,
            "natural_ctr" => w.natural_ctr = parse_num(key, value)?,
            "ad_ctr" => w.ad_ctr = parse_num(key, value)?,
            "natural_bias" => w.natural_bias = opt_bias(key, value)?,
            "ad_bias" => w.ad_bias = opt_bias(key, value)?,
            "interaction_scale" => w.interaction_scale = parse_num(key, value)?,
            "item_bias_std" => w.item_bias_std = parse_num(key, value)?,
            "user_bias_std" => w.user_bias_std = parse_num(key, value)?,
            "ad_quality_std" => w.ad_quality_std = parse_num(key, value)?,
            "ad_hour_std" => w.ad_hour_std = parse_num(key, value)?,
            "activity_sigma" => w.activity_sigma = parse_num(key, value)?,
            "popularity_sigma" => w.popularity_sigma = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "history_dim" => self.history_dim = parse_num(key, value)?,
            "tiny_hidden" => self.tiny_hidden = parse_num(key, value)?,
            "complete_hidden" => self.complete_hidden = parse_list(key, value)?,
            "shared_attention" => self.shared_attention = parse_num(key, value)?,
            "batch_norm" => self.batch_norm = parse_num(key, value)?,
            "retention_k" => self.retention_k = parse_num(key, value)?,
            "history_months" => self.history_months = parse_num(key, value)?,
            "tpm_lr" => self.tpm_lr = parse_num(key, value)?,
            "tpm_batch" => self.tpm_batch = parse_num(key, value)?,
            "tpm_epochs" => self.tpm_epochs = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "cpm_epochs" => self.cpm_epochs = parse_num(key, value)?,
            "actr_epochs" => self.actr_epochs = parse_num(key, value)?,
            "cpm_warm_start" => self.cpm_warm_start = parse_num(key, value)?,
            "variant" => {
                self.variant = Variant::parse(value.trim())
                    .ok_or_else(|| Error::config(format!("unknown variant `{value}`")))?
            }
            "transfer" => {
                self.transfer = TransferVariant::parse(value.trim())
                    .ok_or_else(|| Error::config(format!("unknown transfer variant `{value}`")))?
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let w = &self.world;
        let bias = |b: Option<f64>| b.map_or_else(|| "auto".to_string(), |v| v.to_string());
        Some(match key {
            "users" => w.users.to_string(),
            "items" => w.items.to_string(),
            "ad_items" => w.ad_items.to_string(),
            "latent_dim" => w.latent_dim.to_string(),
            "horizon_months" => w.horizon_months.to_string(),
            "drift_rate" => w.drift_rate.to_string(),
            "drift_planes" => w.drift_planes.to_string(),
            "natural_per_month" => w.natural_per_month.to_string(),
            "ad_per_month" => w.ad_per_month.to_string(),
            "natural_ctr" => w.natural_ctr.to_string(),
            "ad_ctr" => w.ad_ctr.to_string(),
            "natural_bias" => bias(w.natural_bias),
            "ad_bias" => bias(w.ad_bias),
            "interaction_scale" => w.interaction_scale.to_string(),
            "item_bias_std" => w.item_bias_std.to_string(),
            "user_bias_std" => w.user_bias_std.to_string(),
            "ad_quality_std" => w.ad_quality_std.to_string(),
            "ad_hour_std" => w.ad_hour_std.to_string(),
            "activity_sigma" => w.activity_sigma.to_string(),
            "popularity_sigma" => w.popularity_sigma.to_string(),
            "dim" => self.dim.to_string(),
            "history_dim" => self.history_dim.to_string(),
            "tiny_hidden" => self.tiny_hidden.to_string(),
            "complete_hidden" => join(&self.complete_hidden),
            "shared_attention" => self.shared_attention.to_string(),
            "batch_norm" => self.batch_norm.to_string(),
            "retention_k" => self.retention_k.to_string(),
            "history_months" => self.history_months.to_string(),
            "tpm_lr" => self.tpm_lr.to_string(),
            "tpm_batch" => self.tpm_batch.to_string(),
            "tpm_epochs" => self.tpm_epochs.to_string(),
            "lr" => self.lr.to_string(),
            "batch" => self.batch.to_string(),
            "cpm_epochs" => self.cpm_epochs.to_string(),
            "actr_epochs" => self.actr_epochs.to_string(),
            "cpm_warm_start" => self.cpm_warm_start.to_string(),
            "variant" => self.variant.as_str().to_string(),
            "transfer" => self.transfer.as_str().to_string(),
            "seeds" => join(&self.seeds),
            _ => return None,
        })
    }

    /// Every key in a fixed order; parsing this back gives an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).unwrap_or_default());
        }
        out
    }

    /// Hex prefix of the SHA-256 of [`Self::to_text`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.dim == 0 || self.history_dim == 0 {
            return Err(Error::config("dim and history_dim must be >= 1"));
        }
        if self.tiny_hidden == 0 || self.complete_hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        if self.complete_hidden.is_empty() {
            return Err(Error::config("complete_hidden needs at least one layer"));
        }
        if !(1..=HISTORY_SLOTS).contains(&self.history_months) {
            return Err(Error::config(format!(
                "history_months must be in 1..={HISTORY_SLOTS}"
            )));
        }
        if self.retention_k < HISTORY_SLOTS {
            return Err(Error::config(format!(
                "retention_k must be >= {HISTORY_SLOTS} to serve three-month histories"
            )));
        }
        if self.tpm_batch == 0 || self.batch == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        if self.batch_norm && self.batch < 2 {
            return Err(Error::config("batch norm needs batch >= 2"));
        }
        if self.tpm_epochs == 0 || self.cpm_epochs == 0 || self.actr_epochs == 0 {
            return Err(Error::config("epoch counts must be >= 1"));
        }
        for (k, lr) in [("tpm_lr", self.tpm_lr), ("lr", self.lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("history_months", "2").unwrap();
        c.set("ad_bias", "-4.5").unwrap();
        c.set("complete_hidden", "64,32").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_text("learning_rate=0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn every_key_has_a_getter() {
        let c = RunConfig::default();
        for k in RunConfig::KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let mut c = RunConfig::default();
        c.history_months = 4;
        assert!(c.validate().is_err());
    }
}
