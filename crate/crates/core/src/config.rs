//! Flat `key = value` run configuration.
//!
//! One config drives every stage. Files use one `key = value` pair per line,
//! `#` comments, and UTF-8; unknown keys are rejected. Precedence is
//! flag > file > default (flag handling lives in the CLI).

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{GenConfig, LabelQuota};
use crate::error::Error;
use crate::models::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::session::{EngineId, SessionLabel};
use crate::Result;

/// Complete run configuration with documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Corpus generation; `gen.seed` is the master seed every stage derives
    /// its stream from.
    pub gen: GenConfig,
    /// Shard count for the aggregation pass.
    pub shards: usize,
    pub prep: PreprocessConfig,
    pub model: ModelConfig,
    pub cv_k: usize,
    pub cv_repeats: usize,
    /// Fixed per-engine sample size of the ratio evaluation.
    pub per_engine_total: usize,
    /// Held-out fraction for standalone train/test splitting.
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gen: GenConfig::default(),
            shards: 4,
            prep: PreprocessConfig::default(),
            model: ModelConfig::default(),
            cv_k: 5,
            cv_repeats: 3,
            per_engine_total: 200,
            test_fraction: 0.3,
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.gen.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.prep.validate()?;
        self.model.validate()?;
        if self.shards == 0 {
            return Err(Error::Config("shards must be at least 1".into()));
        }
        if self.cv_k < 2 {
            return Err(Error::Config("cv_k must be at least 2".into()));
        }
        if self.cv_repeats == 0 {
            return Err(Error::Config("cv_repeats must be at least 1".into()));
        }
        if self.per_engine_total == 0 {
            return Err(Error::Config("per_engine_total must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Serializes every key in documented order; parsing this text
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# searchlab run configuration (resolved)\n");
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };

        push("seed", self.gen.seed.to_string());
        push("dimension", self.gen.dimension.to_string());
        push("catalog_size", self.gen.catalog_size.to_string());
        push("user_count", self.gen.user_count.to_string());
        push("publisher_count", self.gen.publisher_count.to_string());
        push("settings_count", self.gen.settings_count.to_string());
        push("shown_len", self.gen.shown_len.to_string());
        push("max_passes", self.gen.max_passes.to_string());
        push("gamma", self.gen.gamma.to_string());
        push("edit_prob", self.gen.edit_prob.to_string());
        push("relevance_threshold", self.gen.relevance_threshold.to_string());
        push("pref_align_mean", self.gen.pref_align_mean.to_string());
        push("pref_align_sd", self.gen.pref_align_sd.to_string());
        push("pref_align_bonus", self.gen.pref_align_bonus.to_string());
        push("pref_taste_sd", self.gen.pref_taste_sd.to_string());
        push("topic_quality_mean", self.gen.topic_quality_mean.to_string());
        push("topic_quality_sd", self.gen.topic_quality_sd.to_string());
        push("topic_taste_sd", self.gen.topic_taste_sd.to_string());
        for engine in EngineId::NAMED {
            let quota = self
                .gen
                .quotas
                .get(&engine)
                .copied()
                .unwrap_or(LabelQuota { once: 0, twice: 0, multiform: 0, futile: 0 });
            for label in SessionLabel::ALL {
                push(
                    &format!("quota_{}_{}", engine.as_str(), label.as_str()),
                    quota.get(label).to_string(),
                );
            }
        }
        push("shards", self.shards.to_string());
        push("nzv_freq_ratio", self.prep.nzv_freq_ratio_cutoff.to_string());
        push("nzv_unique_pct", self.prep.nzv_unique_pct_cutoff.to_string());
        push("corr_cutoff", self.prep.corr_cutoff.to_string());
        push("pca_variance", self.prep.pca_variance_retained.to_string());
        push("use_pca", self.prep.use_pca.to_string());
        push("knn_k", self.model.knn_k.to_string());
        push("mlr_l2", self.model.mlr_l2.to_string());
        push("mlr_tol", self.model.mlr_tol.to_string());
        push("mlr_max_iter", self.model.mlr_max_iter.to_string());
        push("cv_k", self.cv_k.to_string());
        push("cv_repeats", self.cv_repeats.to_string());
        push("per_engine_total", self.per_engine_total.to_string());
        push("test_fraction", self.test_fraction.to_string());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Applies `key = value` pairs on top of the current values; rejects
    /// unknown keys and malformed values.
    pub fn apply_pairs(&mut self, pairs: BTreeMap<String, String>) -> Result<()> {
        for (key, value) in pairs {
            self.apply_pair(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("quota_") {
            let (engine_str, label_str) = rest.split_once('_').ok_or_else(|| {
                Error::Config(format!("quota key '{key}' must be quota_<engine>_<label>"))
            })?;
            let engine = EngineId::from(engine_str);
            if !EngineId::NAMED.contains(&engine) {
                return Err(Error::Config(format!(
                    "quota key '{key}' names unknown engine '{engine_str}'"
                )));
            }
            let count: usize = parse_value(key, value)?;
            let quota = self
                .gen
                .quotas
                .entry(engine)
                .or_insert(LabelQuota { once: 0, twice: 0, multiform: 0, futile: 0 });
            match label_str {
                "once" => quota.once = count,
                "twice" => quota.twice = count,
                "multiform" => quota.multiform = count,
                "futile" => quota.futile = count,
                other => {
                    return Err(Error::Config(format!(
                        "quota key '{key}' names unknown label '{other}'"
                    )))
                }
            }
            return Ok(());
        }

        match key {
            "seed" => self.gen.seed = parse_value(key, value)?,
            "dimension" => self.gen.dimension = parse_value(key, value)?,
            "catalog_size" => self.gen.catalog_size = parse_value(key, value)?,
            "user_count" => self.gen.user_count = parse_value(key, value)?,
            "publisher_count" => self.gen.publisher_count = parse_value(key, value)?,
            "settings_count" => self.gen.settings_count = parse_value(key, value)?,
            "shown_len" => self.gen.shown_len = parse_value(key, value)?,
            "max_passes" => self.gen.max_passes = parse_value(key, value)?,
            "gamma" => self.gen.gamma = parse_value(key, value)?,
            "edit_prob" => self.gen.edit_prob = parse_value(key, value)?,
            "relevance_threshold" => self.gen.relevance_threshold = parse_value(key, value)?,
            "pref_align_mean" => self.gen.pref_align_mean = parse_value(key, value)?,
            "pref_align_sd" => self.gen.pref_align_sd = parse_value(key, value)?,
            "pref_align_bonus" => self.gen.pref_align_bonus = parse_value(key, value)?,
            "pref_taste_sd" => self.gen.pref_taste_sd = parse_value(key, value)?,
            "topic_quality_mean" => self.gen.topic_quality_mean = parse_value(key, value)?,
            "topic_quality_sd" => self.gen.topic_quality_sd = parse_value(key, value)?,
            "topic_taste_sd" => self.gen.topic_taste_sd = parse_value(key, value)?,
            "shards" => self.shards = parse_value(key, value)?,
            "nzv_freq_ratio" => self.prep.nzv_freq_ratio_cutoff = parse_value(key, value)?,
            "nzv_unique_pct" => self.prep.nzv_unique_pct_cutoff = parse_value(key, value)?,
            "corr_cutoff" => self.prep.corr_cutoff = parse_value(key, value)?,
            "pca_variance" => self.prep.pca_variance_retained = parse_value(key, value)?,
            "use_pca" => self.prep.use_pca = parse_value(key, value)?,
            "knn_k" => self.model.knn_k = parse_value(key, value)?,
            "mlr_l2" => self.model.mlr_l2 = parse_value(key, value)?,
            "mlr_tol" => self.model.mlr_tol = parse_value(key, value)?,
            "mlr_max_iter" => self.model.mlr_max_iter = parse_value(key, value)?,
            "cv_k" => self.cv_k = parse_value(key, value)?,
            "cv_repeats" => self.cv_repeats = parse_value(key, value)?,
            "per_engine_total" => self.per_engine_total = parse_value(key, value)?,
            "test_fraction" => self.test_fraction = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for '{key}': '{value}' ({e})")))
}

/// Parses `key = value` lines into a map; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "config line {}: empty key or value",
                lineno + 1
            )));
        }
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "config line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(pairs)
}
