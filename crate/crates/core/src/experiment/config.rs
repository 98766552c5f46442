//! Flat `key = value` experiment files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::DatasetPaths;
use crate::error::{Error, Result};
use crate::lda::GibbsConfig;
use crate::metatrainer::{EpisodeConfig, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetPaths,
    pub dataset: String,
    pub method: Method,
    pub targets: Vec<String>,
    /// Fixed validation categories; empty means three drawn per repetition.
    pub validation: Vec<String>,
    /// Keep every listed target out of training, not only the current one.
    pub exclude_all_targets: bool,
    pub target_docs: usize,
    pub heldout: f64,
    pub repetitions: usize,
    pub base_seed: u64,
    pub out: PathBuf,
    pub episode: EpisodeSettings,
    pub gibbs: GibbsConfig,
    /// Extra test-time EM step counts to score for network methods.
    pub em_sweep: Vec<usize>,
    pub save_models: bool,
}

/// Network settings independent of the method.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub topics: usize,
    pub em_steps: usize,
    pub support_docs: usize,
    pub support_rate: f64,
    pub hidden: usize,
    pub repr_dim: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_interval: usize,
    pub val_episodes: usize,
    pub log_features: bool,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        let d = EpisodeConfig::new(Method::Ours).expect("network method");
        Self {
            topics: d.topics,
            em_steps: d.em_steps,
            support_docs: d.support_docs,
            support_rate: d.support_rate,
            hidden: d.hidden,
            repr_dim: d.repr_dim,
            learning_rate: d.learning_rate,
            dropout: d.dropout,
            max_epochs: d.max_epochs,
            patience: d.patience,
            val_interval: d.val_interval,
            val_episodes: d.val_episodes,
            log_features: d.log_features,
        }
    }
}

impl EpisodeSettings {
    pub fn for_method(&self, method: Method, heldout: f64, seed: u64) -> Result<EpisodeConfig> {
        Ok(EpisodeConfig {
            topics: self.topics,
            em_steps: self.em_steps,
            support_docs: self.support_docs,
            support_rate: self.support_rate,
            heldout,
            hidden: self.hidden,
            repr_dim: self.repr_dim,
            learning_rate: self.learning_rate,
            dropout: self.dropout,
            max_epochs: self.max_epochs,
            patience: self.patience,
            val_interval: self.val_interval,
            val_episodes: self.val_episodes,
            log_features: self.log_features,
            seed,
            ..EpisodeConfig::new(method)?
        })
    }
}

impl ExperimentConfig {
    /// Defaults for everything except the data location and targets.
    pub fn new(data: DatasetPaths, targets: Vec<String>) -> Self {
        Self {
            data,
            dataset: "data".into(),
            method: Method::Ours,
            targets,
            validation: Vec::new(),
            exclude_all_targets: false,
            target_docs: 3,
            heldout: 0.2,
            repetitions: 10,
            base_seed: 0,
            out: PathBuf::from("results"),
            episode: EpisodeSettings::default(),
            gibbs: GibbsConfig::default(),
            em_sweep: Vec::new(),
            save_models: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected 'key = value'"))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate key '{key}'")));
            }
        }
        let mut config = Self::new(DatasetPaths::in_dir(base), Vec::new());
        config.out = base.join("results");
        let mut have_data = false;
        for (key, (line, value)) in &entries {
            config
                .set(key, value, base)
                .map_err(|e| Error::parse(path, *line, e.to_string()))?;
            have_data |= key == "data";
        }
        if !have_data {
            return Err(Error::Config(format!(
                "{}: missing required key 'data'",
                path.display()
            )));
        }
        config.check()?;
        Ok(config)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
        }
        fn list(v: &str) -> Vec<String> {
            v.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        }
        match key {
            "data" => {
                let dir = base.join(value);
                self.data = DatasetPaths::in_dir(&dir);
                if self.dataset == "data" {
                    if let Some(name) = dir.file_name() {
                        self.dataset = name.to_string_lossy().into_owned();
                    }
                }
            }
            "dataset" => self.dataset = value.to_string(),
            "method" => self.method = value.parse()?,
            "targets" => self.targets = list(value),
            "validation" => self.validation = list(value),
            "exclude_all_targets" => self.exclude_all_targets = num(key, value)?,
            "target_docs" => self.target_docs = num(key, value)?,
            "heldout" => self.heldout = num(key, value)?,
            "repetitions" => self.repetitions = num(key, value)?,
            "base_seed" => self.base_seed = num(key, value)?,
            "out" => self.out = base.join(value),
            "save_models" => self.save_models = num(key, value)?,
            "em_sweep" => self.em_sweep = list(value).iter().map(|v| num(key, v)).collect::<Result<_>>()?,
            "topics" => self.episode.topics = num(key, value)?,
            "em_steps" => self.episode.em_steps = num(key, value)?,
            "support_docs" => self.episode.support_docs = num(key, value)?,
            "support_rate" => self.episode.support_rate = num(key, value)?,
            "hidden" => self.episode.hidden = num(key, value)?,
            "repr_dim" => self.episode.repr_dim = num(key, value)?,
            "learning_rate" => self.episode.learning_rate = num(key, value)?,
            "dropout" => self.episode.dropout = num(key, value)?,
            "max_epochs" => self.episode.max_epochs = num(key, value)?,
            "patience" => self.episode.patience = num(key, value)?,
            "val_interval" => self.episode.val_interval = num(key, value)?,
            "val_episodes" => self.episode.val_episodes = num(key, value)?,
            "log_features" => self.episode.log_features = num(key, value)?,
            "lda_sweeps" => self.gibbs.sweeps = num(key, value)?,
            "lda_burn_in" => self.gibbs.burn_in = num(key, value)?,
            "lda_refit_every" => self.gibbs.refit_every = num(key, value)?,
            "lda_alpha" => self.gibbs.alpha = Some(num(key, value)?),
            "lda_beta" => self.gibbs.beta = num(key, value)?,
            "lda_fold_in_sweeps" => self.gibbs.fold_in_sweeps = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn check(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target category is required".into()));
        }
        if self.target_docs == 0 {
            return Err(Error::Config("target_docs must be at least 1".into()));
        }
        if !(self.heldout > 0.0 && self.heldout < 1.0) {
            return Err(Error::Config("heldout must lie strictly between 0 and 1".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| self.validation.contains(t)) {
            return Err(Error::Config(format!("category '{t}' is both target and validation")));
        }
        if self.method.variant().is_some() {
            self.episode
                .for_method(self.method, self.heldout, self.base_seed)?
                .validate()?;
        }
        Ok(())
    }
}
