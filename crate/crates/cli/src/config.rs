//! Flat key-value run configuration.
//!
//! The config file is plain text: one `key = value` per line, `#`
//! comments, unknown keys rejected. Command-line flags override file
//! values; built-in defaults fill the rest.

use gale_core::cove::{CoveConfig, LossHyperparams};
use gale_core::econ::FarmSpec;
use gale_core::error::{Error, Result};
use gale_core::nqf::NqfConfig;
use gale_core::series::{Channel, CsvSchema};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Every key the config file may contain.
const KNOWN_KEYS: &[&str] = &[
    "data.path",
    "data.columns.v",
    "data.columns.g",
    "data.columns.p",
    "data.columns.u",
    "data.train_fraction",
    "data.seq_len",
    "data.batch_size",
    "data.seed",
    "farm.capacity_mw",
    "farm.capex_usd",
    "farm.opex_usd_per_yr",
    "farm.fcr",
    "catalog.path",
    "nqf.hidden",
    "nqf.ff",
    "nqf.lr",
    "nqf.epochs",
    "nqf.batch",
    "nqf.seq_len",
    "nqf.levels",
    "nqf.smooth_lambda",
    "nqf.drift_gamma",
    "nqf.bias_weight",
    "nqf.mono_weight",
    "nqf.mono_hard",
    "nqf.seed",
    "cove.hidden",
    "cove.ff",
    "cove.lr",
    "cove.epochs",
    "cove.batch",
    "cove.seq_len",
    "cove.hp.gamma",
    "cove.hp.Gamma",
    "cove.hp.omega",
    "cove.hp.Omega",
    "cove.hp.lambda",
    "cove.hp.Lambda",
    "cove.hp.t_a",
    "cove.storage.tech",
    "cove.storage.rating",
    "cove.storage.duration",
    "cove.seed",
    "search.trials",
    "search.probe_epochs",
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_typed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{raw}`"))),
        }
    }

    fn num(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse_typed::<f64>(key)?.unwrap_or(default))
    }

    fn int(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse_typed::<usize>(key)?.unwrap_or(default))
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        self.get("data.path").map(PathBuf::from)
    }

    pub fn catalog_path(&self) -> Option<PathBuf> {
        self.get("catalog.path").map(PathBuf::from)
    }

    pub fn train_fraction(&self) -> Result<f64> {
        self.num("data.train_fraction", 0.7)
    }

    pub fn data_seed(&self) -> Result<u64> {
        Ok(self.parse_typed::<u64>("data.seed")?.unwrap_or(0))
    }

    pub fn csv_schema(&self) -> CsvSchema {
        let mut schema = CsvSchema::default();
        for (channel, key) in [
            (Channel::WindSpeed, "data.columns.v"),
            (Channel::Generation, "data.columns.g"),
            (Channel::Price, "data.columns.p"),
            (Channel::Load, "data.columns.u"),
        ] {
            let column = self.get(key).unwrap_or(channel.key());
            schema = schema.with_column(channel, column);
        }
        schema
    }

    pub fn farm(&self) -> Result<FarmSpec> {
        let farm = FarmSpec {
            capacity_mw: self.num("farm.capacity_mw", 250.0)?,
            capex_usd: self.num("farm.capex_usd", 3.75e8)?,
            opex_usd_per_yr: self.num("farm.opex_usd_per_yr", 1.0e7)?,
            fcr: self.num("farm.fcr", 0.07)?,
        };
        farm.validate()?;
        Ok(farm)
    }

    fn widths(&self, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => {
                let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("`{key}` needs two comma-separated widths")));
                }
                let a = parts[0]
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: bad width `{}`", parts[0])))?;
                let b = parts[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: bad width `{}`", parts[1])))?;
                Ok((a, b))
            }
        }
    }

    pub fn nqf_config(&self) -> Result<NqfConfig> {
        let defaults = NqfConfig::default();
        let levels = match self.get("nqf.levels") {
            None => defaults.levels.clone(),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("nqf.levels: bad level `{s}`")))
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        // data.seq_len / data.batch_size act as shared defaults when the
        // model-specific keys are absent.
        let seq_default = self.int("data.seq_len", defaults.seq_len)?;
        let batch_default = self.int("data.batch_size", defaults.batch_size)?;
        let cfg = NqfConfig {
            hidden: self.int("nqf.hidden", defaults.hidden)?,
            ff_widths: self.widths("nqf.ff", defaults.ff_widths)?,
            learning_rate: self.num("nqf.lr", defaults.learning_rate)?,
            epochs: self.int("nqf.epochs", defaults.epochs)?,
            batch_size: self.int("nqf.batch", batch_default)?,
            seq_len: self.int("nqf.seq_len", seq_default)?,
            levels,
            smooth_lambda: self.num("nqf.smooth_lambda", defaults.smooth_lambda)?,
            drift_gamma: self.num("nqf.drift_gamma", defaults.drift_gamma)?,
            bias_weight: self.num("nqf.bias_weight", defaults.bias_weight)?,
            mono_weight: self.num("nqf.mono_weight", defaults.mono_weight)?,
            mono_hard: self.parse_typed::<bool>("nqf.mono_hard")?.unwrap_or(defaults.mono_hard),
            seed: self.parse_typed::<u64>("nqf.seed")?.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cove_config(&self) -> Result<CoveConfig> {
        let defaults = CoveConfig::default();
        let hp = LossHyperparams {
            peaking_prefactor: self.num("cove.hp.gamma", defaults.hp.peaking_prefactor)?,
            peaking_degree: self.num("cove.hp.Gamma", defaults.hp.peaking_degree)?,
            baseload_prefactor: self.num("cove.hp.omega", defaults.hp.baseload_prefactor)?,
            baseload_degree: self.num("cove.hp.Omega", defaults.hp.baseload_degree)?,
            adaptive_prefactor: self.num("cove.hp.lambda", defaults.hp.adaptive_prefactor)?,
            adaptive_degree: self.num("cove.hp.Lambda", defaults.hp.adaptive_degree)?,
            adaptive_delay: self.int("cove.hp.t_a", defaults.hp.adaptive_delay)?,
        };
        let seq_default = self.int("data.seq_len", defaults.seq_len)?;
        let batch_default = self.int("data.batch_size", defaults.batch_size)?;
        let cfg = CoveConfig {
            hidden: self.int("cove.hidden", defaults.hidden)?,
            ff_widths: self.widths("cove.ff", defaults.ff_widths)?,
            learning_rate: self.num("cove.lr", defaults.learning_rate)?,
            epochs: self.int("cove.epochs", defaults.epochs)?,
            batch_size: self.int("cove.batch", batch_default)?,
            seq_len: self.int("cove.seq_len", seq_default)?,
            hp,
            seed: self.parse_typed::<u64>("cove.seed")?.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// (technology, rating, duration) for the storage system, if set.
    pub fn storage_choice(&self) -> Result<Option<(String, f64, f64)>> {
        match self.get("cove.storage.tech") {
            None => Ok(None),
            Some(tech) => {
                let rating = self.num("cove.storage.rating", 100.0)?;
                let duration = self.num("cove.storage.duration", 24.0)?;
                Ok(Some((tech.to_string(), rating, duration)))
            }
        }
    }

    pub fn search_trials(&self) -> Result<usize> {
        self.int("search.trials", 20)
    }

    pub fn search_probe_epochs(&self) -> Result<usize> {
        self.int("search.probe_epochs", 10)
    }
}
