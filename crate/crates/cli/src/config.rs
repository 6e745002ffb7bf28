use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use qhead_core::data::SyntheticSpec;
use qhead_core::head::HeadConfig;
use qhead_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the feature sequences come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// A QDVR embedding file.
    Path(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    /// Split shuffle seed for file-backed data. Synthetic data splits with its own seed.
    pub split_seed: u64,
    /// Epochs for retraining the discretized architecture after a search.
    /// Defaults to `train.epochs`.
    pub retrain_epochs: Option<usize>,
    pub out: PathBuf,
    pub architecture: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::default(),
            split_seed: 0,
            retrain_epochs: None,
            out: PathBuf::from("qhead-out"),
            architecture: None,
            params: None,
        }
    }
}

/// Command-line values that win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub architecture: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

/// Deserializes JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        what: what.to_string(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        parse_json(text, "config")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_text(path)?)
    }

    /// Config file (or defaults) with flag overrides applied.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(t) = o.threads {
            self.train.threads = t;
        }
        if let Some(a) = &o.architecture {
            self.architecture = Some(a.clone());
        }
        if let Some(p) = &o.params {
            self.params = Some(p.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.head.validate()?;
        self.train.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
            let h = &self.head;
            if (spec.seq_len, spec.feat_dim, spec.n_classes) != (h.seq_len, h.feat_dim, h.n_classes) {
                return Err(CliError::Config(format!(
                    "synthetic dims ({}, {}, {}) differ from head dims ({}, {}, {})",
                    spec.seq_len, spec.feat_dim, spec.n_classes, h.seq_len, h.feat_dim, h.n_classes
                )));
            }
        }
        Ok(())
    }

    /// Stable identifier of everything that determines a run's results.
    pub fn run_id(&self, command: &str) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.train.threads = 1;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let mut h = DefaultHasher::new();
        command.hash(&mut h);
        text.hash(&mut h);
        format!("{command}-{:016x}", h.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).unwrap_err();
        match err {
            CliError::Schema { field, .. } => assert!(field.starts_with("train"), "{field}"),
            e => panic!("{e}"),
        }
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::from_json(r#"{"train": {"seed": 4, "threads": 2}, "out": "a"}"#).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("b".into()),
            threads: None,
            ..Default::default()
        });
        assert_eq!((cfg.train.seed, cfg.train.threads), (9, 2));
        assert_eq!(cfg.out, PathBuf::from("b"));
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.data = DataSource::Synthetic(SyntheticSpec {
            n_per_class: 0,
            ..Default::default()
        });
        assert!(cfg.validate().is_err());
        cfg.data = DataSource::Synthetic(SyntheticSpec {
            feat_dim: 16,
            ..Default::default()
        });
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn run_id_ignores_output_location_and_threads() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.train.threads = 4;
        assert_eq!(a.run_id("search"), b.run_id("search"));
        b.train.seed = 1;
        assert_ne!(a.run_id("search"), b.run_id("search"));
    }
}
