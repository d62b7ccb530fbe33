//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line, UTF-8. `#` starts a comment; blank lines
//! are ignored; later keys override earlier ones. Lists are comma-separated.
//! See [`ExperimentConfig::serialize`] for the full key set with defaults.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedccl::adversarial::AttackConfig;
use fedccl::contrast::Ablation;
use fedccl::datagen::{BaseDataset, DomainTransform, Regime, ScenarioSpec};
use fedccl::federation::{Execution, FederationConfig};
use fedccl::finch::LevelChoice;
use fedccl::numerics::TrainConfig;
use fedccl::signals::SignalKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FedAvg,
    FedCcl,
    FedCclPlus,
    LocalOnly,
    GlobalOnly,
    AvgLocal,
    AvgGlobal,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::FedAvg,
        Method::FedCcl,
        Method::FedCclPlus,
        Method::LocalOnly,
        Method::GlobalOnly,
        Method::AvgLocal,
        Method::AvgGlobal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedCcl => "fedccl",
            Method::FedCclPlus => "fedccl-plus",
            Method::LocalOnly => "local-only",
            Method::GlobalOnly => "global-only",
            Method::AvgLocal => "avg-local",
            Method::AvgGlobal => "avg-global",
        }
    }

    /// Contrast terms the method enables by default.
    fn default_terms(self) -> (bool, bool) {
        match self {
            Method::FedAvg => (false, false),
            Method::LocalOnly => (true, false),
            Method::GlobalOnly => (false, true),
            _ => (true, true),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    None,
    Fgsm,
    Pgd,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        })
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AttackKind::None),
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            _ => Err(format!("unknown attack `{s}` (none, fgsm, pgd)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

fn level_name(level: LevelChoice) -> &'static str {
    match level {
        LevelChoice::Final => "final",
        LevelChoice::LastMultiCluster => "last-multi",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub regime: Regime,
    pub clients: usize,
    pub alpha: f64,
    /// Empty means the built-in domain list.
    pub domains: Vec<DomainTransform>,
    pub dataset: DatasetKind,
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub max_train_per_client: Option<usize>,
    pub max_test_per_client: Option<usize>,
    /// Fixed partition seed; when unset each run seed also seeds the scenario.
    pub scenario_seed: Option<u64>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// `None` defers to the method.
    pub use_local: Option<bool>,
    pub use_global: Option<bool>,
    pub local_weight: f64,
    pub global_weight: f64,
    pub finch_level: LevelChoice,
    pub attack: AttackKind,
    pub eps: f64,
    pub attack_alpha: f64,
    pub attack_steps: usize,
    /// Radius of the final FGSM / PGD evaluation; unset disables it.
    pub eval_eps: Option<f64>,
    pub pgd_eval_steps: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let atk = AttackConfig::<f64>::training_default();
        Self {
            method: Method::FedCcl,
            regime: Regime::ImbalancedIntra,
            clients: 10,
            alpha: 0.5,
            domains: Vec::new(),
            dataset: DatasetKind::Synthetic,
            classes: 10,
            input_dim: 32,
            per_class: 200,
            spread: 0.25,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: None,
            test_limit: None,
            max_train_per_client: None,
            max_test_per_client: None,
            scenario_seed: None,
            rounds: 50,
            local_epochs: 1,
            batch_size: 64,
            learning_rate: 0.01,
            temperature: 0.07,
            hidden: vec![64],
            embedding_dim: 32,
            use_local: None,
            use_global: None,
            local_weight: 1.0,
            global_weight: 1.0,
            finch_level: LevelChoice::Final,
            attack: AttackKind::None,
            eps: atk.epsilon,
            attack_alpha: atk.step_size,
            attack_steps: atk.steps,
            eval_eps: None,
            pgd_eval_steps: 20,
            seeds: vec![1, 2, 3],
            out: PathBuf::from("runs/default"),
            deterministic: false,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(line, key, s))
        .collect()
}

fn optional<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        value(line, key, v).map(Some)
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "method" => self.method = value(line, key, v)?,
            "regime" => {
                self.regime = v.parse().map_err(|e: fedccl::Error| ConfigError::Value {
                    line,
                    key: key.into(),
                    reason: e.to_string(),
                })?
            }
            "clients" => self.clients = value(line, key, v)?,
            "alpha" => self.alpha = value(line, key, v)?,
            "domains" => self.domains = list(line, key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "idx" => DatasetKind::Idx,
                    _ => {
                        return Err(ConfigError::Value {
                            line,
                            key: key.into(),
                            reason: format!("unknown dataset `{v}` (synthetic, idx)"),
                        })
                    }
                }
            }
            "classes" => self.classes = value(line, key, v)?,
            "input_dim" => self.input_dim = value(line, key, v)?,
            "per_class" => self.per_class = value(line, key, v)?,
            "spread" => self.spread = value(line, key, v)?,
            "train_images" => self.train_images = path(v),
            "train_labels" => self.train_labels = path(v),
            "test_images" => self.test_images = path(v),
            "test_labels" => self.test_labels = path(v),
            "train_limit" => self.train_limit = optional(line, key, v)?,
            "test_limit" => self.test_limit = optional(line, key, v)?,
            "max_train_per_client" => self.max_train_per_client = optional(line, key, v)?,
            "max_test_per_client" => self.max_test_per_client = optional(line, key, v)?,
            "scenario_seed" => self.scenario_seed = optional(line, key, v)?,
            "rounds" => self.rounds = value(line, key, v)?,
            "local_epochs" => self.local_epochs = value(line, key, v)?,
            "batch_size" => self.batch_size = value(line, key, v)?,
            "learning_rate" => self.learning_rate = value(line, key, v)?,
            "temperature" => self.temperature = value(line, key, v)?,
            "hidden" => self.hidden = list(line, key, v)?,
            "embedding_dim" => self.embedding_dim = value(line, key, v)?,
            "use_local" => self.use_local = optional(line, key, v)?,
            "use_global" => self.use_global = optional(line, key, v)?,
            "local_weight" => self.local_weight = value(line, key, v)?,
            "global_weight" => self.global_weight = value(line, key, v)?,
            "finch_level" => {
                self.finch_level = match v {
                    "final" => LevelChoice::Final,
                    "last-multi" => LevelChoice::LastMultiCluster,
                    _ => {
                        return Err(ConfigError::Value {
                            line,
                            key: key.into(),
                            reason: format!("unknown level `{v}` (final, last-multi)"),
                        })
                    }
                }
            }
            "attack" => self.attack = value(line, key, v)?,
            "eps" => self.eps = value(line, key, v)?,
            "attack_alpha" => self.attack_alpha = value(line, key, v)?,
            "attack_steps" => self.attack_steps = value(line, key, v)?,
            "eval_eps" => self.eval_eps = optional(line, key, v)?,
            "pgd_eval_steps" => self.pgd_eval_steps = value(line, key, v)?,
            "seeds" => self.seeds = list(line, key, v)?,
            "out" => self.out = PathBuf::from(v),
            "deterministic" => self.deterministic = value(line, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Contrast terms after applying the method defaults.
    pub fn terms(&self) -> (bool, bool) {
        let (l, g) = self.method.default_terms();
        (self.use_local.unwrap_or(l), self.use_global.unwrap_or(g))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, reason: &str| {
            Err(ConfigError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        match self.method {
            Method::FedAvg if self.use_local == Some(true) => {
                return invalid("use_local", "method fedavg has no local contrast term")
            }
            Method::FedAvg if self.use_global == Some(true) => {
                return invalid("use_global", "method fedavg has no global contrast term")
            }
            Method::LocalOnly if self.use_global == Some(true) => {
                return invalid("use_global", "method local-only disables the global term")
            }
            Method::GlobalOnly if self.use_local == Some(true) => {
                return invalid("use_local", "method global-only disables the local term")
            }
            Method::FedCclPlus if self.attack == AttackKind::None => {
                return invalid("attack", "method fedccl-plus needs attack = pgd or fgsm")
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return invalid("seeds", "at least one seed is required");
        }
        if self.dataset == DatasetKind::Idx && (self.train_images.is_none() || self.train_labels.is_none()) {
            return invalid("train_images", "dataset = idx needs train_images and train_labels");
        }
        if self.test_images.is_some() != self.test_labels.is_some() {
            return invalid("test_images", "test_images and test_labels must be given together");
        }
        if !(self.local_weight >= 0.0) || !(self.global_weight >= 0.0) {
            return invalid("local_weight", "contrast weights must be >= 0");
        }
        self.scenario(self.seeds[0]).validate().map_err(core_invalid)?;
        self.federation(self.seeds[0]).validate().map_err(core_invalid)?;
        Ok(())
    }

    pub fn scenario(&self, seed: u64) -> ScenarioSpec {
        let base = match self.dataset {
            DatasetKind::Synthetic => BaseDataset::Synthetic {
                classes: self.classes,
                input_dim: self.input_dim,
                per_class: self.per_class,
                spread: self.spread,
            },
            DatasetKind::Idx => BaseDataset::Idx {
                train_images: self.train_images.clone().unwrap_or_default(),
                train_labels: self.train_labels.clone().unwrap_or_default(),
                test_images: self.test_images.clone(),
                test_labels: self.test_labels.clone(),
            },
        };
        ScenarioSpec {
            regime: self.regime,
            n_clients: self.clients,
            alpha: self.alpha,
            domains: self.domains.clone(),
            base,
            seed: self.scenario_seed.unwrap_or(seed),
            train_limit: self.train_limit,
            test_limit: self.test_limit,
            max_train_per_client: self.max_train_per_client,
            max_test_per_client: self.max_test_per_client,
        }
    }

    pub fn attack_config(&self) -> Option<AttackConfig<f64>> {
        match self.attack {
            AttackKind::None => None,
            AttackKind::Fgsm => Some(AttackConfig::fgsm(self.eps)),
            AttackKind::Pgd => Some(AttackConfig::pgd(self.eps, self.attack_alpha, self.attack_steps)),
        }
    }

    pub fn federation(&self, seed: u64) -> FederationConfig<f64> {
        let (use_local, use_global) = self.terms();
        FederationConfig {
            train: TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                local_epochs: self.local_epochs,
                temperature: self.temperature,
                seed,
            },
            ablation: Ablation {
                use_local,
                use_global,
                local_weight: self.local_weight,
                global_weight: self.global_weight,
            },
            rounds: self.rounds,
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
            local_signals: if self.method == Method::AvgLocal {
                SignalKind::Averaged
            } else {
                SignalKind::Clustered
            },
            global_signals: if self.method == Method::AvgGlobal {
                SignalKind::Averaged
            } else {
                SignalKind::Clustered
            },
            level: self.finch_level,
            adversarial: self.attack_config(),
            robust_eval: self.eval_eps,
            pgd_eval_steps: self.pgd_eval_steps,
            execution: if self.deterministic {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            record_history: false,
        }
    }

    /// Canonical text form listing every key; parses back to an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("method", self.method.to_string());
        kv("regime", self.regime.to_string());
        kv("clients", self.clients.to_string());
        kv("alpha", self.alpha.to_string());
        kv("domains", join(&self.domains));
        kv(
            "dataset",
            match self.dataset {
                DatasetKind::Synthetic => "synthetic",
                DatasetKind::Idx => "idx",
            }
            .into(),
        );
        kv("classes", self.classes.to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("per_class", self.per_class.to_string());
        kv("spread", self.spread.to_string());
        kv("train_images", opt_path(&self.train_images));
        kv("train_labels", opt_path(&self.train_labels));
        kv("test_images", opt_path(&self.test_images));
        kv("test_labels", opt_path(&self.test_labels));
        kv("train_limit", opt(&self.train_limit));
        kv("test_limit", opt(&self.test_limit));
        kv("max_train_per_client", opt(&self.max_train_per_client));
        kv("max_test_per_client", opt(&self.max_test_per_client));
        kv("scenario_seed", opt(&self.scenario_seed));
        kv("rounds", self.rounds.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("temperature", self.temperature.to_string());
        kv("hidden", join(&self.hidden));
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("use_local", opt(&self.use_local));
        kv("use_global", opt(&self.use_global));
        kv("local_weight", self.local_weight.to_string());
        kv("global_weight", self.global_weight.to_string());
        kv("finch_level", level_name(self.finch_level).into());
        kv("attack", self.attack.to_string());
        kv("eps", self.eps.to_string());
        kv("attack_alpha", self.attack_alpha.to_string());
        kv("attack_steps", self.attack_steps.to_string());
        kv("eval_eps", opt(&self.eval_eps));
        kv("pgd_eval_steps", self.pgd_eval_steps.to_string());
        kv("seeds", join(&self.seeds));
        kv("out", self.out.display().to_string());
        kv("deterministic", self.deterministic.to_string());
        s
    }

    /// Canonical text of the keys that fix the data and the protocol length,
    /// independent of the method. Runs are only comparable when these agree.
    pub fn scenario_text(&self) -> String {
        const KEYS: [&str; 20] = [
            "regime",
            "clients",
            "alpha",
            "domains",
            "dataset",
            "classes",
            "input_dim",
            "per_class",
            "spread",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "train_limit",
            "test_limit",
            "max_train_per_client",
            "max_test_per_client",
            "scenario_seed",
            "rounds",
            "seeds",
        ];
        self.serialize()
            .lines()
            .filter(|l| KEYS.iter().any(|k| l.split(" = ").next() == Some(*k)))
            .map(|l| format!("{l}\n"))
            .collect()
    }
}

fn core_invalid(e: fedccl::Error) -> ConfigError {
    match e {
        fedccl::Error::InvalidParameter { field, reason } => ConfigError::Invalid { field, reason },
        other => ConfigError::Invalid {
            field: "config",
            reason: other.to_string(),
        },
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: content.to_string(),
            })?;
            cfg.set(line, key.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!("".parse::<ExperimentConfig>().unwrap(), ExperimentConfig::default());
        assert_eq!(
            "# only a comment\n\n".parse::<ExperimentConfig>().unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn fedavg_with_local_term_rejected() {
        let err = "method = fedavg\nuse_local = true\n".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "use_local", .. }), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = "rounds = 3\n\nbogus = 1\n".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_value_reports_line() {
        let err = "rounds = three".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::Value { line: 1, .. }), "{err}");
        let err = "rounds".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn method_sets_terms() {
        let c: ExperimentConfig = "method = local-only".parse().unwrap();
        assert_eq!(c.terms(), (true, false));
        let c: ExperimentConfig = "method = fedccl\nuse_global = false".parse().unwrap();
        assert_eq!(c.terms(), (true, false));
        assert_eq!("method = fedavg".parse::<ExperimentConfig>().unwrap().terms(), (false, false));
    }

    #[test]
    fn fedccl_plus_needs_attack() {
        assert!("method = fedccl-plus".parse::<ExperimentConfig>().is_err());
        let c: ExperimentConfig = "method = fedccl-plus\nattack = pgd".parse().unwrap();
        assert!(c.federation(1).adversarial.is_some());
    }

    #[test]
    fn round_trip_custom() {
        let text = "method = avg-global\nregime = balanced-inter\nclients = 3\n\
                    domains = identity, rotation:30:2, noise:0.05:1\nhidden = 16,8\n\
                    seeds = 4,5\neval_eps = 0.1\nmax_train_per_client = 100\nuse_local = true\n";
        let c: ExperimentConfig = text.parse().unwrap();
        let again: ExperimentConfig = c.serialize().parse().unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn scenario_text_ignores_method() {
        let a: ExperimentConfig = "method = fedavg".parse().unwrap();
        let b: ExperimentConfig = "method = fedccl".parse().unwrap();
        assert_eq!(a.scenario_text(), b.scenario_text());
        let c: ExperimentConfig = "alpha = 0.1".parse().unwrap();
        assert_ne!(a.scenario_text(), c.scenario_text());
    }
}
