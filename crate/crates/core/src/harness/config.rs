use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fec::RsParams;
use crate::training::{TrainConfig, TrainingError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SisoLinear,
    SisoTanh,
    SisoTrace,
    /// Independent random taps per block, no temporal structure.
    SisoRandom,
    MimoLinear,
    MimoTanh,
    MimoTrace,
    MimoModular,
}

impl Scenario {
    pub fn is_siso(self) -> bool {
        matches!(self, Scenario::SisoLinear | Scenario::SisoTanh | Scenario::SisoTrace | Scenario::SisoRandom)
    }

    pub fn needs_trace(self) -> bool {
        matches!(self, Scenario::SisoTrace | Scenario::MimoTrace)
    }

    pub fn has_tanh(self) -> bool {
        matches!(self, Scenario::SisoTanh | Scenario::MimoTanh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverKind {
    Viterbinet,
    ViterbiCsi,
    Deepsic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Joint,
    Online,
    Meta,
    ModularMeta,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Joint => "joint",
            Regime::Online => "online",
            Regime::Meta => "meta",
            Regime::ModularMeta => "modular_meta",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        [Regime::Joint, Regime::Online, Regime::Meta, Regime::ModularMeta]
            .into_iter()
            .find(|r| r.name() == s)
    }

    pub fn is_meta(self) -> bool {
        matches!(self, Regime::Meta | Regime::ModularMeta)
    }
}

/// One experiment: scenario, receiver, regimes and the sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub receiver: ReceiverKind,
    pub regimes: Vec<Regime>,
    pub pilot_blocks: usize,
    pub data_blocks: usize,
    /// Symbols per block; must equal `8n` when given.
    pub block_len: Option<usize>,
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rs: RsParams,
    pub users: usize,
    pub antennas: usize,
    pub memory: usize,
    pub iterations: usize,
    /// 1-based index of the moving user in the modular scenario.
    pub mobile_user: usize,
    pub tanh_scale: f64,
    pub trace: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::SisoLinear,
            receiver: ReceiverKind::Viterbinet,
            regimes: vec![Regime::Joint, Regime::Online, Regime::Meta],
            pilot_blocks: 300,
            data_blocks: 300,
            block_len: None,
            snr_db: vec![12.0],
            seeds: vec![1, 2, 3, 4, 5],
            rs: RsParams::siso_default(),
            users: 4,
            antennas: 4,
            memory: 4,
            iterations: 5,
            mobile_user: 2,
            tanh_scale: 0.5,
            trace: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the SISO finite-memory setting.
    pub fn siso() -> Self {
        ExperimentConfig::default()
    }

    /// Defaults for the `4 x 4` multi-user setting.
    pub fn mimo() -> Self {
        ExperimentConfig {
            scenario: Scenario::MimoLinear,
            receiver: ReceiverKind::Deepsic,
            regimes: vec![Regime::Joint, Regime::Online, Regime::Meta],
            snr_db: vec![14.0],
            rs: RsParams::mimo_default(),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, for callers that apply overrides first.
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads and validates a TOML file. A relative `trace` path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg = Self::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`ExperimentConfig::load`] without the validation step.
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse_toml(&text)?;
        if let (Some(trace), Some(dir)) = (&cfg.trace, path.parent()) {
            if trace.is_relative() {
                cfg.trace = Some(dir.join(trace));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn block_len(&self) -> usize {
        self.rs.codeword_bits()
    }

    /// Rows of a symbol block: one user for SISO, `K` otherwise.
    pub fn streams(&self) -> usize {
        if self.scenario.is_siso() {
            1
        } else {
            self.users
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let siso_receiver = matches!(self.receiver, ReceiverKind::Viterbinet | ReceiverKind::ViterbiCsi);
        if siso_receiver != self.scenario.is_siso() {
            return Err(invalid("receiver", "viterbinet and viterbi_csi need a siso scenario, deepsic a mimo one"));
        }
        if let Some(b) = self.block_len {
            if b != self.rs.codeword_bits() {
                return Err(invalid("block_len", format!("must equal 8n = {}", self.rs.codeword_bits())));
            }
        }
        if self.regimes.is_empty() {
            return Err(invalid("regimes", "at least one regime is required"));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if *r == Regime::ModularMeta && self.receiver != ReceiverKind::Deepsic {
                return Err(invalid(format!("regimes[{i}]"), "modular_meta needs the deepsic receiver"));
            }
        }
        if self.data_blocks == 0 {
            return Err(invalid("data_blocks", "must be at least 1"));
        }
        let min_pilots = if self.regimes.iter().any(|r| r.is_meta()) && self.receiver != ReceiverKind::ViterbiCsi {
            2
        } else {
            1
        };
        if self.pilot_blocks < min_pilots {
            return Err(invalid("pilot_blocks", format!("must be at least {min_pilots}")));
        }
        if self.snr_db.is_empty() {
            return Err(invalid("snr_db", "at least one SNR is required"));
        }
        if let Some(i) = self.snr_db.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("snr_db[{i}]"), "must be finite"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.scenario.is_siso() {
            if !(1..=10).contains(&self.memory) {
                return Err(invalid("memory", "must lie in 1..=10"));
            }
        } else {
            if self.users == 0 {
                return Err(invalid("users", "must be at least 1"));
            }
            if self.antennas == 0 {
                return Err(invalid("antennas", "must be at least 1"));
            }
            if self.iterations == 0 {
                return Err(invalid("iterations", "must be at least 1"));
            }
        }
        let modular = self.scenario == Scenario::MimoModular || self.regimes.contains(&Regime::ModularMeta);
        if modular && !(1..=self.users).contains(&self.mobile_user) {
            return Err(invalid("mobile_user", format!("must lie in 1..={}", self.users)));
        }
        if self.scenario.has_tanh() && !(self.tanh_scale.is_finite() && self.tanh_scale > 0.0) {
            return Err(invalid("tanh_scale", "must be positive"));
        }
        if self.scenario.needs_trace() && self.trace.is_none() {
            return Err(invalid("trace", "this scenario reads a tap trace"));
        }
        self.train.validate().map_err(|e| match e {
            TrainingError::InvalidConfig { field, message } => invalid(format!("train.{field}"), message),
            other => invalid("train", other.to_string()),
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::siso().validate().unwrap();
        ExperimentConfig::mimo().validate().unwrap();
        assert_eq!(ExperimentConfig::siso().block_len(), 136);
        assert_eq!(ExperimentConfig::mimo().block_len(), 152);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::mimo();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("data_blocks = 7\n[train]\nmeta_every = 3\n").unwrap();
        assert_eq!(cfg.data_blocks, 7);
        assert_eq!(cfg.train.meta_every, 3);
        assert_eq!(cfg.train.sgd_iterations, 200);
    }

    fn path_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { path, .. } => path,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_toml("receiver = \"deepsic\"").unwrap_err();
        assert_eq!(path_of(e), "receiver");
        let e = ExperimentConfig::from_toml("block_len = 100").unwrap_err();
        assert_eq!(path_of(e), "block_len");
        let e = ExperimentConfig::from_toml("[train]\nmeta_every = 0").unwrap_err();
        assert_eq!(path_of(e), "train.meta_every");
        let e = ExperimentConfig::from_toml("scenario = \"siso_trace\"").unwrap_err();
        assert_eq!(path_of(e), "trace");
        let e = ExperimentConfig::from_toml("regimes = [\"modular_meta\"]").unwrap_err();
        assert_eq!(path_of(e), "regimes[0]");
        let e = ExperimentConfig::from_toml(
            "scenario = \"mimo_modular\"\nreceiver = \"deepsic\"\nmobile_user = 5\n[rs]\nn = 19\nk = 15",
        )
        .unwrap_err();
        assert_eq!(path_of(e), "mobile_user");
        assert!(matches!(
            ExperimentConfig::from_toml("bogus = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("[rs]\nn = 10\nk = 12"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn regime_names_round_trip() {
        for r in [Regime::Joint, Regime::Online, Regime::Meta, Regime::ModularMeta] {
            assert_eq!(Regime::parse(r.name()), Some(r));
        }
        assert_eq!(Regime::parse("bogus"), None);
    }
}
