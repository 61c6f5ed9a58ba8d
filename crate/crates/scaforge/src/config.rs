//! TOML run configuration.
//!
//! Relative paths inside the file are resolved against the file's own
//! directory. Everything is validated on load so that a bad file is
//! rejected before any command touches the output directory.

use std::path::{Path, PathBuf};

use scaforge_core::aes::ByteIndex;
use scaforge_core::forest::{ForestConfig, MaxFeatures};
use scaforge_core::keyrank::{KeyRankConfig, DEFAULT_STEP};
use scaforge_core::nn::{NetConfig, RmsPropConfig, TrainConfig};
use scaforge_core::sim::{KeyMode, LeakModel, SimConfig};
use scaforge_core::traces::FeatureIndexList;
use serde::Deserialize;
use thiserror::Error;

use crate::checkpoint::ModelKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl From<scaforge_core::Error> for ConfigError {
    fn from(e: scaforge_core::Error) -> Self {
        invalid(e.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub preprocessing: PreprocessingSection,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Profiling set in SCAT format.
    pub path: Option<PathBuf>,
    /// Attack set, used only by `run`.
    pub attack_path: Option<PathBuf>,
    pub simulator: Option<SimulatorSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakModelName {
    HammingWeight,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyModeName {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    pub trace_len: usize,
    pub leak_points: Vec<usize>,
    #[serde(default = "default_leak_model")]
    pub leak_model: LeakModelName,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub baseline: f64,
    #[serde(default = "default_key_mode")]
    pub key_mode: KeyModeName,
    /// 16-byte key as 32 hex digits; required for fixed-key profiling.
    pub key: Option<String>,
    #[serde(default = "default_byte_index")]
    pub byte_index: usize,
    #[serde(default)]
    pub seed: u64,
    pub n_profiling: usize,
    pub n_attack: usize,
    /// Key used for the attack set; defaults to `key`.
    pub attack_key: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessingSection {
    #[serde(default = "yes")]
    pub standardize: bool,
    pub feature_file: Option<PathBuf>,
    pub top_k: Option<usize>,
}

impl Default for PreprocessingSection {
    fn default() -> Self {
        Self { standardize: true, feature_file: None, top_k: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MaxFeaturesValue {
    Count(usize),
    Name(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeaturesValue,
    pub seed: u64,
}

impl Default for ForestSection {
    fn default() -> Self {
        let d = ForestConfig::default();
        Self {
            n_trees: d.n_trees,
            max_depth: d.max_depth,
            min_samples_leaf: d.min_samples_leaf,
            max_features: MaxFeaturesValue::Name("sqrt".into()),
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub channels: Vec<usize>,
    pub dense_hidden: usize,
    pub dropout_p: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self { channels: vec![8, 16, 16, 32], dense_hidden: 128, dropout_p: 0.5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_rate: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let o = t.optimizer;
        Self {
            lr: o.lr,
            weight_decay: o.weight_decay,
            decay_rate: o.decay_rate,
            eps: o.eps,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub n_traces: Option<usize>,
    pub step: usize,
    pub epsilon: f64,
    /// Key byte as two hex digits; defaults to the attack set's key.
    pub true_key: Option<String>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { n_traces: None, step: DEFAULT_STEP, epsilon: KeyRankConfig::default().epsilon, true_key: None }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
}

fn default_leak_model() -> LeakModelName {
    LeakModelName::HammingWeight
}
fn default_key_mode() -> KeyModeName {
    KeyModeName::Fixed
}
fn default_byte_index() -> usize {
    ByteIndex::default().get()
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

pub fn parse_key16(s: &str) -> Result<[u8; 16], String> {
    let mut key = [0u8; 16];
    hex::decode_to_slice(s.trim(), &mut key).map_err(|e| format!("key {s:?}: {e} (need 32 hex digits)"))?;
    Ok(key)
}

pub fn parse_key_byte(s: &str) -> Result<u8, String> {
    let t = s.trim();
    let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    let mut b = [0u8; 1];
    hex::decode_to_slice(t, &mut b).map_err(|e| format!("key byte {s:?}: {e} (need 2 hex digits)"))?;
    Ok(b[0])
}

/// Simulator settings for the two generated sets.
#[derive(Debug, Clone)]
pub struct SimPlan {
    pub profiling: SimConfig,
    pub attack: SimConfig,
    pub n_profiling: usize,
    pub n_attack: usize,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().replace('\n', " ");
            match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    ConfigError::Parse(format!("line {line}: {msg}"))
                }
                None => ConfigError::Parse(msg),
            }
        })?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.dataset.path,
            &mut self.dataset.attack_path,
            &mut self.preprocessing.feature_file,
            &mut self.output.directory,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match (&self.dataset.path, &self.dataset.simulator) {
            (Some(_), Some(_)) => return Err(invalid("dataset: give either path or simulator, not both")),
            (None, None) => return Err(invalid("dataset: one of path or simulator is required")),
            _ => {}
        }
        if self.dataset.simulator.is_some() && self.dataset.attack_path.is_some() {
            return Err(invalid("dataset: attack_path only applies with path"));
        }
        let plan = self.sim_plan()?;
        if self.preprocessing.feature_file.is_some() && self.preprocessing.top_k.is_some() {
            return Err(invalid("preprocessing: give either feature_file or top_k, not both"));
        }
        if self.preprocessing.top_k == Some(0) {
            return Err(invalid("preprocessing: top_k must be >= 1"));
        }
        if let Some(model) = &self.model {
            self.forest_config()?;
            self.train_config()?;
            if matches!(model.kind, ModelKind::Cnn | ModelKind::Resnet) {
                if let Some(plan) = &plan {
                    let width = self.preprocessing.top_k.unwrap_or(plan.profiling.trace_len).min(plan.profiling.trace_len);
                    self.net_config(width)?;
                }
            }
        }
        self.rank_config()?;
        if self.attack.step == 0 {
            return Err(invalid("attack: step must be >= 1"));
        }
        if self.attack.n_traces == Some(0) {
            return Err(invalid("attack: n_traces must be >= 1"));
        }
        if let Some(k) = &self.attack.true_key {
            parse_key_byte(k).map_err(|e| invalid(format!("attack: {e}")))?;
        }
        Ok(())
    }

    /// Sets every seed in the file to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(sim) = &mut self.dataset.simulator {
            sim.seed = seed;
        }
        if let Some(model) = &mut self.model {
            model.forest.seed = seed;
            model.train.seed = seed;
        }
    }

    /// Simulator settings, or `None` when the dataset comes from a file.
    /// The attack set uses a fixed key and the next seed.
    pub fn sim_plan(&self) -> Result<Option<SimPlan>, ConfigError> {
        let Some(s) = &self.dataset.simulator else { return Ok(None) };
        let key = s.key.as_deref().map(parse_key16).transpose().map_err(|e| invalid(format!("simulator: {e}")))?;
        let attack_key =
            s.attack_key.as_deref().map(parse_key16).transpose().map_err(|e| invalid(format!("simulator: {e}")))?;
        let key_mode = match s.key_mode {
            KeyModeName::Fixed => KeyMode::Fixed(key.ok_or_else(|| invalid("simulator: fixed key_mode needs key"))?),
            KeyModeName::Variable => KeyMode::Variable,
        };
        let attack_key = attack_key
            .or(key)
            .ok_or_else(|| invalid("simulator: attack_key is required with variable key_mode"))?;
        if s.n_profiling == 0 || s.n_attack == 0 {
            return Err(invalid("simulator: n_profiling and n_attack must be >= 1"));
        }
        let profiling = SimConfig {
            trace_len: s.trace_len,
            leak_points: FeatureIndexList::new(s.leak_points.clone(), s.trace_len)?,
            leak_model: match s.leak_model {
                LeakModelName::HammingWeight => LeakModel::HammingWeight,
                LeakModelName::Value => LeakModel::Value,
            },
            amplitude: s.amplitude,
            noise_sigma: s.noise_sigma,
            baseline: s.baseline,
            key_mode,
            byte_index: ByteIndex::new(s.byte_index)?,
            seed: s.seed,
        };
        profiling.validate()?;
        let attack = SimConfig { key_mode: KeyMode::Fixed(attack_key), seed: s.seed.wrapping_add(1), ..profiling.clone() };
        Ok(Some(SimPlan { profiling, attack, n_profiling: s.n_profiling, n_attack: s.n_attack }))
    }

    fn model_section(&self) -> ModelSection {
        self.model.clone().unwrap_or(ModelSection {
            kind: ModelKind::Template,
            forest: ForestSection::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
        })
    }

    /// Forest settings; also used for the ranking forest behind `top_k`.
    pub fn forest_config(&self) -> Result<ForestConfig, ConfigError> {
        let f = self.model_section().forest;
        let max_features = match &f.max_features {
            MaxFeaturesValue::Count(k) => MaxFeatures::Fixed(*k),
            MaxFeaturesValue::Name(n) if n == "sqrt" => MaxFeatures::Sqrt,
            MaxFeaturesValue::Name(n) if n == "all" => MaxFeatures::All,
            MaxFeaturesValue::Name(n) => {
                return Err(invalid(format!("forest: max_features {n:?} is not \"sqrt\", \"all\" or a count")))
            }
        };
        let cfg = ForestConfig {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_samples_leaf: f.min_samples_leaf,
            max_features,
            seed: f.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self, trace_len: usize) -> Result<NetConfig, ConfigError> {
        let m = self.model_section();
        let residual = m.kind == ModelKind::Resnet;
        if m.net.channels.is_empty() {
            return Err(invalid("net: channels must not be empty"));
        }
        let cfg = NetConfig::with_channels(trace_len, &m.net.channels, m.net.dense_hidden, m.net.dropout_p, residual);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = self.model_section().train;
        let cfg = TrainConfig {
            optimizer: RmsPropConfig { lr: t.lr, weight_decay: t.weight_decay, decay_rate: t.decay_rate, eps: t.eps },
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            validation_fraction: t.validation_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rank_config(&self) -> Result<KeyRankConfig, ConfigError> {
        Ok(KeyRankConfig::new(self.attack.epsilon)?)
    }

    pub fn true_key(&self) -> Option<u8> {
        self.attack.true_key.as_deref().and_then(|k| parse_key_byte(k).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset.simulator]
trace_len = 50
leak_points = [5, 10]
noise_sigma = 1.0
key = "000102030405060708090a0b0c0d0e0f"
n_profiling = 100
n_attack = 20

[model]
kind = "rf"
[model.forest]
n_trees = 3
max_features = "all"
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/tmp")).unwrap();
        let plan = cfg.sim_plan().unwrap().unwrap();
        assert_eq!(plan.attack.key_mode, KeyMode::Fixed(parse_key16("000102030405060708090a0b0c0d0e0f").unwrap()));
        assert_eq!(plan.attack.seed, 1);
        assert_eq!(plan.profiling.byte_index, ByteIndex::default());
        let f = cfg.forest_config().unwrap();
        assert_eq!((f.n_trees, f.max_depth, f.max_features), (3, 20, MaxFeatures::All));
        assert!(cfg.preprocessing.standardize);
        assert_eq!(cfg.attack.step, 10);
        assert_eq!(cfg.attack.epsilon, 1e-40);
    }

    #[test]
    fn seed_override_reaches_every_seed() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new("/tmp")).unwrap();
        cfg.override_seed(77);
        assert_eq!(cfg.sim_plan().unwrap().unwrap().profiling.seed, 77);
        assert_eq!(cfg.forest_config().unwrap().seed, 77);
        assert_eq!(cfg.train_config().unwrap().seed, 77);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let text = "[dataset]\npath = \"p.scat\"\n[output]\ndirectory = \"/abs/out\"\n";
        let cfg = RunConfig::parse(text, Path::new("/data/run")).unwrap();
        assert_eq!(cfg.dataset.path.unwrap(), Path::new("/data/run/p.scat"));
        assert_eq!(cfg.output.directory.unwrap(), Path::new("/abs/out"));
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            "not toml [",
            "[dataset]\n",
            "[dataset]\npath = \"a\"\nbogus = 1\n",
            &MINIMAL.replace("kind = \"rf\"", "kind = \"svm\""),
            &MINIMAL.replace("leak_points = [5, 10]", "leak_points = [5, 50]"),
            &MINIMAL.replace("max_features = \"all\"", "max_features = \"half\""),
            &MINIMAL.replace("key = \"000102030405060708090a0b0c0d0e0f\"", "key = \"0001\""),
            &format!("{MINIMAL}\n[preprocessing]\ntop_k = 5\nfeature_file = \"f.txt\"\n"),
            &format!("{MINIMAL}\n[attack]\ntrue_key = \"zz\"\n"),
        ] {
            assert!(RunConfig::parse(bad, Path::new(".")).is_err(), "{bad}");
        }
    }

    #[test]
    fn key_parsing() {
        assert_eq!(parse_key_byte("e0").unwrap(), 224);
        assert_eq!(parse_key_byte("0x5A").unwrap(), 0x5a);
        assert!(parse_key_byte("123").is_err());
        assert!(parse_key16("00").is_err());
    }
}
