//! TOML run configuration.

use std::path::{Path, PathBuf};

use petc_core::{AdaptiveSchedule, PetcError, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub certify: CertifySection,
    #[serde(default)]
    pub trigger: TriggerSection,
    pub channel: ChannelSection,
    pub engine: EngineSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    /// Replaces the preset's level-set value.
    pub c: Option<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub sigma: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_safety_factor")]
    pub safety_factor: f64,
    #[serde(default = "default_excluded_fraction")]
    pub excluded_level_fraction: f64,
    pub l1c: Option<f64>,
    pub l2c: Option<f64>,
    pub m_max_c: Option<f64>,
    pub mu_c: Option<f64>,
    pub h: Option<f64>,
    #[serde(default)]
    pub allow_uncertified_h: bool,
}

fn default_samples() -> usize {
    100_000
}

fn default_safety_factor() -> f64 {
    1.1
}

fn default_excluded_fraction() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    #[default]
    Linear,
    Exponential,
    Adaptive,
}

impl RuleName {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::Linear => "linear",
            RuleName::Exponential => "exponential",
            RuleName::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSegment {
    pub start: usize,
    /// Exclusive; open-ended when absent.
    pub end: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    #[serde(default)]
    pub rule: RuleName,
    pub nu: Option<usize>,
    /// Exponential-rule rate; defaults to the model's linear decay rate.
    pub k: Option<f64>,
    #[serde(default)]
    pub adaptive: Vec<AdaptiveSegment>,
}

impl TriggerSection {
    pub fn schedule(&self) -> Result<AdaptiveSchedule<f64>> {
        AdaptiveSchedule::new(
            self.adaptive
                .iter()
                .map(|s| (s.start, s.end.unwrap_or(usize::MAX), s.value))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Bernoulli,
    Trace,
    Always,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub mode: ChannelMode,
    /// Maximum number of consecutive losses.
    pub m: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    pub trace_path: Option<PathBuf>,
}

fn default_p() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub horizon: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    petc_core::DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Log to verify when `--log` is not given.
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), prefix: default_prefix() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prefix() -> String {
    "run".to_string()
}

/// Axes of the cartesian sweep; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub rule: Vec<RuleName>,
    #[serde(default)]
    pub p: Vec<f64>,
    /// Replaces `engine.horizon` for every cell.
    pub horizon: Option<f64>,
    #[serde(default)]
    pub write_logs: bool,
}

/// Parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub path: PathBuf,
    /// SHA-256 of the config file bytes, lowercase hex.
    pub digest: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| PetcError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| PetcError::Config(format!("config {} is not UTF-8", path.display())))?;
        let config = parse(text)?;
        Ok(LoadedConfig { config, path: path.to_path_buf(), digest: digest(&bytes) })
    }

    /// Resolves a path relative to the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

pub fn parse(text: &str) -> Result<Config> {
    let config: Config = toml::from_str(text).map_err(|e| PetcError::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let c = &self.certify;
        if !(c.sigma > 0.0 && c.sigma < 1.0) {
            return Err(PetcError::Config(format!("certify.sigma must lie in (0, 1), got {}", c.sigma)));
        }
        if !(self.engine.horizon.is_finite() && self.engine.horizon > 0.0) {
            return Err(PetcError::Config(format!("engine.horizon must be positive, got {}", self.engine.horizon)));
        }
        if self.engine.substeps == 0 {
            return Err(PetcError::Config("engine.substeps must be at least 1".into()));
        }
        if self.channel.mode == ChannelMode::Trace && self.channel.trace_path.is_none() {
            return Err(PetcError::Config("channel.trace_path is required for mode = \"trace\"".into()));
        }
        let adaptive_used = self.trigger.rule == RuleName::Adaptive || self.sweep.rule.contains(&RuleName::Adaptive);
        if !adaptive_used && !self.trigger.adaptive.is_empty() {
            log::warn!("trigger.adaptive is ignored for rule = {}", self.trigger.rule.as_str());
        }
        if self.sweep.sigma.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(PetcError::Config("sweep.sigma values must lie in (0, 1)".into()));
        }
        if self.output.prefix.is_empty() {
            return Err(PetcError::Config("output.prefix must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
preset = "pendulum"
x0 = [0.43, 0.0]

[certify]
sigma = 0.35

[channel]
mode = "bernoulli"
m = 1

[engine]
horizon = 5.0
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.certify.samples, 100_000);
        assert_eq!(c.certify.safety_factor, 1.1);
        assert_eq!(c.channel.p, 0.5);
        assert_eq!(c.trigger.rule, RuleName::Linear);
        assert_eq!(c.engine.substeps, 1);
        assert_eq!(c.output.prefix, "run");
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("x0 = [0.43, 0.0]\n", "");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
        assert!(err.to_string().contains("x0"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("m = 1", "m = 1\nloss = 3");
        assert!(parse(&text).unwrap_err().to_string().contains("loss"));
    }

    #[test]
    fn sigma_out_of_range() {
        let text = MINIMAL.replace("sigma = 0.35", "sigma = 1.2");
        assert_eq!(parse(&text).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn digest_tracks_every_byte() {
        let a = digest(MINIMAL.as_bytes());
        let b = digest(MINIMAL.replace("5.0", "5.1").as_bytes());
        assert_ne!(a, b);
        assert_eq!(a, digest(MINIMAL.as_bytes()));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn adaptive_schedule_from_table() {
        let text = format!("{MINIMAL}\n[trigger]\nrule = \"adaptive\"\n[[trigger.adaptive]]\nstart = 0\nend = 10\nvalue = 0.1\n[[trigger.adaptive]]\nstart = 10\nvalue = 0.05\n");
        let c = parse(&text).unwrap();
        let s = c.trigger.schedule().unwrap();
        assert_eq!(s.value_at(3), 0.1);
        assert_eq!(s.value_at(1_000_000), 0.05);
    }
}
