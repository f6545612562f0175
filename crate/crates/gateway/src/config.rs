//! Gateway configuration: a TOML file with `CHEAPET_*` environment overrides.
//!
//! `CHEAPET_THRESHOLD=0.8` sets the top-level `threshold`;
//! `CHEAPET_REMOTE_BASE_URL=...` sets `base_url` in the `[remote]` table.
//! Values are parsed as TOML literals when possible and as strings otherwise.

use std::path::{Path, PathBuf};

use cheapet_core::SupervisorKind;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::client::RemoteEndpointConfig;

pub const ENV_PREFIX: &str = "CHEAPET_";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSetting {
    Fixed(f64),
    /// Calibrate at startup on `calibration_trace_path`.
    Auto,
}

impl Serialize for ThresholdSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ThresholdSetting::Fixed(t) => s.serialize_f64(*t),
            ThresholdSetting::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(t) => Ok(ThresholdSetting::Fixed(t)),
            Raw::Text(s) if s == "auto" => Ok(ThresholdSetting::Auto),
            Raw::Text(s) => s.parse().map(ThresholdSetting::Fixed).map_err(|_| {
                serde::de::Error::custom(format!(
                    "threshold {s:?} is neither a number nor \"auto\""
                ))
            }),
        }
    }
}

/// What to answer when an untrusted input cannot reach the remote model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackMode {
    /// Serve the local prediction flagged `local_fallback`.
    #[default]
    Local,
    /// Respond 502.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen_address: String,
    #[serde(rename = "supervisor")]
    pub supervisor_kind: SupervisorKind,
    pub local_model_path: PathBuf,
    #[serde(default)]
    pub mdsa_model_path: Option<PathBuf>,
    pub threshold: ThresholdSetting,
    #[serde(default)]
    pub target_forward_fraction: Option<f64>,
    #[serde(default)]
    pub calibration_trace_path: Option<PathBuf>,
    #[serde(default)]
    pub adaptation_enabled: bool,
    #[serde(default)]
    pub fallback: FallbackMode,
    #[serde(default = "default_report_interval")]
    pub ledger_report_interval_ms: u64,
    #[serde(default = "default_shutdown_deadline")]
    pub shutdown_deadline_ms: u64,
    #[serde(default = "default_currency")]
    pub currency_unit: String,
    pub remote: RemoteEndpointConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_report_interval() -> u64 {
    60_000
}

fn default_shutdown_deadline() -> u64 {
    10_000
}

fn default_currency() -> String {
    "USD".into()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl GatewayConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(
        path: impl AsRef<Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse_with_env(&text, env)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn parse_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        apply_env_overrides(&mut table, env);
        let config: GatewayConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Relative model and trace paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.local_model_path);
        if let Some(p) = self.mdsa_model_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.calibration_trace_path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.target_forward_fraction
            && !(0.0..=1.0).contains(&t)
        {
            return Err(ConfigError::Invalid(format!(
                "target_forward_fraction {t} is outside [0, 1]"
            )));
        }
        match self.threshold {
            ThresholdSetting::Auto => {
                if self.target_forward_fraction.is_none() || self.calibration_trace_path.is_none() {
                    return Err(ConfigError::Invalid(
                        "threshold = \"auto\" requires target_forward_fraction and calibration_trace_path".into(),
                    ));
                }
            }
            ThresholdSetting::Fixed(t) if !t.is_finite() => {
                return Err(ConfigError::Invalid(format!("threshold {t} is not finite")));
            }
            ThresholdSetting::Fixed(_) => {}
        }
        if self.adaptation_enabled && self.target_forward_fraction.is_none() {
            return Err(ConfigError::Invalid(
                "adaptation_enabled requires target_forward_fraction".into(),
            ));
        }
        if self.supervisor_kind == SupervisorKind::Mdsa && self.mdsa_model_path.is_none() {
            return Err(ConfigError::Invalid(
                "supervisor = \"mdsa\" requires mdsa_model_path".into(),
            ));
        }
        self.remote
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

pub fn apply_env_overrides(
    table: &mut toml::Table,
    env: impl IntoIterator<Item = (String, String)>,
) {
    for (key, value) in env {
        let Some(name) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let name = name.to_ascii_lowercase();
        let value = parse_env_value(&value);
        // Keys that expect text keep the raw value even if it parses as a number.
        match name.strip_prefix("remote_") {
            Some(field) => {
                let remote = table
                    .entry("remote")
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                if let toml::Value::Table(remote) = remote {
                    let value = if matches!(field, "base_url" | "bearer_token") {
                        toml::Value::String(value_as_text(value))
                    } else {
                        value
                    };
                    remote.insert(field.to_owned(), value);
                }
            }
            None => {
                let value = if name.ends_with("_path")
                    || matches!(name.as_str(), "listen_address" | "currency_unit")
                {
                    toml::Value::String(value_as_text(value))
                } else {
                    value
                };
                table.insert(name, value);
            }
        }
    }
}

fn value_as_text(v: toml::Value) -> String {
    match v {
        toml::Value::String(s) => s,
        other => other.to_string(),
    }
}
