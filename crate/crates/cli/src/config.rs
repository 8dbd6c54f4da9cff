//! Operator configuration. A JSON file sets defaults, command-line flags
//! override it, and `SDFT_*` environment variables override both.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sdft_core::gateway::{EndpointConfig, Gateway, MockBackend, MockScript, ModelRole};
use sdft_core::domain::Temperatures;
use sdft_core::{StructureMode, TurnWeights};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Requests per second; absent keeps the client default.
    #[serde(default)]
    pub rate_limit: Option<f64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    #[serde(default)]
    pub synthesizer: Option<Endpoint>,
    #[serde(default)]
    pub base: Option<Endpoint>,
}

/// Fallbacks for job fields the job file leaves out.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default)]
    pub weights: Option<TurnWeights<f64>>,
    #[serde(default)]
    pub vote_m: Option<usize>,
    #[serde(default)]
    pub temperatures: Option<Temperatures>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default)]
    pub structure_mode: Option<StructureMode>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// Use the scripted mock backend instead of the endpoints.
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

impl CliConfig {
    /// Relative paths in the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Failed(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: CliConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Failed(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.store_dir, &mut config.templates, &mut config.mock_script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if let Some(w) = &self.defaults.weights {
            w.check().map_err(|e| CliError::Failed(format!("config weights: {e}")))?;
        }
        if self.defaults.max_concurrency == Some(0) {
            return Err(CliError::Failed("config max_concurrency must be at least 1".into()));
        }
        if self.defaults.vote_m == Some(0) {
            return Err(CliError::Failed("config vote_m must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reads `SDFT_<name>` and parses it, naming the variable on failure.
pub fn env_value<T: std::str::FromStr>(name: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let var = format!("SDFT_{name}");
    match std::env::var(&var) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|e| CliError::Failed(format!("{var}: {e}")))
        }
        _ => Ok(None),
    }
}

/// The last present value wins: config, then flag, then environment.
pub fn layered<T>(config: Option<T>, flag: Option<T>, env: Option<T>) -> Option<T> {
    env.or(flag).or(config)
}

/// Mock when requested by flag, config or `SDFT_MOCK=1`; otherwise HTTP
/// endpoints from the config, each replaced by its environment counterpart.
pub fn build_gateway(config: &CliConfig, mock: Option<Option<PathBuf>>) -> Result<Gateway, CliError> {
    let env_mock = std::env::var("SDFT_MOCK").is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true"));
    let script_path = match mock {
        Some(Some(p)) => Some(Some(p)),
        Some(None) => Some(config.mock_script.clone()),
        None if env_mock => Some(config.mock_script.clone()),
        None => config.mock_script.clone().map(Some),
    };
    if let Some(path) = script_path {
        let script = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Failed(format!("cannot read mock script {}: {e}", p.display())))?;
                serde_json::from_str::<MockScript>(&text)
                    .map_err(|e| CliError::Failed(format!("invalid mock script {}: {e}", p.display())))?
            }
            None => MockScript::default(),
        };
        return Ok(Gateway::single(Arc::new(MockBackend::new(script))));
    }
    let mut gateway = Gateway::empty();
    for (role, endpoint) in [
        (ModelRole::Synthesizer, &config.endpoints.synthesizer),
        (ModelRole::Base, &config.endpoints.base),
    ] {
        let from_file = endpoint.as_ref().map(|e| {
            let mut c = EndpointConfig::new(&e.base_url, &e.model);
            c.api_key = e.api_key.clone();
            if e.rate_limit.is_some() {
                c.rate_limit = e.rate_limit;
            }
            if let Some(n) = e.max_retries {
                c.retry.max_retries = n;
            }
            c
        });
        if let Some(c) = EndpointConfig::from_env(role).or(from_file) {
            let backend = c.into_backend().map_err(|e| CliError::Failed(format!("{role} endpoint: {e}")))?;
            gateway = gateway.with_role(role, backend);
        }
    }
    Ok(gateway)
}
