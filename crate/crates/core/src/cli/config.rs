//! Effective run configuration.
//!
//! Sources, lowest precedence first: built-in defaults, environment
//! (`SPEECHUI_BASE_URL`, `SPEECHUI_MODEL`), the TOML file given with
//! `--config`, then command-line flags. The merged value is echoed into
//! every report.
//!
//! ```toml
//! seed = 0
//! workers = 0          # 0 = one per logical CPU
//! backend = "mock"     # or "remote"
//!
//! [mock]
//! p_exact = 0.79
//! p_near = 0.15
//! p_far = 0.06
//!
//! [remote]
//! base_url = "http://127.0.0.1:8000"
//! model_name = "uitron-speech"
//!
//! [refine]
//! k = 2.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::MatchRules;
use crate::data::DEFAULT_SAMPLE_N;
use crate::metrics::{DEFAULT_LENGTH_EDGES, DEFAULT_THRESHOLDS};
use crate::policy::mock::MockOracleConfig;
use crate::policy::remote::RemoteConfig;
use crate::refine::RefineConfig;

pub const ENV_BASE_URL: &str = "SPEECHUI_BASE_URL";
pub const ENV_MODEL: &str = "SPEECHUI_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per logical CPU.
    pub workers: usize,
    pub backend: BackendKind,
    /// Base for relative image paths; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    /// Base for relative audio paths; defaults to the manifest's directory.
    pub audio_root: Option<PathBuf>,
    /// Where enlarged crops are written. Without it crops are computed
    /// virtually (dimensions only), which suffices for the mock backend.
    pub crop_dir: Option<PathBuf>,
    pub sample_n: usize,
    pub thresholds: Vec<f64>,
    pub length_edges: Vec<u64>,
    pub mock: MockOracleConfig,
    pub remote: RemoteConfig,
    pub refine: RefineConfig,
    pub matching: MatchRules,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            backend: BackendKind::Mock,
            image_root: None,
            audio_root: None,
            crop_dir: None,
            sample_n: DEFAULT_SAMPLE_N,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            length_edges: DEFAULT_LENGTH_EDGES.to_vec(),
            mock: MockOracleConfig::default(),
            remote: RemoteConfig::default(),
            refine: RefineConfig::default(),
            matching: MatchRules::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.mock.validate().map_err(|e| format!("mock: {e}"))?;
        self.remote.validate().map_err(|e| format!("remote: {e}"))?;
        self.refine.validate().map_err(|e| format!("refine: {e}"))?;
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) || self.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(format!("thresholds must be non-negative and increasing, got {:?}", self.thresholds));
        }
        if self.length_edges.first() != Some(&0) || self.length_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("length_edges must start at 0 and increase, got {:?}", self.length_edges));
        }
        if !(self.matching.click_radius.is_finite() && self.matching.click_radius >= 0.0) {
            return Err(format!("click_radius must be >= 0, got {}", self.matching.click_radius));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then environment, then the config file. Flags are applied by
/// the caller on the returned value.
pub fn load(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>) -> Result<RunConfig, String> {
    let mut v = serde_json::to_value(RunConfig::default()).map_err(|e| e.to_string())?;
    let mut env_layer = serde_json::Map::new();
    if let Some(url) = env(ENV_BASE_URL) {
        env_layer.insert("base_url".into(), Value::String(url));
    }
    if let Some(model) = env(ENV_MODEL) {
        env_layer.insert("model_name".into(), Value::String(model));
    }
    merge(&mut v, serde_json::json!({ "remote": env_layer }));
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        merge(&mut v, serde_json::to_value(table).map_err(|e| e.to_string())?);
    }
    serde_json::from_value(v).map_err(|e| match file {
        Some(p) => format!("{}: {e}", p.display()),
        None => e.to_string(),
    })
}
