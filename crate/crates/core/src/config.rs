//! Declarative run configuration and the manifest written next to outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fit::LmConfig;
use crate::io::{parse_json, read_text, IoError};
use crate::lindblad::{DissipatorSpec, SweepConfig};
use crate::signal::ModulationSpec;
use crate::spin::{FieldEnvironment, NvParams};

pub const TOOL_NAME: &str = "nvkit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sweep settings; the seed lives on [`ExperimentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub f_start: f64,
    pub f_stop: f64,
    pub n_points: usize,
    pub t_integrate: f64,
    pub dt: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let s = SweepConfig::<f64>::with_seed(0);
        Self { f_start: s.f_start, f_stop: s.f_stop, n_points: s.n_points, t_integrate: s.t_integrate, dt: s.dt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub rel_cost_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        let d = LmConfig::<f64>::default();
        Self { max_iterations: d.max_iterations, rel_cost_tol: d.rel_cost_tol }
    }
}

impl FitOptions {
    pub fn lm_config(&self) -> LmConfig<f64> {
        LmConfig { max_iterations: self.max_iterations, rel_cost_tol: self.rel_cost_tol, ..LmConfig::default() }
    }
}

fn default_n_orient() -> usize {
    10
}

/// Everything needed to reproduce one run. Only `seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub nv_params: NvParams<f64>,
    #[serde(default)]
    pub environment: FieldEnvironment<f64>,
    #[serde(default)]
    pub dissipators: DissipatorSpec<f64>,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default = "default_n_orient")]
    pub n_orient: usize,
    #[serde(default)]
    pub modulation: ModulationSpec<f64>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            nv_params: NvParams::default(),
            environment: FieldEnvironment::default(),
            dissipators: DissipatorSpec::default(),
            sweep: SweepSettings::default(),
            n_orient: default_n_orient(),
            modulation: ModulationSpec::default(),
            fit: FitOptions::default(),
            calibration: None,
            output_dir: None,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig<f64> {
        SweepConfig {
            f_start: self.sweep.f_start,
            f_stop: self.sweep.f_stop,
            n_points: self.sweep.n_points,
            t_integrate: self.sweep.t_integrate,
            dt: self.sweep.dt,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.nv_params.validate().map_err(|e| format!("nv_params: {e}"))?;
        self.environment.validate().map_err(|e| format!("environment: {e}"))?;
        self.dissipators.validate().map_err(|e| format!("dissipators: {e}"))?;
        self.sweep_config().validate().map_err(|e| format!("sweep: {e}"))?;
        self.modulation.validate().map_err(|e| format!("modulation: {e}"))?;
        if self.n_orient == 0 {
            return Err("n_orient must be at least 1".into());
        }
        if self.fit.max_iterations == 0 || !(self.fit.rel_cost_tol > 0.0) {
            return Err("fit: max_iterations and rel_cost_tol must be positive".into());
        }
        Ok(())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, IoError> {
        let cfg: Self = parse_json(text, name)?;
        cfg.validate().map_err(|msg| IoError::Invalid { path: name.into(), msg })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        canonical_hash(&serde_json::to_value(self).expect("serializable config"))
    }
}

/// Compact JSON with object keys in sorted order.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn sort(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let sorted: std::collections::BTreeMap<_, _> = m.iter().map(|(k, v)| (k.clone(), sort(v))).collect();
                serde_json::Value::Object(sorted.into_iter().collect())
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(value)).expect("serializable value")
}

pub fn canonical_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(canonical_json(value).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    /// Fully resolved configuration, sufficient to re-run.
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, started_unix_s: f64) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            args,
            config_hash: canonical_hash(&config),
            config,
            started_unix_s,
            finished_unix_s: started_unix_s,
            outputs: Vec::new(),
        }
    }
}
