//! Run configuration: JSON file, then environment, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use carbq_core::dataset::SplitRatios;
use carbq_core::masking::ThresholdSet;
use carbq_core::synth::SynthSpec;
use carbq_core::unet::UNetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_PORT: u16 = 8765;
pub const PORT_ENV: &str = "CARBQ_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub port: Option<u16>,
    /// Partial objects are completed with model defaults.
    pub model: UNetConfig,
    /// Replaces the manifest's default set for new manifests and mask
    /// generation.
    pub threshold_set: Option<Vec<u8>>,
    /// Scale per magnification, used at ingest.
    pub nm_per_px: BTreeMap<u32, f64>,
    pub split: SplitRatios,
    pub size_bin_width: f64,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out: None,
            seed: None,
            port: None,
            model: UNetConfig::default(),
            threshold_set: None,
            nm_per_px: BTreeMap::new(),
            split: SplitRatios::default(),
            size_bin_width: 50.0,
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if let Some(p) = self.port {
            check_port(p)?;
        }
        self.model.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.split.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.synth.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.thresholds()?;
        for (mag, s) in &self.nm_per_px {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(CliError::config(format!("nm_per_px for magnification {mag} must be positive")));
            }
        }
        if !(self.size_bin_width > 0.0 && self.size_bin_width.is_finite()) {
            return Err(CliError::config("size_bin_width must be positive"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> CliResult<Option<ThresholdSet>> {
        self.threshold_set
            .as_deref()
            .map(ThresholdSet::new)
            .transpose()
            .map_err(|e| CliError::config(e.to_string()))
    }

    /// Flag, then `CARBQ_PORT`, then the config file, then the default.
    pub fn resolve_port(&self, flag: Option<u16>, env: Option<&str>) -> CliResult<u16> {
        let port = match (flag, env) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .trim()
                .parse::<u16>()
                .map_err(|_| CliError::config(format!("{PORT_ENV}={v:?} is not a port number")))?,
            (None, None) => self.port.unwrap_or(DEFAULT_PORT),
        };
        check_port(port)?;
        Ok(port)
    }

    pub fn require_manifest(&self) -> CliResult<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::config("no manifest given; pass --manifest or set it in the config"))
    }

    /// The manifest path, which must already exist.
    pub fn existing_manifest(&self) -> CliResult<&Path> {
        let p = self.require_manifest()?;
        if !p.is_file() {
            return Err(CliError::config(format!("manifest not found: {}", p.display())));
        }
        Ok(p)
    }

    pub fn require_out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::config("no output directory given; pass --out or set it in the config"))
    }
}

fn check_port(p: u16) -> CliResult<()> {
    if p < 1024 {
        return Err(CliError::config(format!("port {p} is outside [1024, 65535]")));
    }
    Ok(())
}
