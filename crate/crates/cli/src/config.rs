//! Run configuration (TOML, schema version 1).

use std::path::{Path, PathBuf};

use edcs_core::detection::DetectionImperfections;
use edcs_core::dsp::{segment_plan, PhaseNoise, Window};
use edcs_core::metrics::{CombSection, Experiment, LoMode, PipelineMode, SampleModel, SqueezingSection};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Edcs,
    ClassicalDcs,
}

fn default_fs() -> f64 {
    100e6
}
fn default_rbw() -> f64 {
    100e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspSection {
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default = "default_rbw")]
    pub rbw_hz: f64,
    #[serde(default)]
    pub window: Window,
    /// Synthesis block length; defaults to the analysis segment length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_half_width_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_noise: Option<PhaseNoise>,
}

impl DspSection {
    pub fn n_samples(&self) -> Result<usize> {
        let n = self.sample_rate_hz * self.duration_s;
        if !(n >= 1.0) || !n.is_finite() || (n - n.round()).abs() > 1e-6 * n {
            return Err(CliError::Config(
                "dsp: sample_rate_hz * duration_s must be a positive whole number".into(),
            ));
        }
        Ok(n.round() as usize)
    }

    /// `(segment length, segment count)`.
    pub fn segments(&self) -> Result<(usize, usize)> {
        segment_plan(self.sample_rate_hz, self.n_samples()?, self.rbw_hz).map_err(CliError::at("dsp.rbw_hz"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedupSection {
    pub m_list: Vec<usize>,
    pub n_seeds: usize,
    #[serde(default)]
    pub mode: PipelineMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UarSweepSection {
    pub squeeze_db: f64,
    pub antisqueeze_db: f64,
    pub uar_values: Vec<f64>,
    pub depths_db: Vec<f64>,
    /// Falls back to the top-level `detection` table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionImperfections>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub uar: f64,
    pub depths_db: Vec<f64>,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub lo: LoMode,
    pub comb: CombSection,
    pub squeezing: SqueezingSection,
    #[serde(default = "DetectionImperfections::ideal")]
    pub detection: DetectionImperfections,
    #[serde(default)]
    pub sample: SampleModel,
    pub dsp: DspSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<SpeedupSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uar_sweep: Option<UarSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessSection>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a config and resolves a relative `sample.line_list` against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::parse(&text, path)?;
        if let SampleModel::Cell { line_list, .. } = &mut cfg.sample {
            if line_list.is_relative() {
                if let Some(dir) = path.parent() {
                    *line_list = dir.join(&*line_list);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization, without `output_dir`.
    pub fn sha256(&self) -> Result<String> {
        let cfg = Self {
            output_dir: None,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(cfg.to_toml()?.as_bytes())))
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            comb: self.comb.clone(),
            squeezing: self.squeezing.clone(),
            detection: self.detection,
            lo: self.lo,
            sample: self.sample.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        for (i, p) in self.squeezing.profile.pairs().iter().enumerate() {
            edcs_core::gaussian::mixed_tmsv_from_measured(p.squeeze_db, p.antisqueeze_db)
                .map_err(CliError::at(format!("squeezing.profile.pairs[{i}]")))?;
        }
        self.experiment().validate()?;
        self.dsp.segments()?;
        if let Some(b) = self.dsp.block_len {
            if b == 0 || self.dsp.n_samples()? % b != 0 {
                return Err(CliError::Config("dsp.block_len: must divide the sample count".into()));
            }
        }
        if let Some(s) = &self.speedup {
            if s.m_list.is_empty() {
                return Err(CliError::Config("speedup.m_list: must not be empty".into()));
            }
        }
        if let Some(r) = &self.robustness {
            if r.n_segments == 0 {
                return Err(CliError::Config("robustness.n_segments: must be >= 1".into()));
            }
        }
        Ok(())
    }
}
