use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aam::FitOptions;
use crate::enhance::DiffusionParams;
use crate::ensemble::{EnsembleConfig, StageParams};
use crate::error::{Error, Result};
use crate::segment::SegmentationConfig;
use crate::vesselness::VesselnessParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Seed of the per-subject enrollment image choice.
    pub enrollment_seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { enrollment_seed: 1 }
    }
}

/// Every tunable of the pipeline, one TOML table per module.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub diffusion: DiffusionParams,
    pub vesselness: VesselnessParams,
    pub fit: FitOptions,
    pub ensemble: EnsembleConfig,
    pub protocol: ProtocolConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.ensemble.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stage_params(&self) -> StageParams {
        StageParams {
            segmentation: self.segmentation,
            diffusion: self.diffusion,
            vesselness: self.vesselness.clone(),
            fit: self.fit,
        }
    }
}
