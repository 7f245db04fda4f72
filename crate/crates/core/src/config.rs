//! Pipeline configuration file (TOML).
//!
//! Every section is optional and falls back to the library defaults, so an
//! empty file with `version = 1` describes the reference scene. Unknown
//! keys are rejected. The digest is a SHA-256 over a canonical JSON
//! encoding of the parsed configuration, so it does not depend on key
//! order, comments or formatting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::charting::{ModelConfig, TrainConfig, TripletConfig};
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::scene::{reference_paths, ArrayLayout, RingTrajectory, Scene};
use crate::stream::{AggregatorConfig, EmitConfig};
use crate::synth::{ImpairmentSpec, PathSpec, TrajectorySpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub array: ArrayLayout,
    pub paths: Vec<PathSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            array: ArrayLayout::default(),
            paths: reference_paths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryConfig {
    Ring(RingTrajectory),
    Waypoints(TrajectorySpec),
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig::Ring(RingTrajectory::default())
    }
}

impl TrajectoryConfig {
    pub fn build(&self) -> Result<TrajectorySpec> {
        match self {
            TrajectoryConfig::Ring(ring) => ring.build(),
            TrajectoryConfig::Waypoints(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub emit: EmitConfig,
    pub aggregator: AggregatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub impairments: ImpairmentSpec,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TripletConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub stream: StreamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            scene: SceneConfig::default(),
            impairments: ImpairmentSpec::default(),
            trajectory: TrajectoryConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            training: TripletConfig::default(),
            evaluation: EvalConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let scene = self.scene()?;
        self.impairments.validate(&scene.system)?;
        self.features.validate(scene.system.n_subcarriers())?;
        self.training.validate()?;
        self.stream.aggregator.validate(scene.system.n_boards())?;
        Ok(())
    }

    pub fn scene(&self) -> Result<Scene> {
        for path in &self.scene.paths {
            path.validate()?;
        }
        Ok(Scene {
            system: self.scene.array.build()?,
            paths: self.scene.paths.clone(),
            trajectory: self.trajectory.build()?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            features: self.features,
            model: self.model.clone(),
            triplet: self.training.clone(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
