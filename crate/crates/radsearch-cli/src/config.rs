//! Mission configuration file: one JSON document shared by every subcommand,
//! with command-line flags overriding individual fields (flags win).

use std::fs;
use std::path::{Path, PathBuf};

use radsearch_core::radiation::{background_template, DetectorModel};
use radsearch_core::survey::SurveyPlan;
use radsearch_core::ugvsim::MissionParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Detector parameters as stored in config files; the spectral background
/// template is implied.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub background_rate: f64,
    pub sensitivity_k: f64,
}

impl DetectorConfig {
    pub fn aerial_default() -> Self {
        let d = DetectorModel::aerial_default();
        DetectorConfig {
            background_rate: d.background_rate,
            sensitivity_k: d.sensitivity_k,
        }
    }

    pub fn ugv_default() -> Self {
        let d = DetectorModel::ugv_default();
        DetectorConfig {
            background_rate: d.background_rate,
            sensitivity_k: d.sensitivity_k,
        }
    }

    pub fn build(&self) -> Result<DetectorModel, CliError> {
        Ok(DetectorModel::new(
            self.background_rate,
            self.sensitivity_k,
            background_template(),
        )?)
    }
}

/// Scene synthesis parameters and the file names consumers look for.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_size: f64,
    /// Noise level of the synthetic per-pixel category scores.
    pub unary_noise: f64,
    pub dem: Option<String>,
    pub labels: Option<String>,
    pub ortho: Option<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width_px: 200,
            height_px: 140,
            pixel_size: 0.6,
            unary_noise: 0.55,
            dem: None,
            labels: None,
            ortho: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub weights: [f64; 3],
    pub base_step: f64,
    pub heuristic: radsearch_core::planner::Heuristic,
    pub dilation_radius: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            weights: [5.0, 2.0, 5.0],
            base_step: 0.0,
            heuristic: radsearch_core::planner::Heuristic::Euclidean,
            dilation_radius: 2,
        }
    }
}

impl PlannerConfig {
    pub fn weights(&self) -> radsearch_core::planner::CostWeights {
        radsearch_core::planner::CostWeights {
            w: self.weights,
            base_step: self.base_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UgvConfig {
    pub params: MissionParams,
    pub detector: DetectorConfig,
}

impl Default for UgvConfig {
    fn default() -> Self {
        UgvConfig {
            params: MissionParams::default(),
            detector: DetectorConfig::ugv_default(),
        }
    }
}

/// Mission endpoints: an explicit goal, or the point of interest from an
/// analysis file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionSection {
    pub start: [f64; 2],
    #[serde(default)]
    pub goal: Option<[f64; 2]>,
    /// Path to an analysis.json whose POI becomes the goal.
    #[serde(default)]
    pub analysis: Option<String>,
}

/// Top-level configuration. The seed is mandatory: no command draws entropy
/// from the clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub survey: Option<SurveyPlan>,
    #[serde(default = "DetectorConfig::aerial_default")]
    pub detector: DetectorConfig,
    /// Path to a sources JSON file.
    #[serde(default)]
    pub sources: Option<String>,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub ugv: UgvConfig,
    #[serde(default)]
    pub mission: Option<MissionSection>,
    /// Path to an obstacle script JSON file.
    #[serde(default)]
    pub obstacles: Option<String>,
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl MissionConfig {
    pub fn with_seed(seed: u64) -> Self {
        MissionConfig {
            seed,
            out_dir: default_out_dir(),
            scene: SceneConfig::default(),
            survey: None,
            detector: DetectorConfig::aerial_default(),
            sources: None,
            planner: PlannerConfig::default(),
            ugv: UgvConfig::default(),
            mission: None,
            obstacles: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

/// Resolve the effective config from an optional file plus flag overrides.
/// Flags beat the environment (`RADSEARCH_OUT`), which beats the file.
pub fn resolve_config(
    config_path: Option<&Path>,
    seed_flag: Option<u64>,
    out_flag: Option<&Path>,
) -> Result<MissionConfig, CliError> {
    let mut cfg = match config_path {
        Some(p) => MissionConfig::load(p)?,
        None => {
            let seed = seed_flag.ok_or_else(|| {
                CliError::config("a seed is required: pass --seed or a --config file with one")
            })?;
            MissionConfig::with_seed(seed)
        }
    };
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    if let Some(out) = out_flag {
        cfg.out_dir = out.display().to_string();
    } else if let Ok(env_out) = std::env::var("RADSEARCH_OUT") {
        if !env_out.is_empty() {
            cfg.out_dir = env_out;
        }
    }
    Ok(cfg)
}

/// A path from the config, checked to exist at load time.
pub fn existing_path(label: &str, p: &str) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(p);
    if !path.exists() {
        return Err(CliError::config(format!(
            "{label} path does not exist: {p}"
        )));
    }
    Ok(path)
}
