//! JSON run configuration shared by all CLI commands.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backproject::{DepthMode, DEFAULT_EPSILON_REL};
use crate::cloud::{CategoryId, CloudFormat};
use crate::masks::DEFAULT_MIN_SCORE;
use crate::projection::{ReferencePoint, DEFAULT_HEIGHT, DEFAULT_WIDTH};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthModeKind {
    All,
    #[default]
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageSize {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub reference: Reference,
}

impl Scene {
    pub fn reference_point(&self) -> ReferencePoint {
        ReferencePoint::new(
            self.name.clone(),
            self.reference.x0,
            self.reference.y0,
            self.reference.z0,
        )
    }
}

impl From<&ReferencePoint> for Scene {
    fn from(r: &ReferencePoint) -> Self {
        Scene {
            name: r.name.clone(),
            reference: Reference {
                x0: r.x0,
                y0: r.y0,
                z0: r.z0,
            },
        }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_REL
}

fn default_min_score() -> f64 {
    DEFAULT_MIN_SCORE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Row name in reports; defaults to the config file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<String>,
    /// Relative paths resolve against the config file's directory.
    pub cloud_path: PathBuf,
    #[serde(default)]
    pub cloud_format: CloudFormat,
    /// Overrides category names found alongside the cloud.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeMap<CategoryId, String>>,
    pub scenes: Vec<Scene>,
    #[serde(default)]
    pub image: ImageSize,
    pub building_label: CategoryId,
    #[serde(default)]
    pub depth_mode: DepthModeKind,
    #[serde(default = "default_epsilon")]
    pub epsilon_rel: f64,
    #[serde(default = "default_min_score")]
    pub min_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_range: Option<f64>,
}

impl SceneConfig {
    pub fn new(cloud_path: impl Into<PathBuf>, scenes: Vec<Scene>, building_label: CategoryId) -> Self {
        Self {
            area: None,
            cloud_path: cloud_path.into(),
            cloud_format: CloudFormat::Auto,
            categories: None,
            scenes,
            image: ImageSize::default(),
            building_label,
            depth_mode: DepthModeKind::Nearest,
            epsilon_rel: DEFAULT_EPSILON_REL,
            min_score: DEFAULT_MIN_SCORE,
            max_range: None,
        }
    }

    /// Parses and validates a config file, resolving `cloud_path` against the
    /// file's directory and defaulting `area` to the file stem.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: SceneConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if cfg.cloud_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.cloud_path = dir.join(&cfg.cloud_path);
            }
        }
        if cfg.area.is_none() {
            cfg.area = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.scenes.is_empty() {
            return invalid("at least one scene is required".into());
        }
        if self.image.width == 0 || self.image.height == 0 {
            return invalid(format!(
                "image size must be at least 1x1, got {}x{}",
                self.image.width, self.image.height
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.scenes {
            let ok_name = !s.name.is_empty()
                && s.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
                && !s.name.starts_with('.');
            if !ok_name {
                return invalid(format!(
                    "scene name {:?} must be non-empty and use only [A-Za-z0-9_.-]",
                    s.name
                ));
            }
            if !seen.insert(&s.name) {
                return invalid(format!("duplicate scene name {:?}", s.name));
            }
            if !s.reference_point().is_finite() {
                return invalid(format!("scene {:?} has a non-finite reference", s.name));
            }
        }
        self.depth_mode()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.min_score.is_finite() {
            return invalid(format!("min_score must be finite, got {}", self.min_score));
        }
        if let Some(m) = self.max_range {
            if !(m > 0.0 && m.is_finite()) {
                return invalid(format!("max_range must be positive, got {m}"));
            }
        }
        Ok(())
    }

    pub fn depth_mode(&self) -> Result<DepthMode, crate::backproject::BackprojectError> {
        match self.depth_mode {
            DepthModeKind::All => Ok(DepthMode::All),
            DepthModeKind::Nearest => DepthMode::nearest(self.epsilon_rel),
        }
    }

    pub fn area_name(&self) -> &str {
        self.area.as_deref().unwrap_or("Total")
    }
}
