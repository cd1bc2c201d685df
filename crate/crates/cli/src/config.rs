//! Pipeline configuration file.
//!
//! TOML with four sections. `[parameters]` carries the headline tunables
//! under their short names:
//!
//! ```toml
//! [parameters]
//! z = 24      # feature window side
//! W = 5       # line-growing averaging window side
//! N = 500     # trees
//! f = 20      # features tried per node
//! k = 45.0    # largest mean difference a grown line may cross
//!
//! [forest]
//! seed = 0
//! max_depth = 25
//! min_leaf_size = 2
//!
//! [diffusion]
//! iterations = 15
//! kappa = 30.0
//! step = 0.2
//!
//! [boundary]
//! p = 10.0
//! p2 = 20.0
//! n = 5
//! max_steps = 100
//! border_fraction = 0.5
//! proximity = 3
//! # min_area = 250    # default: 0.1% of the image
//! # nth = 1.5         # default: value stored in the model
//! ```
//!
//! Every key is optional, unknown keys are rejected.

use std::path::Path;

use glandseg::boundary::{HoleParams, LineGrowParams, SegmentConfig, ThinLinkParams};
use glandseg::features::{FEATURE_LEN, MIN_WINDOW};
use glandseg::forest::ForestParams;
use glandseg::preprocess::DiffusionParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Parameters {
    pub z: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub f: usize,
    pub k: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        Self { z: 24, w: 5, n: 500, f: 20, k: 45.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub seed: u64,
    pub max_depth: usize,
    pub min_leaf_size: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        let d = ForestParams::default();
        Self { seed: d.seed, max_depth: d.max_depth, min_leaf_size: d.min_leaf_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySection {
    pub p: f64,
    pub p2: f64,
    pub n: usize,
    pub max_steps: usize,
    pub border_fraction: f64,
    pub proximity: usize,
    pub min_area: Option<usize>,
    pub nth: Option<f64>,
}

impl Default for BoundarySection {
    fn default() -> Self {
        let t = ThinLinkParams::default();
        let h = HoleParams::default();
        Self {
            p: t.p,
            p2: t.p2,
            n: t.n,
            max_steps: LineGrowParams::default().max_steps,
            border_fraction: h.border_fraction,
            proximity: h.proximity,
            min_area: None,
            nth: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub parameters: Parameters,
    pub forest: ForestSection,
    pub diffusion: DiffusionParams,
    pub boundary: BoundarySection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: "<config>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.parameters;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(MIN_WINDOW..=512).contains(&p.z) {
            return bad(format!("parameters.z must be in {MIN_WINDOW}..=512, got {}", p.z));
        }
        if p.n < 1 {
            return bad("parameters.N must be >= 1".into());
        }
        if p.f < 1 || p.f > FEATURE_LEN {
            return bad(format!("parameters.f must be in 1..={FEATURE_LEN}, got {}", p.f));
        }
        if self.forest.max_depth < 1 || self.forest.min_leaf_size < 1 {
            return bad("forest.max_depth and forest.min_leaf_size must be >= 1".into());
        }
        if let Some(t) = self.boundary.nth {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("boundary.nth must be finite and >= 0, got {t}"));
            }
        }
        if self.boundary.min_area == Some(0) {
            return bad("boundary.min_area must be >= 1".into());
        }
        let b = &self.boundary;
        self.line_grow()
            .validate()
            .and_then(|_| ThinLinkParams { p: b.p, p2: b.p2, n: b.n }.validate())
            .and_then(|_| HoleParams { border_fraction: b.border_fraction, proximity: b.proximity }.validate())
            .and_then(|_| self.diffusion.validate())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.parameters.n,
            features_per_node: self.parameters.f,
            seed: self.forest.seed,
            max_depth: self.forest.max_depth,
            min_leaf_size: self.forest.min_leaf_size,
        }
    }

    fn line_grow(&self) -> LineGrowParams {
        LineGrowParams {
            window: self.parameters.w,
            k: self.parameters.k,
            max_steps: self.boundary.max_steps,
            ..LineGrowParams::default()
        }
    }

    /// Segmentation settings with the given thick/thin threshold.
    pub fn segment_config(&self, threshold: f64) -> SegmentConfig {
        let b = &self.boundary;
        SegmentConfig {
            window: self.parameters.z,
            line_grow: self.line_grow(),
            diffusion: self.diffusion,
            thin_link: ThinLinkParams { p: b.p, p2: b.p2, n: b.n },
            holes: HoleParams { border_fraction: b.border_fraction, proximity: b.proximity },
            min_area: b.min_area,
            threshold,
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the effective settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
