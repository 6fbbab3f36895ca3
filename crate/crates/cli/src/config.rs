//! TOML run configuration.

use std::path::{Path, PathBuf};

use resilience_core::features::FeatureConfig;
use resilience_core::spatial::ScenarioSpec;
use resilience_core::{ModelConfig, Rect};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "RESILI_OUT";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed of every random stream.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub grid: GridConfig,
    pub inputs: InputPaths,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub moran: MoranConfig,
    #[serde(default)]
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[min_x, min_y, max_x, max_y]` in projected meters.
    pub bbox: [f64; 4],
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Optional `cell_id,active` CSV restricting the study area.
    pub mask: Option<PathBuf>,
}

fn default_cell_size() -> f64 {
    2000.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub building_age: PathBuf,
    pub poverty_rate: PathBuf,
    pub social_connectedness: PathBuf,
    pub internet_speed: PathBuf,
    pub education_level: PathBuf,
    pub land_cover: PathBuf,
    pub towers: PathBuf,
    pub facilities: PathBuf,
    pub roads: PathBuf,
    /// Flood-risk levels for `risk-combine`.
    pub risk: Option<PathBuf>,
    #[serde(default = "default_value_property")]
    pub value_property: String,
    #[serde(default = "default_class_property")]
    pub land_cover_property: String,
    #[serde(default = "default_road_property")]
    pub road_class_property: String,
}

fn default_value_property() -> String {
    "value".into()
}

fn default_class_property() -> String {
    "class".into()
}

fn default_road_property() -> String {
    "highway".into()
}

impl InputPaths {
    /// Named feature layers in a fixed order.
    pub fn layers(&self) -> Vec<(&'static str, &Path)> {
        vec![
            ("building_age", &self.building_age),
            ("poverty_rate", &self.poverty_rate),
            ("social_connectedness", &self.social_connectedness),
            ("internet_speed", &self.internet_speed),
            ("education_level", &self.education_level),
            ("land_cover", &self.land_cover),
            ("towers", &self.towers),
            ("facilities", &self.facilities),
            ("roads", &self.roads),
        ]
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.building_age,
            &mut self.poverty_rate,
            &mut self.social_connectedness,
            &mut self.internet_speed,
            &mut self.education_level,
            &mut self.land_cover,
            &mut self.towers,
            &mut self.facilities,
            &mut self.roads,
        ] {
            *p = base.join(&*p);
        }
        if let Some(r) = self.risk.as_mut() {
            *r = base.join(&*r);
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoranConfig {
    pub permutations: usize,
}

impl Default for MoranConfig {
    fn default() -> Self {
        MoranConfig { permutations: 999 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_search: bool,
}

/// A validated configuration with resolved paths.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    /// SHA-256 of the file contents and the effective overrides.
    pub hash: String,
}

impl PipelineConfig {
    pub fn bbox(&self) -> Rect {
        let [a, b, c, d] = self.grid.bbox;
        Rect::new(a, b, c, d)
    }

    fn validate(&self) -> CliResult<()> {
        let [a, b, c, d] = self.grid.bbox;
        if !(c > a && d > b) || [a, b, c, d].iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!("grid.bbox must be [min_x, min_y, max_x, max_y], got {:?}", self.grid.bbox)));
        }
        if !(self.grid.cell_size > 0.0 && self.grid.cell_size.is_finite()) {
            return Err(CliError::Config(format!("grid.cell_size must be positive, got {}", self.grid.cell_size)));
        }
        if self.moran.permutations == 0 {
            return Err(CliError::Config("moran.permutations must be at least 1".into()));
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.scenario
            .validate(&resilience_core::FeatureSchema::standard())
            .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        Ok(())
    }
}

/// Read, resolve and validate `path`, applying `ov`.
pub fn load(path: &Path, ov: &Overrides) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.inputs.resolve(&base);
    if let Some(m) = cfg.grid.mask.as_mut() {
        *m = base.join(&*m);
    }
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    cfg.model.seed = cfg.seed;
    cfg.model.grid_search |= ov.grid_search;
    cfg.validate()?;

    let out = ov
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.as_ref().map(|o| base.join(o)))
        .unwrap_or_else(|| base.join("out"));

    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(format!("seed={};grid_search={}", cfg.seed, cfg.model.grid_search).as_bytes());
    Ok(Loaded {
        cfg,
        out,
        hash: hex::encode(h.finalize()),
    })
}
