//! TOML pipeline configuration. Every section and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::mock::OracleMode;
use crate::gateway::ProviderConfig;
use crate::instances::{linear_schedule, MergeParams, MergeSchedule};
use crate::reasoner::ReasonerParams;
use crate::semantics::SemanticParams;
use crate::superpoints::{RegionGrowParams, SupervoxelParams};
use crate::viewfactory::ViewParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperpointConfig {
    pub normal_neighbors: usize,
    pub supervoxel: SupervoxelParams,
    pub region_grow: bool,
    pub grow: RegionGrowParams,
}

impl Default for SuperpointConfig {
    fn default() -> Self {
        Self {
            normal_neighbors: 16,
            supervoxel: SupervoxelParams::default(),
            region_grow: true,
            grow: RegionGrowParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub start: f64,
    pub end: f64,
    pub stages: usize,
    #[serde(flatten)]
    pub params: MergeParams,
    /// Depth slack when testing a projected point against the z-buffer.
    pub occlusion_tol: f64,
    /// Half-width in pixels of each point's z-buffer footprint.
    pub splat_radius: u32,
    /// Instances with fewer points are not offered as candidates.
    pub min_instance_points: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            start: 0.9,
            end: 0.5,
            stages: 5,
            params: MergeParams::default(),
            occlusion_tol: crate::projection::DEFAULT_OCCLUSION_TOL,
            splat_radius: crate::projection::DEFAULT_SPLAT_RADIUS,
            min_instance_points: 50,
        }
    }
}

impl MergeConfig {
    pub fn schedule(&self) -> Result<MergeSchedule> {
        linear_schedule(self.start, self.end, self.stages)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    /// Candidates kept after embedding retrieval.
    pub u: usize,
    #[serde(flatten)]
    pub params: SemanticParams,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            u: 5,
            params: SemanticParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    pub kind: ProviderKind,
    /// Empty endpoints are read from `UG_MASK_ENDPOINT` and friends.
    pub mask: ProviderConfig,
    pub embed: ProviderConfig,
    pub vlm: ProviderConfig,
    /// Mock only: Gaussian noise added to image embeddings.
    pub embed_noise: f64,
    pub noise_seed: u64,
    pub oracle: OracleMode,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            mask: ProviderConfig::default(),
            embed: ProviderConfig::default(),
            vlm: ProviderConfig::default(),
            embed_noise: 0.0,
            noise_seed: 0,
            oracle: OracleMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub superpoints: SuperpointConfig,
    pub merge: MergeConfig,
    pub semantics: SemanticConfig,
    pub views: ViewParams,
    pub reasoner: ReasonerParams,
    pub providers: ProvidersConfig,
}

impl Config {
    /// Settings for flat-coloured tabletop scenes such as the synthetic
    /// suite. Colour dominates the supervoxel distance so that clusters stop
    /// at object boundaries, and the normal term is weak enough that curved
    /// objects stay in one piece.
    pub fn tabletop() -> Self {
        let mut c = Config::default();
        let sv = &mut c.superpoints.supervoxel;
        sv.w_color = 4.0;
        sv.w_normal = 0.3;
        sv.max_distance = 0.8;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.superpoints.normal_neighbors < 3 {
            return bad("superpoints.normal_neighbors must be at least 3");
        }
        self.merge.schedule().map_err(|e| Error::Config(e.to_string()))?;
        if self.semantics.u == 0 {
            return bad("semantics.u must be at least 1");
        }
        if self.semantics.params.max_views == 0 {
            return bad("semantics.max_views must be at least 1");
        }
        if self.views.l == 0 {
            return bad("views.l must be at least 1");
        }
        if self.views.azimuths_deg.is_empty() {
            return bad("views.azimuths_deg must not be empty");
        }
        let t = self.reasoner.toggles;
        if !(t.spatial || t.semantic || t.visual_cot) {
            return bad("at least one prompt toggle must be on");
        }
        if !(self.providers.embed_noise >= 0.0) {
            return bad("providers.embed_noise must be non-negative");
        }
        Ok(())
    }
}
