use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cotmap_core::augment::{BoundaryPolicy, ReconConfig};
use cotmap_core::bev::GridMeta;
use cotmap_core::cotlabel::{CotParams, OverheadRegion};
use cotmap_core::geometry::{CameraIntrinsics, CameraMount, Vec2};
use cotmap_core::plan::CostRules;
use cotmap_core::regress::{LabelMode, RegressorConfig};
use cotmap_core::render::LabelRenderParams;
use cotmap_core::simworld::{Layout, ObstacleBox, PowerModel, RenderSettings, RobotParams, WorldSpec};

use crate::error::{PipelineError, PipelineResult};

/// Every tunable of a run. Serialized as TOML; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub mode: LabelMode,
    /// Every n-th keyframe is held out from training and used by `eval`.
    pub holdout_every: usize,
    pub camera: CameraConfig,
    pub world: WorldSpec,
    pub drive: DriveConfig,
    pub robot: RobotParams,
    pub power: PowerModel,
    pub render: RenderSettings,
    pub keyframes: KeyframeConfig,
    pub cot: CotParams,
    pub overhead: OverheadRegion,
    pub labels: LabelRenderParams,
    pub masks: MaskConfig,
    pub recon: ReconConfig,
    pub confidence: BoundaryPolicy,
    pub regressor: RegressorConfig,
    pub map: MapConfig,
    pub plan: PlanConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub mount: CameraMount,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics { fx: 40.0, fy: 40.0, cx: 31.5, cy: 23.5, width: 64, height: 48 },
            mount: CameraMount::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    pub dt: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self { waypoints: vec![[5.0, 2.0], [5.0, 17.0], [15.0, 17.0], [15.0, 2.0]], speed: 1.0, dt: 0.1 }
    }
}

impl DriveConfig {
    pub fn points(&self) -> Vec<Vec2> {
        self.waypoints.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeConfig {
    pub translation: f64,
    pub rotation_deg: f64,
    /// Pixel stride when unprojecting depth into the point cloud.
    pub cloud_stride: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self { translation: 1.0, rotation_deg: 20.0, cloud_stride: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Components of the simulator's segmentation.
    #[default]
    Oracle,
    /// Precomputed `masks_XXXXX.cott` stacks.
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub source: MaskSource,
    /// Directory of mask stacks when `source = "files"`.
    pub dir: Option<PathBuf>,
    pub min_pixels: usize,
    pub include_sky: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { source: MaskSource::Oracle, dir: None, min_pixels: 4, include_sky: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub cell_size: f64,
    /// Grid placement; defaults to the world extent.
    pub grid: Option<GridMeta>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { cell_size: 0.25, grid: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub rules: CostRules,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { start: [5.0, 3.0], goal: [15.0, 3.0], rules: CostRules::default() }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut world = WorldSpec::strips(40, 40, 0.5, vec![0, 1]);
        // boxes straight ahead of each leg end, so the overhead region sees them
        world.obstacles = vec![
            ObstacleBox { min: [4.4, 18.4], max: [5.6, 19.2], height: 0.6 },
            ObstacleBox { min: [16.4, 16.4], max: [17.2, 17.6], height: 0.6 },
            ObstacleBox { min: [14.4, 0.3], max: [15.6, 1.1], height: 0.6 },
        ];
        let drive = DriveConfig::default();
        world.random_obstacles = 2;
        world.random_obstacle_size = [0.6, 1.0];
        world.random_obstacle_height = 0.5;
        world.keep_clear = drive.waypoints.clone();
        world.clearance = 1.0;
        Self {
            seed: 0,
            mode: LabelMode::CSam,
            holdout_every: 5,
            camera: CameraConfig::default(),
            world,
            drive,
            robot: RobotParams::default(),
            power: PowerModel::default(),
            render: RenderSettings::default(),
            keyframes: KeyframeConfig::default(),
            cot: CotParams::default(),
            overhead: OverheadRegion::default(),
            labels: LabelRenderParams::default(),
            masks: MaskConfig::default(),
            recon: ReconConfig::desk_scale(),
            confidence: BoundaryPolicy::default(),
            regressor: RegressorConfig::desk_scale(),
            map: MapConfig::default(),
            plan: PlanConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> PipelineResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> PipelineResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> PipelineResult<String> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Checks every section and their cross-field consistency.
    pub fn validate(&self) -> PipelineResult<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        self.camera.intrinsics.validate().map_err(|e| PipelineError::Config(format!("camera.intrinsics: {e}")))?;
        let k = &self.camera.intrinsics;
        if !k.width.is_multiple_of(8) || !k.height.is_multiple_of(8) {
            return bad(format!("camera image {}x{} must have sides divisible by 8", k.width, k.height));
        }
        if self.holdout_every < 2 {
            return bad(format!("holdout_every must be at least 2, got {}", self.holdout_every));
        }
        if self.drive.waypoints.len() < 2 || !(self.drive.speed > 0.0) || !(self.drive.dt > 0.0) {
            return bad("drive needs two waypoints and positive speed and dt".into());
        }
        if self.masks.source == MaskSource::Files && self.masks.dir.is_none() {
            return bad("masks.dir is required when masks.source = \"files\"".into());
        }
        if !(self.map.cell_size > 0.0) {
            return bad(format!("map.cell_size must be positive, got {}", self.map.cell_size));
        }
        if let Some(g) = &self.map.grid {
            if g.cell_size != self.map.cell_size {
                return bad("map.grid.cell_size must equal map.cell_size".into());
            }
        }
        if self.cot.nontraversable_cot != self.labels.nontraversable_cot {
            return bad("cot.nontraversable_cot and labels.nontraversable_cot differ".into());
        }
        if self.power.coefficients.len() > self.render.terrains.len() {
            return bad("every terrain with a power coefficient needs a render class".into());
        }
        let (Layout::Strips { terrains } | Layout::Patches { terrains, .. }) = &self.world.layout;
        if let Some(t) = terrains.iter().find(|t| **t as usize >= self.power.coefficients.len()) {
            return bad(format!("terrain {t} has no power coefficient"));
        }
        if self.cot.mass != self.robot.mass || self.cot.gravity != self.robot.gravity {
            return bad("cot.mass/gravity must match robot.mass/gravity".into());
        }
        let section = |name: &str, r: cotmap_core::Result<()>| r.map_err(|e| PipelineError::Config(format!("{name}: {e}")));
        section("robot", self.robot.validate())?;
        section("power", self.power.validate())?;
        section("cot", self.cot.validate())?;
        section("overhead", self.overhead.validate())?;
        section("recon", self.recon.validate())?;
        section("regressor", self.regressor.validate())?;
        section("plan.rules", self.plan.rules.validate())?;
        Ok(())
    }

    /// Grid covering the world extent unless one is configured.
    pub fn grid(&self) -> GridMeta {
        self.map.grid.unwrap_or_else(|| {
            let (w, h) = (self.world.ncols as f64 * self.world.cell_size, self.world.nrows as f64 * self.world.cell_size);
            GridMeta {
                origin: [0.0, 0.0],
                cell_size: self.map.cell_size,
                cols: (w / self.map.cell_size).ceil() as usize,
                rows: (h / self.map.cell_size).ceil() as usize,
            }
        })
    }

    /// Stream seed for one named stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

/// SplitMix64 over the root seed and an FNV-1a hash of the tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
