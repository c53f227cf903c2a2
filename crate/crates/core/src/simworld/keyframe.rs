use serde::{Deserialize, Serialize};

use super::drive::{PowerModel, RobotParams};
use super::hash_noise;
use super::world::{TerrainClass, TerrainGrid};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelDepth, Pose, Vec3};

/// What a camera ray hits first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Sky,
    Terrain(u8),
    Obstacle(u16),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Depth beyond which the sensor reports no measurement.
    pub max_depth: f64,
    pub terrains: Vec<TerrainClass>,
    pub obstacle_color: [u8; 3],
    pub obstacle_texture: f64,
    pub sky_color: [u8; 3],
    /// Per-pixel sensor noise amplitude, in 8-bit color units.
    pub sensor_noise: f64,
    /// Size of one texture cell in meters.
    pub texel: f64,
    /// Seed of the world-anchored texture; fixed per world.
    pub texture_seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            max_depth: 8.0,
            terrains: TerrainClass::defaults(),
            obstacle_color: [175, 45, 40],
            obstacle_texture: 8.0,
            sky_color: [170, 200, 235],
            sensor_noise: 3.0,
            texel: 0.05,
            texture_seed: 0x7e77,
        }
    }
}

/// RGB-D frame with the world-from-camera pose it was captured at.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub id: usize,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Planar 3×H×W color.
    pub rgb: Vec<u8>,
    /// 1×H×W depth in meters; 0 marks an invalid measurement.
    pub depth: Vec<f32>,
}

impl Keyframe {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.width() + u];
        (d > 0.0).then_some(d as f64)
    }
}

fn intersect_box(b: &super::world::ObstacleBox, o: &Vec3, d: &Vec3) -> Option<f64> {
    let lo = [b.min[0], b.min[1], 0.0];
    let hi = [b.max[0], b.max[1], b.height];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return None;
            }
        } else {
            let ta = (lo[axis] - o[axis]) / d[axis];
            let tb = (hi[axis] - o[axis]) / d[axis];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 <= t1 && t0 > 1e-9).then_some(t0)
}

/// Casts the ray `origin + t·dir` into the world. With `dir` the world-frame
/// image of a z = 1 camera ray, `t` is the camera-frame depth.
fn cast(world: &TerrainGrid, origin: &Vec3, dir: &Vec3) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    if dir.z < 0.0 {
        let t = -origin.z / dir.z;
        let hit = origin + dir * t;
        if let Some(id) = world.terrain_at(hit.x, hit.y) {
            best = Some((t, Surface::Terrain(id)));
        }
    }
    for (i, b) in world.obstacles.iter().enumerate() {
        if let Some(t) = intersect_box(b, origin, dir) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, Surface::Obstacle(i as u16)));
            }
        }
    }
    best
}

fn check_pose(pose: &Pose) -> Result<()> {
    if pose.translation.z <= 0.0 {
        return Err(Error::CameraBelowGround(pose.translation.z));
    }
    Ok(())
}

/// Per-pixel surface identity seen from `pose`; the oracle segmentation.
pub fn render_segmentation(world: &TerrainGrid, pose: &Pose, k: &CameraIntrinsics) -> Result<Vec<Surface>> {
    check_pose(pose)?;
    let mut out = Vec::with_capacity(k.num_pixels());
    for v in 0..k.height {
        for u in 0..k.width {
            let dir = pose.rotation * k.ray(u as f64, v as f64);
            out.push(cast(world, &pose.translation, &dir).map_or(Surface::Sky, |(_, s)| s));
        }
    }
    Ok(out)
}

pub fn render_synthetic_keyframe(
    world: &TerrainGrid,
    pose: &Pose,
    k: &CameraIntrinsics,
    settings: &RenderSettings,
    id: usize,
    seed: u64,
) -> Result<Keyframe> {
    check_pose(pose)?;
    k.validate()?;
    let n = k.num_pixels();
    let mut rgb = vec![0u8; 3 * n];
    let mut depth = vec![0f32; n];
    for v in 0..k.height {
        for u in 0..k.width {
            let idx = v * k.width + u;
            let dir = pose.rotation * k.ray(u as f64, v as f64);
            let (base, texture, texel_noise) = match cast(world, &pose.translation, &dir) {
                None => (settings.sky_color, 0.0, 0.0),
                Some((t, surface)) => {
                    if t <= settings.max_depth {
                        depth[idx] = t as f32;
                    }
                    let hit = pose.translation + dir * t;
                    let q = |x: f64| (x / settings.texel).floor() as i64;
                    match surface {
                        Surface::Terrain(id) => {
                            let class = settings.terrains.get(id as usize).ok_or_else(|| {
                                Error::InvalidParameter(format!("terrain {id} has no render class"))
                            })?;
                            (class.color, class.texture, hash_noise(settings.texture_seed, q(hit.x), q(hit.y), id as i64))
                        }
                        Surface::Obstacle(i) => (
                            settings.obstacle_color,
                            settings.obstacle_texture,
                            hash_noise(settings.texture_seed ^ 0xb0c5, q(hit.x) + q(hit.z), q(hit.y) - q(hit.z), i as i64),
                        ),
                        Surface::Sky => unreachable!(),
                    }
                }
            };
            for c in 0..3 {
                let sensor = hash_noise(seed, id as i64, idx as i64, c as i64) * settings.sensor_noise;
                let value = base[c] as f64 + texel_noise * texture + sensor;
                rgb[c * n + idx] = value.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(Keyframe { id, pose: *pose, intrinsics: *k, rgb, depth })
}

/// Greedy keyframe selection on translation or rotation change.
pub fn select_keyframes(poses: &[Pose], trans_thresh: f64, rot_thresh_deg: f64) -> Result<Vec<usize>> {
    if poses.is_empty() {
        return Err(Error::EmptyInput("no poses to select keyframes from"));
    }
    if !(trans_thresh > 0.0 && rot_thresh_deg > 0.0) {
        return Err(Error::InvalidParameter("keyframe thresholds must be positive".into()));
    }
    let rot = rot_thresh_deg.to_radians();
    let tol = 1e-9;
    let mut selected = vec![0];
    let mut last = poses[0];
    for (i, p) in poses.iter().enumerate().skip(1) {
        let moved = (p.translation - last.translation).norm() >= trans_thresh - tol;
        let turned = p.angle_to(&last) >= rot - tol;
        if moved || turned {
            selected.push(i);
            last = *p;
        }
    }
    Ok(selected)
}

/// World-frame points unprojected from every `stride`-th valid depth pixel.
pub fn build_point_cloud(keyframes: &[Keyframe], stride: usize) -> Result<Vec<Vec3>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let mut cloud = Vec::new();
    for kf in keyframes {
        let k = &kf.intrinsics;
        for v in (0..k.height).step_by(stride) {
            for u in (0..k.width).step_by(stride) {
                if let Some(depth) = kf.depth_at(u, v) {
                    let pc = crate::geometry::unproject_pixel(
                        &PixelDepth { u: u as f64, v: v as f64, depth },
                        k,
                    )?;
                    cloud.push(kf.pose.transform(&pc));
                }
            }
        }
    }
    Ok(cloud)
}

/// Ground-truth COT image from an oracle segmentation: terrain pixels carry
/// their terrain's COT at speed `v`, obstacles the non-traversable value,
/// sky stays unknown (0).
pub fn ground_truth_cot_image(
    segments: &[Surface],
    power: &PowerModel,
    robot: &RobotParams,
    v: f64,
    nontraversable_cot: f64,
) -> Result<Vec<f64>> {
    segments
        .iter()
        .map(|s| match s {
            Surface::Sky => Ok(0.0),
            Surface::Terrain(id) => power.true_cot(*id, robot, v),
            Surface::Obstacle(_) => Ok(nontraversable_cot),
        })
        .collect()
}
