//! Z-buffered software rasterizer that renders the trajectory mesh and the
//! reconstructed point cloud into a keyframe's camera to produce COT labels.
//!
//! Pixel `(i, j)` is sampled at its center `(i, j)` in real pixel
//! coordinates. Triangle coverage uses the top-left fill rule; depth is
//! interpolated perspective-correctly. The depth test is strict, so ties
//! keep the earlier write.

use serde::{Deserialize, Serialize};

use crate::cotlabel::{TrajectoryMesh, UNKNOWN};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3};
use crate::simworld::Keyframe;

/// Where a label pixel's value came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Provenance {
    #[default]
    None = 0,
    Path = 1,
    Overhead = 2,
    CloudUnknown = 3,
    /// Extended from path labels through a terrain mask.
    MaskPath = 4,
    /// Extended from overhead labels through a terrain mask.
    MaskOverhead = 5,
    /// Labeled non-traversable by reconstruction confidence.
    Confidence = 6,
    /// Remaining unknown assumed non-traversable.
    AssumedNegative = 7,
}

impl Provenance {
    pub fn from_u8(v: u8) -> Option<Self> {
        use Provenance::*;
        Some(match v {
            0 => None,
            1 => Path,
            2 => Overhead,
            3 => CloudUnknown,
            4 => MaskPath,
            5 => MaskOverhead,
            6 => Confidence,
            7 => AssumedNegative,
            _ => return Option::None,
        })
    }

    /// Labels carrying a traversable COT measured on the path.
    pub fn is_traversable_source(self) -> bool {
        matches!(self, Provenance::Path | Provenance::MaskPath)
    }
}

/// Per-pixel COT labels (`0` = unknown) with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CotLabelImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl CotLabelImage {
    pub fn unknown(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![UNKNOWN; width * height], provenance: vec![Provenance::None; width * height] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_labeled(&self, idx: usize) -> bool {
        self.values[idx] > 0.0
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height || self.values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}"),
                actual: format!("{}x{}", self.width, self.height),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    /// `+inf` where nothing has been drawn.
    pub depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![f64::INFINITY; width * height] }
    }
}

/// Primitive that won the depth test at a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    Nothing,
    Triangle(u32),
    Point(u32),
}

/// The buffers one keyframe renders into.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderTarget {
    pub zbuf: DepthBuffer,
    pub label: CotLabelImage,
    pub winner: Vec<Winner>,
    /// Measured z-depth per pixel (`0` = no return). When present, a point
    /// only lands on pixels whose measurement agrees with its depth.
    pub sensor_depth: Option<Vec<f64>>,
}

impl RenderTarget {
    pub fn new(k: &CameraIntrinsics) -> Self {
        Self {
            zbuf: DepthBuffer::empty(k.width, k.height),
            label: CotLabelImage::unknown(k.width, k.height),
            winner: vec![Winner::Nothing; k.num_pixels()],
            sensor_depth: None,
        }
    }

    pub fn with_sensor_depth(k: &CameraIntrinsics, depth: &[f32]) -> Result<Self> {
        if depth.len() != k.num_pixels() {
            return Err(Error::ShapeMismatch { expected: format!("{} depths", k.num_pixels()), actual: depth.len().to_string() });
        }
        Ok(Self { sensor_depth: Some(depth.iter().map(|d| *d as f64).collect()), ..Self::new(k) })
    }

    fn check(&self, k: &CameraIntrinsics) -> Result<()> {
        self.label.check_size(k.width, k.height)?;
        if self.zbuf.width != k.width || self.zbuf.height != k.height || self.winner.len() != k.num_pixels() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", k.width, k.height),
                actual: format!("{}x{}", self.zbuf.width, self.zbuf.height),
            });
        }
        Ok(())
    }
}

/// Near and far clip distances along the camera axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipRange {
    pub near: f64,
    pub far: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        Self { near: 1e-3, far: f64::INFINITY }
    }
}

/// Clips a camera-frame polygon to `near ≤ z ≤ far`.
fn clip_polygon(poly: &[Vec3], clip: &ClipRange) -> Vec<Vec3> {
    let pass = |input: Vec<Vec3>, inside: &dyn Fn(&Vec3) -> bool, plane: f64| -> Vec<Vec3> {
        let mut out = Vec::with_capacity(input.len() + 2);
        for i in 0..input.len() {
            let a = input[i];
            let b = input[(i + 1) % input.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (plane - a.z) / (b.z - a.z);
                let mut p = a + (b - a) * t;
                p.z = plane;
                out.push(p);
            }
        }
        out
    };
    let near = clip.near;
    let mut poly = pass(poly.to_vec(), &|p: &Vec3| p.z >= near, near);
    if clip.far.is_finite() && !poly.is_empty() {
        let far = clip.far;
        poly = pass(poly, &|p: &Vec3| p.z <= far, far);
    }
    poly
}

fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

fn is_top_left(a: &Vec2, b: &Vec2) -> bool {
    let d = b - a;
    (d.y == 0.0 && d.x > 0.0) || d.y < 0.0
}

/// Rasterizes one camera-frame triangle with all vertices at `z > 0`,
/// calling `write(idx, depth)` for every covered pixel.
fn raster_triangle(tri: [Vec3; 3], k: &CameraIntrinsics, mut write: impl FnMut(usize, f64)) {
    let proj = |p: &Vec3| Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    let mut v = [proj(&tri[0]), proj(&tri[1]), proj(&tri[2])];
    let mut inv_z = [1.0 / tri[0].z, 1.0 / tri[1].z, 1.0 / tri[2].z];
    let mut area = edge(&v[0], &v[1], &v[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
        inv_z.swap(1, 2);
        area = -area;
    }
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(k.width as f64 - 1.0);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(k.height as f64 - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let edges = [(1, 2), (2, 0), (0, 1)];
    let top_left: [bool; 3] = edges.map(|(a, b)| is_top_left(&v[a], &v[b]));
    for py in min_y as usize..=max_y as usize {
        for px in min_x as usize..=max_x as usize {
            let p = Vec2::new(px as f64, py as f64);
            let mut w = [0.0; 3];
            let mut inside = true;
            for (e, &(a, b)) in edges.iter().enumerate() {
                w[e] = edge(&v[a], &v[b], &p);
                if !(w[e] > 0.0 || (w[e] == 0.0 && top_left[e])) {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            let iz = (w[0] * inv_z[0] + w[1] * inv_z[1] + w[2] * inv_z[2]) / area;
            write(py * k.width + px, 1.0 / iz);
        }
    }
}

/// Renders the trajectory mesh: covered pixels nearer than the z-buffer take
/// the triangle's COT with provenance `Path`.
pub fn rasterize_mesh(
    mesh: &TrajectoryMesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    clip: &ClipRange,
    target: &mut RenderTarget,
) -> Result<()> {
    target.check(k)?;
    let cam = pose.inverse();
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let poly: Vec<Vec3> = tri.iter().map(|&i| cam.transform(&mesh.vertices[i as usize])).collect();
        if poly.iter().all(|p| p.z < clip.near) || poly.iter().all(|p| p.z > clip.far) {
            continue;
        }
        let clipped = clip_polygon(&poly, clip);
        if clipped.len() < 3 {
            continue;
        }
        let cot = mesh.cot[ti];
        for j in 1..clipped.len() - 1 {
            raster_triangle([clipped[0], clipped[j], clipped[j + 1]], k, |idx, z| {
                if z < target.zbuf.depth[idx] {
                    target.zbuf.depth[idx] = z;
                    target.label.values[idx] = cot;
                    target.label.provenance[idx] = Provenance::Path;
                    target.winner[idx] = Winner::Triangle(ti as u32);
                }
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplatMode {
    /// Write `nontraversable_cot` with provenance `Overhead`.
    Overhead { nontraversable_cot: f64 },
    /// Occlude with provenance `CloudUnknown`, leaving the value unknown.
    Cloud,
}

/// Pixels covered by a splat of `radius` centered on the pixel nearest `uv`.
pub fn splat_footprint(uv: &Vec2, radius: f64, k: &CameraIntrinsics) -> impl Iterator<Item = usize> {
    let (cu, cv) = ((uv.x + 0.5).floor() as i64, (uv.y + 0.5).floor() as i64);
    let r = radius.floor() as i64;
    let r2 = radius * radius;
    let (w, h) = (k.width as i64, k.height as i64);
    (-r..=r).flat_map(move |dv| {
        (-r..=r).filter_map(move |du| {
            let (u, v) = (cu + du, cv + dv);
            ((du * du + dv * dv) as f64 <= r2 && u >= 0 && v >= 0 && u < w && v < h)
                .then(|| (v * w + u) as usize)
        })
    })
}

/// Splats world points as constant-depth discs. A point only wins a pixel
/// when it is nearer than the z-buffer by more than `margin` meters, so
/// ground points coincident with the path mesh do not erase it. With a
/// sensor depth, pixels without a return or measuring a depth more than
/// `margin` away from the point's are skipped, which keeps discs from
/// bleeding past silhouettes.
#[allow(clippy::too_many_arguments)]
pub fn splat_points(
    points: &[Vec3],
    mode: SplatMode,
    radius: f64,
    margin: f64,
    pose: &Pose,
    k: &CameraIntrinsics,
    clip: &ClipRange,
    target: &mut RenderTarget,
) -> Result<()> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter("splat radius must be non-negative".into()));
    }
    target.check(k)?;
    let cam = pose.inverse();
    let pad = radius + 1.0;
    for (pi, p) in points.iter().enumerate() {
        let pc = cam.transform(p);
        if pc.z < clip.near || pc.z > clip.far {
            continue;
        }
        let uv = Vec2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
        if uv.x < -pad || uv.y < -pad || uv.x > k.width as f64 + pad || uv.y > k.height as f64 + pad {
            continue;
        }
        for idx in splat_footprint(&uv, radius, k) {
            if let Some(sensor) = &target.sensor_depth {
                if !(sensor[idx] > 0.0) || (pc.z - sensor[idx]).abs() > margin {
                    continue;
                }
            }
            if pc.z < target.zbuf.depth[idx] - margin {
                target.zbuf.depth[idx] = pc.z;
                match mode {
                    SplatMode::Overhead { nontraversable_cot } => {
                        target.label.values[idx] = nontraversable_cot;
                        target.label.provenance[idx] = Provenance::Overhead;
                    }
                    SplatMode::Cloud => {
                        target.label.values[idx] = UNKNOWN;
                        target.label.provenance[idx] = Provenance::CloudUnknown;
                    }
                }
                target.winner[idx] = Winner::Point(pi as u32);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelRenderParams {
    pub splat_radius: f64,
    /// Depth advantage a point needs to occlude already drawn geometry.
    pub occlusion_margin: f64,
    pub clip: ClipRange,
    pub nontraversable_cot: f64,
}

impl Default for LabelRenderParams {
    fn default() -> Self {
        Self {
            splat_radius: 1.0,
            occlusion_margin: 0.15,
            clip: ClipRange { near: 0.05, far: 8.0 },
            nontraversable_cot: 10.0,
        }
    }
}

/// Mesh first, then overhead points, then the plain cloud, all sharing one
/// z-buffer and checked against the keyframe's own depth. Pixels nothing
/// reaches stay unknown.
pub fn compose_label_image(
    keyframe: &Keyframe,
    mesh: &TrajectoryMesh,
    overhead: &[Vec3],
    cloud: &[Vec3],
    params: &LabelRenderParams,
) -> Result<CotLabelImage> {
    let k = &keyframe.intrinsics;
    let mut target = RenderTarget::with_sensor_depth(k, &keyframe.depth)?;
    rasterize_mesh(mesh, &keyframe.pose, k, &params.clip, &mut target)?;
    splat_points(
        overhead,
        SplatMode::Overhead { nontraversable_cot: params.nontraversable_cot },
        params.splat_radius,
        params.occlusion_margin,
        &keyframe.pose,
        k,
        &params.clip,
        &mut target,
    )?;
    splat_points(
        cloud,
        SplatMode::Cloud,
        params.splat_radius,
        params.occlusion_margin,
        &keyframe.pose,
        k,
        &params.clip,
        &mut target,
    )?;
    Ok(target.label)
}

/// Fraction of pixels carrying a COT label.
pub fn coverage(label: &CotLabelImage) -> f64 {
    if label.values.is_empty() {
        return 0.0;
    }
    label.values.iter().filter(|v| **v > 0.0).count() as f64 / label.values.len() as f64
}
