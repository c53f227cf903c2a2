//! Cost of transport along the driven trajectory and the geometric label
//! sources derived from it.
//!
//! COT is `E / (m·g·d)`. Energy is accumulated with a zero-order hold on
//! power (`P_i · (t_{i+1} - t_i)` over interval `i`) and spread uniformly
//! over the interval's arc length, so any window of arc length can be
//! integrated exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::simworld::TelemetrySample;

/// Label value reserved for "unknown".
pub const UNKNOWN: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CotParams {
    pub mass: f64,
    pub gravity: f64,
    /// Arc length of the smoothing window, meters.
    pub horizon: f64,
    pub nontraversable_cot: f64,
}

impl Default for CotParams {
    fn default() -> Self {
        Self { mass: 6.0, gravity: 9.81, horizon: 5.0, nontraversable_cot: 10.0 }
    }
}

impl CotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.gravity > 0.0 && self.horizon > 0.0 && self.nontraversable_cot > 0.0) {
            return Err(Error::InvalidParameter("COT parameters must be positive".into()));
        }
        Ok(())
    }

    /// Labels at or above this value count as non-traversable.
    pub fn is_nontraversable(&self, value: f64) -> bool {
        value >= self.nontraversable_cot
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CotSeries {
    /// Arc length of each telemetry sample.
    pub s: Vec<f64>,
    /// Window-averaged COT at each sample.
    pub cot: Vec<f64>,
}

impl CotSeries {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,cot\n");
        for (s, c) in self.s.iter().zip(&self.cot) {
            out.push_str(&format!("{s},{c}\n"));
        }
        out
    }
}

/// Smoothing window `[a, b]` for a sample at arc length `s` on a path of
/// length `total`. The window keeps its full length `horizon` by sliding
/// inward at the trajectory ends; it covers the whole path when the path is
/// shorter than the horizon.
fn window(s: f64, total: f64, horizon: f64) -> (f64, f64) {
    if total <= horizon {
        return (0.0, total);
    }
    let (mut a, mut b) = (s - horizon / 2.0, s + horizon / 2.0);
    if a < 0.0 {
        a = 0.0;
        b = horizon;
    }
    if b > total {
        b = total;
        a = total - horizon;
    }
    (a, b)
}

pub fn compute_cot_series(telemetry: &[TelemetrySample], params: &CotParams) -> Result<CotSeries> {
    params.validate()?;
    if telemetry.len() < 2 {
        return Err(Error::EmptyInput("COT needs at least two telemetry samples"));
    }
    let mut s = Vec::with_capacity(telemetry.len());
    s.push(0.0);
    for (i, pair) in telemetry.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(Error::NonMonotoneTime(i + 1));
        }
        let step = (pair[1].pose.translation - pair[0].pose.translation).norm();
        s.push(s[i] + step);
    }
    let total = *s.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::ZeroDistance);
    }
    let energy: Vec<f64> = telemetry.windows(2).map(|p| p[0].power() * (p[1].t - p[0].t)).collect();
    let mg = params.mass * params.gravity;

    let cot = s
        .iter()
        .map(|&sc| {
            let (a, b) = window(sc, total, params.horizon);
            // first interval that can overlap [a, b]
            let start = s.partition_point(|&x| x < a).saturating_sub(1);
            let mut e = 0.0;
            for i in start..energy.len() {
                let (lo, hi) = (s[i], s[i + 1]);
                if lo > b {
                    break;
                }
                if hi > lo {
                    let overlap = hi.min(b) - lo.max(a);
                    if overlap > 0.0 {
                        e += energy[i] * overlap / (hi - lo);
                    }
                } else if lo >= a && lo <= b {
                    // stationary interval: all of its energy lands at one arc length
                    e += energy[i];
                }
            }
            e / (mg * (b - a))
        })
        .collect();
    Ok(CotSeries { s, cot })
}

/// Width-extruded triangle strip along the path carrying per-triangle COT.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub cot: Vec<f64>,
}

impl TrajectoryMesh {
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                (b - a).cross(&(c - a)).norm() / 2.0
            })
            .sum()
    }
}

/// One quad (two triangles) per consecutive pose pair, centered on the path.
/// Zero-length steps produce no geometry. Each quad carries the mean of the
/// smoothed COT at its two ends.
pub fn build_trajectory_mesh(poses: &[Pose], series: &CotSeries, width: f64) -> Result<TrajectoryMesh> {
    if poses.len() < 2 {
        return Err(Error::EmptyInput("trajectory mesh needs at least two poses"));
    }
    if poses.len() != series.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} series values", poses.len()),
            actual: series.len().to_string(),
        });
    }
    if !(width > 0.0) {
        return Err(Error::InvalidParameter("mesh width must be positive".into()));
    }
    let mut mesh = TrajectoryMesh::default();
    for (i, pair) in poses.windows(2).enumerate() {
        let (p0, p1) = (pair[0].translation, pair[1].translation);
        let d = Vec3::new(p1.x - p0.x, p1.y - p0.y, 0.0);
        let len = d.norm();
        if len < 1e-9 {
            continue;
        }
        let n = Vec3::new(-d.y, d.x, 0.0) / len * (width / 2.0);
        let base = mesh.vertices.len() as u32;
        mesh.vertices.extend([p0 + n, p0 - n, p1 + n, p1 - n]);
        mesh.triangles.push([base, base + 1, base + 3]);
        mesh.triangles.push([base, base + 3, base + 2]);
        let c = (series.cot[i] + series.cot[i + 1]) / 2.0;
        mesh.cot.extend([c, c]);
    }
    Ok(mesh)
}

/// Box above and ahead of every pose: body-frame `0 ≤ x ≤ max_range`,
/// `|y| ≤ lateral_half`, `vertical_offset ≤ z ≤ vertical_offset + 2·vertical_half`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverheadRegion {
    pub lateral_half: f64,
    pub vertical_half: f64,
    pub vertical_offset: f64,
    pub max_range: f64,
}

impl Default for OverheadRegion {
    fn default() -> Self {
        Self { lateral_half: 0.5, vertical_half: 0.85, vertical_offset: 0.3, max_range: 8.0 }
    }
}

impl OverheadRegion {
    pub fn validate(&self) -> Result<()> {
        if !(self.lateral_half > 0.0 && self.vertical_half > 0.0 && self.vertical_offset > 0.0 && self.max_range > 0.0)
        {
            return Err(Error::InvalidParameter("overhead region extents must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, pose: &Pose, p: &Vec3) -> bool {
        let local = pose.inverse_transform(p);
        local.x >= 0.0
            && local.x <= self.max_range
            && local.y.abs() <= self.lateral_half
            && local.z >= self.vertical_offset
            && local.z <= self.vertical_offset + 2.0 * self.vertical_half
    }
}

/// Flags the cloud points that fall inside the region of any pose.
pub fn overhead_mask(cloud: &[Vec3], poses: &[Pose], region: &OverheadRegion) -> Result<Vec<bool>> {
    region.validate()?;
    let (zmin, zmax) = poses.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.translation.z), hi.max(p.translation.z))
    });
    let reach = region.vertical_offset + 2.0 * region.vertical_half + region.max_range;
    Ok(cloud
        .iter()
        .map(|p| {
            // poses are near-planar; skip points that no region can reach
            if p.z < zmin - reach || p.z > zmax + reach {
                return false;
            }
            poses.iter().any(|pose| region.contains(pose, p))
        })
        .collect())
}

pub fn extract_overhead_points(cloud: &[Vec3], poses: &[Pose], region: &OverheadRegion) -> Result<Vec<Vec3>> {
    let mask = overhead_mask(cloud, poses, region)?;
    Ok(cloud.iter().zip(mask).filter(|(_, m)| *m).map(|(p, _)| *p).collect())
}
