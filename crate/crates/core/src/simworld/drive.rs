use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::TerrainGrid;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};

/// Instantaneous power `P = P0 + k_t·m·g·v + noise` per terrain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    /// Rolling coefficient `k_t`, indexed by terrain id.
    pub coefficients: Vec<f64>,
    pub idle_power: f64,
    pub noise_std: f64,
    pub voltage: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self { coefficients: vec![0.7, 1.3, 1.8], idle_power: 0.0, noise_std: 0.0, voltage: 24.0 }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        if self.coefficients.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::InvalidParameter("terrain coefficients must be positive".into()));
        }
        if !(self.idle_power >= 0.0) || !(self.noise_std >= 0.0) || !(self.voltage > 0.0) {
            return Err(Error::InvalidParameter("invalid idle power, noise or voltage".into()));
        }
        Ok(())
    }

    pub fn coefficient(&self, terrain: u8) -> Result<f64> {
        self.coefficients
            .get(terrain as usize)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("terrain {terrain} has no power coefficient")))
    }

    /// Noise-free power on `terrain` at speed `v`.
    pub fn mean_power(&self, terrain: u8, robot: &RobotParams, v: f64) -> Result<f64> {
        Ok(self.idle_power + self.coefficient(terrain)? * robot.mass * robot.gravity * v)
    }

    /// Ground-truth COT of `terrain` driven at constant speed `v`.
    pub fn true_cot(&self, terrain: u8, robot: &RobotParams, v: f64) -> Result<f64> {
        Ok(self.mean_power(terrain, robot, v)? / (robot.mass * robot.gravity * v))
    }

    pub fn check_world(&self, world: &TerrainGrid) -> Result<()> {
        for id in world.terrain_ids() {
            self.coefficient(id)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    pub mass: f64,
    pub gravity: f64,
    pub width: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self { mass: 6.0, gravity: 9.81, width: 0.5 }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.gravity > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidParameter("robot mass, gravity and width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TelemetrySample {
    pub t: f64,
    pub pose: Pose,
    pub v: f64,
    pub current: f64,
    pub voltage: f64,
}

impl TelemetrySample {
    pub fn power(&self) -> f64 {
        self.current * self.voltage
    }
}

/// Drives the waypoint polyline at constant commanded speed, sampling every `dt`.
///
/// The last sample sits exactly on the final waypoint. Heading follows the
/// current segment.
pub fn simulate_drive(
    world: &TerrainGrid,
    power: &PowerModel,
    robot: &RobotParams,
    waypoints: &[Vec2],
    v_cmd: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<TelemetrySample>> {
    if waypoints.len() < 2 {
        return Err(Error::EmptyInput("drive needs at least two waypoints"));
    }
    if !(v_cmd > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter("speed and time step must be positive".into()));
    }
    power.validate()?;
    robot.validate()?;
    power.check_world(world)?;
    for w in waypoints {
        if !world.contains(w.x, w.y) {
            return Err(Error::OutOfWorld { x: w.x, y: w.y });
        }
    }
    for (segment, pair) in waypoints.windows(2).enumerate() {
        for (obstacle, b) in world.obstacles.iter().enumerate() {
            if b.intersects_segment(&pair[0], &pair[1], robot.width / 2.0) {
                return Err(Error::PathThroughObstacle { segment, obstacle });
            }
        }
    }

    // drop zero-length segments; they carry no heading
    let mut pts: Vec<Vec2> = vec![waypoints[0]];
    for w in &waypoints[1..] {
        if (w - pts.last().unwrap()).norm() > 1e-12 {
            pts.push(*w);
        }
    }
    if pts.len() < 2 {
        return Err(Error::ZeroDistance);
    }
    let mut cumulative = vec![0.0];
    for s in pts.windows(2) {
        cumulative.push(cumulative.last().unwrap() + (s[1] - s[0]).norm());
    }
    let total = *cumulative.last().unwrap();

    let noise = Normal::new(0.0, power.noise_std)
        .map_err(|e| Error::InvalidParameter(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mg = robot.mass * robot.gravity;

    let mut samples = Vec::new();
    let mut step = 0u64;
    let mut segment = 0;
    loop {
        let t = step as f64 * dt;
        let (t, s, last) = if v_cmd * t >= total - 1e-12 { (total / v_cmd, total, true) } else { (t, v_cmd * t, false) };
        while segment + 2 < cumulative.len() && s >= cumulative[segment + 1] {
            segment += 1;
        }
        let (a, b) = (pts[segment], pts[segment + 1]);
        let seg_len = cumulative[segment + 1] - cumulative[segment];
        let frac = ((s - cumulative[segment]) / seg_len).clamp(0.0, 1.0);
        let p = a + (b - a) * frac;
        let yaw = (b.y - a.y).atan2(b.x - a.x);
        let terrain = world.terrain_at(p.x, p.y).ok_or(Error::OutOfWorld { x: p.x, y: p.y })?;
        let k = power.coefficient(terrain)?;
        let mut watts = power.idle_power + k * mg * v_cmd;
        if power.noise_std > 0.0 {
            watts += noise.sample(&mut rng);
        }
        let watts = watts.max(0.0);
        samples.push(TelemetrySample {
            t,
            pose: Pose::from_xyz_yaw(p.x, p.y, 0.0, yaw),
            v: v_cmd,
            current: watts / power.voltage,
            voltage: power.voltage,
        });
        if last {
            break;
        }
        step += 1;
    }
    Ok(samples)
}
