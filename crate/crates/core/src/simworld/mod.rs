//! Synthetic terrain world and drive simulator.
//!
//! Stands in for real data collection: it produces power telemetry along a
//! driven path, RGB-D keyframes rendered by ray casting, and a point cloud
//! reconstructed from those keyframes. Every output is deterministic for a
//! fixed seed, and the world itself is the ground truth the rest of the
//! pipeline is checked against.

mod drive;
mod keyframe;
mod world;

pub use drive::{simulate_drive, PowerModel, RobotParams, TelemetrySample};
pub use keyframe::{
    build_point_cloud, ground_truth_cot_image, render_segmentation, render_synthetic_keyframe,
    select_keyframes, Keyframe, RenderSettings, Surface,
};
pub use world::{generate_world, Layout, ObstacleBox, TerrainClass, TerrainGrid, WorldSpec};

/// Stateless 64-bit mixer used for seeded per-pixel and per-texel noise.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform noise in `[-1, 1)` keyed by a seed and a tuple of integers.
pub(crate) fn hash_noise(seed: u64, a: i64, b: i64, c: i64) -> f64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ a as u64);
    h = splitmix64(h ^ b as u64);
    h = splitmix64(h ^ c as u64);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}
