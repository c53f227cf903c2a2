use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Axis-aligned box standing on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

impl ObstacleBox {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    /// Whether the segment `a → b` passes within `clearance` of the footprint.
    pub fn intersects_segment(&self, a: &Vec2, b: &Vec2, clearance: f64) -> bool {
        let lo = [self.min[0] - clearance, self.min[1] - clearance];
        let hi = [self.max[0] + clearance, self.max[1] + clearance];
        let d = b - a;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for axis in 0..2 {
            if d[axis].abs() < 1e-15 {
                if a[axis] < lo[axis] || a[axis] > hi[axis] {
                    return false;
                }
            } else {
                let ta = (lo[axis] - a[axis]) / d[axis];
                let tb = (hi[axis] - a[axis]) / d[axis];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Appearance of a terrain class in rendered keyframes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainClass {
    pub name: String,
    pub color: [u8; 3],
    /// Amplitude of the world-anchored texture noise, in 8-bit color units.
    pub texture: f64,
}

impl TerrainClass {
    pub fn defaults() -> Vec<TerrainClass> {
        vec![
            TerrainClass { name: "road".into(), color: [120, 120, 125], texture: 6.0 },
            TerrainClass { name: "grass".into(), color: [55, 140, 45], texture: 22.0 },
            TerrainClass { name: "rocks".into(), color: [150, 115, 80], texture: 35.0 },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainGrid {
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
    /// Row-major terrain ids, `terrain[row * ncols + col]`; rows run along +y.
    pub terrain: Vec<u8>,
    pub obstacles: Vec<ObstacleBox>,
}

impl TerrainGrid {
    pub fn extent(&self) -> (f64, f64) {
        (self.ncols as f64 * self.cell_size, self.nrows as f64 * self.cell_size)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (w, h) = self.extent();
        x >= 0.0 && y >= 0.0 && x <= w && y <= h
    }

    pub fn terrain_at(&self, x: f64, y: f64) -> Option<u8> {
        if !self.contains(x, y) {
            return None;
        }
        let col = ((x / self.cell_size) as usize).min(self.ncols - 1);
        let row = ((y / self.cell_size) as usize).min(self.nrows - 1);
        Some(self.terrain[row * self.ncols + col])
    }

    pub fn terrain_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.terrain.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn obstacle_at(&self, x: f64, y: f64) -> Option<usize> {
        self.obstacles.iter().position(|b| b.contains_xy(x, y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Equal-width vertical strips along +x, one per listed terrain id.
    Strips { terrains: Vec<u8> },
    /// Voronoi patches around `patches` random sites with random terrain ids.
    Patches { terrains: Vec<u8>, patches: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size: f64,
    pub layout: Layout,
    /// Obstacles placed verbatim.
    #[serde(default)]
    pub obstacles: Vec<ObstacleBox>,
    /// Additional randomly placed obstacles.
    #[serde(default)]
    pub random_obstacles: usize,
    #[serde(default = "default_obstacle_size")]
    pub random_obstacle_size: [f64; 2],
    #[serde(default = "default_obstacle_height")]
    pub random_obstacle_height: f64,
    /// Random obstacles keep this clearance from `keep_clear` polyline.
    #[serde(default)]
    pub keep_clear: Vec<[f64; 2]>,
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_obstacle_size() -> [f64; 2] {
    [0.8, 2.0]
}
fn default_obstacle_height() -> f64 {
    0.6
}
fn default_clearance() -> f64 {
    1.0
}

impl WorldSpec {
    pub fn strips(ncols: usize, nrows: usize, cell_size: f64, terrains: Vec<u8>) -> Self {
        Self {
            ncols,
            nrows,
            cell_size,
            layout: Layout::Strips { terrains },
            obstacles: Vec::new(),
            random_obstacles: 0,
            random_obstacle_size: default_obstacle_size(),
            random_obstacle_height: default_obstacle_height(),
            keep_clear: Vec::new(),
            clearance: default_clearance(),
        }
    }
}

pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<TerrainGrid> {
    if spec.ncols == 0 || spec.nrows == 0 || !(spec.cell_size > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "degenerate world {}x{} with cell size {}",
            spec.ncols, spec.nrows, spec.cell_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ncols, nrows) = (spec.ncols, spec.nrows);
    let mut terrain = vec![0u8; ncols * nrows];
    match &spec.layout {
        Layout::Strips { terrains } => {
            if terrains.is_empty() {
                return Err(Error::InvalidParameter("strip layout needs terrains".into()));
            }
            let n = terrains.len();
            for row in 0..nrows {
                for col in 0..ncols {
                    terrain[row * ncols + col] = terrains[(col * n / ncols).min(n - 1)];
                }
            }
        }
        Layout::Patches { terrains, patches } => {
            if terrains.is_empty() || *patches == 0 {
                return Err(Error::InvalidParameter("patch layout needs terrains and sites".into()));
            }
            // every listed terrain gets at least one site
            let sites: Vec<(f64, f64, u8)> = (0..(*patches).max(terrains.len()))
                .map(|i| {
                    let id = if i < terrains.len() {
                        terrains[i]
                    } else {
                        terrains[rng.random_range(0..terrains.len())]
                    };
                    (rng.random_range(0.0..ncols as f64), rng.random_range(0.0..nrows as f64), id)
                })
                .collect();
            for row in 0..nrows {
                for col in 0..ncols {
                    let (cx, cy) = (col as f64 + 0.5, row as f64 + 0.5);
                    let best = sites
                        .iter()
                        .min_by(|a, b| {
                            let da = (a.0 - cx).powi(2) + (a.1 - cy).powi(2);
                            let db = (b.0 - cx).powi(2) + (b.1 - cy).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("nonempty sites");
                    terrain[row * ncols + col] = best.2;
                }
            }
        }
    }

    let mut obstacles = spec.obstacles.clone();
    let (w, h) = (ncols as f64 * spec.cell_size, nrows as f64 * spec.cell_size);
    let keep: Vec<Vec2> = spec.keep_clear.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    let [smin, smax] = spec.random_obstacle_size;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.random_obstacles {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidParameter("could not place random obstacles".into()));
        }
        let sx = rng.random_range(smin..=smax);
        let sy = rng.random_range(smin..=smax);
        if sx >= w || sy >= h {
            continue;
        }
        let x0 = rng.random_range(0.0..(w - sx));
        let y0 = rng.random_range(0.0..(h - sy));
        let b = ObstacleBox { min: [x0, y0], max: [x0 + sx, y0 + sy], height: spec.random_obstacle_height };
        let blocked = keep.windows(2).any(|s| b.intersects_segment(&s[0], &s[1], spec.clearance))
            || (keep.len() == 1 && b.intersects_segment(&keep[0], &keep[0], spec.clearance));
        if !blocked {
            obstacles.push(b);
            placed += 1;
        }
    }

    Ok(TerrainGrid { cell_size: spec.cell_size, ncols, nrows, terrain, obstacles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_layout_splits_in_half() {
        let world = generate_world(0, &WorldSpec::strips(10, 4, 1.0, vec![0, 1])).unwrap();
        for row in 0..4 {
            for col in 0..10 {
                let expected = if col < 5 { 0 } else { 1 };
                assert_eq!(world.terrain[row * 10 + col], expected);
            }
        }
        assert_eq!(world.terrain_ids(), vec![0, 1]);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = WorldSpec::strips(40, 40, 0.5, vec![0, 1, 2]);
        spec.layout = Layout::Patches { terrains: vec![0, 1, 2], patches: 7 };
        spec.random_obstacles = 3;
        let a = generate_world(11, &spec).unwrap();
        let b = generate_world(11, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.obstacles.len(), 3);
        assert!(a.terrain_ids().len() >= 2);
    }

    #[test]
    fn degenerate_dimensions_rejected() {
        assert!(generate_world(0, &WorldSpec::strips(0, 4, 1.0, vec![0])).is_err());
        assert!(generate_world(0, &WorldSpec::strips(4, 4, 0.0, vec![0])).is_err());
    }

    #[test]
    fn random_obstacles_avoid_keep_clear_path() {
        let mut spec = WorldSpec::strips(40, 40, 0.5, vec![0, 1]);
        spec.random_obstacles = 6;
        spec.keep_clear = vec![[2.0, 2.0], [2.0, 18.0], [18.0, 18.0]];
        let world = generate_world(3, &spec).unwrap();
        let keep: Vec<Vec2> = spec.keep_clear.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        for b in &world.obstacles {
            for s in keep.windows(2) {
                assert!(!b.intersects_segment(&s[0], &s[1], 1.0));
            }
        }
    }

    #[test]
    fn segment_box_intersection() {
        let b = ObstacleBox { min: [1.0, 1.0], max: [2.0, 2.0], height: 1.0 };
        assert!(b.intersects_segment(&Vec2::new(0.0, 1.5), &Vec2::new(3.0, 1.5), 0.0));
        assert!(!b.intersects_segment(&Vec2::new(0.0, 0.5), &Vec2::new(3.0, 0.5), 0.0));
        assert!(b.intersects_segment(&Vec2::new(0.0, 0.5), &Vec2::new(3.0, 0.5), 0.6));
        assert!(!b.intersects_segment(&Vec2::new(0.0, 0.0), &Vec2::new(0.5, 0.5), 0.0));
    }
}
