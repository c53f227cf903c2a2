//! Bird's-eye-view COT maps: per-frame local maps and the global
//! closest-observation merge.
//!
//! Cells live on a lattice of squares of side `cell_size`; along each axis
//! cell `i` covers `(origin + i·cs, origin + (i+1)·cs]`, so a point exactly
//! on an edge belongs to the lower index. Local maps are anchored at the
//! world origin, so any global map whose origin is a multiple of the cell
//! size shares their lattice.

use serde::{Deserialize, Serialize};

use crate::cotlabel::UNKNOWN;
use crate::error::{Error, Result};
use crate::formats::TensorFile;
use crate::geometry::{unproject_pixel, CameraIntrinsics, PixelDepth, Pose, Vec2};

/// Lattice index of coordinate `x`; edges go to the lower cell.
pub fn lattice_index(x: f64, origin: f64, cell_size: f64) -> i64 {
    let f = (x - origin) / cell_size;
    if f == f.floor() {
        f as i64 - 1
    } else {
        f.floor() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevCell {
    pub cot: f64,
    /// Camera-to-point range of the observation, meters.
    pub distance: f64,
}

/// Dense window of lattice cells covering one frame's footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBevMap {
    pub cell_size: f64,
    /// Lattice index of the first column and row.
    pub col0: i64,
    pub row0: i64,
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Option<BevCell>>,
}

impl LocalBevMap {
    pub fn empty(cell_size: f64) -> Self {
        Self { cell_size, col0: 0, row0: 0, cols: 0, rows: 0, cells: Vec::new() }
    }

    /// World coordinates of the window's lower-left corner.
    pub fn origin(&self) -> Vec2 {
        Vec2::new(self.col0 as f64 * self.cell_size, self.row0 as f64 * self.cell_size)
    }

    pub fn occupied(&self) -> impl Iterator<Item = (i64, i64, BevCell)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c.map(|c| (self.col0 + (i % self.cols) as i64, self.row0 + (i / self.cols) as i64, c))
        })
    }

    pub fn num_occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn get(&self, col: i64, row: i64) -> Option<BevCell> {
        let (c, r) = (col - self.col0, row - self.row0);
        if c < 0 || r < 0 || c as usize >= self.cols || r as usize >= self.rows {
            return None;
        }
        self.cells[r as usize * self.cols + c as usize]
    }

    /// Builds a window from `(col, row, cell)` observations keeping the
    /// smallest distance per cell; ties keep the earlier observation.
    pub fn from_observations(cell_size: f64, obs: &[(i64, i64, BevCell)]) -> Self {
        if obs.is_empty() {
            return Self::empty(cell_size);
        }
        let col0 = obs.iter().map(|o| o.0).min().unwrap_or(0);
        let row0 = obs.iter().map(|o| o.1).min().unwrap_or(0);
        let cols = (obs.iter().map(|o| o.0).max().unwrap_or(0) - col0 + 1) as usize;
        let rows = (obs.iter().map(|o| o.1).max().unwrap_or(0) - row0 + 1) as usize;
        let mut cells: Vec<Option<BevCell>> = vec![None; cols * rows];
        for (c, r, cell) in obs {
            let slot = &mut cells[(r - row0) as usize * cols + (c - col0) as usize];
            if slot.is_none_or(|old| cell.distance < old.distance) {
                *slot = Some(*cell);
            }
        }
        Self { cell_size, col0, row0, cols, rows, cells }
    }
}

/// Drops every labeled pixel with valid depth onto the ground plane.
/// `cot` and `depth` are row-major `H × W`; depth ≤ 0 is invalid.
pub fn project_to_local_bev(
    cot: &[f64],
    depth: &[f32],
    pose: &Pose,
    k: &CameraIntrinsics,
    cell_size: f64,
) -> Result<LocalBevMap> {
    if !(cell_size > 0.0) {
        return Err(Error::InvalidParameter(format!("cell size {cell_size}")));
    }
    let n = k.num_pixels();
    if cot.len() != n || depth.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} pixels"),
            actual: format!("{} COT / {} depth", cot.len(), depth.len()),
        });
    }
    let mut obs = Vec::new();
    for p in 0..n {
        let (c, d) = (cot[p], depth[p] as f64);
        if !(c > 0.0) || !(d > 0.0) {
            continue;
        }
        let pd = PixelDepth { u: (p % k.width) as f64, v: (p / k.width) as f64, depth: d };
        let cam = unproject_pixel(&pd, k)?;
        let world = pose.transform(&cam);
        let col = lattice_index(world.x, 0.0, cell_size);
        let row = lattice_index(world.y, 0.0, cell_size);
        obs.push((col, row, BevCell { cot: c, distance: cam.norm() }));
    }
    Ok(LocalBevMap::from_observations(cell_size, &obs))
}

/// Placement of a global grid in the world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub origin: [f64; 2],
    pub cell_size: f64,
    /// `M`, along +y.
    pub rows: usize,
    /// `N`, along +x.
    pub cols: usize,
}

/// `2 × M × N` map: channel 0 holds COT (`0` = unknown), channel 1 the
/// closest observation distance (`+∞` when never updated).
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalBevMap {
    pub meta: GridMeta,
    pub cot: Vec<f64>,
    pub distance: Vec<f64>,
}

impl GlobalBevMap {
    pub fn new(meta: GridMeta) -> Result<Self> {
        if !(meta.cell_size > 0.0) || meta.rows == 0 || meta.cols == 0 {
            return Err(Error::InvalidParameter(format!("grid {meta:?}")));
        }
        let n = meta.rows * meta.cols;
        Ok(Self { meta, cot: vec![UNKNOWN; n], distance: vec![f64::INFINITY; n] })
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.meta.cols + col
    }

    /// Cell containing a world point; the outer boundary belongs to the
    /// first and last cells.
    pub fn cell_of(&self, xy: &Vec2) -> Result<(usize, usize)> {
        let m = &self.meta;
        let (w, h) = (m.cols as f64 * m.cell_size, m.rows as f64 * m.cell_size);
        let (dx, dy) = (xy.x - m.origin[0], xy.y - m.origin[1]);
        if !(0.0..=w).contains(&dx) || !(0.0..=h).contains(&dy) {
            return Err(Error::OutOfBounds { x: xy.x, y: xy.y });
        }
        let col = lattice_index(xy.x, m.origin[0], m.cell_size).clamp(0, m.cols as i64 - 1);
        let row = lattice_index(xy.y, m.origin[1], m.cell_size).clamp(0, m.rows as i64 - 1);
        Ok((col as usize, row as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vec2 {
        let m = &self.meta;
        Vec2::new(m.origin[0] + (col as f64 + 0.5) * m.cell_size, m.origin[1] + (row as f64 + 0.5) * m.cell_size)
    }

    /// Offset of the world lattice relative to this grid, if aligned.
    fn lattice_offset(&self, cell_size: f64) -> Result<(i64, i64)> {
        let m = &self.meta;
        if (cell_size - m.cell_size).abs() > 1e-9 * m.cell_size {
            return Err(Error::InvalidParameter(format!("cell size {cell_size} does not match map {}", m.cell_size)));
        }
        let off = |o: f64| {
            let f = o / m.cell_size;
            let r = f.round();
            ((f - r).abs() < 1e-6).then_some(r as i64)
        };
        match (off(m.origin[0]), off(m.origin[1])) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(Error::InvalidParameter("map origin is not on the cell lattice".into())),
        }
    }

    /// Grid coordinates of a world-lattice cell, if inside the map.
    fn local_to_grid(&self, off: (i64, i64), col: i64, row: i64) -> Option<(usize, usize)> {
        let (c, r) = (col - off.0, row - off.1);
        (c >= 0 && r >= 0 && (c as usize) < self.meta.cols && (r as usize) < self.meta.rows)
            .then_some((c as usize, r as usize))
    }

    pub fn to_tensor(&self) -> Result<TensorFile> {
        let mut data = self.cot.clone();
        data.extend_from_slice(&self.distance);
        TensorFile::from_f64(&[2, self.meta.rows, self.meta.cols], &data)
    }

    pub fn from_tensor(meta: GridMeta, t: &TensorFile) -> Result<Self> {
        t.expect_dims(&[2, meta.rows, meta.cols])?;
        let data = t.to_f64()?;
        let n = meta.rows * meta.cols;
        Ok(Self { meta, cot: data[..n].to_vec(), distance: data[n..].to_vec() })
    }
}

fn apply(global: &mut GlobalBevMap, col: usize, row: usize, cell: BevCell) {
    let i = global.index(col, row);
    if cell.distance < global.distance[i] {
        global.cot[i] = cell.cot;
        global.distance[i] = cell.distance;
    }
}

/// Overwrites each global cell whose stored distance is larger than the
/// local observation's. Fails without modifying the map when any occupied
/// local cell falls outside it.
pub fn merge_into_global(global: &mut GlobalBevMap, local: &LocalBevMap) -> Result<()> {
    if local.num_occupied() == 0 {
        return Ok(());
    }
    let off = global.lattice_offset(local.cell_size)?;
    let mut placed = Vec::with_capacity(local.num_occupied());
    for (c, r, cell) in local.occupied() {
        let (col, row) = global.local_to_grid(off, c, r).ok_or(Error::OutOfBounds {
            x: (c as f64 + 0.5) * local.cell_size,
            y: (r as f64 + 0.5) * local.cell_size,
        })?;
        placed.push((col, row, cell));
    }
    for (col, row, cell) in placed {
        apply(global, col, row, cell);
    }
    Ok(())
}

/// Like [`merge_into_global`] but drops cells outside the map; returns how
/// many were dropped.
pub fn merge_into_global_clipped(global: &mut GlobalBevMap, local: &LocalBevMap) -> Result<usize> {
    if local.num_occupied() == 0 {
        return Ok(0);
    }
    let off = global.lattice_offset(local.cell_size)?;
    let mut dropped = 0;
    for (c, r, cell) in local.occupied() {
        match global.local_to_grid(off, c, r) {
            Some((col, row)) => apply(global, col, row, cell),
            None => dropped += 1,
        }
    }
    Ok(dropped)
}

/// COT (`0` = unknown) and closest distance of the cell containing `xy`.
pub fn query_cell(global: &GlobalBevMap, xy: &Vec2) -> Result<(f64, f64)> {
    let (col, row) = global.cell_of(xy)?;
    let i = global.index(col, row);
    Ok((global.cot[i], global.distance[i]))
}
