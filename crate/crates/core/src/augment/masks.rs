use std::collections::VecDeque;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::formats::TensorFile;
use crate::simworld::{render_segmentation, Keyframe, Surface, TerrainGrid};

/// Binary masks `S_i` over one `width × height` image. Masks may overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub width: usize,
    pub height: usize,
    pub masks: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn new(width: usize, height: usize, masks: Vec<Vec<bool>>) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            if m.len() != width * height {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} pixels", width * height),
                    actual: format!("mask {i} with {} pixels", m.len()),
                });
            }
            if !m.iter().any(|b| *b) {
                return Err(Error::InvalidParameter(format!("mask {i} is empty")));
            }
        }
        Ok(Self { width, height, masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}"),
                actual: format!("{}x{}", self.width, self.height),
            });
        }
        Ok(())
    }

    /// Pixel indices of mask `i`.
    pub fn pixels(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.masks[i].iter().enumerate().filter(|(_, b)| **b).map(|(p, _)| p)
    }

    /// `u8` tensor of shape `n × H × W`.
    pub fn to_tensor(&self) -> Result<TensorFile> {
        let data = self.masks.iter().flatten().map(|b| *b as u8).collect();
        TensorFile::u8(&[self.masks.len(), self.height, self.width], data)
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let dims = t.dims_usize();
        if dims.len() != 3 {
            return Err(Error::Format(format!("mask stack must be 3-D, got {dims:?}")));
        }
        let (h, w) = (dims[1], dims[2]);
        let masks = t.as_u8()?.chunks(h * w).take(dims[0]).map(|c| c.iter().map(|v| *v != 0).collect()).collect();
        Self::new(w, h, masks)
    }

    /// Mirrors every mask about the vertical axis.
    pub fn hflip(&self) -> MaskSet {
        let (w, h) = (self.width, self.height);
        let masks = self
            .masks
            .iter()
            .map(|m| (0..w * h).map(|p| m[(p / w) * w + (w - 1 - p % w)]).collect())
            .collect();
        MaskSet { width: w, height: h, masks }
    }
}

/// Source of terrain masks for a keyframe; stands in for a promptable
/// segmentation model.
pub trait MaskProvider: Sync {
    fn masks(&self, keyframe: &Keyframe) -> Result<MaskSet>;
}

/// Masks from the simulator's ground-truth segmentation: one mask per
/// 4-connected component of each surface.
#[derive(Clone, Debug)]
pub struct OracleMaskProvider {
    pub world: TerrainGrid,
    /// Components smaller than this are dropped.
    pub min_pixels: usize,
    pub include_sky: bool,
}

impl OracleMaskProvider {
    pub fn new(world: TerrainGrid) -> Self {
        Self { world, min_pixels: 4, include_sky: false }
    }
}

impl MaskProvider for OracleMaskProvider {
    fn masks(&self, keyframe: &Keyframe) -> Result<MaskSet> {
        let k = &keyframe.intrinsics;
        let seg = render_segmentation(&self.world, &keyframe.pose, k)?;
        let masks = connected_components(&seg, k.width, k.height)
            .into_iter()
            .filter(|(s, m)| (self.include_sky || *s != Surface::Sky) && m.iter().filter(|b| **b).count() >= self.min_pixels)
            .map(|(_, m)| m)
            .collect();
        MaskSet::new(k.width, k.height, masks)
    }
}

/// 4-connected components of equal labels, in raster order of their first
/// pixel.
pub fn connected_components<T: PartialEq + Copy>(labels: &[T], width: usize, height: usize) -> Vec<(T, Vec<bool>)> {
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        let mut mask = vec![false; labels.len()];
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            mask[p] = true;
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if !seen[q] && labels[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        out.push((label, mask));
    }
    out
}

/// Loads `masks_{id:05}.cott` stacks (`u8`, `n × H × W`) from a directory.
#[derive(Clone, Debug)]
pub struct FileMaskProvider {
    pub dir: PathBuf,
}

impl FileMaskProvider {
    pub fn path_for(&self, id: usize) -> PathBuf {
        self.dir.join(format!("masks_{id:05}.cott"))
    }
}

impl MaskProvider for FileMaskProvider {
    fn masks(&self, keyframe: &Keyframe) -> Result<MaskSet> {
        let path = self.path_for(keyframe.id);
        let t = TensorFile::load(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let set = MaskSet::from_tensor(&t)?;
        set.check_size(keyframe.width(), keyframe.height())?;
        Ok(set)
    }
}
