use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::MaskSet;
use crate::error::{Error, Result};
use crate::nn::Tensor3;

/// Inputs (`4 × H × W` each) and row-major labels `Z` (`0` = unknown).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Tensor3>,
    pub labels: Vec<Vec<f64>>,
}

impl TrainBatch {
    pub fn new(inputs: Vec<Tensor3>, labels: Vec<Vec<f64>>) -> Result<Self> {
        let b = Self { inputs, labels };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} label images", self.inputs.len()),
                actual: self.labels.len().to_string(),
            });
        }
        let Some(first) = self.inputs.first() else { return Ok(()) };
        for (x, z) in self.inputs.iter().zip(&self.labels) {
            if x.c != 4 || x.h != first.h || x.w != first.w || z.len() != x.h * x.w {
                return Err(Error::ShapeMismatch {
                    expected: format!("4 x {} x {}", first.h, first.w),
                    actual: format!("{} x {} x {} with {} labels", x.c, x.h, x.w, z.len()),
                });
            }
            if z.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParameter("labels must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Number of 4-adjacent pixel pairs that are both labeled with different
/// COT values.
pub fn cot_boundary_count(labels: &[f64], width: usize) -> usize {
    let mut n = 0;
    for p in 0..labels.len() {
        let a = labels[p];
        if a == 0.0 {
            continue;
        }
        if (p % width) + 1 < width && labels[p + 1] != 0.0 && labels[p + 1] != a {
            n += 1;
        }
        if p + width < labels.len() && labels[p + width] != 0.0 && labels[p + width] != a {
            n += 1;
        }
    }
    n
}

/// Copies a random labeled mask (input and label pixels) from one image
/// onto another at the same coordinates, `n_paste` times. A paste that
/// would reduce the target's COT boundary count is undone, so every paste
/// adds contact between distinct COT values or leaves it unchanged.
pub fn copy_paste_augment(batch: &TrainBatch, masks: &[MaskSet], n_paste: usize, seed: u64) -> Result<TrainBatch> {
    batch.validate()?;
    if batch.len() < 2 {
        return Err(Error::InvalidParameter(format!("copy-paste needs at least 2 images, got {}", batch.len())));
    }
    if masks.len() != batch.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} mask sets", batch.len()), actual: masks.len().to_string() });
    }
    let (h, w) = (batch.inputs[0].h, batch.inputs[0].w);
    for m in masks {
        m.check_size(w, h)?;
    }
    let mut out = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    for _ in 0..n_paste {
        let src = rng.random_range(0..out.len());
        let dst = (src + rng.random_range(1..out.len())) % out.len();
        let labeled: Vec<usize> = (0..masks[src].len())
            .filter(|i| masks[src].pixels(*i).any(|p| out.labels[src][p] != 0.0))
            .collect();
        if labeled.is_empty() {
            continue;
        }
        let m = labeled[rng.random_range(0..labeled.len())];
        let before = cot_boundary_count(&out.labels[dst], w);
        let saved = (out.inputs[dst].clone(), out.labels[dst].clone());
        for p in masks[src].pixels(m) {
            out.labels[dst][p] = out.labels[src][p];
            for c in 0..4 {
                out.inputs[dst].data[c * plane + p] = out.inputs[src].data[c * plane + p];
            }
        }
        if cot_boundary_count(&out.labels[dst], w) < before {
            (out.inputs[dst], out.labels[dst]) = saved;
        }
    }
    Ok(out)
}

fn flip_row_major(v: &[f64], w: usize) -> Vec<f64> {
    (0..v.len()).map(|p| v[(p / w) * w + (w - 1 - p % w)]).collect()
}

/// Mirrors each image and its labels about the vertical axis with the
/// given probability.
pub fn hflip_augment(batch: &TrainBatch, probability: f64, seed: u64) -> TrainBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = batch.clone();
    for i in 0..out.len() {
        if rng.random_bool(probability.clamp(0.0, 1.0)) {
            let w = out.inputs[i].w;
            out.inputs[i] = out.inputs[i].hflip();
            out.labels[i] = flip_row_major(&out.labels[i], w);
        }
    }
    out
}
