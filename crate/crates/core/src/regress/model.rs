use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{he_init, LayoutBuilder, ParamSpec, Tensor3};

/// Per-pixel features: box mean and std of R, G, B, the pixel's own R, G,
/// B, depth, depth gradient magnitude and a valid-depth flag.
pub const NUM_FEATURES: usize = 12;

/// Subtracted from the unit-range features (means, pixel color, depth and
/// the flag) so hidden units start out splitting the data.
const CENTER: f64 = 0.5;

/// Pixel-wise COT prediction from a normalized `4 × H × W` RGB-D input.
pub trait CotRegressor {
    /// Row-major `H × W` field, every value ≥ 0.
    fn predict(&self, input: &Tensor3) -> Result<Vec<f64>>;
}

/// Box-filter sums via a summed-area table.
struct Integral {
    w: usize,
    sum: Vec<f64>,
}

impl Integral {
    fn new(plane: &[f64], w: usize, h: usize) -> Self {
        let mut sum = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane[y * w + x];
                sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, sum }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = |x: usize, y: usize| self.sum[y * (self.w + 1) + x];
        s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0)
    }
}

/// Feature vectors for every pixel, row-major. The box window is clipped
/// at the image border.
pub fn pixel_features(input: &Tensor3, radius: usize) -> Result<Vec<[f64; NUM_FEATURES]>> {
    if input.c != 4 {
        return Err(Error::ShapeMismatch { expected: "4 channels".into(), actual: input.c.to_string() });
    }
    let (w, h) = (input.w, input.h);
    let mut tables = Vec::with_capacity(6);
    for c in 0..3 {
        let plane = input.plane(c);
        let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
        tables.push((Integral::new(plane, w, h), Integral::new(&sq, w, h)));
    }
    let depth = input.plane(3);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mut f = [0.0; NUM_FEATURES];
            for (c, (s, sq)) in tables.iter().enumerate() {
                let mean = s.rect(x0, y0, x1, y1) / n;
                let var = (sq.rect(x0, y0, x1, y1) / n - mean * mean).max(0.0);
                f[c] = mean - CENTER;
                f[3 + c] = var.sqrt();
            }
            for c in 0..3 {
                f[6 + c] = input.at(c, y, x) - CENTER;
            }
            let d = depth[y * w + x];
            let gx = depth[y * w + (x + 1).min(w - 1)] - depth[y * w + x.saturating_sub(1)];
            let gy = depth[(y + 1).min(h - 1) * w + x] - depth[y.saturating_sub(1) * w + x];
            f[9] = d - CENTER;
            f[10] = (gx * gx + gy * gy).sqrt();
            f[11] = if d > 0.0 { 1.0 - CENTER } else { -CENTER };
            out.push(f);
        }
    }
    Ok(out)
}

/// Two-layer per-pixel network over [`pixel_features`] with a ReLU output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMlp {
    pub feature_radius: usize,
    pub hidden: usize,
    pub layout: Vec<ParamSpec>,
    pub params: Vec<f64>,
}

/// Hidden activations and output pre-activation of one pixel.
pub(crate) struct PixelTrace {
    pub hidden: Vec<f64>,
    pub out: f64,
}

impl PixelMlp {
    fn layout(hidden: usize) -> (Vec<ParamSpec>, usize) {
        let mut b = LayoutBuilder::default();
        b.add("fc1.w", &[hidden, NUM_FEATURES], true);
        b.add("fc1.b", &[hidden], false);
        b.add("fc2.w", &[1, hidden], true);
        b.add("fc2.b", &[1], false);
        b.finish()
    }

    /// He-initialized weights; the output bias starts at 1 so the ReLU
    /// output is live from the first step.
    pub fn new(feature_radius: usize, hidden: usize, seed: u64) -> Self {
        let (layout, total) = Self::layout(hidden);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        he_init(&mut rng, &mut params[layout[0].range()], NUM_FEATURES);
        he_init(&mut rng, &mut params[layout[2].range()], hidden);
        params[layout[3].offset] = 1.0;
        Self { feature_radius, hidden, layout, params }
    }

    /// All-zero parameters; predicts 0 everywhere.
    pub fn zeros(feature_radius: usize, hidden: usize) -> Self {
        let (layout, total) = Self::layout(hidden);
        Self { feature_radius, hidden, layout, params: vec![0.0; total] }
    }

    pub(crate) fn trace(&self, f: &[f64; NUM_FEATURES]) -> PixelTrace {
        let (w1, b1) = (&self.params[self.layout[0].range()], &self.params[self.layout[1].range()]);
        let (w2, b2) = (&self.params[self.layout[2].range()], self.params[self.layout[3].offset]);
        let mut hidden = vec![0.0; self.hidden];
        let mut out = b2;
        for j in 0..self.hidden {
            let row = &w1[j * NUM_FEATURES..(j + 1) * NUM_FEATURES];
            let a = b1[j] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
            hidden[j] = a.max(0.0);
            out += w2[j] * hidden[j];
        }
        PixelTrace { hidden, out }
    }

    /// Accumulates `g · ∂P/∂θ` for one pixel into `grad`.
    pub(crate) fn backward(&self, f: &[f64; NUM_FEATURES], t: &PixelTrace, g: f64, grad: &mut [f64]) {
        if t.out <= 0.0 || g == 0.0 {
            return;
        }
        let w2 = &self.params[self.layout[2].range()];
        let (o1w, o1b, o2w, o2b) =
            (self.layout[0].offset, self.layout[1].offset, self.layout[2].offset, self.layout[3].offset);
        grad[o2b] += g;
        for j in 0..self.hidden {
            if t.hidden[j] <= 0.0 {
                continue;
            }
            grad[o2w + j] += g * t.hidden[j];
            let dh = g * w2[j];
            grad[o1b + j] += dh;
            for (k, x) in f.iter().enumerate() {
                grad[o1w + j * NUM_FEATURES + k] += dh * x;
            }
        }
    }

    pub fn predict_features(&self, features: &[[f64; NUM_FEATURES]]) -> Vec<f64> {
        features.iter().map(|f| self.trace(f).out.max(0.0)).collect()
    }
}

impl CotRegressor for PixelMlp {
    fn predict(&self, input: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.predict_features(&pixel_features(input, self.feature_radius)?))
    }
}
