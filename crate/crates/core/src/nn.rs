//! Minimal dense-math building blocks for the two small trainable models:
//! channel-major tensors, stride-2 patch (down/up) layers, ReLU, and an
//! AdamW optimizer over a flat parameter vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::simworld::Keyframe;

/// Channel-major `c × h × w` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    /// Mirrors every channel about the vertical axis.
    pub fn hflip(&self) -> Tensor3 {
        let mut out = self.clone();
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out.data[self.idx(c, y, x)] = self.at(c, y, self.w - 1 - x);
                }
            }
        }
        out
    }
}

/// Normalized `4 × H × W` RGB-D input: colors scaled to `[0, 1]`, depth
/// divided by `max_depth` (invalid depth stays 0).
pub fn rgbd_tensor(kf: &Keyframe, max_depth: f64) -> Tensor3 {
    let (w, h) = (kf.width(), kf.height());
    let n = w * h;
    let mut t = Tensor3::zeros(4, h, w);
    for (i, v) in kf.rgb.iter().enumerate() {
        t.data[i] = *v as f64 / 255.0;
    }
    for (i, d) in kf.depth.iter().enumerate() {
        t.data[3 * n + i] = *d as f64 / max_depth;
    }
    t
}

/// Named slice of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Whether weight decay applies (biases are excluded).
    pub decay: bool,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Builder for a parameter layout.
#[derive(Default)]
pub struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: &str, shape: &[usize], decay: bool) -> ParamSpec {
        let spec = ParamSpec { name: name.to_string(), shape: shape.to_vec(), offset: self.total, decay };
        self.total += spec.len();
        self.specs.push(spec.clone());
        spec
    }

    pub fn finish(self) -> (Vec<ParamSpec>, usize) {
        (self.specs, self.total)
    }
}

/// Fills a weight slice with He-normal values for the given fan-in.
pub fn he_init(rng: &mut impl Rng, weights: &mut [f64], fan_in: usize) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    for w in weights {
        *w = normal.sample(rng);
    }
}

pub fn relu_inplace(t: &mut Tensor3) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// Zeroes `grad` where the ReLU output was not positive.
pub fn relu_backward(output: &Tensor3, grad: &mut Tensor3) {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Learned 2×2 stride-2 downsampling: each output cell is an affine map of
/// the 2×2×cin input block under it. Weights are `[cout][cin][2][2]`.
pub fn down_forward(weight: &[f64], bias: &[f64], cout: usize, x: &Tensor3) -> Tensor3 {
    let (cin, oh, ow) = (x.c, x.h / 2, x.w / 2);
    let mut out = Tensor3::zeros(cout, oh, ow);
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[o];
                for i in 0..cin {
                    let wb = o * cin * 4 + i * 4;
                    acc += weight[wb] * x.at(i, 2 * y, 2 * xx)
                        + weight[wb + 1] * x.at(i, 2 * y, 2 * xx + 1)
                        + weight[wb + 2] * x.at(i, 2 * y + 1, 2 * xx)
                        + weight[wb + 3] * x.at(i, 2 * y + 1, 2 * xx + 1);
                }
                let idx = out.idx(o, y, xx);
                out.data[idx] = acc;
            }
        }
    }
    out
}

/// Backward pass of [`down_forward`]; accumulates into `dw`/`db` and
/// returns the input gradient.
pub fn down_backward(weight: &[f64], x: &Tensor3, dout: &Tensor3, dw: &mut [f64], db: &mut [f64]) -> Tensor3 {
    let (cin, cout) = (x.c, dout.c);
    let mut dx = Tensor3::zeros(cin, x.h, x.w);
    for o in 0..cout {
        for y in 0..dout.h {
            for xx in 0..dout.w {
                let g = dout.at(o, y, xx);
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for i in 0..cin {
                    let wb = o * cin * 4 + i * 4;
                    for (k, (dy, dxo)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let xi = x.idx(i, 2 * y + dy, 2 * xx + dxo);
                        dw[wb + k] += g * x.data[xi];
                        dx.data[xi] += g * weight[wb + k];
                    }
                }
            }
        }
    }
    dx
}

/// Learned 2×2 stride-2 upsampling: each input cell writes an affine 2×2
/// block. Weights are `[cin][cout][2][2]`.
pub fn up_forward(weight: &[f64], bias: &[f64], cout: usize, x: &Tensor3) -> Tensor3 {
    let cin = x.c;
    let mut out = Tensor3::zeros(cout, x.h * 2, x.w * 2);
    for o in 0..cout {
        for y in 0..x.h {
            for xx in 0..x.w {
                for (k, (dy, dxo)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        acc += weight[i * cout * 4 + o * 4 + k] * x.at(i, y, xx);
                    }
                    let idx = out.idx(o, 2 * y + dy, 2 * xx + dxo);
                    out.data[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn up_backward(weight: &[f64], x: &Tensor3, dout: &Tensor3, dw: &mut [f64], db: &mut [f64]) -> Tensor3 {
    let (cin, cout) = (x.c, dout.c);
    let mut dx = Tensor3::zeros(cin, x.h, x.w);
    for o in 0..cout {
        for y in 0..x.h {
            for xx in 0..x.w {
                for (k, (dy, dxo)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let g = dout.at(o, 2 * y + dy, 2 * xx + dxo);
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for i in 0..cin {
                        let wi = i * cout * 4 + o * 4 + k;
                        let xi = x.idx(i, y, xx);
                        dw[wi] += g * x.data[xi];
                        dx.data[xi] += g * weight[wi];
                    }
                }
            }
        }
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    AdamW,
}

/// Per-epoch scaling of the base learning rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate towards zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos()),
        }
    }
}

/// Gradient-descent optimizer over a flat parameter vector with decoupled
/// weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], layout: &[ParamSpec]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for spec in layout {
            let decay = if spec.decay { self.weight_decay } else { 0.0 };
            for i in spec.range() {
                let g = grads[i];
                if decay > 0.0 {
                    params[i] -= self.lr * decay * params[i];
                }
                match self.kind {
                    OptimizerKind::Sgd => params[i] -= self.lr * g,
                    OptimizerKind::AdamW => {
                        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                        let mh = self.m[i] / bc1;
                        let vh = self.v[i] / bc2;
                        params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
