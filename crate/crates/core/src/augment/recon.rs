//! Nested reconstruction autoencoder used to score terrain masks.
//!
//! The outer stage encodes the RGB-D input to `L1` at quarter resolution
//! and decodes back to the input; the inner stage encodes `L1` to `L2` at
//! eighth resolution and decodes back to `L1`'s shape. The outer decoder
//! reads the inner reconstruction, so both stages sit on the path to `O`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::masks::MaskSet;
use crate::error::{Error, Result};
use crate::nn::{
    down_backward, down_forward, he_init, relu_backward, relu_inplace, up_backward, up_forward, LayoutBuilder,
    Optimizer, OptimizerKind, ParamSpec, Tensor3,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconLossOptions {
    /// Restrict the main loss to traversable pixels; off sums over the
    /// whole image.
    pub masked_main: bool,
    /// Divide latent channel sums by the channel count.
    pub channel_mean: bool,
}

impl Default for ReconLossOptions {
    fn default() -> Self {
        Self { masked_main: true, channel_mean: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub c1: usize,
    pub c2: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss: ReconLossOptions,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            c1: 8,
            c2: 16,
            epochs: 40,
            lr: 1e-4,
            weight_decay: 0.0,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            loss: ReconLossOptions::default(),
        }
    }
}

impl ReconConfig {
    /// Settings that converge within a few hundred steps on small images.
    pub fn desk_scale() -> Self {
        Self { lr: 2e-3, optimizer: OptimizerKind::AdamW, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c1 == 0 || self.c2 == 0 {
            return Err(Error::InvalidParameter("channel counts must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!("lr {} / weight decay {}", self.lr, self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionModel {
    pub c1: usize,
    pub c2: usize,
    pub layout: Vec<ParamSpec>,
    pub params: Vec<f64>,
}

/// Every activation of one forward pass.
#[derive(Clone, Debug)]
pub struct ReconTrace {
    pub a: Tensor3,
    pub l1: Tensor3,
    pub l2: Tensor3,
    pub d2: Tensor3,
    pub d1: Tensor3,
    pub o: Tensor3,
}

const LAYERS: [&str; 6] = ["enc1a", "enc1b", "enc2", "dec2", "dec1a", "dec1b"];

impl ReconstructionModel {
    pub fn new(c1: usize, c2: usize, seed: u64) -> Self {
        let mut b = LayoutBuilder::default();
        // (name, cin, cout); up-layer weights are stored [cin][cout][2][2]
        let dims = [(4, c1), (c1, c1), (c1, c2), (c2, c1), (c1, c1), (c1, 4)];
        let mut fan = Vec::new();
        for (name, (cin, cout)) in LAYERS.iter().zip(dims) {
            let shape = if name.starts_with("enc") { [cout, cin, 2, 2] } else { [cin, cout, 2, 2] };
            fan.push((b.add(&format!("{name}.w"), &shape, true), if name.starts_with("enc") { cin * 4 } else { cin }));
            b.add(&format!("{name}.b"), &[cout], false);
        }
        let (layout, total) = b.finish();
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, fan_in) in fan {
            he_init(&mut rng, &mut params[spec.range()], fan_in);
        }
        Self { c1, c2, layout, params }
    }

    fn slot(&self, layer: usize, bias: bool) -> std::ops::Range<usize> {
        self.layout[2 * layer + bias as usize].range()
    }

    fn w(&self, layer: usize) -> &[f64] {
        &self.params[self.slot(layer, false)]
    }

    fn b(&self, layer: usize) -> &[f64] {
        &self.params[self.slot(layer, true)]
    }

    pub fn check_input(&self, input: &Tensor3) -> Result<()> {
        if input.c != 4 || !input.h.is_multiple_of(8) || !input.w.is_multiple_of(8) || input.h == 0 || input.w == 0 {
            return Err(Error::ShapeMismatch {
                expected: "4 x H x W with H, W positive multiples of 8".into(),
                actual: format!("{} x {} x {}", input.c, input.h, input.w),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor3) -> Result<ReconTrace> {
        self.check_input(input)?;
        let (c1, c2) = (self.c1, self.c2);
        let mut a = down_forward(self.w(0), self.b(0), c1, input);
        relu_inplace(&mut a);
        let mut l1 = down_forward(self.w(1), self.b(1), c1, &a);
        relu_inplace(&mut l1);
        let mut l2 = down_forward(self.w(2), self.b(2), c2, &l1);
        relu_inplace(&mut l2);
        let mut d2 = up_forward(self.w(3), self.b(3), c1, &l2);
        relu_inplace(&mut d2);
        let mut d1 = up_forward(self.w(4), self.b(4), c1, &d2);
        relu_inplace(&mut d1);
        let o = up_forward(self.w(5), self.b(5), 4, &d1);
        Ok(ReconTrace { a, l1, l2, d2, d1, o })
    }
}

/// Downsamples a full-resolution mask by `factor`, keeping the cells more
/// than half inside the mask. Small masks may keep no cell at all.
pub fn downsample_mask(mask: &[bool], width: usize, height: usize, factor: usize) -> Vec<bool> {
    let (w, h) = (width / factor, height / factor);
    let mut counts = vec![0usize; w * h];
    for (p, _) in mask.iter().enumerate().filter(|(_, b)| **b) {
        let (x, y) = ((p % width) / factor, (p / width) / factor);
        if x < w && y < h {
            counts[y * w + x] += 1;
        }
    }
    counts.iter().map(|c| 2 * c > factor * factor).collect()
}

/// Mean over mask cells of the channel-summed latent.
fn mask_mean(latent: &Tensor3, cells: &[bool], channel_mean: bool) -> Option<(f64, usize)> {
    let n = cells.iter().filter(|b| **b).count();
    if n == 0 {
        return None;
    }
    let plane = latent.h * latent.w;
    let mut sum = 0.0;
    for (p, _) in cells.iter().enumerate().filter(|(_, b)| **b) {
        for c in 0..latent.c {
            sum += latent.data[c * plane + p];
        }
    }
    let scale = if channel_mean { latent.c as f64 } else { 1.0 };
    Some((sum / (n as f64 * scale), n))
}

/// Masks pooled to both latent resolutions.
#[derive(Clone, Debug)]
struct PooledMasks {
    l1: Vec<Vec<bool>>,
    l2: Vec<Vec<bool>>,
}

fn pool(masks: &MaskSet) -> PooledMasks {
    let (w, h) = (masks.width, masks.height);
    PooledMasks {
        l1: masks.masks.iter().map(|m| downsample_mask(m, w, h, 4)).collect(),
        l2: masks.masks.iter().map(|m| downsample_mask(m, w, h, 8)).collect(),
    }
}

/// `(μ_L1, μ_L2, n1, n2)` per mask; `None` when either level has no cells.
fn se_terms(trace: &ReconTrace, pooled: &PooledMasks, channel_mean: bool) -> Vec<Option<(f64, f64, usize, usize)>> {
    pooled
        .l1
        .iter()
        .zip(&pooled.l2)
        .map(|(m1, m2)| {
            let (mu1, n1) = mask_mean(&trace.l1, m1, channel_mean)?;
            let (mu2, n2) = mask_mean(&trace.l2, m2, channel_mean)?;
            Some((mu1, mu2, n1, n2))
        })
        .collect()
}

fn squared_errors(terms: &[Option<(f64, f64, usize, usize)>]) -> Vec<Option<f64>> {
    terms.iter().map(|t| t.map(|(a, b, _, _)| (a - b) * (a - b))).collect()
}

/// Per-mask latent disagreement `(μ_L1 − μ_L2)²`, `None` for masks too
/// small to keep a latent cell.
pub fn mask_errors(
    model: &ReconstructionModel,
    input: &Tensor3,
    masks: &MaskSet,
    opts: &ReconLossOptions,
) -> Result<Vec<Option<f64>>> {
    masks.check_size(input.w, input.h)?;
    let trace = model.forward(input)?;
    Ok(squared_errors(&se_terms(&trace, &pool(masks), opts.channel_mean)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconLosses {
    pub main: f64,
    pub aux: f64,
    pub se: Vec<Option<f64>>,
}

impl ReconLosses {
    pub fn total(&self) -> f64 {
        self.main + self.aux
    }
}

/// Mean squared residual over the selected pixels and all four channels;
/// also returns the element count.
fn main_loss(input: &Tensor3, o: &Tensor3, traversable: &[bool], masked: bool) -> Result<(f64, f64)> {
    let n = if masked { traversable.iter().filter(|b| **b).count() } else { traversable.len() };
    if n == 0 {
        return Err(Error::EmptyInput("traversable mask"));
    }
    let plane = input.h * input.w;
    let mut sum = 0.0;
    for p in (0..plane).filter(|p| !masked || traversable[*p]) {
        for c in 0..4 {
            let r = input.data[c * plane + p] - o.data[c * plane + p];
            sum += r * r;
        }
    }
    let elems = 4.0 * n as f64;
    Ok((sum / elems, elems))
}

/// Main and auxiliary reconstruction losses of one image. `traversable`
/// marks pixels carrying traversable labels; `masks` are the masks whose
/// SE enters the auxiliary term.
pub fn reconstruction_losses(
    model: &ReconstructionModel,
    input: &Tensor3,
    traversable: &[bool],
    masks: &MaskSet,
    opts: &ReconLossOptions,
) -> Result<ReconLosses> {
    check_sample(input, traversable, masks)?;
    let trace = model.forward(input)?;
    let (main, _) = main_loss(input, &trace.o, traversable, opts.masked_main)?;
    let se = squared_errors(&se_terms(&trace, &pool(masks), opts.channel_mean));
    Ok(ReconLosses { main, aux: se.iter().flatten().sum(), se })
}

fn check_sample(input: &Tensor3, traversable: &[bool], masks: &MaskSet) -> Result<()> {
    if traversable.len() != input.h * input.w {
        return Err(Error::ShapeMismatch {
            expected: format!("{} mask pixels", input.h * input.w),
            actual: traversable.len().to_string(),
        });
    }
    masks.check_size(input.w, input.h)
}

/// Losses and their gradient with respect to the flat parameters.
pub fn loss_and_grad(
    model: &ReconstructionModel,
    input: &Tensor3,
    traversable: &[bool],
    masks: &MaskSet,
    opts: &ReconLossOptions,
) -> Result<(ReconLosses, Vec<f64>)> {
    check_sample(input, traversable, masks)?;
    let t = model.forward(input)?;
    let (main, n) = main_loss(input, &t.o, traversable, opts.masked_main)?;
    let pooled = pool(masks);
    let terms = se_terms(&t, &pooled, opts.channel_mean);
    let se = squared_errors(&terms);

    let mut grad = vec![0.0; model.params.len()];
    let plane = input.h * input.w;
    let mut d_o = Tensor3::zeros(4, input.h, input.w);
    for p in (0..plane).filter(|p| !opts.masked_main || traversable[*p]) {
        for c in 0..4 {
            let i = c * plane + p;
            d_o.data[i] = -2.0 * (input.data[i] - t.o.data[i]) / n;
        }
    }

    let mut d_l1_aux = Tensor3::zeros(t.l1.c, t.l1.h, t.l1.w);
    let mut d_l2_aux = Tensor3::zeros(t.l2.c, t.l2.h, t.l2.w);
    for ((term, m1), m2) in terms.iter().zip(&pooled.l1).zip(&pooled.l2) {
        let Some((mu1, mu2, n1, n2)) = *term else { continue };
        let g = 2.0 * (mu1 - mu2);
        let s1 = if opts.channel_mean { t.l1.c as f64 } else { 1.0 };
        add_on_cells(&mut d_l1_aux, m1, g / (n1 as f64 * s1));
        let s2 = if opts.channel_mean { t.l2.c as f64 } else { 1.0 };
        add_on_cells(&mut d_l2_aux, m2, -g / (n2 as f64 * s2));
    }

    let mut split = Grads::new(model, &mut grad);
    let mut d_d1 = split.up(5, &t.d1, &d_o);
    relu_backward(&t.d1, &mut d_d1);
    let mut d_d2 = split.up(4, &t.d2, &d_d1);
    relu_backward(&t.d2, &mut d_d2);
    let mut d_l2 = split.up(3, &t.l2, &d_d2);
    add_into(&mut d_l2, &d_l2_aux);
    relu_backward(&t.l2, &mut d_l2);
    let mut d_l1 = split.down(2, &t.l1, &d_l2);
    add_into(&mut d_l1, &d_l1_aux);
    relu_backward(&t.l1, &mut d_l1);
    let mut d_a = split.down(1, &t.a, &d_l1);
    relu_backward(&t.a, &mut d_a);
    split.down(0, input, &d_a);

    Ok((ReconLosses { main, aux: se.iter().flatten().sum(), se }, grad))
}

fn add_on_cells(t: &mut Tensor3, cells: &[bool], g: f64) {
    let plane = t.h * t.w;
    for (p, _) in cells.iter().enumerate().filter(|(_, b)| **b) {
        for c in 0..t.c {
            t.data[c * plane + p] += g;
        }
    }
}

fn add_into(t: &mut Tensor3, other: &Tensor3) {
    for (a, b) in t.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}

/// Routes layer backward passes into the right gradient slices.
struct Grads<'a> {
    model: &'a ReconstructionModel,
    grad: &'a mut [f64],
}

impl<'a> Grads<'a> {
    fn new(model: &'a ReconstructionModel, grad: &'a mut [f64]) -> Self {
        Self { model, grad }
    }

    fn slices(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (wr, br) = (self.model.slot(layer, false), self.model.slot(layer, true));
        debug_assert_eq!(wr.end, br.start);
        let (w, b) = self.grad[wr.start..br.end].split_at_mut(wr.len());
        (w, b)
    }

    fn down(&mut self, layer: usize, x: &Tensor3, dout: &Tensor3) -> Tensor3 {
        let weight = self.model.w(layer);
        let (dw, db) = self.slices(layer);
        down_backward(weight, x, dout, dw, db)
    }

    fn up(&mut self, layer: usize, x: &Tensor3, dout: &Tensor3) -> Tensor3 {
        let weight = self.model.w(layer);
        let (dw, db) = self.slices(layer);
        up_backward(weight, x, dout, dw, db)
    }
}

/// One training image for the reconstruction model.
#[derive(Clone, Debug)]
pub struct ReconSample {
    pub input: Tensor3,
    /// Pixels carrying traversable labels.
    pub traversable: Vec<bool>,
    /// Masks on traversable terrain; their SE is the auxiliary loss.
    pub masks: MaskSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconEpoch {
    pub epoch: usize,
    pub main: f64,
    pub aux: f64,
}

/// Trains on the traversable part of each sample. Samples without
/// traversable pixels are skipped; the order is shuffled per epoch from
/// the seed.
pub fn train_reconstruction_model(
    samples: &[ReconSample],
    cfg: &ReconConfig,
) -> Result<(ReconstructionModel, Vec<ReconEpoch>)> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..samples.len()).filter(|i| samples[*i].traversable.iter().any(|b| *b)).collect();
    if usable.is_empty() {
        return Err(Error::NoLabels("no traversable pixels in any sample"));
    }
    for s in samples {
        check_sample(&s.input, &s.traversable, &s.masks)?;
    }
    let mut model = ReconstructionModel::new(cfg.c1, cfg.c2, cfg.seed);
    model.check_input(&samples[usable[0]].input)?;
    let mut opt = Optimizer::new(cfg.optimizer, model.params.len(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed0f7ec0);
    let mut order = usable.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut main, mut aux) = (0.0, 0.0);
        for &i in &order {
            let s = &samples[i];
            let (losses, grad) = loss_and_grad(&model, &s.input, &s.traversable, &s.masks, &cfg.loss)?;
            main += losses.main;
            aux += losses.aux;
            opt.step(&mut model.params, &grad, &model.layout);
        }
        let n = order.len() as f64;
        history.push(ReconEpoch { epoch, main: main / n, aux: aux / n });
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("reconstruction training diverged".into()));
    }
    Ok((model, history))
}
