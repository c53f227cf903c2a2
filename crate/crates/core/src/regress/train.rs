use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{copy_paste_augment, hflip_augment, TrainBatch};
use super::loss::{masked_mae, masked_mae_grad, MaeNormalization};
use super::model::{pixel_features, CotRegressor, PixelMlp, NUM_FEATURES};
use crate::augment::{label_unknown_as_nontraversable, MaskSet};
use crate::cotlabel::CotParams;
use crate::error::{Error, Result};
use crate::nn::{rgbd_tensor, LrSchedule, Optimizer, OptimizerKind, Tensor3};
use crate::render::CotLabelImage;
use crate::simworld::Keyframe;

/// Which labels the regressor is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelMode {
    /// Path labels only.
    #[serde(rename = "sl")]
    Sl,
    /// Path labels extended over terrain masks.
    #[serde(rename = "sl-sam")]
    SlSam,
    /// Mask-extended labels with every remaining unknown non-traversable.
    #[serde(rename = "un-sam")]
    UnSam,
    /// Mask-extended plus confidence-labeled non-traversable masks.
    #[default]
    #[serde(rename = "c-sam")]
    CSam,
}

impl LabelMode {
    pub const ALL: [LabelMode; 4] = [LabelMode::Sl, LabelMode::SlSam, LabelMode::UnSam, LabelMode::CSam];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Sl => "sl",
            LabelMode::SlSam => "sl-sam",
            LabelMode::UnSam => "un-sam",
            LabelMode::CSam => "c-sam",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?} (expected sl, sl-sam, un-sam or c-sam)")))
    }
}

/// Labels of one keyframe after each augmentation stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StagedLabels {
    pub sl: CotLabelImage,
    pub sl_sam: CotLabelImage,
    pub c_sam: CotLabelImage,
}

impl StagedLabels {
    pub fn materialize(&self, mode: LabelMode, params: &CotParams) -> CotLabelImage {
        match mode {
            LabelMode::Sl => self.sl.clone(),
            LabelMode::SlSam => self.sl_sam.clone(),
            LabelMode::UnSam => label_unknown_as_nontraversable(&self.sl_sam, params),
            LabelMode::CSam => self.c_sam.clone(),
        }
    }
}

/// One training keyframe: normalized input, staged labels and its masks.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub input: Tensor3,
    pub labels: StagedLabels,
    pub masks: MaskSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Half-width of the box window for color statistics, in pixels.
    pub feature_radius: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub flip_probability: f64,
    /// Copy-paste operations per mini-batch.
    pub n_paste: usize,
    pub normalization: MaeNormalization,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            epochs: 60,
            seed: 0,
            feature_radius: 2,
            hidden: 16,
            batch_size: 4,
            flip_probability: 0.5,
            n_paste: 1,
            normalization: MaeNormalization::TotalPixels,
            optimizer: OptimizerKind::AdamW,
            schedule: LrSchedule::Constant,
        }
    }
}

impl RegressorConfig {
    /// Larger, decaying step size for small synthetic datasets.
    pub fn desk_scale() -> Self {
        Self { lr: 1e-2, epochs: 200, schedule: LrSchedule::Cosine, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!("lr {} / weight decay {}", self.lr, self.weight_decay)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("hidden width and batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidParameter(format!("flip probability {}", self.flip_probability)));
        }
        Ok(())
    }
}

/// Masked MAE of a batch (pixels of all images pooled) and its gradient
/// with respect to the model parameters.
pub fn batch_loss_and_grad(
    model: &PixelMlp,
    features: &[Vec<[f64; NUM_FEATURES]>],
    labels: &[Vec<f64>],
    norm: MaeNormalization,
) -> Result<(f64, Vec<f64>)> {
    let z: Vec<f64> = labels.concat();
    let f: Vec<[f64; NUM_FEATURES]> = features.concat();
    if f.len() != z.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} feature rows", z.len()), actual: f.len().to_string() });
    }
    let mut p = vec![0.0; z.len()];
    let mut traces = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        // unknown pixels carry no loss or gradient
        if z[i] != 0.0 {
            let t = model.trace(&f[i]);
            p[i] = t.out.max(0.0);
            traces.push((i, t));
        }
    }
    let loss = masked_mae(&z, &p, norm)?;
    let dp = masked_mae_grad(&z, &p, norm)?;
    let mut grad = vec![0.0; model.params.len()];
    for (i, t) in &traces {
        model.backward(&f[*i], t, dp[*i], &mut grad);
    }
    Ok((loss, grad))
}

/// Trains a [`PixelMlp`] on labels materialized for `mode`. Returns the
/// model and the mean mini-batch loss of every epoch.
pub fn train_regressor(
    frames: &[TrainFrame],
    mode: LabelMode,
    params: &CotParams,
    cfg: &RegressorConfig,
) -> Result<(PixelMlp, Vec<f64>)> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyInput("training frames"));
    }
    let labels: Vec<Vec<f64>> = frames.iter().map(|f| f.labels.materialize(mode, params).values).collect();
    if labels.iter().flatten().all(|v| *v == 0.0) {
        return Err(Error::NoLabels("no labeled pixels for the selected mode"));
    }
    let full = TrainBatch::new(frames.iter().map(|f| f.input.clone()).collect(), labels)?;
    let mut model = PixelMlp::new(cfg.feature_radius, cfg.hidden, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, model.params.len(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e61_7e55);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr * cfg.schedule.factor(epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = TrainBatch {
                inputs: chunk.iter().map(|i| full.inputs[*i].clone()).collect(),
                labels: chunk.iter().map(|i| full.labels[*i].clone()).collect(),
            };
            let (paste_seed, flip_seed): (u64, u64) = (rng.random(), rng.random());
            if cfg.n_paste > 0 && chunk.len() >= 2 {
                let masks: Vec<MaskSet> = chunk.iter().map(|i| frames[*i].masks.clone()).collect();
                batch = copy_paste_augment(&batch, &masks, cfg.n_paste, paste_seed)?;
            }
            if cfg.flip_probability > 0.0 {
                batch = hflip_augment(&batch, cfg.flip_probability, flip_seed);
            }
            let features =
                batch.inputs.iter().map(|x| pixel_features(x, cfg.feature_radius)).collect::<Result<Vec<_>>>()?;
            let (loss, grad) = batch_loss_and_grad(&model, &features, &batch.labels, cfg.normalization)?;
            opt.step(&mut model.params, &grad, &model.layout);
            total += loss;
            steps += 1;
        }
        history.push(total / steps as f64);
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("regressor training diverged".into()));
    }
    Ok((model, history))
}

/// Expected keyframe geometry and depth normalization of a regressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub width: usize,
    pub height: usize,
    pub max_depth: f64,
}

pub fn predict_cot_image(model: &dyn CotRegressor, keyframe: &Keyframe, spec: &InputSpec) -> Result<Vec<f64>> {
    if keyframe.width() != spec.width || keyframe.height() != spec.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", spec.width, spec.height),
            actual: format!("{}x{}", keyframe.width(), keyframe.height()),
        });
    }
    model.predict(&rgbd_tensor(keyframe, spec.max_depth))
}

/// Mean squared error over pixels where `truth` is labeled; `None` when
/// nothing is labeled.
pub fn pixel_mse(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} values", truth.len()), actual: pred.len().to_string() });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, z) in pred.iter().zip(truth) {
        if *z != 0.0 {
            sum += (p - z) * (p - z);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Provenance;

    fn frame(fill: [f64; 4], cot: f64, labeled: usize) -> TrainFrame {
        let (w, h) = (8, 8);
        let mut input = Tensor3::zeros(4, h, w);
        for c in 0..4 {
            for p in 0..w * h {
                input.data[c * w * h + p] = fill[c];
            }
        }
        let mut sl = CotLabelImage::unknown(w, h);
        for p in 0..labeled {
            sl.values[p] = cot;
            sl.provenance[p] = Provenance::Path;
        }
        let masks = MaskSet::new(w, h, vec![vec![true; w * h]]).unwrap();
        TrainFrame { input, labels: StagedLabels { sl: sl.clone(), sl_sam: sl.clone(), c_sam: sl }, masks }
    }

    #[test]
    fn mode_parsing() {
        for m in LabelMode::ALL {
            assert_eq!(m.as_str().parse::<LabelMode>().unwrap(), m);
        }
        assert!("bogus".parse::<LabelMode>().is_err());
    }

    #[test]
    fn un_sam_fills_everything() {
        let f = frame([0.1; 4], 1.0, 10);
        let l = f.labels.materialize(LabelMode::UnSam, &CotParams::default());
        assert!(l.values.iter().all(|v| *v > 0.0));
        assert_eq!(l.values[20], 10.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = RegressorConfig { epochs: 0, seed: 4, ..RegressorConfig::default() };
        let (m, h) = train_regressor(&[frame([0.1; 4], 1.0, 10)], LabelMode::Sl, &CotParams::default(), &cfg).unwrap();
        assert_eq!(m, PixelMlp::new(cfg.feature_radius, cfg.hidden, 4));
        assert!(h.is_empty());
    }

    #[test]
    fn sl_without_labels_rejected() {
        let r = train_regressor(&[frame([0.1; 4], 1.0, 0)], LabelMode::Sl, &CotParams::default(), &RegressorConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn learns_uniform_cot() {
        let frames: Vec<TrainFrame> = (0..4).map(|i| frame([0.3, 0.4, 0.2, 0.1 * i as f64], 1.3, 40)).collect();
        let cfg = RegressorConfig { epochs: 300, ..RegressorConfig::desk_scale() };
        let (m, h) = train_regressor(&frames, LabelMode::Sl, &CotParams::default(), &cfg).unwrap();
        assert!(h.last().unwrap() < &h[0]);
        let p = m.predict(&frames[1].input).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let std = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
        assert!((mean - 1.3).abs() < 0.05 * 1.3, "mean {mean}");
        assert!(std < 0.1 * mean);
    }

    #[test]
    fn mse_rules() {
        assert_eq!(pixel_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), Some(0.0));
        assert_eq!(pixel_mse(&[1.5; 3], &[1.0; 3]).unwrap(), Some(0.25));
        assert_eq!(pixel_mse(&[1.5; 3], &[0.0; 3]).unwrap(), None);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = PixelMlp::new(1, 6, 2);
        for i in model.layout[1].range() {
            model.params[i] = 0.1;
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for b in 0..2 {
            let mut t = Tensor3::zeros(4, 8, 8);
            for (i, v) in t.data.iter_mut().enumerate() {
                *v = (((i + 31 * b) * 29 % 23) as f64) / 23.0;
            }
            inputs.push(pixel_features(&t, 1).unwrap());
            labels.push((0..64).map(|p| if p % 3 == 0 { 0.0 } else { 0.5 + (p % 7) as f64 * 0.3 }).collect::<Vec<f64>>());
        }
        for norm in [MaeNormalization::TotalPixels, MaeNormalization::LabeledPixels] {
            let (_, grad) = batch_loss_and_grad(&model, &inputs, &labels, norm).unwrap();
            for i in 0..model.params.len() {
                let h = 1e-7;
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.params[i] += delta;
                    batch_loss_and_grad(&m, &inputs, &labels, norm).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(grad[i].abs()) + 1e-8;
                assert!((fd - grad[i]).abs() < tol, "param {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }
}
