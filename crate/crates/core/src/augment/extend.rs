use log::warn;

use super::masks::MaskSet;
use crate::cotlabel::CotParams;
use crate::error::{Error, Result};
use crate::render::{CotLabelImage, Provenance};

/// How a mask relates to the labels already present under it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskStatus {
    /// More than half of its pixels carry a traversable COT.
    Traversable,
    /// More than half of its pixels are labeled non-traversable.
    NonTraversable,
    Unlabeled,
}

pub fn mask_status(label: &CotLabelImage, masks: &MaskSet, i: usize, params: &CotParams) -> MaskStatus {
    let (mut size, mut trav, mut non) = (0usize, 0usize, 0usize);
    for p in masks.pixels(i) {
        size += 1;
        if label.is_labeled(p) {
            if params.is_nontraversable(label.values[p]) {
                non += 1;
            } else {
                trav += 1;
            }
        }
    }
    if 2 * trav > size {
        MaskStatus::Traversable
    } else if 2 * non > size {
        MaskStatus::NonTraversable
    } else {
        MaskStatus::Unlabeled
    }
}

/// Extends path and overhead labels to every mask they touch.
///
/// A mask takes the mean COT of its intersection with path labels, or the
/// non-traversable value when it touches overhead labels (which wins when
/// both are present). Only the labels present on entry are consulted, only
/// unknown pixels are written, and where masks overlap the first one wins.
pub fn extend_labels_by_masks(label: &CotLabelImage, masks: &MaskSet, params: &CotParams) -> Result<CotLabelImage> {
    masks.check_size(label.width, label.height)?;
    let mut out = label.clone();
    for i in 0..masks.len() {
        let (mut sum, mut n_path, mut n_over) = (0.0, 0usize, 0usize);
        for p in masks.pixels(i) {
            match label.provenance[p] {
                Provenance::Path if label.is_labeled(p) => {
                    sum += label.values[p];
                    n_path += 1;
                }
                Provenance::Overhead => n_over += 1,
                _ => {}
            }
        }
        let (value, prov) = match (n_path, n_over) {
            (0, 0) => continue,
            (_, 0) => (sum / n_path as f64, Provenance::MaskPath),
            (0, _) => (params.nontraversable_cot, Provenance::MaskOverhead),
            _ => {
                warn!("mask {i} touches {n_path} path and {n_over} overhead pixels; labeling it non-traversable");
                (params.nontraversable_cot, Provenance::MaskOverhead)
            }
        };
        for p in masks.pixels(i) {
            if !out.is_labeled(p) {
                out.values[p] = value;
                out.provenance[p] = prov;
            }
        }
    }
    Ok(out)
}

/// Labels the unknown pixels of every mask whose reconstruction error
/// exceeds `theta` as non-traversable. Masks without an SE are left alone.
pub fn label_nontraversable_by_confidence(
    label: &CotLabelImage,
    masks: &MaskSet,
    se: &[Option<f64>],
    theta: f64,
    params: &CotParams,
) -> Result<CotLabelImage> {
    masks.check_size(label.width, label.height)?;
    if se.len() != masks.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} SE values", masks.len()), actual: se.len().to_string() });
    }
    let mut out = label.clone();
    for (i, e) in se.iter().enumerate() {
        if !e.is_some_and(|e| e > theta) {
            continue;
        }
        for p in masks.pixels(i) {
            if !out.is_labeled(p) {
                out.values[p] = params.nontraversable_cot;
                out.provenance[p] = Provenance::Confidence;
            }
        }
    }
    Ok(out)
}

/// Fills every remaining unknown pixel with the non-traversable value.
pub fn label_unknown_as_nontraversable(label: &CotLabelImage, params: &CotParams) -> CotLabelImage {
    let mut out = label.clone();
    for p in 0..out.len() {
        if !out.is_labeled(p) {
            out.values[p] = params.nontraversable_cot;
            out.provenance[p] = Provenance::AssumedNegative;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::coverage;

    fn path_label(values: &[f64]) -> CotLabelImage {
        let mut l = CotLabelImage::unknown(values.len(), 1);
        for (i, v) in values.iter().enumerate() {
            if *v > 0.0 {
                l.values[i] = *v;
                l.provenance[i] = Provenance::Path;
            }
        }
        l
    }

    fn mask(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|b| *b != 0).collect()
    }

    #[test]
    fn uniform_path_fills_mask() {
        let label = path_label(&[1.2, 1.2, 0.0, 0.0, 0.0]);
        let masks = MaskSet::new(5, 1, vec![mask(&[1, 1, 1, 1, 0])]).unwrap();
        let out = extend_labels_by_masks(&label, &masks, &CotParams::default()).unwrap();
        assert_eq!(out.values, vec![1.2, 1.2, 1.2, 1.2, 0.0]);
        assert_eq!(out.provenance[2], Provenance::MaskPath);
        assert_eq!(out.provenance[0], Provenance::Path);
    }

    #[test]
    fn mixed_path_takes_mean() {
        let label = path_label(&[1.0, 2.0, 0.0, 0.0]);
        let masks = MaskSet::new(4, 1, vec![mask(&[1, 1, 1, 1])]).unwrap();
        let out = extend_labels_by_masks(&label, &masks, &CotParams::default()).unwrap();
        assert_eq!(out.values, vec![1.0, 2.0, 1.5, 1.5]);
    }

    #[test]
    fn disjoint_mask_untouched() {
        let label = path_label(&[1.0, 0.0, 0.0]);
        let masks = MaskSet::new(3, 1, vec![mask(&[0, 1, 1])]).unwrap();
        assert_eq!(extend_labels_by_masks(&label, &masks, &CotParams::default()).unwrap(), label);
    }

    #[test]
    fn overhead_wins_over_path() {
        let mut label = path_label(&[1.0, 0.0, 0.0]);
        label.values[1] = 10.0;
        label.provenance[1] = Provenance::Overhead;
        let masks = MaskSet::new(3, 1, vec![mask(&[1, 1, 1])]).unwrap();
        let out = extend_labels_by_masks(&label, &masks, &CotParams::default()).unwrap();
        assert_eq!(out.values, vec![1.0, 10.0, 10.0]);
        assert_eq!(out.provenance[2], Provenance::MaskOverhead);
    }

    #[test]
    fn confidence_rule() {
        let params = CotParams::default();
        let label = path_label(&[1.0, 0.0, 0.0, 0.0]);
        let masks = MaskSet::new(4, 1, vec![mask(&[1, 1, 0, 0]), mask(&[0, 0, 1, 1])]).unwrap();
        let theta = 0.5;
        let se = [Some(2.0 * theta), Some(theta / 2.0)];
        let out = label_nontraversable_by_confidence(&label, &masks, &se, theta, &params).unwrap();
        assert_eq!(out.values, vec![1.0, 10.0, 0.0, 0.0]);
        assert_eq!(out.provenance[1], Provenance::Confidence);
        let unscored = label_nontraversable_by_confidence(&label, &masks, &[None, None], theta, &params).unwrap();
        assert_eq!(unscored, label);
        assert!(label_nontraversable_by_confidence(&label, &masks, &[Some(1.0)], theta, &params).is_err());
        let all = label_unknown_as_nontraversable(&out, &params);
        assert_eq!(coverage(&all), 1.0);
        assert_eq!(all.values[0], 1.0);
    }

    #[test]
    fn status_by_majority() {
        let params = CotParams::default();
        let label = path_label(&[1.0, 1.0, 0.0, 0.0]);
        let masks = MaskSet::new(4, 1, vec![mask(&[1, 1, 1, 0]), mask(&[0, 1, 1, 1])]).unwrap();
        assert_eq!(mask_status(&label, &masks, 0, &params), MaskStatus::Traversable);
        assert_eq!(mask_status(&label, &masks, 1, &params), MaskStatus::Unlabeled);
    }
}
