use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator of the masked MAE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaeNormalization {
    /// Every pixel of the batch, labeled or not.
    #[default]
    TotalPixels,
    LabeledPixels,
}

fn denominator(z: &[f64], norm: MaeNormalization) -> f64 {
    match norm {
        MaeNormalization::TotalPixels => z.len() as f64,
        MaeNormalization::LabeledPixels => z.iter().filter(|v| **v != 0.0).count() as f64,
    }
}

fn check(z: &[f64], p: &[f64]) -> Result<()> {
    if z.len() != p.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} predictions", z.len()), actual: p.len().to_string() });
    }
    Ok(())
}

/// Mean absolute error over labeled pixels (`Z ≠ 0`); unknown pixels add
/// nothing to the sum but, by default, still count in the denominator.
pub fn masked_mae(z: &[f64], p: &[f64], norm: MaeNormalization) -> Result<f64> {
    check(z, p)?;
    let n = denominator(z, norm);
    if n == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = z.iter().zip(p).filter(|(z, _)| **z != 0.0).map(|(z, p)| (z - p).abs()).sum();
    Ok(sum / n)
}

/// `∂ masked_mae / ∂P`, using 0 as the subgradient at `Z = P`.
pub fn masked_mae_grad(z: &[f64], p: &[f64], norm: MaeNormalization) -> Result<Vec<f64>> {
    check(z, p)?;
    let n = denominator(z, norm);
    Ok(z.iter()
        .zip(p)
        .map(|(z, p)| if *z == 0.0 || n == 0.0 || z == p { 0.0 } else if p > z { 1.0 / n } else { -1.0 / n })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(masked_mae(&[0.0; 3], &[1.0, 2.0, 3.0], MaeNormalization::TotalPixels).unwrap(), 0.0);
        assert_eq!(masked_mae(&[1.0, 2.0], &[1.0, 2.0], MaeNormalization::TotalPixels).unwrap(), 0.0);
        let z = [1.0, 2.0, 0.0, 0.0];
        let p = [1.5, 1.5, 7.0, 9.0];
        assert_eq!(masked_mae(&z, &p, MaeNormalization::TotalPixels).unwrap(), 0.25);
        assert_eq!(masked_mae(&z, &p, MaeNormalization::LabeledPixels).unwrap(), 0.5);
        assert!(masked_mae(&z, &p[..3], MaeNormalization::TotalPixels).is_err());
    }

    proptest! {
        #[test]
        fn unknown_pixels_do_not_matter(
            pairs in prop::collection::vec((prop_oneof![Just(0.0), 0.1f64..5.0], 0.0f64..5.0), 1..40),
            noise in prop::collection::vec(-3.0f64..3.0, 40),
        ) {
            let z: Vec<f64> = pairs.iter().map(|(z, _)| *z).collect();
            let p: Vec<f64> = pairs.iter().map(|(_, p)| *p).collect();
            let q: Vec<f64> = p.iter().zip(&z).zip(&noise).map(|((p, z), n)| if *z == 0.0 { p + n } else { *p }).collect();
            for norm in [MaeNormalization::TotalPixels, MaeNormalization::LabeledPixels] {
                prop_assert_eq!(masked_mae(&z, &p, norm).unwrap(), masked_mae(&z, &q, norm).unwrap());
            }
        }
    }
}
