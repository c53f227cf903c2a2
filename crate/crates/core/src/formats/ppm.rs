use std::io::Write;

use crate::error::{Error, Result};

/// COT colormap over the 0.5–2.0 display range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Colormap {
    pub min: f64,
    pub max: f64,
    /// Values at or above this render black.
    pub nontraversable: f64,
}

impl Default for Colormap {
    fn default() -> Self {
        Self { min: 0.5, max: 2.0, nontraversable: 10.0 }
    }
}

// viridis control points
const RAMP: [[f64; 3]; 6] = [
    [68.0, 1.0, 84.0],
    [65.0, 68.0, 135.0],
    [42.0, 120.0, 142.0],
    [34.0, 168.0, 132.0],
    [122.0, 209.0, 81.0],
    [253.0, 231.0, 37.0],
];

/// Unknown (≤ 0) is white, non-traversable is black.
pub fn cot_color(value: f64, map: &Colormap) -> [u8; 3] {
    if !(value > 0.0) {
        return [255, 255, 255];
    }
    if value >= map.nontraversable {
        return [0, 0, 0];
    }
    let t = ((value - map.min) / (map.max - map.min)).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f).round() as u8;
    }
    out
}

/// Writes a binary P6 image from interleaved RGB.
pub fn write_ppm(mut w: impl Write, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::ShapeMismatch { expected: format!("{} bytes", width * height * 3), actual: rgb.len().to_string() });
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    w.write_all(rgb)?;
    Ok(())
}

/// Row-major COT field to interleaved RGB.
pub fn render_cot_ppm(values: &[f64], map: &Colormap) -> Vec<u8> {
    values.iter().flat_map(|v| cot_color(*v, map)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_ends() {
        let m = Colormap::default();
        assert_eq!(cot_color(0.0, &m), [255, 255, 255]);
        assert_eq!(cot_color(10.0, &m), [0, 0, 0]);
        assert_eq!(cot_color(0.5, &m), [68, 1, 84]);
        assert_eq!(cot_color(2.0, &m), [253, 231, 37]);
        assert_eq!(cot_color(5.0, &m), [253, 231, 37]);
    }

    #[test]
    fn ppm_header() {
        let mut buf = Vec::new();
        write_ppm(&mut buf, 1, 1, &[1, 2, 3]).unwrap();
        assert_eq!(buf, b"P6\n1 1\n255\n\x01\x02\x03");
        assert!(write_ppm(Vec::new(), 2, 1, &[0; 3]).is_err());
    }
}
