//! Per-image min/max rescaling to 8-bit gray levels.
//!
//! `pixel = round((v - offset) * scale)` with `offset = min v` and
//! `scale = 255 / (max v - min v)`, so `v ≈ offset + pixel / scale`. A
//! constant image has scale 0 and renders black.

use decompnet::data::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, EXIT_USAGE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rendered {
    pub pixels: Vec<u8>,
    pub scale: f64,
    pub offset: f64,
}

pub fn rescale(values: &[f64]) -> CliResult<Rendered> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError {
            code: EXIT_USAGE,
            kind: "numeric",
            message: "cannot render non-finite values".into(),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (offset, scale) = if values.is_empty() {
        (0.0, 0.0)
    } else if hi > lo {
        (lo, 255.0 / (hi - lo))
    } else {
        (lo, 0.0)
    };
    let pixels = values
        .iter()
        .map(|v| ((v - offset) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(Rendered { pixels, scale, offset })
}

impl Rendered {
    pub fn to_image(&self, shape: (usize, usize)) -> CliResult<GrayImage> {
        let (h, w) = shape;
        Ok(GrayImage::new(
            w,
            h,
            255,
            self.pixels.iter().map(|&p| p as u16).collect(),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_0_and_255() {
        let r = rescale(&[-2.0, 0.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.pixels, vec![0, 128, 255, 191]);
        assert_eq!(r.offset, -2.0);
        for (p, v) in r.pixels.iter().zip([-2.0, 0.0, 2.0, 1.0]) {
            assert!((r.offset + *p as f64 / r.scale - v).abs() <= 0.5 / r.scale);
        }
    }

    #[test]
    fn constant_and_bad_input() {
        let r = rescale(&[3.0; 4]).unwrap();
        assert_eq!((r.pixels, r.scale, r.offset), (vec![0; 4], 0.0, 3.0));
        assert!(rescale(&[1.0, f64::NAN]).is_err());
    }
}
