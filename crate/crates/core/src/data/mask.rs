use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic Gaussian mask over an image grid. Pixel `(r, c)` sits at
/// coordinates `(r, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub center: (f64, f64),
    /// Fraction of the image covered by the `m >= 0.5` disc when the disc lies
    /// fully inside the frame.
    pub area_fraction: f64,
    pub shape: (usize, usize),
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.shape;
        if h == 0 || w == 0 {
            return Err(Error::usage("mask shape must be non-empty"));
        }
        if !(self.area_fraction > 0.0 && self.area_fraction < 1.0) {
            return Err(Error::usage("mask area_fraction must lie in (0,1)"));
        }
        let (r, c) = self.center;
        if !(r >= 0.0 && r <= (h - 1) as f64 && c >= 0.0 && c <= (w - 1) as f64) {
            return Err(Error::usage(format!("mask center ({r}, {c}) outside {h}x{w} image")));
        }
        Ok(())
    }
}

/// Gaussian width `tau` such that the half-level disc has area
/// `area_fraction * h * w`: `pi * 2 ln2 * tau^2 = area`.
pub fn mask_width(spec: &MaskSpec) -> f64 {
    let area = spec.area_fraction * (spec.shape.0 * spec.shape.1) as f64;
    (area / (2.0 * std::f64::consts::PI * std::f64::consts::LN_2)).sqrt()
}

/// Radius of the `m = 0.5` level set.
pub fn level_radius(spec: &MaskSpec) -> f64 {
    mask_width(spec) * (2.0 * std::f64::consts::LN_2).sqrt()
}

/// `m(p) = exp(-|p - center|^2 / (2 tau^2))`, row-major over the image.
pub fn gaussian_mask(spec: &MaskSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let tau = mask_width(spec);
    let (h, w) = spec.shape;
    let (cr, cc) = spec.center;
    let mut m = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
            m.push((-d2 / (2.0 * tau * tau)).exp().min(1.0));
        }
    }
    Ok(m)
}

/// Seeded random mask centers, resampled while closer than 10% of the image
/// extent to the border.
pub fn random_mask_centers(shape: (usize, usize), count: usize, seed: u64) -> Vec<(f64, f64)> {
    let (h, w) = shape;
    let (hmax, wmax) = ((h.max(1) - 1) as f64, (w.max(1) - 1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (lo_r, hi_r) = (0.1 * hmax, 0.9 * hmax);
            let (lo_c, hi_c) = (0.1 * wmax, 0.9 * wmax);
            loop {
                let r = rng.random::<f64>() * hmax;
                let c = rng.random::<f64>() * wmax;
                if (lo_r..=hi_r).contains(&r) && (lo_c..=hi_c).contains(&c) {
                    return (r, c);
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(h: usize, w: usize) -> MaskSpec {
        MaskSpec {
            center: ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0),
            area_fraction: 0.5,
            shape: (h, w),
        }
    }

    #[test]
    fn center_value_is_one() {
        let spec = MaskSpec {
            center: (3.0, 4.0),
            area_fraction: 0.3,
            shape: (8, 9),
        };
        let m = gaussian_mask(&spec).unwrap();
        assert_eq!(m[3 * 9 + 4], 1.0);
    }

    #[test]
    fn level_radius_gives_half() {
        let spec = centered(56, 46);
        let tau = mask_width(&spec);
        let rho = level_radius(&spec);
        let v = (-rho * rho / (2.0 * tau * tau)).exp();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = centered(10, 10);
        spec.area_fraction = 1.0;
        assert!(gaussian_mask(&spec).is_err());
        let mut spec = centered(10, 10);
        spec.center = (10.5, 0.0);
        assert!(gaussian_mask(&spec).is_err());
    }

    #[test]
    fn random_centers_avoid_border() {
        let cs = random_mask_centers((56, 46), 50, 3);
        for (r, c) in cs {
            assert!((5.5..=49.5).contains(&r) && (4.5..=40.5).contains(&c));
        }
        assert_eq!(random_mask_centers((56, 46), 4, 9), random_mask_centers((56, 46), 4, 9));
    }
}
