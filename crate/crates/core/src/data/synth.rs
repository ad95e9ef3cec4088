use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{standardize, Dataset, Standardization};
use crate::error::{Error, Result};
use crate::linalg;

/// Ground truth of a [`synth_lowrank`] draw.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankTruth {
    /// Orthonormal directions `a_k`.
    pub factors: Vec<Vec<f64>>,
    /// `s_k = 2^(rank - k)`, strictly decreasing.
    pub spectrum: Vec<f64>,
}

/// `x = sum_k c_k s_k a_k + noise` with standard normal `c_k`, orthonormal
/// random `a_k` and `s_k = 2^(rank-k)`.
///
/// Samples are returned as generated (already zero-mean in distribution) with
/// identity standardization statistics, so the ground-truth directions stay
/// directly comparable with the data.
pub fn synth_lowrank(
    dim: usize,
    n_samples: usize,
    rank: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, LowRankTruth)> {
    if rank > dim {
        return Err(Error::usage(format!("rank {rank} exceeds dimension {dim}")));
    }
    if dim == 0 || n_samples == 0 {
        return Err(Error::usage("need a positive dimension and sample count"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::usage("noise_std must be ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = loop {
        let raw: Vec<Vec<f64>> = (0..rank)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        if let Ok(q) = linalg::gram_schmidt(&raw, 1e-8) {
            break q;
        }
    };
    let spectrum: Vec<f64> = (1..=rank).map(|k| 2f64.powi((rank - k) as i32)).collect();
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let vectors: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| {
            let mut x = vec![0.0; dim];
            for (a, s) in factors.iter().zip(&spectrum) {
                let c: f64 = StandardNormal.sample(&mut rng);
                linalg::axpy(c * s, a, &mut x);
            }
            if noise_std > 0.0 {
                x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            x
        })
        .collect();
    let ds = Dataset::from_vectors(vectors, Standardization::identity(dim), None)?;
    Ok((ds, LowRankTruth { factors, spectrum }))
}

/// Images whose signal lives in two spatial halves: each sample is a random
/// combination of `rank_per_half` patterns supported on the left columns plus
/// an independent combination supported on the right columns, plus noise.
/// Each half is switched on independently with probability `active_prob`.
/// The result is standardized per pixel.
pub fn synth_two_halves(
    shape: (usize, usize),
    n_samples: usize,
    rank_per_half: usize,
    active_prob: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    let (h, w) = shape;
    if h == 0 || w < 2 || rank_per_half == 0 {
        return Err(Error::usage("need h ≥ 1, w ≥ 2 and rank_per_half ≥ 1"));
    }
    if !(active_prob > 0.0 && active_prob <= 1.0) {
        return Err(Error::usage("active_prob must lie in (0,1]"));
    }
    let dim = h * w;
    let half = w / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patterns = Vec::new();
    for side in 0..2 {
        for _ in 0..rank_per_half {
            let p: Vec<f64> = (0..dim)
                .map(|k| {
                    let left = k % w < half;
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if left == (side == 0) {
                        v
                    } else {
                        0.0
                    }
                })
                .collect();
            patterns.push(p);
        }
    }
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let raw: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| {
            let mut x = vec![0.0; dim];
            for side in patterns.chunks(rank_per_half) {
                let on = rng.random::<f64>() < active_prob;
                for p in side {
                    let c: f64 = StandardNormal.sample(&mut rng);
                    if on {
                        linalg::axpy(c, p, &mut x);
                    }
                }
            }
            if noise_std > 0.0 {
                x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            x
        })
        .collect();
    standardize(&raw, Some(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_above_dim_rejected() {
        assert!(synth_lowrank(3, 10, 4, 0.0, 0).is_err());
    }

    #[test]
    fn noiseless_rank_one_is_parallel() {
        let (ds, truth) = synth_lowrank(6, 20, 1, 0.0, 4).unwrap();
        let a = &truth.factors[0];
        for s in &ds.samples {
            let c = linalg::dot(&s.x, a);
            let resid: f64 = s.x.iter().zip(a).map(|(x, ai)| (x - c * ai).powi(2)).sum();
            assert!(resid.sqrt() < 1e-12);
        }
        assert_eq!(truth.spectrum, vec![1.0]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_lowrank(10, 5, 2, 0.1, 77).unwrap();
        let b = synth_lowrank(10, 5, 2, 0.1, 77).unwrap();
        assert_eq!(a, b);
        let c = synth_two_halves((4, 6), 10, 1, 0.5, 0.05, 3).unwrap();
        let d = synth_two_halves((4, 6), 10, 1, 0.5, 0.05, 3).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn inactive_halves_carry_only_noise() {
        let ds = synth_two_halves((2, 4), 200, 1, 0.3, 0.0, 5).unwrap();
        let st = &ds.standardization;
        let raw: Vec<Vec<f64>> = ds.samples.iter().map(|s| st.inverse(&s.x).unwrap()).collect();
        let silent = |r: &Vec<f64>, cols: std::ops::Range<usize>| {
            (0..2).all(|row| cols.clone().all(|c| r[row * 4 + c].abs() < 1e-9))
        };
        let left_off = raw.iter().filter(|r| silent(r, 0..2)).count();
        let right_off = raw.iter().filter(|r| silent(r, 2..4)).count();
        assert!((110..170).contains(&left_off), "{left_off}");
        assert!((110..170).contains(&right_off), "{right_off}");
    }
}
