//! Deflation SVD by alternating power iteration, plus subspace comparison
//! metrics used to check rank-1 models against it.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, Matrix};
use crate::model::DecomposerModel;

/// Singular values below this end the deflation early.
pub const RANK_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularTriplet {
    pub u: Vec<f64>,
    pub s: f64,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdOracleResult {
    pub triplets: Vec<SingularTriplet>,
    /// Largest final sine between successive left iterates over all triplets.
    pub achieved_tol: f64,
    pub note: Option<String>,
}

impl SvdOracleResult {
    pub fn singular_values(&self) -> Vec<f64> {
        self.triplets.iter().map(|t| t.s).collect()
    }

    pub fn left_vectors(&self) -> Vec<Vec<f64>> {
        self.triplets.iter().map(|t| t.u.clone()).collect()
    }

    /// `sum_k s_k u_k v_k^T`.
    pub fn reconstruct(&self, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for t in &self.triplets {
            m.add_outer(t.s, &t.u, &t.v);
        }
        m
    }
}

/// Flips `v` so that its largest-magnitude entry is positive. Returns the
/// applied sign.
pub fn fix_sign(v: &mut [f64]) -> f64 {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        -1.0
    } else {
        1.0
    }
}

fn sine_between(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b);
    let mut r = a.to_vec();
    linalg::axpy(-c, b, &mut r);
    linalg::norm(&r)
}

/// Top-`rank` singular triplets of `data` (`d x n`) by deflation.
///
/// For each component, alternate `u <- A v / |A v|`, `v <- A^T u / |A^T u|`
/// until the sine of the angle between successive `u` drops below `tol`,
/// set `s = u^T A v`, then deflate `A <- A - s u v^T`.
pub fn svd_deflation(data: &Matrix, rank: usize, max_iter: usize, tol: f64) -> Result<SvdOracleResult> {
    let (d, n) = (data.rows(), data.cols());
    if rank > d.min(n) {
        return Err(Error::usage(format!(
            "rank {rank} exceeds min(d, n) = {}",
            d.min(n)
        )));
    }
    let mut residual = data.clone();
    let mut triplets = Vec::with_capacity(rank);
    let mut achieved: f64 = 0.0;
    let mut note = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0xDEF1_A7E);
    for k in 0..rank {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        linalg::normalize(&mut v);
        let mut u = residual.matvec(&v);
        if linalg::normalize(&mut u) < RANK_FLOOR {
            note = Some(format!("rank deficient: stopped after {k} of {rank} components"));
            break;
        }
        let mut change = f64::INFINITY;
        for _ in 0..max_iter {
            v = residual.matvec_t(&u);
            if linalg::normalize(&mut v) < RANK_FLOOR {
                break;
            }
            let mut next = residual.matvec(&v);
            if linalg::normalize(&mut next) < RANK_FLOOR {
                break;
            }
            change = sine_between(&next, &u);
            u = next;
            if change < tol {
                break;
            }
        }
        v = residual.matvec_t(&u);
        linalg::normalize(&mut v);
        let s = dot(&u, &residual.matvec(&v));
        if !(s >= RANK_FLOOR) {
            note = Some(format!("rank deficient: stopped after {k} of {rank} components"));
            break;
        }
        let sign = fix_sign(&mut u);
        v.iter_mut().for_each(|x| *x *= sign);
        residual.add_outer(-s, &u, &v);
        achieved = achieved.max(if change.is_finite() { change } else { 0.0 });
        triplets.push(SingularTriplet { u, s, v });
    }
    Ok(SvdOracleResult {
        triplets,
        achieved_tol: achieved,
        note,
    })
}

/// Principal angles in degrees between `span(a)` and `span(b)`, ascending.
pub fn principal_angles(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("principal angles need non-empty bases"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::shape("basis vectors differ in length"));
    }
    let qa = linalg::gram_schmidt(a, 1e-10)?;
    let qb = linalg::gram_schmidt(b, 1e-10)?;
    let (qa, qb) = if qa.len() >= qb.len() { (qa, qb) } else { (qb, qa) };
    let cross = DMatrix::from_fn(qa.len(), qb.len(), |i, j| dot(&qa[i], &qb[j]));
    let mut cosines: Vec<f64> = cross.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    // small angles are resolved from the sines: acos loses half the digits near 1
    let residual = DMatrix::from_fn(d, qb.len(), |r, j| {
        let proj: f64 = qa.iter().map(|a| a[r] * dot(a, &qb[j])).sum();
        qb[j][r] - proj
    });
    let mut sines: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(|x, y| x.total_cmp(y));
    Ok(cosines
        .into_iter()
        .zip(sines)
        .map(|(c, s)| {
            if c > std::f64::consts::FRAC_1_SQRT_2 {
                s.asin().to_degrees()
            } else {
                c.acos().to_degrees()
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchMatch {
    pub branch: usize,
    pub oracle_index: usize,
    pub abs_cos: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// One entry per branch, in branch order.
    pub matches: Vec<BranchMatch>,
    /// Principal angles (degrees) between the branch span and the span of the
    /// top oracle vectors.
    pub principal_angles_deg: Vec<f64>,
}

impl AlignmentReport {
    pub fn min_abs_cos(&self) -> f64 {
        self.matches.iter().map(|m| m.abs_cos).fold(f64::INFINITY, f64::min)
    }

    pub fn max_angle_deg(&self) -> f64 {
        self.principal_angles_deg.iter().copied().fold(0.0, f64::max)
    }
}

/// Greedy maximum-|cos| matching of rank-1 branch directions to oracle left
/// singular vectors; each oracle vector is used at most once.
pub fn compare_branches_to_svd(model: &DecomposerModel, oracle: &SvdOracleResult) -> Result<AlignmentReport> {
    let directions: Vec<Vec<f64>> = model
        .branches
        .iter()
        .map(|b| {
            b.rank1_direction()
                .map(|u| {
                    let mut u = u.to_vec();
                    linalg::normalize(&mut u);
                    fix_sign(&mut u);
                    u
                })
                .ok_or_else(|| Error::usage("svd comparison needs rank-1 branches"))
        })
        .collect::<Result<_>>()?;
    if oracle.triplets.is_empty() {
        return Err(Error::usage("oracle holds no singular vectors"));
    }
    let mut cos = vec![vec![0.0; oracle.triplets.len()]; directions.len()];
    for (i, u) in directions.iter().enumerate() {
        for (k, t) in oracle.triplets.iter().enumerate() {
            cos[i][k] = dot(u, &t.u).abs();
        }
    }
    let mut branch_done = vec![false; directions.len()];
    let mut oracle_done = vec![false; oracle.triplets.len()];
    let mut matches = Vec::new();
    while let Some((i, k)) = (0..directions.len())
        .filter(|&i| !branch_done[i])
        .flat_map(|i| (0..oracle_done.len()).filter(|&k| !oracle_done[k]).map(move |k| (i, k)))
        .max_by(|&(i, k), &(j, l)| cos[i][k].total_cmp(&cos[j][l]))
    {
        branch_done[i] = true;
        oracle_done[k] = true;
        matches.push(BranchMatch {
            branch: i,
            oracle_index: k,
            abs_cos: cos[i][k],
        });
    }
    // more branches than oracle vectors: leftovers match nothing
    for (i, done) in branch_done.iter().enumerate() {
        if !done {
            matches.push(BranchMatch {
                branch: i,
                oracle_index: usize::MAX,
                abs_cos: 0.0,
            });
        }
    }
    matches.sort_by_key(|m| m.branch);

    let top: Vec<Vec<f64>> = oracle
        .triplets
        .iter()
        .take(directions.len())
        .map(|t| t.u.clone())
        .collect();
    let principal_angles_deg = principal_angles(&directions, &top)?;
    Ok(AlignmentReport {
        matches,
        principal_angles_deg,
    })
}
