//! Composite objective: reconstruction error, l1 code sparsity and the
//! pairwise orthogonality penalty between components.
//!
//! The penalty sums over ordered pairs `i != j`, so every unordered pair is
//! counted twice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::sweep::SweepState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub sparsity: f64,
    pub orthogonality: f64,
}

impl LossBreakdown {
    fn from_terms(recon: f64, sparsity: f64, orthogonality: f64) -> Self {
        LossBreakdown {
            total: recon + sparsity + orthogonality,
            recon,
            sparsity,
            orthogonality,
        }
    }

    /// Arithmetic mean of per-sample values, accumulated in slice order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let (r, s, o) = items.iter().fold((0.0, 0.0, 0.0), |(r, s, o), l| {
            (r + l.recon, s + l.sparsity, o + l.orthogonality)
        });
        LossBreakdown::from_terms(r / n, s / n, o / n)
    }
}

/// Gradients of the per-sample loss with respect to the final components and
/// codes; `sigma` is held constant.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub recon: Vec<Vec<f64>>,
    pub code: Vec<Vec<f64>>,
}

fn check(x: &[f64], state: &SweepState) -> Result<()> {
    if state.steps.is_empty() {
        return Err(Error::usage("sweep state holds no sweeps"));
    }
    if state.reconstruction.len() != x.len() {
        return Err(Error::usage(format!(
            "input has length {}, sweep state has {}",
            x.len(),
            state.reconstruction.len()
        )));
    }
    Ok(())
}

fn recon_error(x: &[f64], state: &SweepState) -> Vec<f64> {
    x.iter().zip(&state.reconstruction).map(|(a, b)| a - b).collect()
}

fn gram_of(components: &[Vec<f64>]) -> Vec<Vec<f64>> {
    components
        .iter()
        .map(|a| components.iter().map(|b| dot(a, b)).collect())
        .collect()
}

pub fn composite_loss(x: &[f64], state: &SweepState, lambda_s: f64, lambda_perp: f64) -> Result<LossBreakdown> {
    check(x, state)?;
    let e = recon_error(x, state);
    let recon = dot(&e, &e);
    let n = state.n_branches();
    let sparsity = if lambda_s == 0.0 {
        0.0
    } else {
        lambda_s
            * (0..n)
                .map(|i| state.code(i).iter().map(|z| z.abs()).sum::<f64>())
                .sum::<f64>()
    };
    let orthogonality = if lambda_perp == 0.0 {
        0.0
    } else {
        let g = gram_of(&state.components());
        let mut acc = 0.0;
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    acc += v * v;
                }
            }
        }
        lambda_perp * acc
    };
    Ok(LossBreakdown::from_terms(recon, sparsity, orthogonality))
}

pub fn loss_gradients(x: &[f64], state: &SweepState, lambda_s: f64, lambda_perp: f64) -> Result<LossGradients> {
    check(x, state)?;
    let e = recon_error(x, state);
    let components = state.components();
    let n = components.len();
    let gram = if lambda_perp != 0.0 { Some(gram_of(&components)) } else { None };
    let mut recon = Vec::with_capacity(n);
    let mut code = Vec::with_capacity(n);
    for i in 0..n {
        let mut g: Vec<f64> = e.iter().map(|v| -2.0 * state.sigma[i] * v).collect();
        if let Some(gram) = &gram {
            for j in (0..n).filter(|&j| j != i) {
                axpy(4.0 * lambda_perp * gram[i][j], &components[j], &mut g);
            }
        }
        recon.push(g);
        code.push(
            state
                .code(i)
                .iter()
                .map(|&z| {
                    if z > 0.0 {
                        lambda_s
                    } else if z < 0.0 {
                        -lambda_s
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    Ok(LossGradients { recon, code })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Schedule, SigmaVector};
    use crate::sweep::BranchStep;

    fn state_from(components: Vec<Vec<f64>>, codes: Vec<Vec<f64>>, sigma: Vec<f64>) -> SweepState {
        let d = components[0].len();
        let mut reconstruction = vec![0.0; d];
        for (c, s) in components.iter().zip(&sigma) {
            axpy(*s, c, &mut reconstruction);
        }
        let steps = vec![components
            .into_iter()
            .zip(codes)
            .map(|(recon, code)| BranchStep {
                residual: vec![0.0; d],
                code,
                recon,
            })
            .collect()];
        SweepState {
            schedule: Schedule::GaussSeidel,
            order: (0..sigma.len()).collect(),
            sigma: SigmaVector(sigma),
            steps,
            reconstruction,
        }
    }

    #[test]
    fn perfect_orthogonal_zero_code_is_zero() {
        let s = state_from(
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![vec![0.0], vec![0.0]],
            vec![1.0, 1.0],
        );
        let l = composite_loss(&[1.0, 2.0], &s, 1.0, 1.0).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn identical_components_count_both_pairs() {
        let s = state_from(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0], vec![0.0]],
            vec![1.0, 1.0],
        );
        let l = composite_loss(&[2.0, 0.0], &s, 0.0, 1.0).unwrap();
        assert_eq!(l.orthogonality, 2.0);
        assert_eq!(l.total, l.recon + l.sparsity + l.orthogonality);
    }

    #[test]
    fn zero_components_recon_gradient() {
        let s = state_from(
            vec![vec![0.0; 3], vec![0.0; 3]],
            vec![vec![0.0], vec![0.0]],
            vec![0.5, 2.0],
        );
        let x = [1.0, -2.0, 3.0];
        let g = loss_gradients(&x, &s, 0.0, 1.0).unwrap();
        for (i, sigma) in [0.5, 2.0].iter().enumerate() {
            let expected: Vec<f64> = x.iter().map(|v| -2.0 * sigma * v).collect();
            assert_eq!(g.recon[i], expected);
        }
    }

    #[test]
    fn orthogonal_components_have_no_penalty_gradient() {
        let comps = vec![vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]];
        let x = [1.0, 3.0, 0.0];
        let s = state_from(comps, vec![vec![1.0], vec![-1.0]], vec![1.0, 1.0]);
        let g = loss_gradients(&x, &s, 0.0, 5.0).unwrap();
        assert!(g.recon.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_subgradient_zero_at_zero() {
        let s = state_from(vec![vec![1.0]], vec![vec![0.0, 2.0, -3.0]], vec![1.0]);
        let g = loss_gradients(&[1.0], &s, 0.5, 0.0).unwrap();
        assert_eq!(g.code[0], vec![0.0, 0.5, -0.5]);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let s = state_from(vec![vec![1.0, 0.0]], vec![vec![0.0]], vec![1.0]);
        assert!(matches!(composite_loss(&[1.0], &s, 0.0, 0.0), Err(Error::Usage(_))));
    }
}
