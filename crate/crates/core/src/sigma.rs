//! Per-sample scale estimation: `min_{sigma} ||x - H sigma||^2` with either a
//! ridge closed form or a nonnegativity constraint.

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_solve, dot, Matrix};
use crate::model::{ModelConfig, SigmaMode, SigmaVector};

/// Columns whose norm falls below this are treated as zero.
const ZERO_COLUMN: f64 = 1e-30;

/// Stacked component reconstructions, `d x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMatrix {
    pub h: Matrix,
    /// Original column norms when the columns have been normalized.
    pub column_norms: Option<Vec<f64>>,
}

impl ComponentMatrix {
    pub fn new(h: Matrix) -> Self {
        ComponentMatrix { h, column_norms: None }
    }

    pub fn normalized(h: &Matrix) -> Self {
        let (h, norms) = normalize_columns(h);
        ComponentMatrix {
            h,
            column_norms: Some(norms),
        }
    }

    /// Maps a solution against these columns back to the un-normalized ones.
    pub fn unscale(&self, sigma: SigmaVector) -> SigmaVector {
        match &self.column_norms {
            Some(norms) => SigmaVector(sigma.iter().zip(norms).map(|(s, n)| s / n).collect()),
            None => sigma,
        }
    }
}

/// Scales each nonzero column to unit norm. Zero columns are left untouched
/// with a recorded norm of 1, so `H_norm sigma' = H sigma` for
/// `sigma'_i = sigma_i * norms[i]`.
pub fn normalize_columns(h: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = h.clone();
    let mut norms = Vec::with_capacity(h.cols());
    for j in 0..h.cols() {
        let n = linalg::norm(&h.column(j));
        let n = if n < ZERO_COLUMN { 1.0 } else { n };
        for i in 0..h.rows() {
            out[(i, j)] /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// `0.5 * ||x - H sigma||^2`.
pub fn objective(h: &Matrix, x: &[f64], sigma: &[f64]) -> f64 {
    let fit = h.matvec(sigma);
    0.5 * fit
        .iter()
        .zip(x)
        .map(|(f, xi)| (xi - f).powi(2))
        .sum::<f64>()
}

/// Largest violation of the NNLS optimality conditions at `sigma`:
/// `|g_i|` on the free set and `max(0, -g_i)` on the active set, with
/// `g = H^T (H sigma - x)`.
pub fn kkt_residual(h: &Matrix, x: &[f64], sigma: &[f64]) -> f64 {
    let mut r = h.matvec(sigma);
    linalg::axpy(-1.0, x, &mut r);
    let g = h.matvec_t(&r);
    g.iter()
        .zip(sigma)
        .map(|(&gi, &si)| if si > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0, f64::max)
}

fn check_problem(h: &Matrix, x: &[f64]) -> Result<()> {
    if x.len() != h.rows() {
        return Err(Error::shape(format!(
            "target has length {}, H has {} rows",
            x.len(),
            h.rows()
        )));
    }
    if h.cols() == 0 {
        return Err(Error::shape("H has no columns"));
    }
    if !linalg::all_finite(h.as_slice()) || !linalg::all_finite(x) {
        return Err(Error::Numeric("non-finite entry in sigma problem".into()));
    }
    Ok(())
}

/// Solves `(H^T H + eps I) sigma = H^T x`, optionally clamping negatives to 0.
pub fn solve_sigma_ridge(h: &Matrix, x: &[f64], eps: f64, clamp_nonneg: bool) -> Result<SigmaVector> {
    check_problem(h, x)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Numeric(format!("ridge must be positive, got {eps}")));
    }
    let mut g = h.gram();
    for i in 0..g.rows() {
        g[(i, i)] += eps;
    }
    let mut sigma = cholesky_solve(&g, &h.matvec_t(x))?;
    if clamp_nonneg {
        sigma.iter_mut().for_each(|s| *s = s.max(0.0));
    }
    Ok(SigmaVector(sigma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution {
    pub sigma: SigmaVector,
    pub converged: bool,
    pub iterations: usize,
    /// Objective `0.5 ||x - H sigma||^2` after every iteration.
    pub objective_trace: Vec<f64>,
}

/// Iterations between attempts to jump to the exact least-squares solution on
/// the current support.
const POLISH_EVERY: usize = 16;

fn projected_gradient_norm(grad: &[f64], sigma: &[f64]) -> f64 {
    grad.iter()
        .zip(sigma)
        .map(|(&g, &s)| if s > 0.0 { g } else { g.min(0.0) })
        .map(|p| p * p)
        .sum::<f64>()
        .sqrt()
}

/// Exact minimizer on the support of `sigma`, if it is strictly feasible.
fn support_solution(gram: &Matrix, b: &[f64], sigma: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] > 0.0).collect();
    if support.is_empty() {
        return None;
    }
    let k = support.len();
    let mut g = Matrix::zeros(k, k);
    for (a, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            g[(a, c)] = gram[(i, j)];
        }
    }
    let rhs: Vec<f64> = support.iter().map(|&i| b[i]).collect();
    let sol = cholesky_solve(&g, &rhs).ok()?;
    if sol.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let mut full = vec![0.0; sigma.len()];
    for (&i, v) in support.iter().zip(sol) {
        full[i] = v;
    }
    Some(full)
}

/// Nonnegative least squares by projected gradient descent with step `1/L`.
///
/// `L` is the Frobenius norm of `H^T H`, an upper bound on its largest
/// eigenvalue, so every step decreases the objective. Every few iterations
/// the exact least-squares solution on the current support is tried and
/// accepted when it is feasible and not worse. Stops when the projected
/// gradient norm is at most `tol`.
pub fn solve_sigma_nnls(h: &Matrix, x: &[f64], tol: f64, max_iter: usize) -> Result<NnlsSolution> {
    check_problem(h, x)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::usage("nnls needs tol > 0 and max_iter ≥ 1"));
    }
    let n = h.cols();
    let gram = h.gram();
    let b = h.matvec_t(x);
    let lipschitz = gram.frobenius_norm();
    let mut sigma = vec![0.0; n];
    if lipschitz < ZERO_COLUMN {
        return Ok(NnlsSolution {
            sigma: SigmaVector(sigma),
            converged: true,
            iterations: 0,
            objective_trace: vec![],
        });
    }
    let f = |s: &[f64]| 0.5 * dot(s, &gram.matvec(s)) - dot(&b, s);
    let grad = |s: &[f64]| {
        let mut g = gram.matvec(s);
        linalg::axpy(-1.0, &b, &mut g);
        g
    };

    let offset = 0.5 * dot(x, x);
    let mut trace = Vec::new();
    for iter in 0..max_iter {
        let g = grad(&sigma);
        if projected_gradient_norm(&g, &sigma) <= tol {
            return Ok(NnlsSolution {
                sigma: SigmaVector(sigma),
                converged: true,
                iterations: iter,
                objective_trace: trace,
            });
        }
        for (s, gi) in sigma.iter_mut().zip(&g) {
            *s = (*s - gi / lipschitz).max(0.0);
        }
        let mut current = f(&sigma);
        if iter % POLISH_EVERY == 0 {
            if let Some(candidate) = support_solution(&gram, &b, &sigma) {
                let value = f(&candidate);
                if value <= current {
                    sigma = candidate;
                    current = value;
                }
            }
        }
        trace.push(current + offset);
    }
    let converged = projected_gradient_norm(&grad(&sigma), &sigma) <= tol;
    Ok(NnlsSolution {
        sigma: SigmaVector(sigma),
        converged,
        iterations: max_iter,
        objective_trace: trace,
    })
}

/// Reference NNLS by enumerating all `2^N` active sets. Only for `N ≤ 12`.
pub fn nnls_oracle(h: &Matrix, x: &[f64]) -> Result<SigmaVector> {
    check_problem(h, x)?;
    let n = h.cols();
    if n > 12 {
        return Err(Error::usage(format!("nnls_oracle refuses N = {n} > 12")));
    }
    let gram = h.gram();
    let b = h.matvec_t(x);
    let mut best = vec![0.0; n];
    let mut best_value = objective(h, x, &best);
    for subset in 1u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|&i| subset & (1 << i) != 0).collect();
        let k = free.len();
        let mut g = Matrix::zeros(k, k);
        for (a, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                g[(a, c)] = gram[(i, j)];
            }
            g[(a, a)] += 1e-12;
        }
        let rhs: Vec<f64> = free.iter().map(|&i| b[i]).collect();
        let Ok(sol) = cholesky_solve(&g, &rhs) else {
            continue;
        };
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut candidate = vec![0.0; n];
        for (&i, v) in free.iter().zip(sol) {
            candidate[i] = v;
        }
        let value = objective(h, x, &candidate);
        if value < best_value {
            best_value = value;
            best = candidate;
        }
    }
    Ok(SigmaVector(best))
}

/// Default NNLS tolerance.
pub const NNLS_TOL: f64 = 1e-10;

pub fn default_nnls_max_iter(n: usize, d: usize) -> usize {
    (10 * n * d).max(1)
}

/// Estimates `sigma` for one sample according to the model configuration.
pub fn estimate_sigma(config: &ModelConfig, components: &Matrix, x: &[f64]) -> Result<SigmaVector> {
    let n = components.cols();
    if config.sigma_mode == SigmaMode::FixedOnes {
        return Ok(SigmaVector::ones(n));
    }
    let cm = if config.normalize_components {
        ComponentMatrix::normalized(components)
    } else {
        ComponentMatrix::new(components.clone())
    };
    let sigma = match config.sigma_mode {
        SigmaMode::RidgeClosedForm => solve_sigma_ridge(&cm.h, x, config.ridge, config.clamp_sigma)?,
        SigmaMode::Nnls => {
            solve_sigma_nnls(&cm.h, x, NNLS_TOL, default_nnls_max_iter(n, x.len()))?.sigma
        }
        SigmaMode::FixedOnes => unreachable!(),
    };
    Ok(cm.unscale(sigma))
}
