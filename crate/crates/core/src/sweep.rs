//! All-but-one residual sweeps.
//!
//! Branch `i` is fed `r_i = x - sum_{j != i} sigma_j xhat_j`. A Gauss-Seidel
//! sweep updates branches in order and each residual sees the freshest
//! neighbours; a Jacobi sweep builds every residual from the previous sweep.
//! After each branch evaluation the reconstruction is relaxed,
//! `xhat_i <- (1 - alpha) xhat_i + alpha * raw`, starting from `xhat_i = 0`.

use crate::branches::BranchParams;
use crate::error::{Error, Result};
use crate::linalg::{self, axpy, Matrix};
use crate::model::{DecomposerModel, ResidualGradMode, Schedule, SigmaVector};

/// Magnitude beyond which an intermediate is treated as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// One branch evaluation inside a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchStep {
    pub residual: Vec<f64>,
    pub code: Vec<f64>,
    /// Reconstruction after relaxation.
    pub recon: Vec<f64>,
}

/// Full forward record for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepState {
    pub schedule: Schedule,
    pub sigma: SigmaVector,
    /// Branch processing order used within each sweep.
    pub order: Vec<usize>,
    /// `steps[t][i]` is branch `i` in sweep `t + 1`.
    pub steps: Vec<Vec<BranchStep>>,
    /// `sum_i sigma_i xhat_i` over the last sweep.
    pub reconstruction: Vec<f64>,
}

impl SweepState {
    pub fn n_branches(&self) -> usize {
        self.sigma.len()
    }

    pub fn sweeps(&self) -> usize {
        self.steps.len()
    }

    fn last(&self) -> &[BranchStep] {
        self.steps.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Final component reconstructions `xhat_i`.
    pub fn components(&self) -> Vec<Vec<f64>> {
        self.last().iter().map(|s| s.recon.clone()).collect()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.last()[i].recon
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.last()[i].code
    }

    /// `H = [xhat_1 ... xhat_N]`, `d x N`.
    pub fn component_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.components()).expect("components share one length")
    }
}

/// `x - sum_{j != i} sigma_j recons[j]`, summing in index order.
pub fn compute_residual(
    x: &[f64],
    recons: &[Vec<f64>],
    sigma: &[f64],
    i: usize,
) -> Result<Vec<f64>> {
    if i >= recons.len() {
        return Err(Error::usage(format!(
            "branch index {i} out of range for {} branches",
            recons.len()
        )));
    }
    if sigma.len() != recons.len() {
        return Err(Error::shape(format!(
            "{} sigma values for {} branches",
            sigma.len(),
            recons.len()
        )));
    }
    if let Some(bad) = recons.iter().find(|r| r.len() != x.len()) {
        return Err(Error::shape(format!(
            "reconstruction of length {} against input of length {}",
            bad.len(),
            x.len()
        )));
    }
    Ok(residual_unchecked(x, recons, sigma, i))
}

fn residual_unchecked(x: &[f64], recons: &[Vec<f64>], sigma: &[f64], i: usize) -> Vec<f64> {
    let mut r = x.to_vec();
    for (j, rec) in recons.iter().enumerate() {
        if j != i && sigma[j] != 0.0 {
            axpy(-sigma[j], rec, &mut r);
        }
    }
    r
}

fn relax(alpha: f64, old: &[f64], raw: Vec<f64>) -> Vec<f64> {
    if alpha == 1.0 {
        return raw;
    }
    old.iter()
        .zip(&raw)
        .map(|(o, n)| (1.0 - alpha) * o + alpha * n)
        .collect()
}

fn guard(v: &[f64], sweep: usize, branch: usize, what: &str) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::Divergence {
            sweep,
            branch,
            detail: format!("{what} reached {bad:e}"),
        });
    }
    Ok(())
}

/// Runs `model.config.sweeps` sweeps on `x` with fixed `sigma`, processing
/// branches in index order.
pub fn run_sweeps(model: &DecomposerModel, x: &[f64], sigma: &SigmaVector) -> Result<SweepState> {
    let order: Vec<usize> = (0..model.n_branches()).collect();
    run_sweeps_ordered(model, x, sigma, &order)
}

/// Like [`run_sweeps`] with an explicit within-sweep processing order.
pub fn run_sweeps_ordered(
    model: &DecomposerModel,
    x: &[f64],
    sigma: &SigmaVector,
    order: &[usize],
) -> Result<SweepState> {
    let n = model.n_branches();
    let d = model.dim;
    if x.len() != d {
        return Err(Error::shape(format!("input has length {}, model expects {d}", x.len())));
    }
    if sigma.len() != n {
        return Err(Error::shape(format!("{} sigma values for {n} branches", sigma.len())));
    }
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::usage("processing order must be a permutation of the branches"));
    }
    let alpha = model.config.damping;
    let schedule = model.config.schedule;

    let mut current = vec![vec![0.0; d]; n];
    let mut steps = Vec::with_capacity(model.config.sweeps);
    for t in 1..=model.config.sweeps {
        let previous = current.clone();
        let mut record: Vec<Option<BranchStep>> = vec![None; n];
        for &i in order {
            let neighbours = match schedule {
                Schedule::GaussSeidel => &current,
                Schedule::Jacobi => &previous,
            };
            let residual = residual_unchecked(x, neighbours, sigma, i);
            guard(&residual, t, i, "residual")?;
            let out = model.branches[i].forward(&residual, model.mask(i))?;
            guard(&out.code, t, i, "code")?;
            guard(&out.recon, t, i, "reconstruction")?;
            let recon = relax(alpha, &previous[i], out.recon);
            current[i] = recon.clone();
            record[i] = Some(BranchStep {
                residual,
                code: out.code,
                recon,
            });
        }
        steps.push(record.into_iter().map(|s| s.expect("every branch visited")).collect());
    }

    let mut reconstruction = vec![0.0; d];
    for (i, c) in current.iter().enumerate() {
        axpy(sigma[i], c, &mut reconstruction);
    }
    Ok(SweepState {
        schedule,
        sigma: sigma.clone(),
        order: order.to_vec(),
        steps,
        reconstruction,
    })
}

/// Reverse-mode pass through the sweeps recorded in `state`.
///
/// `recon_grads[i]` is the loss gradient with respect to the final component
/// `xhat_i` and `code_grads[i]` with respect to the final code `z_i`. Returns
/// the accumulated parameter gradient of every branch. `sigma` is constant.
pub fn sweep_backward(
    model: &DecomposerModel,
    state: &SweepState,
    recon_grads: &[Vec<f64>],
    code_grads: &[Vec<f64>],
) -> Result<Vec<BranchParams>> {
    let n = model.n_branches();
    let d = model.dim;
    if state.n_branches() != n
        || state.sweeps() != model.config.sweeps
        || state.schedule != model.config.schedule
        || state.steps.iter().any(|s| s.len() != n)
    {
        return Err(Error::usage("sweep state does not match the model configuration"));
    }
    if recon_grads.len() != n || code_grads.len() != n {
        return Err(Error::shape(format!("need upstream gradients for {n} branches")));
    }
    if recon_grads.iter().any(|g| g.len() != d) {
        return Err(Error::shape("reconstruction gradient length differs from model dim"));
    }
    let alpha = model.config.damping;
    let coupled = model.config.residual_grad_mode == ResidualGradMode::FullUnroll;
    let sigma = state.sigma.as_slice();

    let mut param_grads: Vec<BranchParams> =
        model.branches.iter().map(BranchParams::zeros_like).collect();
    // adjoint of the current value of each xhat_j
    let mut adj: Vec<Vec<f64>> = recon_grads.to_vec();
    let zero_codes: Vec<Vec<f64>> = model.branches.iter().map(|b| vec![0.0; b.code_dim()]).collect();

    for t in (0..state.sweeps()).rev() {
        let codes = if t + 1 == state.sweeps() { code_grads } else { &zero_codes };
        match state.schedule {
            Schedule::GaussSeidel => {
                for &i in state.order.iter().rev() {
                    let step = &state.steps[t][i];
                    let g_new = std::mem::take(&mut adj[i]);
                    let g_raw = linalg::scale(alpha, &g_new);
                    let g = model.branches[i].backward(&step.residual, model.mask(i), &g_raw, &codes[i])?;
                    param_grads[i].add_scaled(1.0, &g.params);
                    adj[i] = if alpha == 1.0 {
                        vec![0.0; d]
                    } else {
                        linalg::scale(1.0 - alpha, &g_new)
                    };
                    if coupled {
                        for j in (0..n).filter(|&j| j != i) {
                            axpy(-sigma[j], &g.input, &mut adj[j]);
                        }
                    }
                }
            }
            Schedule::Jacobi => {
                let mut adj_prev = vec![vec![0.0; d]; n];
                for i in 0..n {
                    let step = &state.steps[t][i];
                    let g_raw = linalg::scale(alpha, &adj[i]);
                    let g = model.branches[i].backward(&step.residual, model.mask(i), &g_raw, &codes[i])?;
                    param_grads[i].add_scaled(1.0, &g.params);
                    if alpha != 1.0 {
                        axpy(1.0 - alpha, &adj[i], &mut adj_prev[i]);
                    }
                    if coupled {
                        for j in (0..n).filter(|&j| j != i) {
                            axpy(-sigma[j], &g.input, &mut adj_prev[j]);
                        }
                    }
                }
                adj = adj_prev;
            }
        }
    }
    Ok(param_grads)
}
