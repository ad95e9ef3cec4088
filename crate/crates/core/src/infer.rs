//! Per-sample inference: components from the sweeps and a fitted `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::loss::{composite_loss, LossBreakdown};
use crate::model::{DecomposerModel, SigmaVector};
use crate::sigma::estimate_sigma;
use crate::sweep::run_sweeps;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub sigma: SigmaVector,
    /// `xhat_i` from sweeps run at `sigma`.
    pub components: Vec<Vec<f64>>,
    /// `sum_i sigma_i xhat_i`.
    pub reconstruction: Vec<f64>,
    pub loss: LossBreakdown,
}

/// Sweeps at all-ones give the components `sigma` is fitted to; the reported
/// components come from a second pass at the fitted `sigma`.
pub fn decompose(model: &DecomposerModel, x: &[f64]) -> Result<Decomposition> {
    let first = run_sweeps(model, x, &SigmaVector::ones(model.n_branches()))?;
    let sigma = estimate_sigma(&model.config, &first.component_matrix(), x)?;
    let state = run_sweeps(model, x, &sigma)?;
    let loss = composite_loss(x, &state, model.config.lambda_s, model.config.lambda_perp)?;
    Ok(Decomposition {
        components: state.components(),
        reconstruction: state.reconstruction,
        sigma,
        loss,
    })
}

/// `sum_i sigma_i components[i]`, accumulated in index order.
pub fn weighted_sum(components: &[Vec<f64>], sigma: &[f64]) -> Result<Vec<f64>> {
    if components.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "{} sigma values for {} components",
            sigma.len(),
            components.len()
        )));
    }
    let d = components.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (c, s) in components.iter().zip(sigma) {
        if c.len() != d {
            return Err(Error::Shape("components differ in length".into()));
        }
        axpy(*s, c, &mut out);
    }
    Ok(out)
}
