//! Alternating training.
//!
//! Each mini-batch first re-estimates the per-sample scales with the branch
//! weights frozen (step A), then takes one Adam step on the branch weights
//! with the scales frozen, backpropagating through the unrolled sweeps
//! (step B).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branches::BranchParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{composite_loss, loss_gradients, LossBreakdown};
use crate::model::{DecomposerModel, SigmaMode, SigmaVector};
use crate::optim::{Adam, AdamConfig};
use crate::sigma::estimate_sigma;
use crate::sweep::{run_sweeps, sweep_backward};

/// Number of consecutive epochs whose relative loss change must stay below
/// the tolerance before training stops early.
pub const CONVERGENCE_PATIENCE: usize = 5;

/// Raise the sweep count from `initial` to the model's configured value once
/// `switch_epoch` epochs have completed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub initial: usize,
    pub switch_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Relative change of the epoch mean loss treated as converged.
    pub tol: f64,
    pub adam: AdamConfig,
    pub sweep_schedule: Option<SweepSchedule>,
    /// Epochs at the start during which sigma is held at all-ones.
    pub sigma_warmup_epochs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            batch_size: 32,
            tol: 1e-6,
            adam: AdamConfig::default(),
            sweep_schedule: None,
            sigma_warmup_epochs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub sweeps: usize,
    pub loss: LossBreakdown,
    pub mean_sigma: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub converged: bool,
    pub reason: String,
}

impl TrainReport {
    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.wall_time_secs = 0.0);
        r
    }
}

/// Result of one weight update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Batch-mean loss evaluated before the update.
    pub loss: LossBreakdown,
    /// l2 norm of each branch's batch-mean gradient.
    pub grad_norms: Vec<f64>,
}

/// Step A: per-sample scales with the branch weights frozen. `warm[n]` is the
/// scale vector used inside the sweeps for sample `n`.
pub fn step_a_sigma(model: &DecomposerModel, batch: &[&[f64]], warm: &[SigmaVector]) -> Result<Vec<SigmaVector>> {
    if warm.len() != batch.len() {
        return Err(Error::usage("one warm-start sigma per sample is required"));
    }
    let n = model.n_branches();
    if model.config.sigma_mode == SigmaMode::FixedOnes {
        return Ok(vec![SigmaVector::ones(n); batch.len()]);
    }
    batch
        .par_iter()
        .zip(warm.par_iter())
        .map(|(x, s)| {
            let state = run_sweeps(model, x, s)?;
            estimate_sigma(&model.config, &state.component_matrix(), x)
        })
        .collect()
}

/// Batch-mean loss and per-branch parameter gradients under fixed `sigmas`.
pub fn batch_gradients(
    model: &DecomposerModel,
    batch: &[&[f64]],
    sigmas: &[SigmaVector],
) -> Result<(LossBreakdown, Vec<BranchParams>)> {
    if sigmas.len() != batch.len() {
        return Err(Error::usage("one sigma per sample is required"));
    }
    let cfg = &model.config;
    let per_sample: Vec<(LossBreakdown, Vec<BranchParams>)> = batch
        .par_iter()
        .zip(sigmas.par_iter())
        .map(|(x, s)| {
            let state = run_sweeps(model, x, s)?;
            let loss = composite_loss(x, &state, cfg.lambda_s, cfg.lambda_perp)?;
            let up = loss_gradients(x, &state, cfg.lambda_s, cfg.lambda_perp)?;
            let grads = sweep_backward(model, &state, &up.recon, &up.code)?;
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total: Vec<BranchParams> = model.branches.iter().map(BranchParams::zeros_like).collect();
    let mut losses = Vec::with_capacity(per_sample.len());
    for (loss, grads) in &per_sample {
        losses.push(*loss);
        for (acc, g) in total.iter_mut().zip(grads) {
            acc.add_scaled(scale, g);
        }
    }
    Ok((LossBreakdown::mean(&losses), total))
}

/// Step B: one Adam update of all branch weights with `sigmas` frozen.
pub fn step_b_weights(
    model: &mut DecomposerModel,
    batch: &[&[f64]],
    sigmas: &[SigmaVector],
    adam: &mut Adam,
) -> Result<StepOutcome> {
    let (loss, grads) = batch_gradients(model, batch, sigmas)?;
    let mut grad_norms = Vec::with_capacity(grads.len());
    for (i, g) in grads.iter().enumerate() {
        let norm = g.sq_norm().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteGradient { branch: i });
        }
        grad_norms.push(norm);
    }
    let mut params: Vec<Vec<f64>> = model.branches.iter().map(BranchParams::to_flat).collect();
    let flat_grads: Vec<Vec<f64>> = grads.iter().map(BranchParams::to_flat).collect();
    adam.update(&mut params, &flat_grads);
    for (b, p) in model.branches.iter_mut().zip(&params) {
        b.set_flat(p);
    }
    if model.config.normalize_components {
        model.renormalize();
    }
    Ok(StepOutcome { loss, grad_norms })
}

pub fn new_optimizer(model: &DecomposerModel, config: AdamConfig) -> Adam {
    let sizes: Vec<usize> = model.branches.iter().map(BranchParams::num_params).collect();
    Adam::new(config, &sizes)
}

/// Runs alternating training over `dataset`.
pub struct Trainer {
    pub model: DecomposerModel,
    pub options: TrainOptions,
    adam: Adam,
    sigmas: Vec<SigmaVector>,
}

impl Trainer {
    pub fn new(model: DecomposerModel, options: TrainOptions) -> Self {
        let adam = new_optimizer(&model, options.adam);
        Trainer {
            model,
            options,
            adam,
            sigmas: Vec::new(),
        }
    }

    /// Latest per-sample scales from step A, indexed like the dataset.
    pub fn sigmas(&self) -> &[SigmaVector] {
        &self.sigmas
    }

    pub fn train(&mut self, dataset: &Dataset) -> Result<TrainReport> {
        let opts = self.options.clone();
        if opts.epochs == 0 {
            return Ok(TrainReport {
                epochs: vec![],
                converged: false,
                reason: "no epochs requested".into(),
            });
        }
        if dataset.samples.is_empty() {
            return Err(Error::usage("cannot train on an empty dataset"));
        }
        if dataset.dim != self.model.dim {
            return Err(Error::shape(format!(
                "dataset dimension {} differs from model dimension {}",
                dataset.dim, self.model.dim
            )));
        }
        if opts.batch_size == 0 || opts.batch_size > dataset.samples.len() {
            return Err(Error::usage(format!(
                "batch size {} must lie in 1..={}",
                opts.batch_size,
                dataset.samples.len()
            )));
        }
        let n = self.model.n_branches();
        let target_sweeps = self.model.config.sweeps;
        let target_mode = self.model.config.sigma_mode;
        if self.sigmas.len() != dataset.samples.len() {
            self.sigmas = vec![SigmaVector::ones(n); dataset.samples.len()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.config.seed ^ 0x5EED_0F_5A_AA11);
        let mut order: Vec<usize> = (0..dataset.samples.len()).collect();

        let mut report = TrainReport {
            epochs: Vec::with_capacity(opts.epochs),
            converged: false,
            reason: "epoch limit reached".into(),
        };
        let mut calm_epochs = 0;
        let result = (|| -> Result<()> {
            for epoch in 0..opts.epochs {
                let started = Instant::now();
                self.model.config.sweeps = match opts.sweep_schedule {
                    Some(s) if epoch < s.switch_epoch => s.initial.max(1),
                    _ => target_sweeps,
                };
                self.model.config.sigma_mode = if epoch < opts.sigma_warmup_epochs {
                    SigmaMode::FixedOnes
                } else {
                    target_mode
                };
                order.shuffle(&mut rng);

                let mut losses = Vec::with_capacity(order.len());
                let mut grad_sum = vec![0.0; n];
                let mut batches = 0usize;
                for chunk in order.chunks(opts.batch_size) {
                    let mut chunk = chunk.to_vec();
                    chunk.sort_unstable();
                    let chunk = chunk.as_slice();
                    let batch: Vec<&[f64]> = chunk.iter().map(|&k| dataset.samples[k].x.as_slice()).collect();
                    let warm: Vec<SigmaVector> = chunk.iter().map(|&k| self.sigmas[k].clone()).collect();
                    let sigmas = step_a_sigma(&self.model, &batch, &warm)?;
                    let outcome = step_b_weights(&mut self.model, &batch, &sigmas, &mut self.adam)?;
                    for _ in chunk {
                        losses.push(outcome.loss);
                    }
                    for (acc, g) in grad_sum.iter_mut().zip(&outcome.grad_norms) {
                        *acc += g;
                    }
                    batches += 1;
                    for (&k, s) in chunk.iter().zip(sigmas) {
                        self.sigmas[k] = s;
                    }
                }

                let mut mean_sigma = vec![0.0; n];
                for s in &self.sigmas {
                    for (m, v) in mean_sigma.iter_mut().zip(s.iter()) {
                        *m += v;
                    }
                }
                let count = self.sigmas.len() as f64;
                mean_sigma.iter_mut().for_each(|m| *m /= count);

                let loss = LossBreakdown::mean(&losses);
                let settled = epoch >= opts.sigma_warmup_epochs
                    && opts.sweep_schedule.is_none_or(|s| epoch >= s.switch_epoch);
                if !settled {
                    calm_epochs = 0;
                } else if let Some(prev) = report.epochs.last() {
                    let change = (loss.total - prev.loss.total).abs() / prev.loss.total.abs().max(f64::MIN_POSITIVE);
                    calm_epochs = if change < opts.tol { calm_epochs + 1 } else { 0 };
                }
                report.epochs.push(EpochReport {
                    epoch,
                    sweeps: self.model.config.sweeps,
                    loss,
                    mean_sigma,
                    grad_norms: grad_sum.iter().map(|g| g / batches as f64).collect(),
                    wall_time_secs: started.elapsed().as_secs_f64(),
                });
                if calm_epochs >= CONVERGENCE_PATIENCE {
                    report.converged = true;
                    report.reason = format!(
                        "relative loss change below {:e} for {CONVERGENCE_PATIENCE} epochs",
                        opts.tol
                    );
                    break;
                }
            }
            Ok(())
        })();
        self.model.config.sweeps = target_sweeps;
        self.model.config.sigma_mode = target_mode;
        result?;
        Ok(report)
    }
}

/// Trains `model` on `dataset`, returning the updated model and its report.
pub fn train(model: DecomposerModel, dataset: &Dataset, options: TrainOptions) -> Result<(DecomposerModel, TrainReport)> {
    let mut trainer = Trainer::new(model, options);
    let report = trainer.train(dataset)?;
    Ok((trainer.model, report))
}
