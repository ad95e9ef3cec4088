//! Branch autoencoders with exact forward evaluation and hand-derived
//! backward passes.
//!
//! Every backward pass returns gradients with respect to the branch
//! parameters *and* the residual input, so the sweep engine can propagate
//! gradients through the cross-branch residual coupling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, Matrix};
use crate::model::BranchKind;

/// Affine map `weight * h + bias`; `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn apply(&self, h: &[f64]) -> Vec<f64> {
        let mut a = self.weight.matvec(h);
        axpy(1.0, &self.bias, &mut a);
        a
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchParams {
    Rank1Tied { u: Vec<f64> },
    Rank1Untied { u: Vec<f64>, v: Vec<f64> },
    LinearAe { w: Matrix, v: Matrix },
    MlpAe { encoder: Vec<Layer>, decoder: Vec<Layer> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    pub code: Vec<f64>,
    pub recon: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchGradients {
    /// Same shape as the owning [`BranchParams`].
    pub params: BranchParams,
    /// Gradient with respect to the (unmasked) residual input.
    pub input: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, n, 1.0);
        if linalg::normalize(&mut v) > 1e-12 {
            return v;
        }
    }
}

fn gaussian_layer(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Layer {
    let std = 1.0 / (input as f64).sqrt();
    let weight = Matrix::from_vec(output, input, gaussian_vec(rng, output * input, std))
        .expect("sized by construction");
    Layer {
        weight,
        bias: vec![0.0; output],
    }
}

/// Draws initial parameters for one branch. Deterministic in `seed`.
pub fn init_branch(kind: &BranchKind, dim: usize, seed: u64) -> Result<BranchParams> {
    if dim == 0 {
        return Err(Error::Config("branch dimension must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        BranchKind::Rank1Tied => BranchParams::Rank1Tied {
            u: unit_vec(&mut rng, dim),
        },
        BranchKind::Rank1Untied => {
            let u = unit_vec(&mut rng, dim);
            let v = unit_vec(&mut rng, dim);
            BranchParams::Rank1Untied { u, v }
        }
        BranchKind::LinearAe { code_dim } => {
            if *code_dim == 0 {
                return Err(Error::Config("code_dim must be ≥ 1".into()));
            }
            let w = gaussian_layer(&mut rng, dim, *code_dim).weight;
            let v = gaussian_layer(&mut rng, *code_dim, dim).weight;
            BranchParams::LinearAe { w, v }
        }
        BranchKind::MlpAe { widths } => {
            if widths.len() < 2 || widths.contains(&0) {
                return Err(Error::Config(
                    "mlp widths need at least two positive entries".into(),
                ));
            }
            if widths[0] != dim {
                return Err(Error::Config(format!(
                    "mlp input width {} does not match data dimension {dim}",
                    widths[0]
                )));
            }
            let encoder = widths
                .windows(2)
                .map(|w| gaussian_layer(&mut rng, w[0], w[1]))
                .collect();
            let decoder = widths
                .windows(2)
                .rev()
                .map(|w| gaussian_layer(&mut rng, w[1], w[0]))
                .collect();
            BranchParams::MlpAe { encoder, decoder }
        }
    })
}

fn masked_input(r: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => linalg::hadamard(m, r),
        None => r.to_vec(),
    }
}

impl BranchParams {
    pub fn input_dim(&self) -> usize {
        match self {
            BranchParams::Rank1Tied { u } | BranchParams::Rank1Untied { u, .. } => u.len(),
            BranchParams::LinearAe { w, .. } => w.cols(),
            BranchParams::MlpAe { encoder, .. } => encoder[0].input_dim(),
        }
    }

    pub fn code_dim(&self) -> usize {
        match self {
            BranchParams::Rank1Tied { .. } | BranchParams::Rank1Untied { .. } => 1,
            BranchParams::LinearAe { w, .. } => w.rows(),
            BranchParams::MlpAe { encoder, .. } => encoder.last().map_or(0, Layer::output_dim),
        }
    }

    /// Decoder direction of a rank-1 branch.
    pub fn rank1_direction(&self) -> Option<&[f64]> {
        match self {
            BranchParams::Rank1Tied { u } | BranchParams::Rank1Untied { u, .. } => Some(u),
            _ => None,
        }
    }

    pub fn check_shape(&self, kind: &BranchKind, dim: usize) -> Result<()> {
        let ok = match (self, kind) {
            (BranchParams::Rank1Tied { u }, BranchKind::Rank1Tied) => u.len() == dim,
            (BranchParams::Rank1Untied { u, v }, BranchKind::Rank1Untied) => {
                u.len() == dim && v.len() == dim
            }
            (BranchParams::LinearAe { w, v }, BranchKind::LinearAe { code_dim }) => {
                w.rows() == *code_dim
                    && w.cols() == dim
                    && v.rows() == dim
                    && v.cols() == *code_dim
            }
            (BranchParams::MlpAe { encoder, decoder }, BranchKind::MlpAe { widths }) => {
                let m = widths.len().saturating_sub(1);
                encoder.len() == m
                    && decoder.len() == m
                    && widths.first() == Some(&dim)
                    && encoder.iter().enumerate().all(|(l, layer)| {
                        layer.input_dim() == widths[l]
                            && layer.output_dim() == widths[l + 1]
                            && layer.bias.len() == widths[l + 1]
                    })
                    && decoder.iter().enumerate().all(|(l, layer)| {
                        layer.input_dim() == widths[m - l]
                            && layer.output_dim() == widths[m - l - 1]
                            && layer.bias.len() == widths[m - l - 1]
                    })
            }
            _ => false,
        };
        if !ok {
            return Err(Error::shape(format!(
                "parameters do not match {kind:?} at dimension {dim}"
            )));
        }
        if !self.param_slices().iter().all(|s| linalg::all_finite(s)) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> BranchParams {
        match self {
            BranchParams::Rank1Tied { u } => BranchParams::Rank1Tied {
                u: vec![0.0; u.len()],
            },
            BranchParams::Rank1Untied { u, v } => BranchParams::Rank1Untied {
                u: vec![0.0; u.len()],
                v: vec![0.0; v.len()],
            },
            BranchParams::LinearAe { w, v } => BranchParams::LinearAe {
                w: Matrix::zeros(w.rows(), w.cols()),
                v: Matrix::zeros(v.rows(), v.cols()),
            },
            BranchParams::MlpAe { encoder, decoder } => BranchParams::MlpAe {
                encoder: encoder.iter().map(Layer::zeros_like).collect(),
                decoder: decoder.iter().map(Layer::zeros_like).collect(),
            },
        }
    }

    /// All parameter storage, in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            BranchParams::Rank1Tied { u } => vec![u],
            BranchParams::Rank1Untied { u, v } => vec![u, v],
            BranchParams::LinearAe { w, v } => vec![w.as_slice(), v.as_slice()],
            BranchParams::MlpAe { encoder, decoder } => encoder
                .iter()
                .chain(decoder)
                .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
                .collect(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            BranchParams::Rank1Tied { u } => vec![u],
            BranchParams::Rank1Untied { u, v } => vec![u, v],
            BranchParams::LinearAe { w, v } => vec![w.as_mut_slice(), v.as_mut_slice()],
            BranchParams::MlpAe { encoder, decoder } => encoder
                .iter_mut()
                .chain(decoder.iter_mut())
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    /// `self += alpha * other` (shapes must agree).
    pub fn add_scaled(&mut self, alpha: f64, other: &BranchParams) {
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            axpy(alpha, src, dst);
        }
    }

    pub fn scale_params(&mut self, s: f64) {
        for p in self.param_slices_mut() {
            p.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.param_slices().iter().map(|s| dot(s, s)).sum()
    }

    /// Rescales the rank-1 decoder direction `u` to unit length. For the
    /// untied variant the scale moves into `v` so the operator is unchanged.
    pub fn normalize_rank1(&mut self) {
        match self {
            BranchParams::Rank1Tied { u } => {
                linalg::normalize(u);
            }
            BranchParams::Rank1Untied { u, v } => {
                let n = linalg::normalize(u);
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x *= n);
                }
            }
            _ => {}
        }
    }

    fn check_input(&self, r: &[f64], mask: Option<&[f64]>) -> Result<()> {
        let d = self.input_dim();
        if r.len() != d {
            return Err(Error::shape(format!(
                "residual has length {}, branch expects {d}",
                r.len()
            )));
        }
        if let Some(m) = mask {
            if m.len() != d {
                return Err(Error::shape(format!(
                    "mask has length {}, branch expects {d}",
                    m.len()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates the branch on residual `r`, optionally premultiplied by `mask`.
    pub fn forward(&self, r: &[f64], mask: Option<&[f64]>) -> Result<BranchOutput> {
        self.check_input(r, mask)?;
        let input = masked_input(r, mask);
        Ok(match self {
            BranchParams::Rank1Tied { u } => {
                let z = dot(u, &input);
                BranchOutput {
                    code: vec![z],
                    recon: linalg::scale(z, u),
                }
            }
            BranchParams::Rank1Untied { u, v } => {
                let z = dot(v, &input);
                BranchOutput {
                    code: vec![z],
                    recon: linalg::scale(z, u),
                }
            }
            BranchParams::LinearAe { w, v } => {
                let z = w.matvec(&input);
                let recon = v.matvec(&z);
                BranchOutput { code: z, recon }
            }
            BranchParams::MlpAe { encoder, decoder } => {
                let acts = mlp_activations(encoder, decoder, input);
                BranchOutput {
                    code: acts[encoder.len()].clone(),
                    recon: acts.last().cloned().unwrap_or_default(),
                }
            }
        })
    }

    /// Gradients of `<recon_grad, xhat> + <code_grad, z>` with respect to the
    /// parameters and the residual `r`.
    pub fn backward(
        &self,
        r: &[f64],
        mask: Option<&[f64]>,
        recon_grad: &[f64],
        code_grad: &[f64],
    ) -> Result<BranchGradients> {
        self.check_input(r, mask)?;
        let d = self.input_dim();
        if recon_grad.len() != d {
            return Err(Error::shape(format!(
                "reconstruction gradient has length {}, expected {d}",
                recon_grad.len()
            )));
        }
        if code_grad.len() != self.code_dim() {
            return Err(Error::shape(format!(
                "code gradient has length {}, expected {}",
                code_grad.len(),
                self.code_dim()
            )));
        }
        let input = masked_input(r, mask);
        let (params, input_grad) = match self {
            BranchParams::Rank1Tied { u } => {
                // L = z (g.u + c) with z = u.r'
                let z = dot(u, &input);
                let coeff = dot(recon_grad, u) + code_grad[0];
                let mut gu = linalg::scale(coeff, &input);
                axpy(z, recon_grad, &mut gu);
                (BranchParams::Rank1Tied { u: gu }, linalg::scale(coeff, u))
            }
            BranchParams::Rank1Untied { u, v } => {
                let z = dot(v, &input);
                let coeff = dot(recon_grad, u) + code_grad[0];
                let gu = linalg::scale(z, recon_grad);
                let gv = linalg::scale(coeff, &input);
                (
                    BranchParams::Rank1Untied { u: gu, v: gv },
                    linalg::scale(coeff, v),
                )
            }
            BranchParams::LinearAe { w, v } => {
                let z = w.matvec(&input);
                let mut gz = v.matvec_t(recon_grad);
                axpy(1.0, code_grad, &mut gz);
                let mut gv = Matrix::zeros(v.rows(), v.cols());
                gv.add_outer(1.0, recon_grad, &z);
                let mut gw = Matrix::zeros(w.rows(), w.cols());
                gw.add_outer(1.0, &gz, &input);
                (BranchParams::LinearAe { w: gw, v: gv }, w.matvec_t(&gz))
            }
            BranchParams::MlpAe { encoder, decoder } => {
                mlp_backward(encoder, decoder, input, recon_grad, code_grad)
            }
        };
        let input_grad = match mask {
            Some(m) => linalg::hadamard(m, &input_grad),
            None => input_grad,
        };
        Ok(BranchGradients {
            params,
            input: input_grad,
        })
    }
}

/// Post-activation values of every layer, starting with the input itself.
/// Index `encoder.len()` is the code; the last entry is the reconstruction.
fn mlp_activations(encoder: &[Layer], decoder: &[Layer], input: Vec<f64>) -> Vec<Vec<f64>> {
    let n_layers = encoder.len() + decoder.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(input);
    for (l, layer) in encoder.iter().chain(decoder).enumerate() {
        let mut a = layer.apply(acts.last().expect("non-empty"));
        if l + 1 < n_layers {
            a.iter_mut().for_each(|x| *x = x.tanh());
        }
        acts.push(a);
    }
    acts
}

fn mlp_backward(
    encoder: &[Layer],
    decoder: &[Layer],
    input: Vec<f64>,
    recon_grad: &[f64],
    code_grad: &[f64],
) -> (BranchParams, Vec<f64>) {
    let acts = mlp_activations(encoder, decoder, input);
    let layers: Vec<&Layer> = encoder.iter().chain(decoder).collect();
    let n_layers = layers.len();
    let code_index = encoder.len();
    let mut grads: Vec<Layer> = layers.iter().map(|l| l.zeros_like()).collect();

    let mut g = recon_grad.to_vec();
    for l in (0..n_layers).rev() {
        if l + 1 == code_index {
            axpy(1.0, code_grad, &mut g);
        }
        if l + 1 < n_layers {
            for (gi, hi) in g.iter_mut().zip(&acts[l + 1]) {
                *gi *= 1.0 - hi * hi;
            }
        }
        grads[l].weight.add_outer(1.0, &g, &acts[l]);
        grads[l].bias.copy_from_slice(&g);
        g = layers[l].weight.matvec_t(&g);
    }
    let decoder_grads = grads.split_off(code_index);
    (
        BranchParams::MlpAe {
            encoder: grads,
            decoder: decoder_grads,
        },
        g,
    )
}
