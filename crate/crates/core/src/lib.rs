//! Decomposer networks.
//!
//! An input `x` is explained by `N` competing branch autoencoders. Branch `i`
//! sees the all-but-one residual `x - sum_{j != i} sigma_j * xhat_j`, and the
//! final reconstruction is the per-sample scaled sum `sum_i sigma_i * xhat_i`.
//! Branches are refined by Gauss-Seidel or Jacobi sweeps, `sigma` is fitted per
//! sample by ridge or nonnegative least squares, and branch weights are trained
//! by backpropagating through the unrolled sweeps.

pub mod branches;
pub mod data;
pub mod error;
pub mod infer;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod presets;
pub mod sigma;
pub mod svd;
pub mod sweep;
pub mod trainer;

pub use branches::{BranchGradients, BranchOutput, BranchParams};
pub use data::{Dataset, Sample, Standardization};
pub use error::{Error, Result};
pub use loss::LossBreakdown;
pub use model::{
    BranchKind, DecomposerModel, ModelConfig, ResidualGradMode, Schedule, SigmaMode, SigmaVector,
};
pub use sweep::SweepState;
pub use trainer::{TrainOptions, TrainReport, Trainer};
