//! Population-based training of TD3 agents with mixed first- and
//! second-order optimizers.
//!
//! The numeric core (`linalg`, `net`, `loss`, `curvature`, `optim`) is
//! generic over the scalar type; the RL layers run in `f64`.

pub mod checkpoint;
pub mod curvature;
pub mod envs;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod optim;
pub mod pbt;
pub mod scalar;
pub mod td3;

pub use error::{Error, Result};
pub use optim::{HyperparamSet, OptimizerKind};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type NetworkParams = net::NetworkParams<f64>;
pub type NetworkParams32 = net::NetworkParams<f32>;
pub type DenseLayer = net::DenseLayer<f64>;
pub type BackwardCapture = net::BackwardCapture<f64>;
pub type KroneckerBlocks = curvature::KroneckerBlocks<f64>;
pub type DiagCurvature = curvature::DiagCurvature<f64>;
pub type NetOptimizer = optim::NetOptimizer<f64>;
