//! Differentiable rendering: gradients, finite-difference verification, and
//! parameter updates.

pub mod backward;
pub mod fdcheck;
pub mod grads;
pub mod optim;

pub use backward::{backward, backward_into, Upstream};
pub use fdcheck::{fd_check, FdConfig, FdReport, FdSample, PixelLoss, ProbeLoss};
pub use grads::{apply_step, perturb, ParamClass, ParamGrads, ParamId};
pub use optim::{sgd_step, Adam, LearningRates, Schedule};
