//! Minimal differentiable compute core: dense tensors, the operations the
//! enhancement network needs, reverse-mode gradients, Adam, Kaiming
//! initialization and a finite-difference gradient checker.

mod adam;
pub(crate) mod conv;
mod gradcheck;
mod graph;
mod init;
mod layers;
pub mod ops;
pub(crate) mod resample;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_STEP, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use init::{kaiming_init, kaiming_init_1d, kaiming_normal};
pub use layers::{Conv1d, Conv1dLayer, Conv2d, Conv2dLayer};
pub use ops::ElementwiseKind;
pub use scalar::Scalar;
pub use tensor::Tensor;
