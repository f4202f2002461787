//! Steerable CNNs with implicit G-equivariant kernels for compact
//! subgroups of O(3).

pub mod check;
pub mod equivariant_nn;
pub mod error;
pub mod groups;
pub mod harmonics;
pub mod implicit_kernel;
pub mod irreps;
pub mod linalg;
pub mod nbody;
pub mod reps;
pub mod scalar;
pub mod steerable_conv;
pub mod tensor;

pub use error::{Error, Result};
pub use groups::GroupId;
pub use irreps::IrrepId;
pub use scalar::Real;
pub use tensor::{Tape, Tensor, Var};

pub type Mat = linalg::Mat<f64>;
pub type GroupElement = groups::GroupElement<f64>;
pub type Irrep = irreps::Irrep<f64>;
pub type Rep = reps::Rep<f64>;
