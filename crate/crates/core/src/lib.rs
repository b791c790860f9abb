pub mod basis;
pub mod certify;
pub mod error;
pub mod galerkin;
pub mod oracle;
pub mod quadrature;
pub mod selftest;
pub mod sets;
pub mod solver;

pub use basis::BasisSpec;
pub use error::{Error, Result};
pub use galerkin::{LtiProblem, ParamVector};
pub use sets::SetDescription;
