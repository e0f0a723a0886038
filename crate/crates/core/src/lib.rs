//! Stagewise and conditional-gradient path algorithms for regularized
//! estimation, with closed-form linear minimization steps for the common
//! sparsity-inducing regularizers and a dual routine for generalized fused
//! problems.

pub mod engine;
pub mod error;
pub mod frankwolfe;
pub mod genlasso;
pub mod linalg;
pub mod losses;
pub mod oracle;
pub mod regularizers;
pub mod state;

pub use error::{Result, StagewiseError};
pub use state::{State, StateShape};
