//! Equilibrium solving, implicit differentiation and Jacobian regularization.

pub mod forward;
pub mod implicit;
pub mod jacreg;
pub mod map;
pub mod solver;

pub use forward::deq_forward;
pub use implicit::{implicit_backward, AdjointReport, BackwardConfig, ImplicitGrads};
pub use jacreg::{jacobian_reg, JacRegConfig, JacRegOutput};
pub use map::{FixedPointMap, ProcessorMap};
pub use solver::{solve_fixed_point, SolveResult, SolverConfig, SolverMethod, StopMode};
