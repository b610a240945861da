//! Finite element gradient flow for the Landau-de Gennes Q-tensor model and
//! adjoint-based optimal control of its defects.
//!
//! The state is a symmetric traceless tensor field discretized with P1
//! elements and advanced by implicit Euler. Boundary (Robin) and distributed
//! controls are piecewise constant; reduced gradients come from the exact
//! discrete adjoint and drive a projected gradient method.

pub mod adjoint;
pub mod config;
pub mod control;
pub mod defects;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod qtensor;
pub mod quadrature;
pub mod run;

pub use adjoint::{solve_adjoint, AdjointTrajectory};
pub use config::{Preset, ProblemConfig};
pub use control::{
    Bound, Bounds, ControlSet, IterationRecord, OptimizationResult, OptimizerOptions,
    OptimizerStatus, Problem, Targets, TimeField, Weights,
};
pub use defects::{locate_defects, DefectReport};
pub use error::{Error, Result};
pub use fem::{interpolate, Discretization, Operators};
pub use forward::{Model, ModelParams, NewtonReport, SolverOptions, Trajectory};
pub use mesh::{DofMap, Mesh};
pub use qtensor::{Basis, BulkParams, BulkPotential, Dim, QCoeffs};
pub use run::Setup;
