//! Bilinear optimal control of a strongly degenerate parabolic equation on
//! Ω = (-1, 1):
//!
//! ```text
//! y_t - (a(x) y_x)_x = v χ_ω y   in (0, T) × Ω
//! a(x) y_x = 0                   at x = ±1
//! y(0) = y⁰
//! ```
//!
//! with `a(±1) = 0`, minimizing `½‖y(T) - y^d‖² + (α/2)‖v‖²` over controls
//! `m ≤ v ≤ M` on `ω_T`. The crate discretizes with piecewise-linear finite
//! elements and a θ-scheme, differentiates the discrete cost exactly through
//! the transpose scheme, runs a projected-gradient optimizer and checks the
//! maximum principles, stability bounds and optimality conditions numerically.

pub mod error;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod reduced;
pub mod solvers;
pub mod verification;

pub use error::{Error, Result};
pub use fields::{ControlField, ProblemSpec, Role, TimeGrid, Trajectory};
pub use geometry::{assemble, build_mesh, AssembledOperators, ControlRegion, DiffusionCoefficient, Grading, Mesh1D};
pub use solvers::{MassKind, SchemeOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
