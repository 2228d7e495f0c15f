//! Solver library for the two-dimensional rotating Gross-Pitaevskii equation
//!
//! ```text
//! i du/dt = -Laplace(u) - Omega*Lz(u) + V*u + beta*|u|^2*u,   Lz = -i(x d/dy - y d/dx),
//! ```
//!
//! on the square (-R,R)^2 with homogeneous Dirichlet boundary conditions.
//! Space is discretized with P1 Lagrange finite elements on a uniform
//! right-triangle mesh; time stepping uses an arbitrary-order continuous
//! Galerkin collocation scheme cG(q) that conserves the discrete energy at the
//! time nodes. Each step solves q decoupled complex linear systems (direct
//! banded factorization, reused across steps) inside a fixed-point iteration.
//!
//! Modules follow the pipeline:
//! quadrature -> tableau (time-discretization constants) -> mesh -> operators
//! (sparse assembly) -> stepper (cG(q) march) -> diagnostics, with groundstate
//! providing initial data and config/io/convergence the CLI surface.

pub mod config;
pub mod convergence;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod groundstate;
pub mod io;
pub mod mesh;
pub mod operators;
pub mod quadrature;
pub mod sparse;
pub mod stepper;
pub mod tableau;

pub use error::{Error, Result};

/// Complex scalar used throughout the solver.
pub type C64 = num_complex::Complex64;
