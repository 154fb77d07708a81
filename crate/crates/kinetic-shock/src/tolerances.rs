//! Numerical tolerances shared across modules.

/// Quadrature moment tolerance at the default resolution (n=16, R=6).
pub const MOMENT_TOL: f64 = 1e-6;
/// Moment tolerance used to reject a grid outright.
pub const GRID_REJECT_TOL: f64 = 1e-3;
/// Conservation tolerance for collision moments, relative to the squared norm.
pub const CONSERVATION_TOL: f64 = 10.0 * MOMENT_TOL;
/// Relative symmetry defect tolerance for assembled operators.
pub const SYM_TOL: f64 = 1e-8;
/// Relative tolerance for finite-difference Jacobian cross-checks.
pub const FD_TOL: f64 = 1e-5;
/// Relative eigenvalue clustering tolerance.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Relative threshold used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Orthogonality tolerance for discrete bases.
pub const ORTHO_TOL: f64 = 1e-10;
/// Equilibrium Newton tolerance for small synthetic systems.
pub const EQUILIBRIUM_TOL_SYNTHETIC: f64 = 1e-10;
/// Equilibrium Newton tolerance for Galerkin kinetic systems.
pub const EQUILIBRIUM_TOL_KINETIC: f64 = 1e-11;
/// Rankine-Hugoniot residual tolerance.
pub const RH_TOL: f64 = 1e-10;
/// Relative residual tolerance of linear profile solves.
pub const LIN_TOL: f64 = 1e-9;
/// Fixed-point stopping tolerance in the weighted H^2 norm.
pub const FP_TOL: f64 = 1e-10;
/// Newton tolerance for viscous profile solves.
pub const ODE_TOL: f64 = 1e-11;
/// Maximum Newton iterations for equilibrium solves.
pub const EQUILIBRIUM_MAX_ITER: usize = 50;
