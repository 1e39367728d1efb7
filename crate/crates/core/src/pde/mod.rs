//! Monotone finite-difference solvers for the parabolic, discounted and
//! ergodic equations of a pricing-kernel model.

pub mod grid;
pub mod operator;
pub mod solution;
pub mod solvers;
mod stencil;

pub use grid::{Axis, Grid, TimeGrid};
pub use operator::{grid_assumption_report, hamiltonian_h, truncate_z, Truncation, CFL_SAFETY};
pub use solution::{
    DeltaStep, ErgodicSolution, Interpolant, PdeSolution, ResidualStats, SolveInfo, TimeSlices,
};
pub use solvers::{
    central_gradient_bound, pde_residual, pde_residual_field, solve_discounted, solve_ergodic,
    solve_parabolic, ErgodicOptions, ParabolicOptions, ResidualTarget, StationaryOptions,
};
