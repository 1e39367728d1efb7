//! The long-term decomposition `D_t = e^{λt}·e^{u(X₀)−u(X_t)}·M_t·e^{K_t}`
//! along simulated paths, with martingale, monotonicity and BSDE checks.

mod bsde;
mod components;
mod engine;
mod uniqueness;
mod verify;

pub use bsde::verify_bsde_residual;
pub use components::{compute_components, reconstruct_d, Decomposition, IdentityStats};
pub use engine::MAX_EXCESS;
pub use uniqueness::{uniqueness_diagnostic, UniquenessReport};
pub use verify::{
    checkpoints, classical_k_norm, verify_controls, verify_martingales, Checkpoint, ControlReport, ResidualNorms,
    SimSettings, VerificationReport, K_TOLERANCE_STEPS,
};

#[cfg(test)]
mod tests;
