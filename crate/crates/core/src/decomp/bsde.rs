use rayon::prelude::*;

use super::engine::{Engine, Tracker};
use super::verify::ResidualNorms;
use crate::error::{Error, Result};
use crate::model::spec::ModelSpec;
use crate::pde::solution::ErgodicSolution;
use crate::sim::simulate::ScenarioBatch;

/// Pathwise residual of the ergodic BSDE on `[s, T]` with `Y = u(X)`,
/// `Z = σᵀD_xu(X)` and `K` accumulated from the Hamiltonian, all integrals
/// by the left-endpoint rule. `s` is rounded to the nearest step.
pub fn verify_bsde_residual(
    batch: &ScenarioBatch,
    solution: &ErgodicSolution,
    model: &ModelSpec,
    s: f64,
) -> Result<ResidualNorms> {
    if !(s >= 0.0) || s > batch.horizon() * (1.0 + 1e-12) {
        return Err(Error::Config(format!("start time {s} is outside [0, {}]", batch.horizon())));
    }
    let e = Engine::new(model, solution)?;
    let n = batch.n_steps;
    let start = ((s / batch.dt).round() as usize).min(n);
    let residuals = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut tr = Tracker::new(&e, p, batch.x_at(p, 0))?;
            let mut at_s = None;
            batch.replay(model, p, |st| {
                let before = tr.bsde_sum();
                let snap = tr.step(st)?;
                if st.n == start {
                    at_s = Some((snap.u, snap.k, before));
                }
                Ok(())
            })?;
            let end = tr.finish(batch.horizon(), batch.x_at(p, n))?;
            let (u_s, k_s, b_s) = at_s.unwrap_or((end.u, end.k, tr.bsde_sum()));
            Ok((u_s - end.u - (tr.bsde_sum() - b_s) + (end.k - k_s)).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let count = residuals.len().max(1) as f64;
    Ok(ResidualNorms {
        max: residuals.iter().fold(0.0, |a, r| a.max(*r)),
        mean: residuals.iter().sum::<f64>() / count,
    })
}
