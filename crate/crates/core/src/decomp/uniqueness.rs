use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::spec::ModelSpec;
use crate::pde::grid::Grid;
use crate::pde::solution::ErgodicSolution;
use crate::pde::solvers::{solve_ergodic, ErgodicOptions};

/// Agreement of ergodic pairs computed with different normalizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Base run, alternative anchor, alternative `δ₀`.
    pub lambdas: [f64; 3],
    pub lambda_spread: f64,
    /// Largest deviation of `u_a − u_b` from a constant over the grid, taken
    /// over both comparisons against the base run.
    pub shift_deviation: f64,
}

/// Half the range of `a − b`: the sup-distance from the best constant shift.
fn shift_deviation(a: &ErgodicSolution, b: &ErgodicSolution) -> f64 {
    let (lo, hi) = a
        .u()
        .iter()
        .zip(b.u())
        .map(|(x, y)| x - y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    0.5 * (hi - lo)
}

pub fn uniqueness_diagnostic(
    model: &ModelSpec,
    grid: &Grid,
    opts: &ErgodicOptions,
    alt_anchor: &[f64],
    alt_delta0: f64,
) -> Result<UniquenessReport> {
    if alt_delta0 == opts.delta0 {
        return Err(Error::Config("the alternative δ₀ must differ from the base one".into()));
    }
    let base = solve_ergodic(model, grid, opts)?;
    let moved = solve_ergodic(model, grid, &ErgodicOptions { anchor: Some(alt_anchor.to_vec()), ..opts.clone() })?;
    if moved.anchor == base.anchor {
        return Err(Error::Config("the alternative anchor maps to the same grid node".into()));
    }
    let rescaled = solve_ergodic(model, grid, &ErgodicOptions { delta0: alt_delta0, ..opts.clone() })?;
    let lambdas = [base.lambda, moved.lambda, rescaled.lambda];
    let lo = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(UniquenessReport {
        lambdas,
        lambda_spread: hi - lo,
        shift_deviation: shift_deviation(&base, &moved).max(shift_deviation(&base, &rescaled)),
    })
}
