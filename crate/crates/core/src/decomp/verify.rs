use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::components::require_pricing;
use super::engine::{Engine, Snapshot, Tracker};
use crate::error::{Error, Result};
use crate::gcore::UncertaintySet;
use crate::model::spec::ModelSpec;
use crate::pde::solution::ErgodicSolution;
use crate::sim::control::VolControl;
use crate::sim::pricing::MeanEstimate;
use crate::sim::simulate::{ScenarioBatch, Step, Stepper};

/// A step counts as a monotonicity violation when `K` rises by more than
/// this multiple of `Δt`.
pub const K_TOLERANCE_STEPS: f64 = 5.0;

/// Simulation settings for the streaming checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Checkpoint steps `round(n·j/4)`, `j = 1..4`.
pub fn checkpoints(n_steps: usize) -> [usize; 4] {
    std::array::from_fn(|j| ((n_steps * (j + 1)) as f64 / 4.0).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    /// `|mean − 1|` in standard errors.
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub control: String,
    pub worst_case: bool,
    pub m_checkpoints: Vec<Checkpoint>,
    /// Largest checkpoint deviation of `mean M_t` from 1, in standard errors.
    pub m_deviation: f64,
    pub mek_checkpoints: Vec<Checkpoint>,
    pub mek_deviation: f64,
    pub k_violations: usize,
    pub k_terminal_mean: f64,
    pub k_terminal_max_abs: f64,
    pub k_max_abs: f64,
    pub identity_max: f64,
    pub identity_mean: f64,
    /// Residual of the ergodic BSDE over `[0, T]`.
    pub bsde: ResidualNorms,
    pub z_max: f64,
    /// True when the `G` maximizer of `H` was the same at every visited state.
    pub uniform_maximizer: bool,
    pub extrapolated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lambda: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub controls: Vec<ControlReport>,
    pub worst_case: usize,
    /// Total over all controls.
    pub k_violations: usize,
    /// `max |K_T|` under the worst-case policy where its maximizer is uniform.
    pub k_flatness: Option<f64>,
    /// Worst-case `max_t |mean(M_t e^{K_t}) − 1|` in standard errors.
    pub mek_deviation: f64,
    pub identity_error: f64,
    /// `sup |K|` with the uncertainty collapsed to its upper member.
    pub classical_k_norm: Option<f64>,
    pub bsde: ResidualNorms,
    /// Truncation level used by the solver, if any.
    pub z_bound: Option<f64>,
}

#[derive(Debug, Clone)]
struct PathSummary {
    m: [f64; 4],
    mek: [f64; 4],
    violations: usize,
    k_terminal: f64,
    k_max_abs: f64,
    id_max: f64,
    id_sum: f64,
    bsde: f64,
    z_max: f64,
    first: Option<usize>,
    switched: bool,
    extrapolated: usize,
}

fn summarize<R>(e: &Engine, path: usize, x0: &[f64], n_steps: usize, dt: f64, run: R) -> Result<PathSummary>
where
    R: FnOnce(&mut dyn FnMut(&Step) -> Result<()>) -> Result<()>,
{
    let cps = checkpoints(n_steps);
    let tol = K_TOLERANCE_STEPS * dt;
    let mut tr = Tracker::new(e, path, x0)?;
    let mut s = PathSummary {
        m: [1.0; 4],
        mek: [1.0; 4],
        violations: 0,
        k_terminal: 0.0,
        k_max_abs: 0.0,
        id_max: 0.0,
        id_sum: 0.0,
        bsde: 0.0,
        z_max: 0.0,
        first: None,
        switched: false,
        extrapolated: 0,
    };
    let mut u0 = 0.0;
    let mut record = |s: &mut PathSummary, n: usize, snap: &Snapshot, z: &[f64]| {
        if n == 0 {
            u0 = snap.u;
        }
        for (j, &c) in cps.iter().enumerate() {
            if c == n {
                s.m[j] = snap.ln_m.exp();
                s.mek[j] = (snap.ln_m + snap.k).exp();
            }
        }
        if snap.dk > tol {
            s.violations += 1;
        }
        s.k_max_abs = s.k_max_abs.max(snap.k.abs());
        let err = (snap.ln_d - snap.ln_d_rec).abs();
        s.id_max = s.id_max.max(err);
        s.id_sum += err;
        s.z_max = s.z_max.max(z.iter().map(|v| v * v).sum::<f64>().sqrt());
        if let Some(i) = snap.maximizer {
            match s.first {
                None => s.first = Some(i),
                Some(f) if f != i => s.switched = true,
                _ => {}
            }
        }
    };
    let mut x_end = x0.to_vec();
    run(&mut |st: &Step| {
        let snap = tr.step(st)?;
        record(&mut s, st.n, &snap, tr.z());
        if st.n + 1 == n_steps {
            x_end.copy_from_slice(st.x_next);
        }
        Ok(())
    })?;
    let snap = tr.finish(n_steps as f64 * dt, &x_end)?;
    record(&mut s, n_steps, &snap, tr.z());
    s.k_terminal = snap.k;
    // Y_0 − [Y_T + Σ drift − Σ Z·ΔB − (K_T − K_0)]
    s.bsde = u0 - snap.u - tr.bsde_sum() + snap.k;
    s.extrapolated = tr.extrapolated;
    Ok(s)
}

fn checkpoint_stats(times: &[f64; 4], samples: &[[f64; 4]]) -> Vec<Checkpoint> {
    (0..4)
        .map(|j| {
            let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let e = MeanEstimate::from_samples(&xs);
            Checkpoint { t: times[j], mean: e.mean, std_error: e.std_error, deviation: e.deviation(1.0) }
        })
        .collect()
}

fn control_report(label: String, worst_case: bool, n_steps: usize, dt: f64, paths: &[PathSummary]) -> ControlReport {
    let times = checkpoints(n_steps).map(|n| n as f64 * dt);
    let n = paths.len() as f64;
    let ms: Vec<[f64; 4]> = paths.iter().map(|p| p.m).collect();
    let meks: Vec<[f64; 4]> = paths.iter().map(|p| p.mek).collect();
    let m_checkpoints = checkpoint_stats(&times, &ms);
    let mek_checkpoints = checkpoint_stats(&times, &meks);
    let worst = |c: &[Checkpoint]| c.iter().fold(0.0f64, |a, c| a.max(c.deviation));
    let first = paths.iter().find_map(|p| p.first);
    let uniform = paths.iter().all(|p| !p.switched && (p.first.is_none() || p.first == first));
    let bsde_abs: Vec<f64> = paths.iter().map(|p| p.bsde.abs()).collect();
    ControlReport {
        control: label,
        worst_case,
        m_deviation: worst(&m_checkpoints),
        mek_deviation: worst(&mek_checkpoints),
        m_checkpoints,
        mek_checkpoints,
        k_violations: paths.iter().map(|p| p.violations).sum(),
        k_terminal_mean: paths.iter().map(|p| p.k_terminal).sum::<f64>() / n,
        k_terminal_max_abs: paths.iter().fold(0.0, |a, p| a.max(p.k_terminal.abs())),
        k_max_abs: paths.iter().fold(0.0, |a, p| a.max(p.k_max_abs)),
        identity_max: paths.iter().fold(0.0, |a, p| a.max(p.id_max)),
        identity_mean: paths.iter().map(|p| p.id_sum).sum::<f64>() / (n * (n_steps + 1) as f64),
        bsde: ResidualNorms {
            max: bsde_abs.iter().fold(0.0, |a, r| a.max(*r)),
            mean: bsde_abs.iter().sum::<f64>() / n,
        },
        z_max: paths.iter().fold(0.0, |a, p| a.max(p.z_max)),
        uniform_maximizer: uniform,
        extrapolated: paths.iter().map(|p| p.extrapolated).sum(),
    }
}

fn assemble(sol: &ErgodicSolution, horizon: f64, dt: f64, n_paths: usize, controls: Vec<ControlReport>, worst_case: usize) -> VerificationReport {
    let wc = &controls[worst_case];
    VerificationReport {
        lambda: sol.lambda,
        horizon,
        dt,
        n_paths,
        worst_case,
        k_violations: controls.iter().map(|c| c.k_violations).sum(),
        k_flatness: wc.uniform_maximizer.then_some(wc.k_terminal_max_abs),
        mek_deviation: wc.mek_deviation,
        identity_error: controls.iter().fold(0.0, |a, c| a.max(c.identity_max)),
        classical_k_norm: None,
        bsde: ResidualNorms {
            max: controls.iter().fold(0.0, |a, c| a.max(c.bsde.max)),
            mean: controls.iter().map(|c| c.bsde.mean).sum::<f64>() / controls.len() as f64,
        },
        z_bound: sol.solution.info.truncation,
        controls,
    }
}

fn check_family(n: usize, worst_case: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config("verification needs at least two controls".into()));
    }
    if worst_case >= n {
        return Err(Error::Config(format!("worst-case index {worst_case} is out of range")));
    }
    Ok(())
}

/// Verification over stored batches, one per control; `worst_case` indexes
/// the batch simulated under the feedback policy.
pub fn verify_martingales(
    model: &ModelSpec,
    solution: &ErgodicSolution,
    batches: &[ScenarioBatch],
    worst_case: usize,
) -> Result<VerificationReport> {
    check_family(batches.len(), worst_case)?;
    require_pricing(model, solution)?;
    let first = &batches[0];
    if batches.iter().any(|b| b.n_steps != first.n_steps || b.dt != first.dt || b.n_paths != first.n_paths) {
        return Err(Error::Config("batches must share the time grid and path count".into()));
    }
    let e = Engine::new(model, solution)?;
    let reports = batches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let paths = (0..b.n_paths)
                .into_par_iter()
                .map(|p| summarize(&e, p, b.x_at(p, 0), b.n_steps, b.dt, |v| b.replay(model, p, v)))
                .collect::<Result<Vec<_>>>()?;
            Ok(control_report(b.control.clone(), i == worst_case, b.n_steps, b.dt, &paths))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(solution, first.horizon(), first.dt, first.n_paths, reports, worst_case))
}

fn stream(e: &Engine, model: &ModelSpec, control: &VolControl, sim: &SimSettings) -> Result<(Vec<PathSummary>, usize, f64)> {
    let st = Stepper::new(model, control, &sim.x0, sim.horizon, sim.dt, sim.seed)?;
    let paths = (0..sim.n_paths)
        .into_par_iter()
        .map(|p| summarize(e, p, &sim.x0, st.n_steps, st.dt, |v| st.run(p, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok((paths, st.n_steps, st.dt))
}

/// Streaming verification: paths are simulated and reduced on the fly, with
/// the same numbers as [`verify_martingales`] on batches from the same seed.
pub fn verify_controls(
    model: &ModelSpec,
    solution: &ErgodicSolution,
    controls: &[VolControl],
    worst_case: usize,
    sim: &SimSettings,
) -> Result<VerificationReport> {
    check_family(controls.len(), worst_case)?;
    if !controls[worst_case].is_feedback() {
        return Err(Error::Config("the worst-case control must be a feedback policy".into()));
    }
    if sim.n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    require_pricing(model, solution)?;
    let e = Engine::new(model, solution)?;
    let mut reports = Vec::with_capacity(controls.len());
    let mut grid = (0, sim.dt);
    for (i, c) in controls.iter().enumerate() {
        let (paths, n, dt) = stream(&e, model, c, sim)?;
        grid = (n, dt);
        reports.push(control_report(c.label(), i == worst_case, n, dt, &paths));
    }
    Ok(assemble(solution, grid.0 as f64 * grid.1, grid.1, sim.n_paths, reports, worst_case))
}

/// `sup |K|` over paths and times after collapsing the uncertainty set to
/// its upper member, the reduction to classical Brownian noise.
pub fn classical_k_norm(model: &ModelSpec, solution: &ErgodicSolution, sim: &SimSettings) -> Result<f64> {
    let set = model.uncertainty();
    let upper = set.candidate_matrix(set.upper_index());
    let classical = if set.is_interval() {
        UncertaintySet::classical(upper[(0, 0)])?
    } else {
        UncertaintySet::finite(vec![upper])?
    };
    let model = model.with_uncertainty(classical)?;
    let control = VolControl::constant(model.uncertainty(), model.uncertainty().candidate(0))?;
    let e = Engine::new(&model, solution)?;
    let (paths, _, _) = stream(&e, &model, &control, sim)?;
    Ok(paths.iter().fold(0.0, |a, p| a.max(p.k_max_abs)))
}
