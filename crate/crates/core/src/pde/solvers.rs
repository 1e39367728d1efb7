//! Explicit monotone solvers: backward time stepping for the parabolic
//! equation, pseudo-time marching for the discounted equation, and the
//! vanishing-discount sequence for the ergodic pair.

use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::operator::{
    grid_assumption_report, resolve_truncation, Operator, Shift, Truncation, ZeroOrder, CFL_SAFETY,
};
use super::solution::{DeltaStep, ErgodicSolution, PdeSolution, ResidualStats, SolveInfo, TimeSlices};
use crate::error::{Error, Result};
use crate::model::coefficient::CoefficientFn;
use crate::model::spec::{Mode, ModelSpec};

/// Nodes excluded from residual statistics at each edge.
pub const RESIDUAL_BAND: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicOptions {
    pub truncation: Truncation,
    /// Upper bound on stored time slices (the first and last are always kept).
    pub max_slices: usize,
}

impl Default for ParabolicOptions {
    fn default() -> Self {
        Self { truncation: Truncation::Auto, max_slices: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub truncation: Truncation,
    /// Stop once `max |Δu|/Δt < tol_inner·(1 + max |u|)`.
    pub tol_inner: f64,
    pub max_iter: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self { truncation: Truncation::Auto, tol_inner: 1e-10, max_iter: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicOptions {
    pub delta0: f64,
    /// Cauchy tolerance on successive `δ_k u^{δ_k}(x_anchor)`.
    pub tol: f64,
    pub max_halvings: usize,
    /// Anchor state; the grid node nearest to it is used. Defaults to the origin.
    pub anchor: Option<Vec<f64>>,
    pub gamma1: f64,
    /// Row-major `d×d`; `None` means zero.
    pub gamma2: Option<Vec<f64>>,
    pub stationary: StationaryOptions,
}

impl Default for ErgodicOptions {
    fn default() -> Self {
        Self {
            delta0: 0.5,
            tol: 1e-7,
            max_halvings: 20,
            anchor: None,
            gamma1: -1.0,
            gamma2: None,
            stationary: StationaryOptions::default(),
        }
    }
}

fn finite_or_divergence(w: &[f64], step: usize, what: &str) -> Result<()> {
    match w.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(Error::Divergence { step, index, detail: format!("non-finite {what}") }),
    }
}

fn solution(
    op: &Operator,
    values: Vec<f64>,
    residual: Vec<f64>,
    info: SolveInfo,
    slices: Option<TimeSlices>,
) -> PdeSolution {
    let (gradient, hessian) = op.derivatives(&values);
    let stats = ResidualStats::interior(op.grid, &residual, RESIDUAL_BAND);
    PdeSolution {
        grid: op.grid.clone(),
        values,
        gradient,
        hessian,
        residual,
        stats,
        info,
        slices,
    }
}

fn finite_level(level: f64) -> Option<f64> {
    level.is_finite().then_some(level)
}

/// Solves `∂_t w + G(H) + ⟨b, Dw⟩ + f = 0`, `w(T) = terminal`, backward from
/// `T` with the grid's uniform time steps.
pub fn solve_parabolic(
    model: &ModelSpec,
    grid: &Grid,
    terminal: &CoefficientFn,
    opts: &ParabolicOptions,
) -> Result<PdeSolution> {
    model.ensure_symmetric()?;
    let tg = grid
        .time()
        .ok_or_else(|| Error::Config("parabolic solve needs a time grid".into()))?;
    let report = match opts.truncation {
        Truncation::Auto => Some(grid_assumption_report(model, grid)?),
        _ => None,
    };
    let level = resolve_truncation(model, report.as_ref(), opts.truncation, 0.0)?;
    let op = Operator::new(model, grid, level)?;
    let n = grid.len();
    let mut w: Vec<f64> = (0..n).map(|i| terminal.eval(op.x(i))).collect();
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation { what: "terminal".into(), x: op.x(i).to_vec() });
    }
    let zo = ZeroOrder::none(model.d());

    let steps = if tg.horizon == 0.0 { 0 } else { tg.steps };
    let dt = tg.dt();
    let stride = steps.div_ceil(opts.max_slices.max(1)).max(1);
    let mut times = vec![tg.horizon];
    let mut values = vec![w.clone()];
    let mut f = vec![0.0; n];
    let mut max_rate: f64 = 0.0;
    for step in 0..steps {
        let rate = op.apply(&w, &zo, &mut f);
        max_rate = max_rate.max(rate);
        if dt * rate * CFL_SAFETY > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "CFL violated at step {step}: dt = {dt:e} exceeds {:e}; use at least {} time steps",
                1.0 / (rate * CFL_SAFETY),
                (tg.horizon * rate * CFL_SAFETY).ceil() as usize
            )));
        }
        for (wi, fi) in w.iter_mut().zip(&f) {
            *wi += dt * fi;
        }
        finite_or_divergence(&w, step, "parabolic update")?;
        if (step + 1) % stride == 0 || step + 1 == steps {
            let t = if step + 1 == steps { 0.0 } else { tg.horizon - (step + 1) as f64 * dt };
            times.push(t);
            values.push(w.clone());
        }
    }
    times.reverse();
    values.reverse();

    let residual = if times.len() >= 2 {
        let lf = op.apply_central(&values[0], &zo);
        let dtau = times[1] - times[0];
        (0..n).map(|i| (values[1][i] - values[0][i]) / dtau + lf[i]).collect()
    } else {
        vec![0.0; n]
    };
    let info = SolveInfo {
        iterations: steps,
        final_rate: max_rate,
        dt,
        truncation: finite_level(level),
    };
    let w0 = values[0].clone();
    Ok(solution(&op, w0, residual, info, Some(TimeSlices { times, values })))
}

fn check_gamma(model: &ModelSpec, gamma1: f64, gamma2: &[f64]) -> Result<()> {
    let d = model.d();
    if gamma2.len() != d * d {
        return Err(Error::Config(format!("γ² must have {} entries", d * d)));
    }
    if (0..d).any(|i| (0..d).any(|j| gamma2[i * d + j] != gamma2[j * d + i])) {
        return Err(Error::Config("γ² must be symmetric".into()));
    }
    let (g, _) = model.uncertainty().sup(gamma2);
    let s = gamma1 + 2.0 * g;
    if (s + 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("ergodic parameters need γ¹ + 2G(γ²) = −1, got {s}")));
    }
    Ok(())
}

/// True when the discounted equation can be solved relative to the anchor:
/// the operator does not read `u` except through the `γ¹δu` term.
fn relative_iteration(model: &ModelSpec, zo: &ZeroOrder) -> bool {
    zo.gamma2_is_zero()
        && match model.mode() {
            Mode::PricingKernel => true,
            Mode::Generic => model.drivers().is_some_and(|d| d.y_independent),
        }
}

struct Marched {
    u: Vec<f64>,
    iterations: usize,
    final_rate: f64,
    dt: f64,
}

/// Pseudo-time marching `u ← u + Δt·F_δ(u)` with the largest monotone
/// `Δt`. In relative mode the iterate is pinned to 0 at the anchor and the
/// anchor's operator value is subtracted; `u^δ` is recovered from the
/// constant it converges to.
fn march(
    op: &Operator,
    zo: &ZeroOrder,
    anchor: usize,
    warm: Option<&[f64]>,
    opts: &StationaryOptions,
) -> Result<Marched> {
    let n = op.grid.len();
    let relative = relative_iteration(op.model, zo);
    let mut w: Vec<f64> = match warm {
        Some(u) if relative => u.iter().map(|v| v - u[anchor]).collect(),
        Some(u) => u.to_vec(),
        None => vec![0.0; n],
    };
    let mut f = vec![0.0; n];
    let mut last = f64::INFINITY;
    for it in 0..opts.max_iter {
        let rate = op.apply(&w, zo, &mut f);
        let c = if relative { f[anchor] } else { 0.0 };
        finite_or_divergence(&f, it, "operator value")?;
        let res = f.iter().fold(0.0f64, |a, fi| a.max((fi - c).abs()));
        let scale = 1.0 + w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dt = if rate > 0.0 { 1.0 / (CFL_SAFETY * rate) } else { 1.0 };
        last = res;
        if res < opts.tol_inner * scale {
            let u = if relative {
                let Shift::Discount(delta) = zo.kind else { unreachable!("discounted solve") };
                let s = -c / (zo.gamma1 * delta);
                w.iter().map(|v| v + s).collect()
            } else {
                w
            };
            return Ok(Marched { u, iterations: it, final_rate: res, dt });
        }
        for (wi, fi) in w.iter_mut().zip(&f) {
            *wi += dt * (fi - c);
        }
    }
    Err(Error::Iteration { iterations: opts.max_iter, residual: last })
}

fn stationary_level(
    model: &ModelSpec,
    report: Option<&crate::model::AssumptionReport>,
    policy: Truncation,
    delta: f64,
) -> Result<f64> {
    resolve_truncation(model, report, policy, delta)
}

/// Solves `G(H + 2γ²δu) + ⟨b, Du⟩ + f + γ¹δu = 0` for `u^δ`.
pub fn solve_discounted(
    model: &ModelSpec,
    grid: &Grid,
    delta: f64,
    gamma1: f64,
    gamma2: &[f64],
    opts: &StationaryOptions,
) -> Result<PdeSolution> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("discount δ must be positive, got {delta}")));
    }
    model.ensure_symmetric()?;
    check_gamma(model, gamma1, gamma2)?;
    let report = match opts.truncation {
        Truncation::Auto => Some(grid_assumption_report(model, grid)?),
        _ => None,
    };
    let level = stationary_level(model, report.as_ref(), opts.truncation, delta)?;
    let op = Operator::new(model, grid, level)?;
    let zo = ZeroOrder::new(Shift::Discount(delta), gamma1, gamma2.to_vec());
    let anchor = grid.nearest_node(&vec![0.0; grid.dim()]);
    let r = march(&op, &zo, anchor, None, opts)?;
    let residual = op.apply_central(&r.u, &zo);
    let info = SolveInfo {
        iterations: r.iterations,
        final_rate: r.final_rate,
        dt: r.dt,
        truncation: finite_level(level),
    };
    Ok(solution(&op, r.u, residual, info, None))
}

/// Vanishing-discount approximation of the ergodic pair `(u, λ)` with
/// `δ_k = δ₀/2^k`, warm-started, stopped by a Cauchy rule on `δ_k u^{δ_k}(x_anchor)`.
pub fn solve_ergodic(model: &ModelSpec, grid: &Grid, opts: &ErgodicOptions) -> Result<ErgodicSolution> {
    if !(opts.delta0 > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::Config("δ₀ and tol must be positive".into()));
    }
    model.ensure_symmetric()?;
    let d = model.d();
    let gamma2 = opts.gamma2.clone().unwrap_or_else(|| vec![0.0; d * d]);
    check_gamma(model, opts.gamma1, &gamma2)?;

    let report = grid_assumption_report(model, grid)?;
    let mut warnings = Vec::new();
    if !report.gap_positive {
        warnings.push(format!("assumption gap is not positive (gap = {:e})", report.gap));
    }
    let origin = vec![0.0; grid.dim()];
    let anchor_x = opts.anchor.as_deref().unwrap_or(&origin);
    if anchor_x.len() != grid.dim() {
        return Err(Error::Config("anchor dimension does not match the grid".into()));
    }
    let anchor = grid.nearest_node(anchor_x);
    let mut op = Operator::new(model, grid, f64::INFINITY)?;

    let mut trace = Vec::new();
    let mut u: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut info = SolveInfo { iterations: 0, final_rate: 0.0, dt: 0.0, truncation: None };
    for k in 0..=opts.max_halvings {
        let delta = opts.delta0 / 2f64.powi(k as i32);
        op.level = stationary_level(model, Some(&report), opts.stationary.truncation, delta)?;
        let zo = ZeroOrder::new(Shift::Discount(delta), opts.gamma1, gamma2.clone());
        let r = march(&op, &zo, anchor, u.as_deref(), &opts.stationary)?;
        let value = delta * r.u[anchor];
        info.iterations += r.iterations;
        info.final_rate = r.final_rate;
        info.dt = r.dt;
        info.truncation = finite_level(op.level);
        trace.push(DeltaStep { delta, value, iterations: r.iterations });
        u = Some(r.u);
        if k > 0 && (value - trace[k - 1].value).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let n = trace.len();
        return Err(Error::Convergence {
            halvings: opts.max_halvings,
            gap: (trace[n - 1].value - trace[n - 2].value).abs(),
        });
    }
    let lambda = trace.last().expect("at least one δ step").value;
    let mut u = u.expect("at least one δ step");
    let ua = u[anchor];
    u.iter_mut().for_each(|v| *v -= ua);
    u[anchor] = 0.0;

    let zo = ZeroOrder::new(Shift::Constant(lambda), opts.gamma1, gamma2.clone());
    let residual = op.apply_central(&u, &zo);
    Ok(ErgodicSolution {
        solution: solution(&op, u, residual, info, None),
        lambda,
        anchor,
        trace,
        gamma1: opts.gamma1,
        gamma2,
        warnings,
    })
}

/// What to compute a residual for.
#[derive(Debug, Clone, Copy)]
pub enum ResidualTarget<'a> {
    Ergodic(&'a ErgodicSolution),
    /// Parabolic solution at `t = 0` (time derivative from the first slices).
    Parabolic(&'a PdeSolution),
    /// An arbitrary field checked against the ergodic equation with eigenvalue `lambda`.
    Field { values: &'a [f64], lambda: f64 },
}

/// Nodewise residual of the full nonlinear operator with central
/// differences and no truncation.
pub fn pde_residual_field(target: ResidualTarget, model: &ModelSpec, grid: &Grid) -> Result<Vec<f64>> {
    let op = Operator::new(model, grid, f64::INFINITY)?;
    let d = model.d();
    let check_len = |n: usize| {
        if n == grid.len() {
            Ok(())
        } else {
            Err(Error::Shape(format!("solution has {n} nodes, grid has {}", grid.len())))
        }
    };
    match target {
        ResidualTarget::Ergodic(sol) => {
            check_len(sol.u().len())?;
            let zo = ZeroOrder::new(Shift::Constant(sol.lambda), sol.gamma1, sol.gamma2.clone());
            Ok(op.apply_central(sol.u(), &zo))
        }
        ResidualTarget::Field { values, lambda } => {
            check_len(values.len())?;
            let zo = ZeroOrder::new(Shift::Constant(lambda), -1.0, vec![0.0; d * d]);
            Ok(op.apply_central(values, &zo))
        }
        ResidualTarget::Parabolic(sol) => {
            check_len(sol.values.len())?;
            let zo = ZeroOrder::none(d);
            let lf = op.apply_central(&sol.values, &zo);
            match &sol.slices {
                Some(sl) if sl.times.len() >= 2 => {
                    let dtau = sl.times[1] - sl.times[0];
                    Ok((0..lf.len()).map(|i| (sl.values[1][i] - sl.values[0][i]) / dtau + lf[i]).collect())
                }
                _ => Ok(lf),
            }
        }
    }
}

pub fn pde_residual(target: ResidualTarget, model: &ModelSpec, grid: &Grid) -> Result<ResidualStats> {
    let r = pde_residual_field(target, model, grid)?;
    Ok(ResidualStats::interior(grid, &r, RESIDUAL_BAND))
}

/// Largest discrete `|σᵀDu|` over the central half of each axis.
pub fn central_gradient_bound(model: &ModelSpec, grid: &Grid, u: &[f64]) -> Result<f64> {
    let op = Operator::new(model, grid, f64::INFINITY)?;
    let axes = grid.axes().to_vec();
    Ok(op.max_z(u, |idx| {
        let mi = grid.multi_index(idx);
        axes.iter().enumerate().all(|(k, a)| {
            let q = a.nodes / 4;
            mi[k] >= q && mi[k] + q < a.nodes
        })
    }))
}
