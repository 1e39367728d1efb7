use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gkernel::decomp::{
    classical_k_norm, compute_components, verify_controls, SimSettings, VerificationReport,
};
use gkernel::io::to_json17;
use gkernel::model::{AssumptionReport, ModelSpec};
use gkernel::pde::{
    central_gradient_bound, grid_assumption_report, solve_ergodic, solve_parabolic, DeltaStep,
    ErgodicSolution, Grid, ParabolicOptions, ResidualStats, SolveInfo,
};
use gkernel::sim::{long_term_yield_mc, simulate_gsde, upper_price_mc, worst_case_policy, PriceReport, VolControl};
use serde::Serialize;

use crate::config::{ControlConfig, Format, RunConfig};
use crate::{CliError, EXIT_ASSUMPTION, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Decompose,
    Price,
}

struct Out<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
}

impl<'a> Out<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
        Ok(Self { cfg, dir })
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let wrap = |source| CliError::Output { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(wrap)?);
        body(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if !self.cfg.output.wants(Format::Json) {
            return Ok(());
        }
        let text = to_json17(value).map_err(|e| CliError::Config(format!("cannot serialize {name}: {e}")))?;
        self.write(name, |w| w.write_all(text.as_bytes()))
    }

    fn csv(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        if !self.cfg.output.wants(Format::Csv) {
            return Ok(());
        }
        self.write(name, body)
    }
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<i32, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid.build()?;
    if grid.dim() != model.m() {
        return Err(CliError::Config(format!("grid has {} axes, model.m is {}", grid.dim(), model.m())));
    }
    let out = Out::new(cfg)?;
    match cmd {
        Command::Check => check(&out, &model, &grid),
        Command::Solve => solve(&out, &model, &grid).map(|_| EXIT_OK),
        Command::Decompose => decompose(&out, &model, &grid),
        Command::Price => price(&out, &model, &grid),
    }
}

fn failed_clauses(r: &AssumptionReport) -> Vec<&'static str> {
    let mut f = Vec::new();
    if !r.symmetric {
        f.push("symmetry of k and h");
    }
    if !r.lipschitz {
        f.push("Lipschitz bounds");
    }
    if !r.dissipative {
        f.push("(iii) dissipativity");
    }
    if !r.gap_positive {
        f.push("positive gap");
    }
    f
}

fn check(out: &Out, model: &ModelSpec, grid: &Grid) -> Result<i32, CliError> {
    let report = grid_assumption_report(model, grid)?;
    out.json("assumptions.json", &report)?;
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        eprintln!("{}", CliError::Assumption(failed_clauses(&report).join(", ")));
        Ok(EXIT_ASSUMPTION)
    }
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    lambda: f64,
    anchor: Vec<f64>,
    anchor_index: usize,
    nodes: usize,
    residual: ResidualStats,
    info: &'a SolveInfo,
    gradient_bound: f64,
    trace: &'a [DeltaStep],
    warnings: &'a [String],
}

fn solve(out: &Out, model: &ModelSpec, grid: &Grid) -> Result<ErgodicSolution, CliError> {
    let sol = solve_ergodic(model, grid, &out.cfg.solver.ergodic())?;
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    let summary = SolveSummary {
        lambda: sol.lambda,
        anchor: grid.point(sol.anchor),
        anchor_index: sol.anchor,
        nodes: grid.len(),
        residual: sol.solution.stats,
        info: &sol.solution.info,
        gradient_bound: central_gradient_bound(model, grid, sol.u())?,
        trace: &sol.trace,
        warnings: &sol.warnings,
    };
    out.json("summary.json", &summary)?;
    out.csv("solution.csv", |w| sol.solution.write_csv(w))?;
    Ok(sol)
}

/// Static controls plus the feedback slot, which `feedback` fills.
fn controls(
    cfg: &RunConfig,
    model: &ModelSpec,
    mut feedback: impl FnMut() -> Result<VolControl, CliError>,
) -> Result<Vec<VolControl>, CliError> {
    if cfg.sim.controls.is_empty() {
        return Err(CliError::Config("sim.controls is empty".into()));
    }
    cfg.sim
        .controls
        .iter()
        .map(|c| match c.build_static(model.uncertainty())? {
            Some(v) => Ok(v),
            None => feedback(),
        })
        .collect()
}

fn decompose(out: &Out, model: &ModelSpec, grid: &Grid) -> Result<i32, CliError> {
    let cfg = out.cfg;
    let worst_case = cfg
        .sim
        .controls
        .iter()
        .position(|c| *c == ControlConfig::Feedback)
        .ok_or_else(|| CliError::Config("decompose needs a \"feedback\" control".into()))?;
    let sol = solve(out, model, grid)?;
    let policy = worst_case_policy(&sol, model)?;
    let family = controls(cfg, model, || Ok(VolControl::Feedback(policy.clone())))?;
    let sim = SimSettings {
        x0: cfg.sim.x0(model.m())?,
        horizon: cfg.sim.horizon,
        dt: cfg.sim.dt,
        n_paths: cfg.sim.n_paths,
        seed: cfg.sim.seed,
    };
    let mut report: VerificationReport = verify_controls(model, &sol, &family, worst_case, &sim)?;
    report.classical_k_norm = Some(classical_k_norm(model, &sol, &sim)?);
    out.json("verification.json", &report)?;

    let traced = cfg.sim.trace_paths.min(sim.n_paths);
    if traced > 0 && cfg.output.wants(Format::Csv) {
        for (k, c) in family.iter().enumerate() {
            let batch = simulate_gsde(model, c, &sim.x0, sim.horizon, sim.dt, traced, sim.seed)?;
            let dec = compute_components(&batch, &sol, model)?;
            out.csv(&format!("traces_{k}.csv"), |w| dec.write_csv(w))?;
        }
    }
    if let Some(horizons) = &cfg.sim.yield_horizons {
        let dt = cfg.sim.yield_dt.unwrap_or(sim.dt);
        let y = long_term_yield_mc(model, horizons, &family[worst_case], &sim.x0, dt, sim.n_paths, sim.seed)?;
        out.json("yield.json", &y)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PriceOutput<'a> {
    #[serde(flatten)]
    report: &'a PriceReport,
    /// `parabolic`, `ergodic`, or absent when no feedback control was priced.
    feedback_source: Option<&'static str>,
}

fn price(out: &Out, model: &ModelSpec, grid: &Grid) -> Result<i32, CliError> {
    let cfg = out.cfg;
    let payoff = cfg
        .payoff
        .as_ref()
        .ok_or_else(|| CliError::Config("price needs a \"payoff\"".into()))?
        .build()?;
    let x0 = cfg.sim.x0(model.m())?;
    let mut source = None;
    let family = controls(cfg, model, || {
        let policy = match cfg.grid.time_steps {
            Some(steps) => {
                let g = grid.clone().with_time(cfg.sim.horizon, steps)?;
                let w = solve_parabolic(model, &g, &payoff, &ParabolicOptions::default())?;
                source = Some("parabolic");
                worst_case_policy(&w, model)?
            }
            None => {
                let sol = solve_ergodic(model, grid, &cfg.solver.ergodic())?;
                source = Some("ergodic");
                worst_case_policy(&sol, model)?
            }
        };
        Ok(VolControl::Feedback(policy))
    })?;
    let report = upper_price_mc(model, &payoff, &x0, cfg.sim.horizon, &family, cfg.sim.dt, cfg.sim.n_paths, cfg.sim.seed)?;
    out.json("price.json", &PriceOutput { report: &report, feedback_source: source })?;
    Ok(EXIT_OK)
}

/// Reads and runs a config file, returning the process exit code.
pub fn run_file(cmd: Command, config: &Path, overrides: &crate::Overrides) -> Result<i32, CliError> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(overrides);
    run(cmd, &cfg)
}
