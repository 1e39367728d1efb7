//! Euler–Maruyama simulation of the G-SDE under a volatility control.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::control::{Covariance, PolicyScratch, VolControl};
use crate::error::{Error, Result};
use crate::io::write_row;
use crate::model::spec::{ModelSpec, PointCoeffs};

/// Path `p` of a run with `seed` draws from stream `p` of a ChaCha8
/// generator keyed by `seed`, so paths are reproducible in any order.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Number of steps and the adjusted step dividing `horizon` evenly.
pub fn time_steps(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon > 0.0) || !(dt > 0.0) || dt > horizon * (1.0 + 1e-12) {
        return Err(Error::Config(format!("need 0 < dt <= T, got dt = {dt}, T = {horizon}")));
    }
    let n = ((horizon / dt).round() as usize).max(1);
    Ok((n, horizon / n as f64))
}

/// One Euler step as seen by a visitor.
pub(crate) struct Step<'a> {
    pub n: usize,
    pub t: f64,
    pub dt: f64,
    pub x: &'a [f64],
    pub x_next: &'a [f64],
    /// Coefficients at `x`.
    pub c: &'a PointCoeffs,
    /// Covariance rate active on the step.
    pub q: &'a [f64],
    pub db: &'a [f64],
    pub xi: &'a [f64],
}

/// Drives single paths; shared by batch simulation, pricing and the
/// streaming decomposition so that all see identical numbers.
pub(crate) struct Stepper<'a> {
    pub model: &'a ModelSpec,
    pub control: &'a VolControl,
    pub x0: &'a [f64],
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl<'a> Stepper<'a> {
    pub fn new(
        model: &'a ModelSpec,
        control: &'a VolControl,
        x0: &'a [f64],
        horizon: f64,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        if x0.len() != model.m() {
            return Err(Error::Shape(format!("x0 must have {} components", model.m())));
        }
        let (n_steps, dt) = time_steps(horizon, dt)?;
        let d = model.d();
        match control {
            VolControl::Constant(c) if c.q().len() != d * d => {
                return Err(Error::Shape("control dimension does not match the model".into()))
            }
            VolControl::Piecewise { values, .. } if values.iter().any(|c| c.q().len() != d * d) => {
                return Err(Error::Shape("control dimension does not match the model".into()))
            }
            _ => {}
        }
        Ok(Self { model, control, x0, dt, n_steps, seed })
    }

    pub fn run<F>(&self, path: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(&Step) -> Result<()>,
    {
        let (m, d) = (self.model.m(), self.model.d());
        let mut rng = path_rng(self.seed, path);
        let mut x = self.x0.to_vec();
        let mut x_next = vec![0.0; m];
        let mut c = PointCoeffs::new(m, d);
        let mut xi = vec![0.0; d];
        let mut db = vec![0.0; d];
        let mut ps = PolicyScratch::new(d);
        let sdt = self.dt.sqrt();
        for n in 0..self.n_steps {
            let t = n as f64 * self.dt;
            self.model.eval_into(&x, &mut c);
            let root;
            let q = match self.control {
                VolControl::Constant(cv) => {
                    root = cv.root();
                    cv.q()
                }
                VolControl::Piecewise { breakpoints, values } => {
                    let cv = &values[VolControl::piece(breakpoints, t + 0.5 * self.dt)];
                    root = cv.root();
                    cv.q()
                }
                VolControl::Feedback(policy) => {
                    let it = policy.interpolate(t, &x);
                    let cv = policy.candidate(policy.select(&it, &x, &c, &mut ps));
                    root = cv.root();
                    cv.q()
                }
            };
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..d {
                db[i] = sdt * (0..=i).map(|k| root[i * d + k] * xi[k]).sum::<f64>();
            }
            for l in 0..m {
                let mut dx = c.b[l] * self.dt;
                for ij in 0..d * d {
                    dx += c.h[ij * m + l] * q[ij] * self.dt;
                }
                for i in 0..d {
                    dx += c.sigma[l * d + i] * db[i];
                }
                x_next[l] = x[l] + dx;
            }
            if let Some(bad) = x_next.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    step: n,
                    index: path,
                    detail: format!("state component {bad} became non-finite"),
                });
            }
            visit(&Step {
                n,
                t,
                dt: self.dt,
                x: &x,
                x_next: &x_next,
                c: &c,
                q,
                db: &db,
                xi: &xi,
            })?;
            std::mem::swap(&mut x, &mut x_next);
        }
        Ok(())
    }
}

/// Simulated paths, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBatch {
    pub m: usize,
    pub d: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub control: String,
    /// Standard-normal draws, `[path][step][d]`.
    pub xi: Vec<f64>,
    /// Covariance rate per step, `[path][step][d·d]`.
    pub q: Vec<f64>,
    /// `B`, `[path][step+1][d]`.
    pub b: Vec<f64>,
    /// `⟨B^i, B^j⟩`, `[path][step+1][d·d]`.
    pub qv: Vec<f64>,
    /// `X`, `[path][step+1][m]`.
    pub x: Vec<f64>,
}

struct PathRecord {
    xi: Vec<f64>,
    q: Vec<f64>,
    b: Vec<f64>,
    qv: Vec<f64>,
    x: Vec<f64>,
}

pub fn simulate_gsde(
    model: &ModelSpec,
    control: &VolControl,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ScenarioBatch> {
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let st = Stepper::new(model, control, x0, horizon, dt, seed)?;
    let (m, d, n) = (model.m(), model.d(), st.n_steps);
    let records = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = PathRecord {
                xi: Vec::with_capacity(n * d),
                q: Vec::with_capacity(n * d * d),
                b: vec![0.0; d],
                qv: vec![0.0; d * d],
                x: x0.to_vec(),
            };
            st.run(p, |s| {
                r.xi.extend_from_slice(s.xi);
                r.q.extend_from_slice(s.q);
                let k = r.b.len() - d;
                for i in 0..d {
                    r.b.push(r.b[k + i] + s.db[i]);
                }
                let k = r.qv.len() - d * d;
                for ij in 0..d * d {
                    r.qv.push(r.qv[k + ij] + s.q[ij] * s.dt);
                }
                r.x.extend_from_slice(s.x_next);
                Ok(())
            })?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut batch = ScenarioBatch {
        m,
        d,
        dt: st.dt,
        n_steps: n,
        n_paths,
        seed,
        control: control.label(),
        xi: Vec::with_capacity(n_paths * n * d),
        q: Vec::with_capacity(n_paths * n * d * d),
        b: Vec::with_capacity(n_paths * (n + 1) * d),
        qv: Vec::with_capacity(n_paths * (n + 1) * d * d),
        x: Vec::with_capacity(n_paths * (n + 1) * m),
    };
    for r in records {
        batch.xi.extend(r.xi);
        batch.q.extend(r.q);
        batch.b.extend(r.b);
        batch.qv.extend(r.qv);
        batch.x.extend(r.x);
    }
    Ok(batch)
}

impl ScenarioBatch {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn x_at(&self, path: usize, n: usize) -> &[f64] {
        let k = (path * (self.n_steps + 1) + n) * self.m;
        &self.x[k..k + self.m]
    }

    pub fn b_at(&self, path: usize, n: usize) -> &[f64] {
        let k = (path * (self.n_steps + 1) + n) * self.d;
        &self.b[k..k + self.d]
    }

    pub fn qv_at(&self, path: usize, n: usize) -> &[f64] {
        let dd = self.d * self.d;
        let k = (path * (self.n_steps + 1) + n) * dd;
        &self.qv[k..k + dd]
    }

    pub fn q_at(&self, path: usize, n: usize) -> &[f64] {
        let dd = self.d * self.d;
        let k = (path * self.n_steps + n) * dd;
        &self.q[k..k + dd]
    }

    /// Long format: `path, t, B…, QV…, X…`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=self.d).map(|i| format!("B{i}")));
        for i in 1..=self.d {
            header.extend((1..=self.d).map(|j| format!("QV{i}{j}")));
        }
        header.extend((1..=self.m).map(|l| format!("X{l}")));
        writeln!(w, "{}", header.join(","))?;
        let mut row = Vec::new();
        for p in 0..self.n_paths {
            for n in 0..=self.n_steps {
                row.clear();
                row.push(self.time(n));
                row.extend_from_slice(self.b_at(p, n));
                row.extend_from_slice(self.qv_at(p, n));
                row.extend_from_slice(self.x_at(p, n));
                write!(w, "{p},")?;
                write_row(w, &row)?;
            }
        }
        Ok(())
    }

    /// Feeds stored path `p` to `visit` step by step, with coefficients
    /// re-evaluated at each left endpoint and `ΔB` rebuilt from the stored
    /// draws exactly as the simulator produced it.
    pub(crate) fn replay<F>(&self, model: &ModelSpec, path: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(&Step) -> Result<()>,
    {
        let (m, d) = (self.m, self.d);
        if model.m() != m || model.d() != d {
            return Err(Error::Shape("batch dimensions do not match the model".into()));
        }
        if path >= self.n_paths {
            return Err(Error::Config(format!("path {path} is not in the batch")));
        }
        let dd = d * d;
        let mut c = PointCoeffs::new(m, d);
        let mut db = vec![0.0; d];
        let mut cached: Option<Covariance> = None;
        let sdt = self.dt.sqrt();
        for n in 0..self.n_steps {
            let q = self.q_at(path, n);
            if cached.as_ref().is_none_or(|cv| cv.q() != q) {
                cached = Some(Covariance::unchecked(q));
            }
            let root = cached.as_ref().expect("just set").root();
            let k = (path * self.n_steps + n) * d;
            let xi = &self.xi[k..k + d];
            for i in 0..d {
                db[i] = sdt * (0..=i).map(|k| root[i * d + k] * xi[k]).sum::<f64>();
            }
            let x = self.x_at(path, n);
            model.eval_into(x, &mut c);
            visit(&Step {
                n,
                t: self.time(n),
                dt: self.dt,
                x,
                x_next: self.x_at(path, n + 1),
                c: &c,
                q: &q[..dd],
                db: &db,
                xi,
            })?;
        }
        Ok(())
    }
}
