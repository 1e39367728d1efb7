use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{Engine, Tracker};
use crate::error::{Error, Result};
use crate::io::write_row;
use crate::model::spec::{Mode, ModelSpec};
use crate::pde::solution::ErgodicSolution;
use crate::sim::simulate::ScenarioBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityStats {
    /// Max over paths and times of `|ln D_direct − ln D_reconstructed|`.
    pub max: f64,
    pub mean: f64,
}

/// Long-term decomposition components along every path of a batch. Time
/// series are path-major with `n_steps + 1` nodes per path.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub lambda: f64,
    pub m: usize,
    pub d: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub control: String,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `Z = σᵀD_xu`, `d` per node.
    pub z: Vec<f64>,
    pub ln_m: Vec<f64>,
    pub k: Vec<f64>,
    pub ln_d: Vec<f64>,
    pub ln_d_rec: Vec<f64>,
    /// Nodes where the solution was extended beyond its grid.
    pub extrapolated: usize,
    pub max_excess: f64,
    pub identity: IdentityStats,
}

pub(crate) fn require_pricing(model: &ModelSpec, sol: &ErgodicSolution) -> Result<()> {
    if model.mode() != Mode::PricingKernel {
        return Err(Error::Config("the decomposition needs a pricing-kernel model".into()));
    }
    if sol.gamma1 != -1.0 || sol.gamma2.iter().any(|v| *v != 0.0) {
        return Err(Error::Config("the decomposition needs an eigenpair with γ¹ = −1, γ² = 0".into()));
    }
    Ok(())
}

struct PathSeries {
    u: Vec<f64>,
    z: Vec<f64>,
    ln_m: Vec<f64>,
    k: Vec<f64>,
    ln_d: Vec<f64>,
    ln_d_rec: Vec<f64>,
    extrapolated: usize,
    max_excess: f64,
}

pub fn compute_components(
    batch: &ScenarioBatch,
    solution: &ErgodicSolution,
    model: &ModelSpec,
) -> Result<Decomposition> {
    require_pricing(model, solution)?;
    let e = Engine::new(model, solution)?;
    let (n, d) = (batch.n_steps, batch.d);
    let series = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut tr = Tracker::new(&e, p, batch.x_at(p, 0))?;
            let mut s = PathSeries {
                u: Vec::with_capacity(n + 1),
                z: Vec::with_capacity((n + 1) * d),
                ln_m: Vec::with_capacity(n + 1),
                k: Vec::with_capacity(n + 1),
                ln_d: Vec::with_capacity(n + 1),
                ln_d_rec: Vec::with_capacity(n + 1),
                extrapolated: 0,
                max_excess: 0.0,
            };
            let push = |s: &mut PathSeries, snap: super::engine::Snapshot, z: &[f64]| {
                s.u.push(snap.u);
                s.z.extend_from_slice(z);
                s.ln_m.push(snap.ln_m);
                s.k.push(snap.k);
                s.ln_d.push(snap.ln_d);
                s.ln_d_rec.push(snap.ln_d_rec);
            };
            batch.replay(model, p, |st| {
                let snap = tr.step(st)?;
                push(&mut s, snap, tr.z());
                Ok(())
            })?;
            let snap = tr.finish(batch.horizon(), batch.x_at(p, n))?;
            push(&mut s, snap, tr.z());
            s.extrapolated = tr.extrapolated;
            s.max_excess = tr.max_excess;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let total = batch.n_paths * (n + 1);
    let mut dec = Decomposition {
        lambda: solution.lambda,
        m: batch.m,
        d,
        dt: batch.dt,
        n_steps: n,
        n_paths: batch.n_paths,
        control: batch.control.clone(),
        x: batch.x.clone(),
        u: Vec::with_capacity(total),
        z: Vec::with_capacity(total * d),
        ln_m: Vec::with_capacity(total),
        k: Vec::with_capacity(total),
        ln_d: Vec::with_capacity(total),
        ln_d_rec: Vec::with_capacity(total),
        extrapolated: 0,
        max_excess: 0.0,
        identity: IdentityStats { max: 0.0, mean: 0.0 },
    };
    for s in series {
        dec.u.extend(s.u);
        dec.z.extend(s.z);
        dec.ln_m.extend(s.ln_m);
        dec.k.extend(s.k);
        dec.ln_d.extend(s.ln_d);
        dec.ln_d_rec.extend(s.ln_d_rec);
        dec.extrapolated += s.extrapolated;
        dec.max_excess = dec.max_excess.max(s.max_excess);
    }
    dec.identity = reconstruct_d(&dec);
    Ok(dec)
}

/// Error statistics of the identity `ln D = λt + u(X₀) − u(X_t) + ln M_t + K_t`.
pub fn reconstruct_d(dec: &Decomposition) -> IdentityStats {
    let n = dec.ln_d.len().max(1) as f64;
    let (max, sum) = dec
        .ln_d
        .iter()
        .zip(&dec.ln_d_rec)
        .map(|(a, b)| (a - b).abs())
        .fold((0.0f64, 0.0), |(mx, s), e| (mx.max(e), s + e));
    IdentityStats { max, mean: sum / n }
}

impl Decomposition {
    fn node(&self, path: usize, n: usize) -> usize {
        path * (self.n_steps + 1) + n
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn u_at(&self, path: usize, n: usize) -> f64 {
        self.u[self.node(path, n)]
    }

    pub fn z_at(&self, path: usize, n: usize) -> &[f64] {
        let k = self.node(path, n) * self.d;
        &self.z[k..k + self.d]
    }

    pub fn ln_m_at(&self, path: usize, n: usize) -> f64 {
        self.ln_m[self.node(path, n)]
    }

    pub fn k_at(&self, path: usize, n: usize) -> f64 {
        self.k[self.node(path, n)]
    }

    pub fn ln_d_at(&self, path: usize, n: usize) -> f64 {
        self.ln_d[self.node(path, n)]
    }

    pub fn ln_d_rec_at(&self, path: usize, n: usize) -> f64 {
        self.ln_d_rec[self.node(path, n)]
    }

    /// Largest `|K|` over all paths and times.
    pub fn max_abs_k(&self) -> f64 {
        self.k.iter().fold(0.0, |a, k| a.max(k.abs()))
    }

    /// Steps where `K` rose by more than `tol`.
    pub fn k_violations(&self, tol: f64) -> usize {
        (0..self.n_paths)
            .map(|p| (0..self.n_steps).filter(|&n| self.k_at(p, n + 1) - self.k_at(p, n) > tol).count())
            .sum()
    }

    /// Per-path traces: `path, t, X…, u, Z…, lnM, K, lnD, lnD_rec`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((1..=self.m).map(|l| format!("X{l}")));
        header.push("u".into());
        header.extend((1..=self.d).map(|i| format!("Z{i}")));
        header.extend(["lnM", "K", "lnD", "lnD_rec"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let mut row = Vec::new();
        for p in 0..self.n_paths {
            for n in 0..=self.n_steps {
                let k = self.node(p, n);
                row.clear();
                row.push(self.time(n));
                row.extend_from_slice(&self.x[k * self.m..(k + 1) * self.m]);
                row.push(self.u[k]);
                row.extend_from_slice(self.z_at(p, n));
                row.extend([self.ln_m[k], self.k[k], self.ln_d[k], self.ln_d_rec[k]]);
                write!(w, "{p},")?;
                write_row(w, &row)?;
            }
        }
        Ok(())
    }
}
