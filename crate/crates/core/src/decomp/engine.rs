//! Per-path accumulation of the decomposition components. Batch replay and
//! streaming simulation both drive a [`Tracker`] through the same step
//! visitor, so the two produce identical numbers.

use crate::error::{Error, Result};
use crate::gcore::half_trace;
use crate::model::spec::{ModelSpec, PointCoeffs};
use crate::pde::operator::hamiltonian_into;
use crate::pde::solution::{interpolate, ErgodicSolution, Interpolant};
use crate::sim::pricing::log_deflator_increment;
use crate::sim::simulate::Step;

/// Paths may leave the grid by at most this fraction of an axis width.
pub const MAX_EXCESS: f64 = 0.2;

pub(crate) struct Engine<'a> {
    pub model: &'a ModelSpec,
    pub sol: &'a ErgodicSolution,
    steps: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a ModelSpec, sol: &'a ErgodicSolution) -> Result<Self> {
        if sol.grid().dim() != model.m() {
            return Err(Error::Shape("solution grid does not match the model state dimension".into()));
        }
        if sol.gamma2.len() != model.d() * model.d() {
            return Err(Error::Shape("solution γ² does not match the noise dimension".into()));
        }
        Ok(Self { model, sol, steps: sol.grid().steps() })
    }

    pub fn lambda(&self) -> f64 {
        self.sol.lambda
    }

    fn interpolate(&self, path: usize, t: f64, x: &[f64]) -> Result<Interpolant> {
        let it = interpolate(self.sol.grid(), &self.steps, self.sol.u(), x);
        if it.excess > MAX_EXCESS {
            return Err(Error::Coverage { path, t, x: x.to_vec() });
        }
        Ok(it)
    }
}

/// Components at one time node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Snapshot {
    pub u: f64,
    pub ln_m: f64,
    pub k: f64,
    pub ln_d: f64,
    /// `λt + u(X₀) − u(X_t) + ln M_t + K_t`.
    pub ln_d_rec: f64,
    /// `K_{n+1} − K_n`; zero at the final node.
    pub dk: f64,
    /// Index of the `G` maximizer of `H` at this node (none at the final node).
    pub maximizer: Option<usize>,
}

pub(crate) struct Tracker<'e, 'a> {
    e: &'e Engine<'a>,
    path: usize,
    u0: f64,
    ln_d: f64,
    ln_m: f64,
    k: f64,
    /// `Σ (f + γ¹λ)Δt + (g + γ²λ):QΔt − Z·ΔB`, the BSDE drift and noise terms.
    bsde: f64,
    z: Vec<f64>,
    h: Vec<f64>,
    coeffs: PointCoeffs,
    pub extrapolated: usize,
    pub max_excess: f64,
}

impl<'e, 'a> Tracker<'e, 'a> {
    pub fn new(e: &'e Engine<'a>, path: usize, x0: &[f64]) -> Result<Self> {
        let (m, d) = (e.model.m(), e.model.d());
        let it = e.interpolate(path, 0.0, x0)?;
        Ok(Self {
            e,
            path,
            u0: it.value,
            ln_d: 0.0,
            ln_m: 0.0,
            k: 0.0,
            bsde: 0.0,
            z: vec![0.0; d],
            h: vec![0.0; d * d],
            coeffs: PointCoeffs::new(m, d),
            extrapolated: 0,
            max_excess: 0.0,
        })
    }

    /// `Z = σᵀD_xu` at the most recent node.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn bsde_sum(&self) -> f64 {
        self.bsde
    }

    fn note(&mut self, it: &Interpolant) {
        if it.outside() {
            self.extrapolated += 1;
            self.max_excess = self.max_excess.max(it.excess);
        }
    }

    fn snapshot(&self, t: f64, u: f64, dk: f64, maximizer: Option<usize>) -> Snapshot {
        Snapshot {
            u,
            ln_m: self.ln_m,
            k: self.k,
            ln_d: self.ln_d,
            ln_d_rec: self.e.lambda() * t + self.u0 - u + self.ln_m + self.k,
            dk,
            maximizer,
        }
    }

    /// Components at the step's left endpoint, then advances all sums.
    pub fn step(&mut self, s: &Step) -> Result<Snapshot> {
        let e = self.e;
        let (m, d) = (e.model.m(), e.model.d());
        let lambda = e.lambda();
        let it = e.interpolate(self.path, s.t, s.x)?;
        self.note(&it);
        let c = s.c;
        let (p, hess) = (&it.grad[..m], &it.hess[..m * m]);
        let f = hamiltonian_into(e.model, c, s.x, it.value, p, hess, f64::INFINITY, &mut self.z, &mut self.h);
        for (h, g2) in self.h.iter_mut().zip(&e.sol.gamma2) {
            *h += 2.0 * g2 * lambda;
        }
        let (g, idx) = e.model.uncertainty().sup(&self.h);
        let dk = (half_trace(&self.h, s.q) - g) * s.dt;

        let mut dln_m = 0.0;
        let mut drift = (f + e.sol.gamma1 * lambda) * s.dt;
        for i in 0..d {
            let zi = self.z[i] - c.v[i];
            dln_m += zi * s.db[i];
            drift -= self.z[i] * s.db[i];
            for j in 0..d {
                let q = s.q[i * d + j];
                dln_m -= 0.5 * zi * (self.z[j] - c.v[j]) * q * s.dt;
                // g + γ²λ = ½H̃ − ½σᵀD²uσ − ⟨p, h_ij⟩
                let base = (i * d + j) * m;
                let mut rest = 0.5 * self.h[i * d + j];
                for l in 0..m {
                    rest -= p[l] * c.h[base + l];
                    for l2 in 0..m {
                        rest -= 0.5 * c.sigma[l * d + i] * hess[l * m + l2] * c.sigma[l2 * d + j];
                    }
                }
                drift += rest * q * s.dt;
            }
        }
        let snap = self.snapshot(s.t, it.value, dk, Some(idx));
        self.ln_d += log_deflator_increment(s);
        self.ln_m += dln_m;
        self.k += dk;
        self.bsde += drift;
        Ok(snap)
    }

    /// Components at the final node `x = X_T`.
    pub fn finish(&mut self, t: f64, x: &[f64]) -> Result<Snapshot> {
        let e = self.e;
        let (m, d) = (e.model.m(), e.model.d());
        let it = e.interpolate(self.path, t, x)?;
        self.note(&it);
        e.model.eval_into(x, &mut self.coeffs);
        for i in 0..d {
            self.z[i] = (0..m).map(|l| self.coeffs.sigma[l * d + i] * it.grad[l]).sum();
        }
        Ok(self.snapshot(t, it.value, 0.0, None))
    }
}
