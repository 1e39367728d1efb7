//! The nonlinear operator `F(x, u, Du, D²u) = G(H) + ⟨b, Du⟩ + f` and its
//! upwinded discretization.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::stencil::{stencil, Stencil};
use crate::error::{Error, Result};
use crate::gcore::UncertaintySet;
use crate::model::assumptions::{check_assumptions, pricing_truncation, AssumptionReport, SampleBox};
use crate::model::spec::{Mode, ModelSpec, PointCoeffs};

/// Explicit-scheme safety factor applied to the local stability rate.
pub const CFL_SAFETY: f64 = 1.05;

/// How the quadratic gradient term is truncated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Level from the assumption constants when they give a finite positive
    /// value (pricing mode only).
    #[default]
    Auto,
    Fixed(f64),
    Off,
}

/// `z^M = (|z| ∧ M)/|z| · z`, with `0/0 = 0`.
#[inline]
pub fn truncate_z(z: &mut [f64], level: f64) {
    if !level.is_finite() {
        return;
    }
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > level {
        let s = level / n;
        z.iter_mut().for_each(|v| *v *= s);
    }
}

/// Fills `out` (flat `d×d`) with the Hamiltonian matrix at one state and
/// returns the zero-order driver (`−r` in pricing-kernel mode, `f(x, y, z)`
/// otherwise). `z` receives `σᵀp` after truncation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn hamiltonian_into(
    model: &ModelSpec,
    c: &PointCoeffs,
    x: &[f64],
    u: f64,
    p: &[f64],
    hess: &[f64],
    level: f64,
    z: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let (m, d) = (c.m, c.d);
    for (i, zi) in z.iter_mut().enumerate().take(d) {
        *zi = (0..m).map(|l| c.sigma[l * d + i] * p[l]).sum();
    }
    truncate_z(&mut z[..d], level);
    let drivers = model.drivers();
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for l in 0..m {
                let sli = c.sigma[l * d + i];
                for l2 in 0..m {
                    acc += sli * hess[l * m + l2] * c.sigma[l2 * d + j];
                }
            }
            let base = (i * d + j) * m;
            match drivers {
                None => {
                    for l in 0..m {
                        acc += 2.0 * p[l] * (c.h[base + l] - c.dij[base + l]);
                    }
                    acc += -2.0 * c.k[i * d + j] + c.v[i] * c.v[j] + z[i] * z[j];
                }
                Some(dr) => {
                    for l in 0..m {
                        acc += 2.0 * p[l] * c.h[base + l];
                    }
                    acc += 2.0 * (dr.g[i * d + j])(x, u, &z[..d]);
                }
            }
            out[i * d + j] = acc;
            out[j * d + i] = acc;
        }
    }
    match drivers {
        None => -c.r,
        Some(dr) => (dr.f)(x, u, &z[..d]),
    }
}

/// Hamiltonian matrix `H` at a state from a value, gradient and Hessian.
pub fn hamiltonian_h(
    x: &[f64],
    u: f64,
    grad: &[f64],
    hess: &DMatrix<f64>,
    model: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let (m, d) = (model.m(), model.d());
    if x.len() != m || grad.len() != m || hess.nrows() != m || hess.ncols() != m {
        return Err(Error::Shape(format!("state quantities must have dimension {m}")));
    }
    let mut c = PointCoeffs::new(m, d);
    model.eval_into(x, &mut c);
    let hflat: Vec<f64> = (0..m * m).map(|k| hess[(k / m, k % m)]).collect();
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; d * d];
    hamiltonian_into(model, &c, x, u, grad, &hflat, f64::INFINITY, &mut z, &mut out);
    Ok(DMatrix::from_row_slice(d, d, &out))
}

/// Zero-order coupling added to the generator: `G(H + 2γ²s) + … + γ¹s` with
/// `s = δu` (discounted) or `s = λ` (ergodic residual).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ZeroOrder {
    pub kind: Shift,
    pub gamma1: f64,
    pub gamma2: Vec<f64>,
    gamma2_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Shift {
    None,
    Discount(f64),
    Constant(f64),
}

impl ZeroOrder {
    pub fn none(d: usize) -> Self {
        Self::new(Shift::None, 0.0, vec![0.0; d * d])
    }

    pub fn new(kind: Shift, gamma1: f64, gamma2: Vec<f64>) -> Self {
        let gamma2_zero = gamma2.iter().all(|g| *g == 0.0);
        Self { kind, gamma1, gamma2, gamma2_zero }
    }

    pub fn gamma2_is_zero(&self) -> bool {
        self.gamma2_zero
    }

    #[inline]
    fn shift(&self, u: f64) -> f64 {
        match self.kind {
            Shift::None => 0.0,
            Shift::Discount(delta) => delta * u,
            Shift::Constant(c) => c,
        }
    }
}

pub(crate) struct Scratch {
    z: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    pub fn new(d: usize) -> Self {
        Self { z: vec![0.0; d], h: vec![0.0; d * d], p: vec![0.0; 2] }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeOut {
    pub f: f64,
    /// Stability rate: `Δt·rate ≤ 1` keeps the explicit update monotone.
    pub rate: f64,
}

/// Discrete operator bound to a model and grid, with coefficients cached at
/// the nodes.
pub(crate) struct Operator<'a> {
    pub model: &'a ModelSpec,
    pub grid: &'a Grid,
    coeffs: Vec<PointCoeffs>,
    points: Vec<f64>,
    steps: Vec<f64>,
    sbar2: f64,
    pub level: f64,
}

const CHUNK: usize = 128;

impl<'a> Operator<'a> {
    pub fn new(model: &'a ModelSpec, grid: &'a Grid, level: f64) -> Result<Self> {
        let m = model.m();
        if grid.dim() != m {
            return Err(Error::Config(format!(
                "grid has {} axes but the model state dimension is {m}",
                grid.dim()
            )));
        }
        let n = grid.len();
        let mut points = vec![0.0; n * m];
        let mut coeffs = Vec::with_capacity(n);
        for idx in 0..n {
            grid.point_into(idx, &mut points[idx * m..(idx + 1) * m]);
            let mut c = PointCoeffs::new(m, model.d());
            model.eval_checked(&points[idx * m..(idx + 1) * m], &mut c)?;
            coeffs.push(c);
        }
        Ok(Self {
            model,
            grid,
            coeffs,
            points,
            steps: grid.steps(),
            sbar2: model.uncertainty().bounds().1,
            level,
        })
    }

    pub fn set(&self) -> &UncertaintySet {
        self.model.uncertainty()
    }

    pub fn stencil(&self, w: &[f64], idx: usize) -> Stencil {
        stencil(self.grid, &self.steps, w, idx)
    }

    pub fn x(&self, idx: usize) -> &[f64] {
        let m = self.grid.dim();
        &self.points[idx * m..(idx + 1) * m]
    }

    /// `(F, maximizer index)` for given derivatives.
    #[inline]
    fn eval_f(
        &self,
        idx: usize,
        u: f64,
        p: &[f64],
        hess: &[f64],
        level: f64,
        zo: &ZeroOrder,
        s: &mut Scratch,
    ) -> (f64, usize) {
        let c = &self.coeffs[idx];
        let x = self.x(idx);
        let f0 = hamiltonian_into(self.model, c, x, u, p, hess, level, &mut s.z, &mut s.h);
        let shift = zo.shift(u);
        if !zo.gamma2_zero {
            for (hk, gk) in s.h.iter_mut().zip(&zo.gamma2) {
                *hk += 2.0 * gk * shift;
            }
        }
        let (g, q) = self.set().sup(&s.h);
        let drift: f64 = c.b.iter().zip(p).map(|(b, p)| b * p).sum();
        (g + drift + f0 + zo.gamma1 * shift, q)
    }

    /// Upwinded operator value at a node.
    pub fn node(&self, w: &[f64], idx: usize, zo: &ZeroOrder, s: &mut Scratch) -> NodeOut {
        let m = self.grid.dim();
        let st = self.stencil(w, idx);
        let hess = &st.hess[..m * m];
        let mut rate = 0.0;
        for l in 0..m {
            s.p[l] = st.dc[l];
        }
        let mut p = [st.dc[0], st.dc[1]];
        for l in 0..m {
            let eps = 1e-6 * (1.0 + st.dc[l].abs());
            p[l] = st.dc[l] + eps;
            let (fp, _) = self.eval_f(idx, st.u, &p[..m], hess, self.level, zo, s);
            p[l] = st.dc[l] - eps;
            let (fm, _) = self.eval_f(idx, st.u, &p[..m], hess, self.level, zo, s);
            p[l] = st.dc[l];
            let beta = (fp - fm) / (2.0 * eps);
            s.p[l] = if beta > 0.0 {
                st.dp[l]
            } else if beta < 0.0 {
                st.dm[l]
            } else {
                st.dc[l]
            };
            let c = &self.coeffs[idx];
            let d = c.d;
            let sig2: f64 = (0..d).map(|i| c.sigma[l * d + i].powi(2)).sum();
            let h = self.steps[l];
            rate += self.sbar2 * sig2 / (h * h) + beta.abs() / h;
        }
        let pu = [s.p[0], s.p[1]];
        let (f, q) = self.eval_f(idx, st.u, &pu[..m], hess, self.level, zo, s);
        if let Shift::Discount(delta) = zo.kind {
            let qm = self.set().candidate(q);
            let g2: f64 = zo.gamma2.iter().zip(qm).map(|(g, q)| g * q).sum();
            rate += (delta * (zo.gamma1 + g2)).abs();
        }
        NodeOut { f, rate }
    }

    /// Operator with central first differences and no truncation.
    pub fn central(&self, w: &[f64], idx: usize, zo: &ZeroOrder, s: &mut Scratch) -> f64 {
        let m = self.grid.dim();
        let st = self.stencil(w, idx);
        self.eval_f(idx, st.u, &st.dc[..m], &st.hess[..m * m], f64::INFINITY, zo, s).0
    }

    /// Applies the upwinded operator at every node (Jacobi: reads `w` only)
    /// and returns the largest stability rate.
    pub fn apply(&self, w: &[f64], zo: &ZeroOrder, out: &mut [f64]) -> f64 {
        let d = self.model.d();
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut s = Scratch::new(d);
                let mut rmax: f64 = 0.0;
                for (k, o) in chunk.iter_mut().enumerate() {
                    let r = self.node(w, ci * CHUNK + k, zo, &mut s);
                    *o = r.f;
                    rmax = rmax.max(r.rate);
                }
                rmax
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn apply_central(&self, w: &[f64], zo: &ZeroOrder) -> Vec<f64> {
        let d = self.model.d();
        let mut out = vec![0.0; w.len()];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let mut s = Scratch::new(d);
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = self.central(w, ci * CHUNK + k, zo, &mut s);
            }
        });
        out
    }

    /// Central gradients and Hessians at every node.
    pub fn derivatives(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.grid.dim();
        let n = w.len();
        let mut grad = Vec::with_capacity(n * m);
        let mut hess = Vec::with_capacity(n * m * m);
        for idx in 0..n {
            let st = self.stencil(w, idx);
            grad.extend_from_slice(&st.dc[..m]);
            hess.extend_from_slice(&st.hess[..m * m]);
        }
        (grad, hess)
    }

    /// Largest `|σᵀDu|` over nodes satisfying `keep`.
    pub fn max_z(&self, w: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let m = self.grid.dim();
        (0..w.len())
            .filter(|&i| keep(i))
            .map(|idx| {
                let st = self.stencil(w, idx);
                let c = &self.coeffs[idx];
                (0..c.d)
                    .map(|i| (0..m).map(|l| c.sigma[l * c.d + i] * st.dc[l]).sum::<f64>().powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Assumption report over the grid box (at most 41 samples per axis).
pub fn grid_assumption_report(model: &ModelSpec, grid: &Grid) -> Result<AssumptionReport> {
    let axes = grid.axes();
    let nodes = axes.iter().map(|a| a.nodes).min().unwrap_or(16).clamp(10, 41);
    let sample = SampleBox::new(
        axes.iter().map(|a| a.lower).collect(),
        axes.iter().map(|a| a.upper).collect(),
        nodes,
    );
    check_assumptions(model, &sample)
}

/// Resolves a truncation policy to a level (`+∞` when inactive).
pub fn resolve_truncation(
    model: &ModelSpec,
    report: Option<&AssumptionReport>,
    policy: Truncation,
    mu: f64,
) -> Result<f64> {
    match policy {
        Truncation::Off => Ok(f64::INFINITY),
        Truncation::Fixed(m) if m > 0.0 => Ok(m),
        Truncation::Fixed(m) => Err(Error::Config(format!("truncation level must be positive, got {m}"))),
        Truncation::Auto => {
            let Some(report) = report else { return Ok(f64::INFINITY) };
            if model.mode() != Mode::PricingKernel || !report.eta_hat.is_finite() {
                return Ok(f64::INFINITY);
            }
            let level = pricing_truncation(model, report, mu)?;
            Ok(if level.is_finite() && level > 0.0 { level } else { f64::INFINITY })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{constant_model, ou_model};

    #[test]
    fn hamiltonian_examples() {
        let c = constant_model(0.02, 0.3, 0.5, 1.0).unwrap();
        let h = hamiltonian_h(&[0.4], 0.0, &[0.0], &DMatrix::zeros(1, 1), &c).unwrap();
        assert!((h[(0, 0)] - 0.09).abs() < 1e-15);

        let ou = ou_model(1.0, 0.05, 0.2, 0.8, 1.2).unwrap();
        let h = hamiltonian_h(&[0.3], 1.0, &[-1.0], &DMatrix::zeros(1, 1), &ou).unwrap();
        assert!((h[(0, 0)] - 0.04).abs() < 1e-15);

        let zero = ModelSpec::builder(1, 1, UncertaintySet::interval(1.0, 1.0).unwrap())
            .build()
            .unwrap();
        let h = hamiltonian_h(&[0.0], 0.0, &[0.0], &DMatrix::zeros(1, 1), &zero).unwrap();
        assert_eq!(h[(0, 0)], 0.0);
        assert!(hamiltonian_h(&[0.0, 1.0], 0.0, &[0.0], &DMatrix::zeros(1, 1), &zero).is_err());
    }

    #[test]
    fn truncation_convention() {
        let mut z = [3.0, 4.0];
        truncate_z(&mut z, 1.0);
        assert!((z[0] - 0.6).abs() < 1e-15 && (z[1] - 0.8).abs() < 1e-15);
        let mut zero = [0.0, 0.0];
        truncate_z(&mut zero, 0.5);
        assert_eq!(zero, [0.0, 0.0]);
        let mut big = [1e6];
        truncate_z(&mut big, f64::INFINITY);
        assert_eq!(big, [1e6]);
    }

    #[test]
    fn upwind_operator_exact_on_affine_ou() {
        let ou = ou_model(1.0, 0.05, 0.2, 0.8, 1.2).unwrap();
        let grid = Grid::uniform(-2.0, 2.0, 65).unwrap();
        let op = Operator::new(&ou, &grid, f64::INFINITY).unwrap();
        let w: Vec<f64> = (0..grid.len()).map(|i| -grid.point(i)[0]).collect();
        let mut out = vec![0.0; w.len()];
        op.apply(&w, &ZeroOrder::none(1), &mut out);
        for (i, f) in out.iter().enumerate() {
            // F(−x) = ½·1.2·0.04 − (0.05 − x) − x = −0.026
            assert!((f + 0.026).abs() < 1e-12, "node {i}: {f}");
        }
    }
}
