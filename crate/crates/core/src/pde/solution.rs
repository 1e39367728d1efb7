use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::stencil::stencil;
use crate::io::write_row;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub linf: f64,
    pub l2: f64,
    /// Interior nodes the statistics were taken over.
    pub nodes: usize,
}

impl ResidualStats {
    /// Statistics over nodes outside the `band`-node edge layer.
    pub fn interior(grid: &Grid, residual: &[f64], band: usize) -> Self {
        let inner: Vec<f64> = (0..residual.len())
            .filter(|&i| !grid.in_band(i, band))
            .map(|i| residual[i])
            .collect();
        let n = inner.len().max(1);
        Self {
            linf: inner.iter().fold(0.0, |a, r| a.max(r.abs())),
            l2: (inner.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt(),
            nodes: inner.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub iterations: usize,
    /// Last update norm divided by the pseudo-time step.
    pub final_rate: f64,
    pub dt: f64,
    /// Active truncation level; `None` when no truncation applies.
    pub truncation: Option<f64>,
}

/// Solution snapshots of a parabolic solve, increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlices {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub grid: Grid,
    /// `u`, or `w(0, ·)` for parabolic solves.
    pub values: Vec<f64>,
    /// Central differences, `m` per node.
    pub gradient: Vec<f64>,
    /// Second central differences, `m×m` per node.
    pub hessian: Vec<f64>,
    pub residual: Vec<f64>,
    pub stats: ResidualStats,
    pub info: SolveInfo,
    pub slices: Option<TimeSlices>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaStep {
    pub delta: f64,
    /// `δ·u^δ(x_anchor)`.
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    /// `u` normalized so that `u(x_anchor) = 0`.
    pub solution: PdeSolution,
    pub lambda: f64,
    pub anchor: usize,
    pub trace: Vec<DeltaStep>,
    pub gamma1: f64,
    pub gamma2: Vec<f64>,
    /// Non-fatal diagnostics, e.g. a failed assumption clause.
    pub warnings: Vec<String>,
}

/// Value and derivatives of a grid function at an arbitrary state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolant {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 4],
    /// Largest distance outside the grid as a fraction of the axis width.
    pub excess: f64,
}

impl Interpolant {
    pub fn outside(&self) -> bool {
        self.excess > 0.0
    }
}

/// Multilinear interpolation of nodal values and central derivatives.
/// Outside the grid the gradient is held constant and the value extended
/// linearly with it.
pub(crate) fn interpolate(grid: &Grid, steps: &[f64], w: &[f64], x: &[f64]) -> Interpolant {
    let m = grid.dim();
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    let mut clamped = [0.0f64; 2];
    let mut excess: f64 = 0.0;
    for (k, a) in grid.axes().iter().enumerate() {
        let xc = x[k].clamp(a.lower, a.upper);
        excess = excess.max((x[k] - xc).abs() / a.width());
        clamped[k] = xc;
        let t = (xc - a.lower) / steps[k];
        let i = (t.floor() as usize).min(a.nodes - 2);
        base[k] = i;
        frac[k] = (t - i as f64).clamp(0.0, 1.0);
    }
    let mut out = Interpolant { value: 0.0, grad: [0.0; 2], hess: [0.0; 4], excess };
    let corners = if m == 1 { 2 } else { 4 };
    for c in 0..corners {
        let mut wt = 1.0;
        let mut mi = [0usize; 2];
        for k in 0..m {
            let up = (c >> k) & 1;
            mi[k] = base[k] + up;
            wt *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
        }
        if wt == 0.0 {
            continue;
        }
        let st = stencil(grid, steps, w, grid.flat_index(mi));
        out.value += wt * st.u;
        for k in 0..m {
            out.grad[k] += wt * st.dc[k];
        }
        for k in 0..m * m {
            out.hess[k] += wt * st.hess[k];
        }
    }
    for k in 0..m {
        out.value += out.grad[k] * (x[k] - clamped[k]);
    }
    out
}

impl PdeSolution {
    pub fn interpolate(&self, x: &[f64]) -> Interpolant {
        interpolate(&self.grid, &self.grid.steps(), &self.values, x)
    }

    /// Interpolates in time between stored slices (parabolic solutions);
    /// stationary solutions ignore `t`.
    pub fn interpolate_at(&self, t: f64, x: &[f64]) -> Interpolant {
        let Some(sl) = &self.slices else { return self.interpolate(x) };
        let steps = self.grid.steps();
        let n = sl.times.len();
        if n == 1 || t <= sl.times[0] {
            return interpolate(&self.grid, &steps, &sl.values[0], x);
        }
        if t >= sl.times[n - 1] {
            return interpolate(&self.grid, &steps, &sl.values[n - 1], x);
        }
        let hi = sl.times.partition_point(|&s| s <= t).min(n - 1);
        let lo = hi - 1;
        let f = (t - sl.times[lo]) / (sl.times[hi] - sl.times[lo]);
        let a = interpolate(&self.grid, &steps, &sl.values[lo], x);
        let b = interpolate(&self.grid, &steps, &sl.values[hi], x);
        let mix = |p: f64, q: f64| (1.0 - f) * p + f * q;
        Interpolant {
            value: mix(a.value, b.value),
            grad: [mix(a.grad[0], b.grad[0]), mix(a.grad[1], b.grad[1])],
            hess: std::array::from_fn(|k| mix(a.hess[k], b.hess[k])),
            excess: a.excess,
        }
    }

    /// One row per node: coordinates, value, gradient components, residual.
    /// Parabolic solutions with slices write every slice with a leading `t`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = self.grid.dim();
        let mut header: Vec<String> = Vec::new();
        if self.slices.is_some() {
            header.push("t".into());
        }
        header.extend((1..=m).map(|k| format!("x{k}")));
        header.push("value".into());
        header.extend((1..=m).map(|k| format!("grad_x{k}")));
        header.push("residual".into());
        writeln!(w, "{}", header.join(","))?;

        let steps = self.grid.steps();
        let mut row = Vec::with_capacity(2 * m + 3);
        let mut emit = |w: &mut W, t: Option<f64>, vals: &[f64], res: Option<&[f64]>| {
            for idx in 0..self.grid.len() {
                row.clear();
                row.extend(t);
                row.extend(self.grid.point(idx));
                let st = stencil(&self.grid, &steps, vals, idx);
                row.push(st.u);
                row.extend_from_slice(&st.dc[..m]);
                row.push(res.map_or(f64::NAN, |r| r[idx]));
                write_row(w, &row)?;
            }
            Ok::<(), io::Error>(())
        };
        match &self.slices {
            None => emit(w, None, &self.values, Some(&self.residual))?,
            Some(sl) => {
                for (k, (t, vals)) in sl.times.iter().zip(&sl.values).enumerate() {
                    let res = (k == 0).then_some(self.residual.as_slice());
                    emit(w, Some(*t), vals, res)?;
                }
            }
        }
        Ok(())
    }
}

impl ErgodicSolution {
    pub fn interpolate(&self, x: &[f64]) -> Interpolant {
        self.solution.interpolate(x)
    }

    pub fn grid(&self) -> &Grid {
        &self.solution.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.solution.values
    }
}
