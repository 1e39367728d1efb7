//! Finite-difference stencils with linear-extrapolation ghost nodes, so the
//! second difference at an edge node is zero.

use super::grid::Grid;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Stencil {
    pub u: f64,
    /// Forward differences per axis.
    pub dp: [f64; 2],
    /// Backward differences per axis.
    pub dm: [f64; 2],
    pub dc: [f64; 2],
    /// Row-major `m×m`.
    pub hess: [f64; 4],
}

#[inline]
fn value(grid: &Grid, w: &[f64], i0: isize, i1: isize) -> f64 {
    let axes = grid.axes();
    let n0 = axes[0].nodes as isize;
    if i0 < 0 {
        return 2.0 * value(grid, w, 0, i1) - value(grid, w, 1, i1);
    }
    if i0 >= n0 {
        return 2.0 * value(grid, w, n0 - 1, i1) - value(grid, w, n0 - 2, i1);
    }
    if axes.len() == 1 {
        return w[i0 as usize];
    }
    let n1 = axes[1].nodes as isize;
    if i1 < 0 {
        return 2.0 * value(grid, w, i0, 0) - value(grid, w, i0, 1);
    }
    if i1 >= n1 {
        return 2.0 * value(grid, w, i0, n1 - 1) - value(grid, w, i0, n1 - 2);
    }
    w[(i0 * n1 + i1) as usize]
}

pub(crate) fn stencil(grid: &Grid, steps: &[f64], w: &[f64], idx: usize) -> Stencil {
    let mut s = Stencil { u: w[idx], ..Default::default() };
    let mi = grid.multi_index(idx);
    let (i0, i1) = (mi[0] as isize, mi[1] as isize);
    let u = s.u;
    if grid.dim() == 1 {
        let h = steps[0];
        let (wp, wm) = (value(grid, w, i0 + 1, 0), value(grid, w, i0 - 1, 0));
        s.dp[0] = (wp - u) / h;
        s.dm[0] = (u - wm) / h;
        s.dc[0] = (wp - wm) / (2.0 * h);
        s.hess[0] = (wp - 2.0 * u + wm) / (h * h);
        return s;
    }
    let (h0, h1) = (steps[0], steps[1]);
    let e = |a: isize, b: isize| value(grid, w, i0 + a, i1 + b);
    let (xp, xm, yp, ym) = (e(1, 0), e(-1, 0), e(0, 1), e(0, -1));
    s.dp = [(xp - u) / h0, (yp - u) / h1];
    s.dm = [(u - xm) / h0, (u - ym) / h1];
    s.dc = [(xp - xm) / (2.0 * h0), (yp - ym) / (2.0 * h1)];
    let mixed = (e(1, 1) - e(1, -1) - e(-1, 1) + e(-1, -1)) / (4.0 * h0 * h1);
    s.hess = [
        (xp - 2.0 * u + xm) / (h0 * h0),
        mixed,
        mixed,
        (yp - 2.0 * u + ym) / (h1 * h1),
    ];
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid::Axis;

    #[test]
    fn affine_exact_and_edges_flat() {
        let g = Grid::uniform(-1.0, 1.0, 17).unwrap();
        let w: Vec<f64> = (0..17).map(|i| 3.0 * g.point(i)[0] - 0.5).collect();
        for idx in [0, 8, 16] {
            let s = stencil(&g, &g.steps(), &w, idx);
            for d in [s.dp[0], s.dm[0], s.dc[0]] {
                assert!((d - 3.0).abs() < 1e-12);
            }
            assert!(s.hess[0].abs() < 1e-10);
        }
        let q: Vec<f64> = (0..17).map(|i| g.point(i)[0].powi(2)).collect();
        assert!((stencil(&g, &g.steps(), &q, 8).hess[0] - 2.0).abs() < 1e-12);
        assert!(stencil(&g, &g.steps(), &q, 0).hess[0].abs() < 1e-12);
    }

    #[test]
    fn mixed_derivative_2d() {
        let g = Grid::new(vec![
            Axis { lower: 0.0, upper: 1.0, nodes: 17 },
            Axis { lower: 0.0, upper: 2.0, nodes: 17 },
        ])
        .unwrap();
        let w: Vec<f64> = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                p[0] * p[1] + 2.0 * p[1]
            })
            .collect();
        for idx in [0, 40, g.len() - 1] {
            let s = stencil(&g, &g.steps(), &w, idx);
            let p = g.point(idx);
            assert!((s.hess[1] - 1.0).abs() < 1e-10);
            assert!((s.dc[0] - p[1]).abs() < 1e-10);
            assert!((s.dc[1] - p[0] - 2.0).abs() < 1e-10);
        }
    }
}
