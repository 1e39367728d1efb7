//! Numerical estimates of the Lipschitz, boundedness and dissipativity
//! constants of a pricing-kernel model over a sampled box.
//!
//! Every estimate is a max (or min) over all pairs of sample nodes, so a
//! nested refinement of the box can only move them outward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::spec::{ModelSpec, PointCoeffs};

/// Tensor sample grid: `nodes` points per axis between `lower` and `upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: usize,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: usize) -> Self {
        Self { lower, upper, nodes }
    }

    /// Nested refinement: every old node stays a node.
    pub fn refined(&self) -> Self {
        Self { nodes: 2 * self.nodes - 1, ..self.clone() }
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let m = self.lower.len();
        let axis = |a: usize| -> Vec<f64> {
            let (lo, hi) = (self.lower[a], self.upper[a]);
            (0..self.nodes)
                .map(|i| lo + (hi - lo) * i as f64 / (self.nodes - 1) as f64)
                .collect()
        };
        let axes: Vec<Vec<f64>> = (0..m).map(axis).collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub c1: f64,
    pub c_sigma: f64,
    pub m_sigma: f64,
    pub eta_hat: f64,
    pub noise_dim: usize,
    pub gap: f64,
    /// (i) `h_ij = h_ji`, `k_ij = k_ji` on every sample.
    pub symmetric: bool,
    /// (ii) all Lipschitz/bound estimates finite.
    pub lipschitz: bool,
    /// (iii) `η̂ > 0`.
    pub dissipative: bool,
    /// (iv) `gap > 0`.
    pub gap_positive: bool,
    pub sample: SampleBox,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.lipschitz && self.dissipative && self.gap_positive
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check_assumptions(model: &ModelSpec, sample: &SampleBox) -> Result<AssumptionReport> {
    let (m, d) = (model.m(), model.d());
    if sample.lower.len() != m || sample.upper.len() != m {
        return Err(Error::Config(format!("sample box must have {m} axes")));
    }
    if sample.nodes < 10 {
        return Err(Error::Config("sample box needs at least 10 nodes per axis".into()));
    }
    if sample.lower.iter().zip(&sample.upper).any(|(a, b)| !(b > a)) {
        return Err(Error::Config("sample box is degenerate".into()));
    }

    let points = sample.points();
    let mut coeffs = Vec::with_capacity(points.len());
    for x in &points {
        let mut p = PointCoeffs::new(m, d);
        model.eval_checked(x, &mut p)?;
        coeffs.push(p);
    }

    let symmetric = coeffs.iter().all(|p| {
        (0..d).all(|i| {
            (0..d).all(|j| {
                p.k[i * d + j] == p.k[j * d + i]
                    && (0..m).all(|l| p.h[(i * d + j) * m + l] == p.h[(j * d + i) * m + l])
            })
        })
    });

    let set = model.uncertainty();
    let (lo2, hi2) = set.bounds();
    let mut c1: f64 = 0.0;
    let mut c_sigma: f64 = 0.0;
    let m_sigma = coeffs.iter().map(|p| l2(p.sigma.iter().copied())).fold(0.0, f64::max);
    let mut eta_hat = f64::INFINITY;
    let mut a = vec![0.0; d * d];

    for (ia, (xa, pa)) in points.iter().zip(&coeffs).enumerate() {
        for (xb, pb) in points[ia + 1..].iter().zip(&coeffs[ia + 1..]) {
            let dx2: f64 = xa.iter().zip(xb).map(|(u, v)| (u - v) * (u - v)).sum();
            let dx = dx2.sqrt();

            let mut lip = l2(pa.b.iter().zip(&pb.b).map(|(u, v)| u - v));
            lip += (pa.r - pb.r).abs();
            lip += pa.k.iter().zip(&pb.k).map(|(u, v)| (u - v).abs()).sum::<f64>();
            for i in 0..d {
                for j in 0..d {
                    lip += 0.5 * (pa.v[i] * pa.v[j] - pb.v[i] * pb.v[j]).abs();
                    let s = (i * d + j) * m;
                    lip += l2((0..m).map(|l| pa.h[s + l] - pb.h[s + l]));
                    lip += l2((0..m).map(|l| pa.dij[s + l] - pb.dij[s + l]));
                }
            }
            c1 = c1.max(lip / dx);
            c_sigma = c_sigma.max(l2(pa.sigma.iter().zip(&pb.sigma).map(|(u, v)| u - v)) / dx);

            for i in 0..d {
                for k in 0..d {
                    let mut acc = 0.0;
                    for l in 0..m {
                        let ds_i = pa.sigma[l * d + i] - pb.sigma[l * d + i];
                        let ds_k = pa.sigma[l * d + k] - pb.sigma[l * d + k];
                        acc += ds_i * ds_k;
                        let s = (i * d + k) * m + l;
                        let dhd = (pa.h[s] - pa.dij[s]) - (pb.h[s] - pb.dij[s]);
                        acc += 2.0 * (xa[l] - xb[l]) * dhd;
                    }
                    a[i * d + k] = acc;
                }
            }
            let (g, _) = set.sup(&a);
            let drift: f64 = (0..m).map(|l| (xa[l] - xb[l]) * (pa.b[l] - pb.b[l])).sum();
            eta_hat = eta_hat.min(-(g + drift) / dx2);
        }
    }

    let (sbar, sunder) = (hi2.sqrt(), lo2.sqrt());
    let dd = d as f64;
    let gap = eta_hat
        - 0.5
            * (1.0 + hi2)
            * (c_sigma * dd + 4.0 * (2.0 * c_sigma * c1 * dd * sbar * m_sigma / sunder).sqrt());
    let lipschitz = c1.is_finite() && c_sigma.is_finite() && m_sigma.is_finite();
    Ok(AssumptionReport {
        c1,
        c_sigma,
        m_sigma,
        eta_hat,
        noise_dim: d,
        gap,
        symmetric,
        lipschitz,
        dissipative: eta_hat > 0.0,
        gap_positive: gap > 0.0,
        sample: sample.clone(),
    })
}

/// Constants entering the gradient truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    pub mu: f64,
    pub eta: f64,
    pub c_sigma: f64,
    pub c3: f64,
    pub c_phi: f64,
    /// `σ̄` (not squared).
    pub sigma_bar: f64,
    /// `σ̲` (not squared).
    pub sigma_under: f64,
    pub m_sigma: f64,
}

/// Truncation level for the quadratic term:
///
/// `M = (η + μ − (1+σ̄²)C_σC₃ + 4C_Φ(1+σ̄²)C_σC₃·σ̄M_σ/σ̲) / (4(1+σ̄²)C_σC₃)`.
///
/// Returns `+∞` when `C_σC₃ = 0` (no quadratic growth to control).
pub fn truncation_level(p: &TruncationParams) -> Result<f64> {
    let inputs = [p.c_sigma, p.c3, p.c_phi, p.sigma_bar, p.m_sigma];
    if inputs.iter().any(|v| !(*v >= 0.0)) || !(p.sigma_under > 0.0) {
        return Err(Error::Domain("truncation constants must be non-negative".into()));
    }
    let k = (1.0 + p.sigma_bar * p.sigma_bar) * p.c_sigma * p.c3;
    if k == 0.0 {
        return Ok(f64::INFINITY);
    }
    let num = p.eta + p.mu - k + 4.0 * p.c_phi * k * p.sigma_bar * p.m_sigma / p.sigma_under;
    Ok(num / (4.0 * k))
}

/// Truncation level for the pricing-kernel generator, whose quadratic part
/// `½z_iz_j` has `C₃ = d/2`. `mu` is the monotonicity constant in `y`
/// (0 for the parabolic equation, `δ` for the discounted one).
pub fn pricing_truncation(model: &ModelSpec, report: &AssumptionReport, mu: f64) -> Result<f64> {
    let (lo, hi) = model.uncertainty().bounds();
    truncation_level(&TruncationParams {
        mu,
        eta: report.eta_hat,
        c_sigma: report.c_sigma,
        c3: 0.5 * model.d() as f64,
        c_phi: 0.0,
        sigma_bar: hi.sqrt(),
        sigma_under: lo.sqrt(),
        m_sigma: report.m_sigma,
    })
}
