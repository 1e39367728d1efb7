use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gcore::UncertaintySet;
use crate::model::spec::{ModelSpec, PointCoeffs};
use crate::pde::operator::hamiltonian_into;
use crate::pde::solution::{ErgodicSolution, Interpolant, PdeSolution};

/// A covariance rate `Q ∈ Σ` with a factor `R`, `RRᵀ = Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    q: Vec<f64>,
    root: Vec<f64>,
}

impl Covariance {
    pub fn new(set: &UncertaintySet, q: &[f64]) -> Result<Self> {
        let d = set.dim();
        if q.len() != d * d {
            return Err(Error::Shape(format!("covariance needs {} entries", d * d)));
        }
        if !set.contains(q) {
            return Err(Error::InvalidSet(format!("control {q:?} is not a member of the uncertainty set")));
        }
        Ok(Self::unchecked(q))
    }

    pub fn scalar(set: &UncertaintySet, q: f64) -> Result<Self> {
        Self::new(set, &[q])
    }

    /// `Q` already known to be a set member (e.g. a candidate).
    pub(crate) fn unchecked(q: &[f64]) -> Self {
        let d = (q.len() as f64).sqrt().round() as usize;
        let root = if d == 1 {
            vec![q[0].sqrt()]
        } else {
            let m = DMatrix::from_row_slice(d, d, q);
            let l = m.cholesky().expect("set members are positive definite").l();
            (0..d * d).map(|k| l[(k / d, k % d)]).collect()
        };
        Self { q: q.to_vec(), root }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn root(&self) -> &[f64] {
        &self.root
    }
}

/// Worst-case feedback policy: the maximizer of `G` at the Hamiltonian built
/// from an interpolated solution.
#[derive(Clone)]
pub struct FeedbackPolicy {
    solution: Arc<PdeSolution>,
    model: ModelSpec,
    candidates: Vec<Covariance>,
}

impl fmt::Debug for FeedbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackPolicy")
            .field("nodes", &self.solution.grid.len())
            .field("candidates", &self.candidates.len())
            .finish()
    }
}

/// Something a feedback policy can be built from.
pub trait PolicySource {
    fn pde(&self) -> &PdeSolution;
}

impl PolicySource for PdeSolution {
    fn pde(&self) -> &PdeSolution {
        self
    }
}

impl PolicySource for ErgodicSolution {
    fn pde(&self) -> &PdeSolution {
        &self.solution
    }
}

pub fn worst_case_policy(solution: &impl PolicySource, model: &ModelSpec) -> Result<FeedbackPolicy> {
    let sol = solution.pde();
    if sol.grid.dim() != model.m() {
        return Err(Error::Shape("solution grid does not match the model state dimension".into()));
    }
    let set = model.uncertainty();
    let candidates = (0..set.num_candidates()).map(|i| Covariance::unchecked(set.candidate(i))).collect();
    Ok(FeedbackPolicy { solution: Arc::new(sol.clone()), model: model.clone(), candidates })
}

/// Per-path buffers for evaluating the policy.
pub(crate) struct PolicyScratch {
    z: Vec<f64>,
    h: Vec<f64>,
}

impl PolicyScratch {
    pub fn new(d: usize) -> Self {
        Self { z: vec![0.0; d], h: vec![0.0; d * d] }
    }
}

impl FeedbackPolicy {
    pub fn solution(&self) -> &PdeSolution {
        &self.solution
    }

    pub fn interpolate(&self, t: f64, x: &[f64]) -> Interpolant {
        self.solution.interpolate_at(t, x)
    }

    /// Candidate index maximizing `½tr(H(x)Q)`, given coefficients at `x`.
    pub(crate) fn select(&self, it: &Interpolant, x: &[f64], c: &PointCoeffs, s: &mut PolicyScratch) -> usize {
        let m = self.model.m();
        hamiltonian_into(
            &self.model,
            c,
            x,
            it.value,
            &it.grad[..m],
            &it.hess[..m * m],
            f64::INFINITY,
            &mut s.z,
            &mut s.h,
        );
        self.model.uncertainty().sup(&s.h).1
    }

    /// `Q*` at a state (parabolic solutions use `t`).
    pub fn covariance_at(&self, t: f64, x: &[f64]) -> &[f64] {
        let c = self.model.point(x);
        let it = self.interpolate(t, x);
        let mut s = PolicyScratch::new(self.model.d());
        self.candidates[self.select(&it, x, &c, &mut s)].q()
    }

    pub(crate) fn candidate(&self, idx: usize) -> &Covariance {
        &self.candidates[idx]
    }
}

#[derive(Debug, Clone)]
pub enum VolControl {
    Constant(Covariance),
    /// `values[k]` is active on `[breakpoints[k−1], breakpoints[k])`; a step
    /// uses the value active at its midpoint.
    Piecewise { breakpoints: Vec<f64>, values: Vec<Covariance> },
    Feedback(FeedbackPolicy),
}

impl VolControl {
    pub fn constant(set: &UncertaintySet, q: &[f64]) -> Result<Self> {
        Ok(VolControl::Constant(Covariance::new(set, q)?))
    }

    pub fn piecewise(set: &UncertaintySet, breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::Config("piecewise control needs one more value than breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("breakpoints must be strictly increasing".into()));
        }
        let values = values.iter().map(|q| Covariance::new(set, q)).collect::<Result<_>>()?;
        Ok(VolControl::Piecewise { breakpoints, values })
    }

    pub fn label(&self) -> String {
        match self {
            VolControl::Constant(c) => format!("constant{:?}", c.q()),
            VolControl::Piecewise { breakpoints, .. } => format!("piecewise({} pieces)", breakpoints.len() + 1),
            VolControl::Feedback(_) => "feedback".to_string(),
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, VolControl::Feedback(_))
    }

    /// Piecewise segment active at time `t`.
    pub(crate) fn piece(breakpoints: &[f64], t: f64) -> usize {
        breakpoints.partition_point(|&b| b <= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_and_roots() {
        let set = UncertaintySet::interval(0.8, 1.2).unwrap();
        assert!(Covariance::scalar(&set, 1.3).is_err());
        let c = Covariance::scalar(&set, 1.0).unwrap();
        assert_eq!(c.root(), &[1.0]);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let fs = UncertaintySet::finite(vec![a, DMatrix::identity(2, 2)]).unwrap();
        let c = Covariance::new(&fs, &[1.0, 0.3, 0.3, 0.5]).unwrap();
        let r = c.root();
        let rrt = |i: usize, j: usize| (0..2).map(|k| r[i * 2 + k] * r[j * 2 + k]).sum::<f64>();
        assert!((rrt(0, 1) - 0.3).abs() < 1e-15 && (rrt(1, 1) - 0.5).abs() < 1e-15);
        assert!(Covariance::new(&fs, &[0.9, 0.0, 0.0, 0.9]).is_err());
    }

    #[test]
    fn piecewise_segments() {
        let set = UncertaintySet::interval(0.8, 1.2).unwrap();
        assert!(VolControl::piecewise(&set, vec![0.5], vec![vec![1.2]]).is_err());
        let bp = [0.5, 0.75];
        assert_eq!(VolControl::piece(&bp, 0.2), 0);
        assert_eq!(VolControl::piece(&bp, 0.5), 1);
        assert_eq!(VolControl::piece(&bp, 0.9), 2);
    }
}
