//! The G-function `G(A) = ½ sup_{Q∈Σ} tr(AQ)` over a covariance uncertainty set.
//!
//! Two representations are supported: a variance interval `[σ̲², σ̄²]` for a
//! one-dimensional G-Brownian motion, and a finite list of symmetric positive
//! definite matrices (typically the extreme points of a matrix interval) for
//! any dimension. Both make the supremum exact.
//!
//! Hot loops work on flat row-major slices through [`UncertaintySet::sup`];
//! the matrix-valued API is [`g_value`].

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry check on query matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Candidate values closer than this (relative) to the best are treated as ties.
const TIE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Repr {
    Interval { lower: f64, upper: f64 },
    Finite { members: Vec<Vec<f64>> },
}

/// A bounded closed set of admissible covariance matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    dim: usize,
    repr: Repr,
    /// Cached candidates, flat row-major. For an interval: `[lower, upper]`.
    candidates: Vec<Vec<f64>>,
    traces: Vec<f64>,
    bounds: (f64, f64),
}

/// Value of the G-function and the member attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct GEvaluation {
    pub value: f64,
    pub maximizer: DMatrix<f64>,
}

impl UncertaintySet {
    /// Variance interval for `d = 1`.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower <= 0.0 || upper < lower {
            return Err(Error::InvalidSet(format!(
                "interval requires 0 < lower <= upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            dim: 1,
            repr: Repr::Interval { lower, upper },
            candidates: vec![vec![lower], vec![upper]],
            traces: vec![lower, upper],
            bounds: (lower, upper),
        })
    }

    /// Classical (no uncertainty) one-dimensional set `{σ²}`.
    pub fn classical(variance: f64) -> Result<Self> {
        Self::interval(variance, variance)
    }

    /// Finite set of symmetric positive definite matrices.
    pub fn finite(members: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidSet("finite set must be non-empty".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidSet("zero-dimensional member".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut flat = Vec::with_capacity(members.len());
        for (idx, q) in members.iter().enumerate() {
            if q.nrows() != dim || q.ncols() != dim {
                return Err(Error::InvalidSet(format!(
                    "member {idx} is {}x{}, expected {dim}x{dim}",
                    q.nrows(),
                    q.ncols()
                )));
            }
            if !is_symmetric(q, SYMMETRY_TOL) {
                return Err(Error::InvalidSet(format!("member {idx} is not symmetric")));
            }
            let eig = SymmetricEigen::new(q.clone()).eigenvalues;
            let (mn, mx) = eig
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
            if !(mn > 0.0) || !mx.is_finite() {
                return Err(Error::InvalidSet(format!(
                    "member {idx} is not positive definite (eigenvalues in [{mn}, {mx}])"
                )));
            }
            lo = lo.min(mn);
            hi = hi.max(mx);
            flat.push(to_flat(q));
        }
        let traces = flat.iter().map(|q| (0..dim).map(|i| q[i * dim + i]).sum()).collect();
        Ok(Self {
            dim,
            repr: Repr::Finite { members: flat.clone() },
            candidates: flat,
            traces,
            bounds: (lo, hi),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_interval(&self) -> bool {
        matches!(self.repr, Repr::Interval { .. })
    }

    /// Number of candidate maximizers (2 for an interval: lower, upper).
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Candidate `idx` as a flat row-major `d×d` slice.
    pub fn candidate(&self, idx: usize) -> &[f64] {
        &self.candidates[idx]
    }

    pub fn candidate_matrix(&self, idx: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.candidates[idx])
    }

    /// Index of the candidate with the largest trace.
    pub fn upper_index(&self) -> usize {
        argmax_first(&self.traces)
    }

    /// Index of the candidate with the smallest trace.
    pub fn lower_index(&self) -> usize {
        let neg: Vec<f64> = self.traces.iter().map(|t| -t).collect();
        argmax_first(&neg)
    }

    /// Whether a flat `d×d` matrix is an admissible covariance.
    pub fn contains(&self, q: &[f64]) -> bool {
        match &self.repr {
            Repr::Interval { lower, upper } => {
                q.len() == 1 && q[0] >= *lower * (1.0 - 1e-12) && q[0] <= *upper * (1.0 + 1e-12)
            }
            Repr::Finite { members } => members.iter().any(|m| {
                m.len() == q.len()
                    && m.iter().zip(q).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            }),
        }
    }

    /// `½ sup tr(AQ)` for a flat row-major `A`; returns the value and the
    /// index of the maximizing candidate. Ties go to the largest trace.
    ///
    /// `A` is assumed symmetric; no check is made here.
    #[inline]
    pub fn sup(&self, a: &[f64]) -> (f64, usize) {
        match &self.repr {
            Repr::Interval { lower, upper } => {
                let x = a[0];
                if x >= 0.0 {
                    (0.5 * (x * upper), 1)
                } else {
                    (0.5 * (x * lower), 0)
                }
            }
            Repr::Finite { members } => {
                let mut best = frobenius_dot(a, &members[0]);
                let mut best_idx = 0;
                for (idx, q) in members.iter().enumerate().skip(1) {
                    let v = frobenius_dot(a, q);
                    let tie = (v - best).abs() <= TIE_TOL * (1.0 + best.abs().max(v.abs()));
                    if (v > best && !tie) || (tie && self.traces[idx] > self.traces[best_idx]) {
                        best = v.max(best);
                        best_idx = idx;
                    }
                }
                (half_trace(a, &members[best_idx]), best_idx)
            }
        }
    }

    /// Eigenvalue bounds `(σ̲², σ̄²)`.
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// `Σ_ij a_ij q_ij`.
#[inline]
pub fn frobenius_dot(a: &[f64], q: &[f64]) -> f64 {
    a.iter().zip(q).map(|(x, y)| x * y).sum()
}

/// `½ tr(AQ)` for symmetric flat matrices. Used by both the G-function and
/// the `dK` increments so that attained suprema cancel exactly.
#[inline]
pub fn half_trace(a: &[f64], q: &[f64]) -> f64 {
    0.5 * frobenius_dot(a, q)
}

/// Evaluates `G(A)` and returns the maximizing covariance.
pub fn g_value(a: &DMatrix<f64>, set: &UncertaintySet) -> Result<GEvaluation> {
    let d = set.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::Shape(format!(
            "expected {d}x{d} matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::Shape("G-function argument is not symmetric".into()));
    }
    let flat = to_flat(a);
    let (value, idx) = set.sup(&flat);
    Ok(GEvaluation { value, maximizer: set.candidate_matrix(idx) })
}

/// Ellipticity constants `(σ̲², σ̄²)` of the set.
pub fn ellipticity_constants(set: &UncertaintySet) -> Result<(f64, f64)> {
    let (lo, hi) = set.bounds();
    if !(lo > 0.0) || hi < lo {
        return Err(Error::InvalidSet(format!("degenerate bounds ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

pub(crate) fn to_flat(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(a[(i, j)]);
        }
    }
    out
}

fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    let n = a.nrows();
    if n != a.ncols() {
        return false;
    }
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

fn argmax_first(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    #[test]
    fn interval_examples() {
        let set = UncertaintySet::interval(0.5, 1.0).unwrap();
        let up = g_value(&DMatrix::from_element(1, 1, 2.0), &set).unwrap();
        assert_eq!(up.value, 1.0);
        assert_eq!(up.maximizer[(0, 0)], 1.0);

        let down = g_value(&DMatrix::from_element(1, 1, -2.0), &set).unwrap();
        assert_eq!(down.value, -0.5);
        assert_eq!(down.maximizer[(0, 0)], 0.5);

        let zero = g_value(&DMatrix::from_element(1, 1, 0.0), &set).unwrap();
        assert_eq!(zero.value, 0.0);
        // tie: largest trace
        assert_eq!(zero.maximizer[(0, 0)], 1.0);
    }

    #[test]
    fn ellipticity_examples() {
        let iv = UncertaintySet::interval(0.5, 1.0).unwrap();
        assert_eq!(ellipticity_constants(&iv).unwrap(), (0.5, 1.0));

        let id = UncertaintySet::finite(vec![DMatrix::identity(2, 2)]).unwrap();
        let (lo, hi) = ellipticity_constants(&id).unwrap();
        assert_relative_eq!(lo, 1.0, epsilon = 1e-14);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-14);

        let two = UncertaintySet::finite(vec![diag(0.8, 1.2), diag(1.0, 1.0)]).unwrap();
        let (lo, hi) = ellipticity_constants(&two).unwrap();
        assert_relative_eq!(lo, 0.8, epsilon = 1e-14);
        assert_relative_eq!(hi, 1.2, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(UncertaintySet::interval(0.0, 1.0).is_err());
        assert!(UncertaintySet::interval(1.0, 0.5).is_err());
        assert!(UncertaintySet::finite(vec![]).is_err());
        assert!(UncertaintySet::finite(vec![diag(1.0, -0.1)]).is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        assert!(UncertaintySet::finite(vec![skew]).is_err());
    }

    #[test]
    fn shape_errors() {
        let set = UncertaintySet::finite(vec![diag(1.0, 1.0)]).unwrap();
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(g_value(&skew, &set), Err(Error::Shape(_))));
        assert!(matches!(g_value(&DMatrix::identity(3, 3), &set), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_set_picks_member() {
        let set = UncertaintySet::finite(vec![diag(0.8, 1.2), diag(1.2, 0.8)]).unwrap();
        let ev = g_value(&diag(1.0, 0.0), &set).unwrap();
        assert_relative_eq!(ev.value, 0.6);
        assert_eq!(ev.maximizer, diag(1.2, 0.8));
        // value is consistent with the returned maximizer
        let tr = (diag(1.0, 0.0) * &ev.maximizer).trace();
        assert_eq!(ev.value, 0.5 * tr);
    }

    #[test]
    fn finite_tie_prefers_largest_trace() {
        let set = UncertaintySet::finite(vec![diag(0.5, 0.5), diag(1.0, 1.0)]).unwrap();
        let ev = g_value(&DMatrix::zeros(2, 2), &set).unwrap();
        assert_eq!(ev.maximizer, diag(1.0, 1.0));
    }
}
