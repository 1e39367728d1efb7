use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gcore::UncertaintySet;
use crate::model::coefficient::{CoefficientFn, Table};
use crate::model::expr::{BinOp, Expr};

/// Generic driver `(x, y, z) ↦ ℝ`.
pub type DriverFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// User drivers `f(x, y, z)` and `g_ij(x, y, z)` replacing the pricing-kernel
/// generator.
#[derive(Clone)]
pub struct GenericDrivers {
    pub f: DriverFn,
    /// Row-major `d×d`; must be symmetric in `(i, j)`.
    pub g: Vec<DriverFn>,
    /// Set when neither driver reads `y`; enables relative-value iteration
    /// in the ergodic solver.
    pub y_independent: bool,
}

impl fmt::Debug for GenericDrivers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericDrivers")
            .field("g", &format_args!("[{} fns]", self.g.len()))
            .field("y_independent", &self.y_independent)
            .finish()
    }
}

/// Which generator the PDE solvers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `f = −r`, `g_ij = −k_ij + ½v_iv_j + ½z_iz_j`, drift `h_ij − d_ij`.
    PricingKernel,
    Generic,
}

/// Coefficients of the G-SDE and the pricing kernel.
///
/// Index conventions (all row-major): `σ[l*d + i]` is `σ_{l,i}`;
/// `h[(i*d + j)*m + l]` is the `l`-th component of `h_ij`; `k[i*d + j]`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    m: usize,
    d: usize,
    drift: Vec<CoefficientFn>,
    qv_drift: Vec<CoefficientFn>,
    vol: Vec<CoefficientFn>,
    rate: CoefficientFn,
    qv_rate: Vec<CoefficientFn>,
    price_vol: Vec<CoefficientFn>,
    uncertainty: UncertaintySet,
    drivers: Option<GenericDrivers>,
    has_h: bool,
    has_k: bool,
    has_v: bool,
}

/// Coefficient values at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCoeffs {
    pub m: usize,
    pub d: usize,
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    pub sigma: Vec<f64>,
    pub r: f64,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `d_ij`, same layout as `h`.
    pub dij: Vec<f64>,
}

impl PointCoeffs {
    pub fn new(m: usize, d: usize) -> Self {
        Self {
            m,
            d,
            b: vec![0.0; m],
            h: vec![0.0; d * d * m],
            sigma: vec![0.0; m * d],
            r: 0.0,
            k: vec![0.0; d * d],
            v: vec![0.0; d],
            dij: vec![0.0; d * d * m],
        }
    }

    /// Column `i` of σ, component `l`.
    #[inline]
    pub fn sigma_at(&self, l: usize, i: usize) -> f64 {
        self.sigma[l * self.d + i]
    }

    fn all_finite(&self) -> Option<&'static str> {
        let check = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !check(&self.b) {
            Some("b")
        } else if !check(&self.h) {
            Some("h")
        } else if !check(&self.sigma) {
            Some("sigma")
        } else if !self.r.is_finite() {
            Some("r")
        } else if !check(&self.k) {
            Some("k")
        } else if !check(&self.v) {
            Some("v")
        } else {
            None
        }
    }
}

impl ModelSpec {
    pub fn builder(m: usize, d: usize, uncertainty: UncertaintySet) -> ModelBuilder {
        ModelBuilder::new(m, d, uncertainty)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn uncertainty(&self) -> &UncertaintySet {
        &self.uncertainty
    }

    pub fn mode(&self) -> Mode {
        if self.drivers.is_some() {
            Mode::Generic
        } else {
            Mode::PricingKernel
        }
    }

    pub fn drivers(&self) -> Option<&GenericDrivers> {
        self.drivers.as_ref()
    }

    pub fn drift(&self) -> &[CoefficientFn] {
        &self.drift
    }

    pub fn vol(&self) -> &[CoefficientFn] {
        &self.vol
    }

    pub fn rate(&self) -> &CoefficientFn {
        &self.rate
    }

    pub fn qv_rate(&self, i: usize, j: usize) -> &CoefficientFn {
        &self.qv_rate[i * self.d + j]
    }

    pub fn qv_drift(&self, i: usize, j: usize) -> &[CoefficientFn] {
        let start = (i * self.d + j) * self.m;
        &self.qv_drift[start..start + self.m]
    }

    pub fn price_vol(&self) -> &[CoefficientFn] {
        &self.price_vol
    }

    pub fn has_price_vol(&self) -> bool {
        self.has_v
    }

    /// Copy with `c` added to the short rate.
    pub fn with_rate_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.rate = match &self.rate {
            CoefficientFn::Constant(r) => CoefficientFn::Constant(r + c),
            CoefficientFn::Affine { intercept, slope } => {
                CoefficientFn::Affine { intercept: intercept + c, slope: slope.clone() }
            }
            CoefficientFn::Expression(p) => {
                Expr::Bin(BinOp::Add, Box::new(p.tree().clone()), Box::new(Expr::Num(c))).into()
            }
            CoefficientFn::Table(t) => {
                let vals = t.values().iter().map(|v| v + c).collect();
                CoefficientFn::Table(
                    Table::new(t.axis(), t.nodes().to_vec(), vals).expect("shifted table stays valid"),
                )
            }
        };
        out
    }

    /// Copy with a different uncertainty set of the same dimension.
    pub fn with_uncertainty(&self, set: UncertaintySet) -> Result<Self> {
        if set.dim() != self.d {
            return Err(Error::InvalidModel(format!(
                "uncertainty dimension {} does not match d = {}",
                set.dim(),
                self.d
            )));
        }
        let mut out = self.clone();
        out.uncertainty = set;
        Ok(out)
    }

    /// `h_ij = h_ji` and `k_ij = k_ji` as coefficient definitions.
    pub fn is_structurally_symmetric(&self) -> bool {
        let d = self.d;
        (0..d).all(|i| {
            (0..i).all(|j| {
                self.qv_rate[i * d + j] == self.qv_rate[j * d + i]
                    && self.qv_drift(i, j) == self.qv_drift(j, i)
            })
        })
    }

    pub(crate) fn ensure_symmetric(&self) -> Result<()> {
        if self.is_structurally_symmetric() {
            Ok(())
        } else {
            Err(Error::InvalidModel("h_ij and k_ij must be symmetric in (i, j)".into()))
        }
    }

    /// Fills `out` with all coefficients at `x`, including `d_ij`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut PointCoeffs) {
        let (m, d) = (self.m, self.d);
        for (o, c) in out.b.iter_mut().zip(&self.drift) {
            *o = c.eval(x);
        }
        for (o, c) in out.sigma.iter_mut().zip(&self.vol) {
            *o = c.eval(x);
        }
        out.r = self.rate.eval(x);
        if self.has_h {
            for (o, c) in out.h.iter_mut().zip(&self.qv_drift) {
                *o = c.eval(x);
            }
        }
        if self.has_k {
            for (o, c) in out.k.iter_mut().zip(&self.qv_rate) {
                *o = c.eval(x);
            }
        }
        if self.has_v {
            for (o, c) in out.v.iter_mut().zip(&self.price_vol) {
                *o = c.eval(x);
            }
            for i in 0..d {
                for j in 0..d {
                    for l in 0..m {
                        out.dij[(i * d + j) * m + l] = 0.5
                            * (out.sigma[l * d + i] * out.v[j] + out.sigma[l * d + j] * out.v[i]);
                    }
                }
            }
        }
    }

    /// Like [`eval_into`](Self::eval_into) but rejects non-finite values.
    pub fn eval_checked(&self, x: &[f64], out: &mut PointCoeffs) -> Result<()> {
        self.eval_into(x, out);
        match out.all_finite() {
            None => Ok(()),
            Some(what) => Err(Error::Evaluation { what: what.into(), x: x.to_vec() }),
        }
    }

    pub fn point(&self, x: &[f64]) -> PointCoeffs {
        let mut p = PointCoeffs::new(self.m, self.d);
        self.eval_into(x, &mut p);
        p
    }

    /// `d_ij(x) = (½(σ_{l,i}v_j + σ_{l,j}v_i))_l`, layout `(i*d + j)*m + l`.
    pub fn derived_dij(&self, x: &[f64]) -> Vec<f64> {
        self.point(x).dij
    }
}

/// Incremental constructor for [`ModelSpec`]; every coefficient defaults to 0.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    m: usize,
    d: usize,
    drift: Vec<CoefficientFn>,
    qv_drift: Vec<CoefficientFn>,
    vol: Vec<CoefficientFn>,
    rate: CoefficientFn,
    qv_rate: Vec<CoefficientFn>,
    price_vol: Vec<CoefficientFn>,
    uncertainty: UncertaintySet,
    drivers: Option<GenericDrivers>,
    error: Option<String>,
}

impl ModelBuilder {
    fn new(m: usize, d: usize, uncertainty: UncertaintySet) -> Self {
        let z = CoefficientFn::zero;
        Self {
            m,
            d,
            drift: (0..m).map(|_| z()).collect(),
            qv_drift: (0..d * d * m).map(|_| z()).collect(),
            vol: (0..m * d).map(|_| z()).collect(),
            rate: z(),
            qv_rate: (0..d * d).map(|_| z()).collect(),
            price_vol: (0..d).map(|_| z()).collect(),
            uncertainty,
            drivers: None,
            error: None,
        }
    }

    fn fail(mut self, msg: String) -> Self {
        self.error.get_or_insert(msg);
        self
    }

    pub fn drift(mut self, b: Vec<CoefficientFn>) -> Self {
        if b.len() != self.m {
            let n = b.len();
            let msg = format!("drift needs {} components, got {n}", self.m);
            return self.fail(msg);
        }
        self.drift = b;
        self
    }

    /// `σ` in row-major `m×d` order.
    pub fn vol(mut self, sigma: Vec<CoefficientFn>) -> Self {
        if sigma.len() != self.m * self.d {
            let n = sigma.len();
            let msg = format!("vol needs {} entries, got {n}", self.m * self.d);
            return self.fail(msg);
        }
        self.vol = sigma;
        self
    }

    pub fn rate(mut self, r: impl Into<CoefficientFn>) -> Self {
        self.rate = r.into();
        self
    }

    pub fn price_vol(mut self, v: Vec<CoefficientFn>) -> Self {
        if v.len() != self.d {
            let n = v.len();
            let msg = format!("price_vol needs {} components, got {n}", self.d);
            return self.fail(msg);
        }
        self.price_vol = v;
        self
    }

    /// Sets `k_ij` only; use [`qv_rate_sym`](Self::qv_rate_sym) for both entries.
    pub fn qv_rate(mut self, i: usize, j: usize, k: impl Into<CoefficientFn>) -> Self {
        if i >= self.d || j >= self.d {
            return self.fail(format!("k index ({i},{j}) out of range"));
        }
        self.qv_rate[i * self.d + j] = k.into();
        self
    }

    pub fn qv_rate_sym(self, i: usize, j: usize, k: impl Into<CoefficientFn>) -> Self {
        let k = k.into();
        self.qv_rate(i, j, k.clone()).qv_rate(j, i, k)
    }

    pub fn qv_drift(mut self, i: usize, j: usize, h: Vec<CoefficientFn>) -> Self {
        if i >= self.d || j >= self.d || h.len() != self.m {
            return self.fail(format!("h index ({i},{j}) or length {} invalid", h.len()));
        }
        let start = (i * self.d + j) * self.m;
        for (slot, c) in self.qv_drift[start..start + self.m].iter_mut().zip(h) {
            *slot = c;
        }
        self
    }

    pub fn qv_drift_sym(self, i: usize, j: usize, h: Vec<CoefficientFn>) -> Self {
        self.qv_drift(i, j, h.clone()).qv_drift(j, i, h)
    }

    pub fn drivers(mut self, drivers: GenericDrivers) -> Self {
        self.drivers = Some(drivers);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        if let Some(e) = self.error {
            return Err(Error::InvalidModel(e));
        }
        if self.m == 0 || self.d == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        if self.uncertainty.dim() != self.d {
            return Err(Error::InvalidModel(format!(
                "uncertainty set has dimension {}, model has d = {}",
                self.uncertainty.dim(),
                self.d
            )));
        }
        if let Some(dr) = &self.drivers {
            if dr.g.len() != self.d * self.d {
                return Err(Error::InvalidModel(format!("need {} g_ij drivers", self.d * self.d)));
            }
        }
        let all = self
            .drift
            .iter()
            .chain(&self.qv_drift)
            .chain(&self.vol)
            .chain(std::iter::once(&self.rate))
            .chain(&self.qv_rate)
            .chain(&self.price_vol);
        for c in all {
            if c.arity() > self.m {
                return Err(Error::InvalidModel(format!(
                    "coefficient `{c}` reads x{} but m = {}",
                    c.arity(),
                    self.m
                )));
            }
        }
        let has_h = self.qv_drift.iter().any(|c| !c.is_zero());
        let has_k = self.qv_rate.iter().any(|c| !c.is_zero());
        let has_v = self.price_vol.iter().any(|c| !c.is_zero());
        Ok(ModelSpec {
            m: self.m,
            d: self.d,
            drift: self.drift,
            qv_drift: self.qv_drift,
            vol: self.vol,
            rate: self.rate,
            qv_rate: self.qv_rate,
            price_vol: self.price_vol,
            uncertainty: self.uncertainty,
            drivers: self.drivers,
            has_h,
            has_k,
            has_v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coefficient::parse_coefficient;

    fn c(v: f64) -> CoefficientFn {
        CoefficientFn::Constant(v)
    }

    #[test]
    fn dij_scalar() {
        let set = UncertaintySet::interval(0.5, 1.0).unwrap();
        let m = ModelSpec::builder(1, 1, set).vol(vec![c(0.2)]).price_vol(vec![c(0.3)]).build().unwrap();
        let d = m.derived_dij(&[0.0]);
        assert!((d[0] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn dij_vanishes_without_v() {
        let set = UncertaintySet::interval(0.5, 1.0).unwrap();
        let m = ModelSpec::builder(1, 1, set).vol(vec![c(0.2)]).build().unwrap();
        assert_eq!(m.derived_dij(&[1.3]), vec![0.0]);
    }

    #[test]
    fn dij_two_noises() {
        use nalgebra::DMatrix;
        let set = UncertaintySet::finite(vec![DMatrix::identity(2, 2)]).unwrap();
        let (s1, s2, v1, v2) = (0.2, -0.1, 0.3, 0.7);
        let m = ModelSpec::builder(1, 2, set)
            .vol(vec![c(s1), c(s2)])
            .price_vol(vec![c(v1), c(v2)])
            .build()
            .unwrap();
        let d = m.derived_dij(&[0.0]);
        let d12 = 0.5 * (s1 * v2 + s2 * v1);
        assert!((d[1] - d12).abs() < 1e-15);
        assert_eq!(d[1], d[2]);
        assert!((d[0] - s1 * v1).abs() < 1e-15);
        assert!((d[3] - s2 * v2).abs() < 1e-15);
    }

    #[test]
    fn build_validates() {
        let set = UncertaintySet::interval(0.5, 1.0).unwrap();
        assert!(ModelSpec::builder(1, 1, set.clone()).drift(vec![]).build().is_err());
        let x2 = parse_coefficient("x2").unwrap();
        assert!(ModelSpec::builder(1, 1, set.clone()).rate(x2).build().is_err());
        assert!(ModelSpec::builder(1, 2, set).build().is_err());
    }

    #[test]
    fn rate_shift() {
        let set = UncertaintySet::interval(0.5, 1.0).unwrap();
        let m = ModelSpec::builder(1, 1, set).rate(parse_coefficient("x1*x1").unwrap()).build().unwrap();
        let s = m.with_rate_shift(0.1);
        assert!((s.point(&[2.0]).r - 4.1).abs() < 1e-15);
    }
}
