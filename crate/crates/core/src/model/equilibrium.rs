//! Consumption-based equilibrium: short rate and market price of risk as
//! functions of the endowment level.
//!
//! The short rate is computed as `r = ½u‴(w)σσᵀ − (u″/u′)(w)·b − β`, exactly
//! in this form. Note that compared with the textbook consumption-CAPM rate
//! this expression carries no `w` factors on the drift and volatility terms;
//! it is reproduced as given and callers wanting the textbook form should
//! build the rate themselves.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gcore::UncertaintySet;
use crate::model::coefficient::{CoefficientFn, Table};
use crate::model::spec::ModelSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum Utility {
    Log,
    /// CRRA with relative risk aversion `γ`.
    Power(f64),
    /// `u′, u″, u‴` as functions of consumption.
    Custom { d1: CoefficientFn, d2: CoefficientFn, d3: CoefficientFn },
}

impl Utility {
    /// `(u′, u″, u‴)` at consumption level `c`.
    pub fn derivatives(&self, c: f64) -> (f64, f64, f64) {
        match self {
            Utility::Log => (1.0 / c, -1.0 / (c * c), 2.0 / (c * c * c)),
            Utility::Power(g) => (
                c.powf(-g),
                -g * c.powf(-g - 1.0),
                g * (g + 1.0) * c.powf(-g - 2.0),
            ),
            Utility::Custom { d1, d2, d3 } => (d1.eval(&[c]), d2.eval(&[c]), d3.eval(&[c])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSpec {
    pub utility: Utility,
    /// Endowment drift `b_s(w)`.
    pub drift: CoefficientFn,
    /// Endowment volatility row `σ_s(w)`, one entry per noise dimension.
    pub vol: Vec<CoefficientFn>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub r: f64,
    pub v: Vec<f64>,
    /// `−(u″/u′)(w)·w`.
    pub risk_aversion: f64,
    pub sigma: Vec<f64>,
}

impl EquilibriumPoint {
    /// `θ = −(u″/u′)·w·η σᵀ` for a covariance realization `η`.
    pub fn theta(&self, eta: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.sigma.len();
        if eta.nrows() != d || eta.ncols() != d {
            return Err(Error::Shape(format!("η must be {d}×{d}")));
        }
        Ok((0..d)
            .map(|i| self.risk_aversion * (0..d).map(|j| eta[(i, j)] * self.sigma[j]).sum::<f64>())
            .collect())
    }
}

pub fn equilibrium_model(spec: &EquilibriumSpec, w: f64) -> Result<EquilibriumPoint> {
    if !(spec.beta > 0.0) {
        return Err(Error::Domain(format!("discount rate β must be positive, got {}", spec.beta)));
    }
    let (u1, u2, u3) = spec.utility.derivatives(w);
    if !(u1 > 0.0) {
        return Err(Error::Domain(format!("u′({w}) = {u1} is not positive")));
    }
    if !(u2 < 0.0) {
        return Err(Error::Domain(format!("u″({w}) = {u2} is not negative")));
    }
    let sigma: Vec<f64> = spec.vol.iter().map(|s| s.eval(&[w])).collect();
    let b = spec.drift.eval(&[w]);
    let ratio = u2 / u1;
    let ss: f64 = sigma.iter().map(|s| s * s).sum();
    let r = 0.5 * u3 * ss - ratio * b - spec.beta;
    let risk_aversion = -ratio * w;
    let v = sigma.iter().map(|s| risk_aversion * s).collect();
    Ok(EquilibriumPoint { r, v, risk_aversion, sigma })
}

impl EquilibriumSpec {
    /// Pricing-kernel model with the endowment level as the single state:
    /// `b`, `σ` from the spec and `r`, `v` tabulated at `levels`.
    pub fn pricing_model(&self, set: UncertaintySet, levels: &[f64]) -> Result<ModelSpec> {
        let d = self.vol.len();
        let mut r = Vec::with_capacity(levels.len());
        let mut v = vec![Vec::with_capacity(levels.len()); d];
        for &w in levels {
            let p = equilibrium_model(self, w)?;
            r.push(p.r);
            for (col, vi) in v.iter_mut().zip(p.v) {
                col.push(vi);
            }
        }
        let rate = CoefficientFn::Table(Table::new(0, levels.to_vec(), r)?);
        let price_vol = v
            .into_iter()
            .map(|vals| Table::new(0, levels.to_vec(), vals).map(CoefficientFn::Table))
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::builder(1, d, set)
            .drift(vec![self.drift.clone()])
            .vol(self.vol.clone())
            .rate(rate)
            .price_vol(price_vol)
            .build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(utility: Utility, sigma: f64) -> EquilibriumSpec {
        EquilibriumSpec {
            utility,
            drift: CoefficientFn::Constant(0.04),
            vol: vec![CoefficientFn::Constant(sigma)],
            beta: 0.03,
        }
    }

    #[test]
    fn log_utility_at_unit_endowment() {
        let p = equilibrium_model(&spec(Utility::Log, 0.3), 1.0).unwrap();
        assert!((p.v[0] - 0.3).abs() < 1e-15);
        assert!((p.r - 0.10).abs() < 1e-15);
        let theta = p.theta(&DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert!((theta[0] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn power_utility_scales_v() {
        let p = equilibrium_model(&spec(Utility::Power(2.0), 0.3), 1.0).unwrap();
        assert!((p.v[0] - 0.6).abs() < 1e-15);
        let flat = equilibrium_model(&spec(Utility::Power(2.0), 0.0), 1.7).unwrap();
        assert_eq!(flat.v, vec![0.0]);
    }

    #[test]
    fn domain_errors() {
        let bad = Utility::Custom {
            d1: CoefficientFn::Constant(-1.0),
            d2: CoefficientFn::Constant(-1.0),
            d3: CoefficientFn::Constant(0.0),
        };
        assert!(matches!(equilibrium_model(&spec(bad, 0.3), 1.0), Err(Error::Domain(_))));
        let mut s = spec(Utility::Log, 0.3);
        s.beta = 0.0;
        assert!(equilibrium_model(&s, 1.0).is_err());
        assert!(equilibrium_model(&spec(Utility::Log, 0.3), -1.0).is_err());
    }

    #[test]
    fn tabulated_model_matches_pointwise() {
        let s = spec(Utility::Power(2.0), 0.3);
        let levels: Vec<f64> = (1..=20).map(|i| 0.5 + 0.1 * i as f64).collect();
        let model = s.pricing_model(UncertaintySet::interval(0.8, 1.2).unwrap(), &levels).unwrap();
        let p = model.point(&[1.2]);
        let e = equilibrium_model(&s, 1.2).unwrap();
        assert!((p.r - e.r).abs() < 1e-12);
        assert!((p.v[0] - e.v[0]).abs() < 1e-12);
    }
}
