//! Reference models with closed-form eigenpairs.

use crate::error::Result;
use crate::gcore::UncertaintySet;
use crate::model::coefficient::CoefficientFn;
use crate::model::spec::ModelSpec;

/// Constant rate `r₀`, constant price volatility `v`, mean-reverting state
/// `b(x) = −x`, `σ = 0.2`. The eigenpair is `λ = −r₀ + ½v²σ̄²`, `u ≡ 0`.
pub fn constant_model(r0: f64, v: f64, lower: f64, upper: f64) -> Result<ModelSpec> {
    ModelSpec::builder(1, 1, UncertaintySet::interval(lower, upper)?)
        .drift(vec![CoefficientFn::Affine { intercept: 0.0, slope: vec![-1.0] }])
        .vol(vec![CoefficientFn::Constant(0.2)])
        .rate(r0)
        .price_vol(vec![CoefficientFn::Constant(v)])
        .build()
}

/// Ornstein–Uhlenbeck short rate `r(x) = x`, `b = κ(θ − x)`. The eigenpair
/// is `u(x) = −x/κ`, `λ = ½σ̄²σ²/κ² − θ`.
pub fn ou_model(kappa: f64, theta: f64, sigma: f64, lower: f64, upper: f64) -> Result<ModelSpec> {
    ModelSpec::builder(1, 1, UncertaintySet::interval(lower, upper)?)
        .drift(vec![CoefficientFn::Affine { intercept: kappa * theta, slope: vec![-kappa] }])
        .vol(vec![CoefficientFn::Constant(sigma)])
        .rate(CoefficientFn::Affine { intercept: 0.0, slope: vec![1.0] })
        .build()
}

pub fn ou_eigenvalue(kappa: f64, theta: f64, sigma: f64, upper: f64) -> f64 {
    0.5 * upper * sigma * sigma / (kappa * kappa) - theta
}
