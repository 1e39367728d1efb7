//! Monte Carlo upper prices and long-term yields under the pricing kernel
//! `D_t = exp(−∫r dt − ∫k_ij d⟨B^i,B^j⟩ − ∫v·dB)`, all integrals by the
//! left-endpoint rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::control::VolControl;
use super::simulate::{Step, Stepper};
use crate::error::{Error, Result};
use crate::model::coefficient::CoefficientFn;
use crate::model::spec::ModelSpec;

/// `Δ ln D` over one step.
#[inline]
pub(crate) fn log_deflator_increment(s: &Step) -> f64 {
    let c = s.c;
    let mut inc = -c.r * s.dt;
    for (k, q) in c.k.iter().zip(s.q) {
        inc -= k * q * s.dt;
    }
    for (v, db) in c.v.iter().zip(s.db) {
        inc -= v * db;
    }
    inc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std_error: (var / n).sqrt() }
    }

    /// `|mean − target|` in standard errors (0 when both are exact).
    pub fn deviation(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if gap == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            gap / self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPrice {
    pub control: String,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceReport {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub estimates: Vec<ControlPrice>,
    pub supremum: f64,
    pub supremum_std_error: f64,
    pub argmax: usize,
}

/// Runs one control and returns `D_T·Φ(X_T)` per path.
#[allow(clippy::too_many_arguments)]
fn discounted_payoffs(
    model: &ModelSpec,
    payoff: &CoefficientFn,
    control: &VolControl,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let st = Stepper::new(model, control, x0, horizon, dt, seed)?;
    let m = model.m();
    let vals = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut ln_d = 0.0;
            let mut xt = x0.to_vec();
            st.run(p, |s| {
                ln_d += log_deflator_increment(s);
                if s.n + 1 == st.n_steps {
                    xt.copy_from_slice(&s.x_next[..m]);
                }
                Ok(())
            })?;
            Ok(ln_d.exp() * payoff.eval(&xt))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((vals, st.dt))
}

/// Upper price `sup_controls E[D_T Φ(X_T)]`. All controls share the same
/// random numbers.
#[allow(clippy::too_many_arguments)]
pub fn upper_price_mc(
    model: &ModelSpec,
    payoff: &CoefficientFn,
    x0: &[f64],
    horizon: f64,
    controls: &[VolControl],
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PriceReport> {
    if controls.is_empty() {
        return Err(Error::Config("need at least one control".into()));
    }
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let mut estimates = Vec::with_capacity(controls.len());
    let mut used_dt = dt;
    for c in controls {
        let (vals, sdt) = discounted_payoffs(model, payoff, c, x0, horizon, dt, n_paths, seed)?;
        used_dt = sdt;
        let e = MeanEstimate::from_samples(&vals);
        if !e.mean.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                index: estimates.len(),
                detail: "non-finite price estimate".into(),
            });
        }
        estimates.push(ControlPrice { control: c.label(), mean: e.mean, std_error: e.std_error });
    }
    let argmax = (0..estimates.len())
        .fold(0, |best, i| if estimates[i].mean > estimates[best].mean { i } else { best });
    Ok(PriceReport {
        horizon,
        dt: used_dt,
        n_paths,
        seed,
        supremum: estimates[argmax].mean,
        supremum_std_error: estimates[argmax].std_error,
        argmax,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    pub horizons: Vec<f64>,
    /// `(1/T)·ln(mean D_T)` per horizon.
    pub yields: Vec<f64>,
    /// Delta-method standard errors of the yields.
    pub std_errors: Vec<f64>,
    /// Intercept of the least-squares fit `y_T = λ̂ + c/T`.
    pub lambda_hat: f64,
    pub slope: f64,
    pub control: String,
}

/// Long-term yield from one simulation to the largest horizon; the shorter
/// horizons are read off the same paths.
#[allow(clippy::too_many_arguments)]
pub fn long_term_yield_mc(
    model: &ModelSpec,
    horizons: &[f64],
    control: &VolControl,
    x0: &[f64],
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<YieldReport> {
    if horizons.len() < 2 || horizons.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("need at least two increasing horizons".into()));
    }
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let t_max = *horizons.last().expect("non-empty");
    let st = Stepper::new(model, control, x0, t_max, dt, seed)?;
    let marks: Vec<usize> = horizons.iter().map(|t| (t / st.dt).round() as usize).collect();
    if marks[0] == 0 {
        return Err(Error::Config("shortest horizon is below one time step".into()));
    }
    let h = horizons.len();
    let per_path = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut ln_d = 0.0;
            let mut out = vec![0.0; h];
            let mut next = 0;
            st.run(p, |s| {
                ln_d += log_deflator_increment(s);
                while next < h && marks[next] == s.n + 1 {
                    out[next] = ln_d.exp();
                    next += 1;
                }
                Ok(())
            })?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut yields = Vec::with_capacity(h);
    let mut std_errors = Vec::with_capacity(h);
    for (k, &t) in horizons.iter().enumerate() {
        let samples: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
        let e = MeanEstimate::from_samples(&samples);
        if !(e.mean > 0.0) || !e.mean.is_finite() {
            return Err(Error::Range(format!("mean deflator at T = {t} is {}", e.mean)));
        }
        yields.push(e.mean.ln() / t);
        std_errors.push(e.std_error / (e.mean * t));
    }
    // Least squares on the regressor 1/T.
    let xs: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let n = h as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = yields.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&yields).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(YieldReport {
        horizons: horizons.to_vec(),
        yields,
        std_errors,
        lambda_hat: my - slope * mx,
        slope,
        control: control.label(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcore::UncertaintySet;
    use crate::sim::control::Covariance;

    #[test]
    fn deterministic_discounting_is_exact() {
        let model = ModelSpec::builder(1, 1, UncertaintySet::classical(1.0).unwrap())
            .vol(vec![CoefficientFn::Constant(0.2)])
            .rate(0.03)
            .build()
            .unwrap();
        let c = VolControl::Constant(Covariance::scalar(model.uncertainty(), 1.0).unwrap());
        let r = upper_price_mc(&model, &CoefficientFn::Constant(1.0), &[0.0], 2.0, std::slice::from_ref(&c), 0.01, 50, 3)
            .unwrap();
        assert!((r.supremum - (-0.06f64).exp()).abs() < 1e-12);
        assert!(r.supremum_std_error < 1e-12);

        let y = long_term_yield_mc(&model, &[1.0, 2.0, 4.0], &c, &[0.0], 0.01, 20, 3).unwrap();
        assert!((y.lambda_hat + 0.03).abs() < 1e-12);
        assert!(y.slope.abs() < 1e-10);
    }

    #[test]
    fn martingale_payoff_prices_to_zero() {
        let model = ModelSpec::builder(1, 1, UncertaintySet::interval(0.5, 1.0).unwrap())
            .vol(vec![CoefficientFn::Constant(1.0)])
            .build()
            .unwrap();
        let set = model.uncertainty();
        let controls = vec![
            VolControl::Constant(Covariance::scalar(set, 0.5).unwrap()),
            VolControl::Constant(Covariance::scalar(set, 1.0).unwrap()),
        ];
        let payoff = CoefficientFn::Affine { intercept: 0.0, slope: vec![1.0] };
        let r = upper_price_mc(&model, &payoff, &[0.0], 1.0, &controls, 0.01, 4000, 11).unwrap();
        for e in &r.estimates {
            assert!(e.mean.abs() < 3.0 * e.std_error, "{e:?}");
        }
        assert!(upper_price_mc(&model, &payoff, &[0.0], 1.0, &[], 0.01, 10, 1).is_err());
    }

    #[test]
    fn yield_rejects_bad_horizons() {
        let model = ModelSpec::builder(1, 1, UncertaintySet::classical(1.0).unwrap()).build().unwrap();
        let c = VolControl::Constant(Covariance::scalar(model.uncertainty(), 1.0).unwrap());
        assert!(long_term_yield_mc(&model, &[1.0], &c, &[0.0], 0.1, 10, 0).is_err());
        assert!(long_term_yield_mc(&model, &[2.0, 1.0], &c, &[0.0], 0.1, 10, 0).is_err());
    }
}
