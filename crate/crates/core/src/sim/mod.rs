//! Scenario simulation of the G-SDE under volatility controls, worst-case
//! feedback policies and Monte Carlo pricing.

pub mod control;
pub mod pricing;
pub mod simulate;

pub use control::{worst_case_policy, Covariance, FeedbackPolicy, PolicySource, VolControl};
pub use pricing::{long_term_yield_mc, upper_price_mc, ControlPrice, MeanEstimate, PriceReport, YieldReport};
pub use simulate::{path_rng, simulate_gsde, time_steps, ScenarioBatch};
