//! Run configuration. Every block rejects unknown keys.

use std::path::{Path, PathBuf};

use gkernel::model::{parse_coefficient, CoefficientFn, ModelSpec, Table};
use gkernel::pde::{Axis, ErgodicOptions, Grid, StationaryOptions, Truncation};
use gkernel::sim::{Covariance, VolControl};
use gkernel::UncertaintySet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub uncertainty: UncertaintyConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimConfig,
    /// Terminal payoff `Φ(X_T)` for `price`.
    #[serde(default)]
    pub payoff: Option<Coefficient>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A coefficient given as a number, an expression in `x1..xm`, or a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Number(f64),
    Expression(String),
    Table(TableConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    /// One-based state index the table is interpolated along.
    pub axis: usize,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl Coefficient {
    pub fn build(&self) -> Result<CoefficientFn, CliError> {
        Ok(match self {
            Coefficient::Number(v) => CoefficientFn::Constant(*v),
            Coefficient::Expression(src) => parse_coefficient(src)?,
            Coefficient::Table(t) => {
                if t.axis == 0 {
                    return Err(CliError::Config("table axis is one-based".into()));
                }
                CoefficientFn::Table(Table::new(t.axis - 1, t.nodes.clone(), t.values.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub d: usize,
    /// `b`, `m` entries.
    #[serde(default)]
    pub drift: Vec<Coefficient>,
    /// `σ` row-major `m×d`.
    #[serde(default)]
    pub vol: Vec<Coefficient>,
    #[serde(default)]
    pub rate: Option<Coefficient>,
    /// `v`, `d` entries.
    #[serde(default)]
    pub price_vol: Vec<Coefficient>,
    /// `k` row-major `d×d`.
    #[serde(default)]
    pub qv_rate: Vec<Coefficient>,
    /// `h` with layout `(i·d + j)·m + l`.
    #[serde(default)]
    pub qv_drift: Vec<Coefficient>,
}

fn build_all(cs: &[Coefficient]) -> Result<Vec<CoefficientFn>, CliError> {
    cs.iter().map(Coefficient::build).collect()
}

fn expect_len(what: &str, got: usize, want: usize) -> Result<(), CliError> {
    if got != 0 && got != want {
        return Err(CliError::Config(format!("model.{what} needs {want} entries, got {got}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintyConfig {
    Interval { lower: f64, upper: f64 },
    Classical { variance: f64 },
    /// Finite set of `d×d` matrices, each a list of rows.
    Matrices(Vec<Vec<Vec<f64>>>),
}

impl UncertaintyConfig {
    pub fn build(&self) -> Result<UncertaintySet, CliError> {
        Ok(match self {
            UncertaintyConfig::Interval { lower, upper } => UncertaintySet::interval(*lower, *upper)?,
            UncertaintyConfig::Classical { variance } => UncertaintySet::classical(*variance)?,
            UncertaintyConfig::Matrices(ms) => {
                let mut members = Vec::with_capacity(ms.len());
                for rows in ms {
                    let d = rows.len();
                    if d == 0 || rows.iter().any(|r| r.len() != d) {
                        return Err(CliError::Config("uncertainty matrices must be square".into()));
                    }
                    members.push(DMatrix::from_fn(d, d, |i, j| rows[i][j]));
                }
                UncertaintySet::finite(members)?
            }
        })
    }
}

impl ModelConfig {
    pub fn build(&self, set: UncertaintySet) -> Result<ModelSpec, CliError> {
        let (m, d) = (self.m, self.d);
        if set.dim() != d {
            return Err(CliError::Config(format!("uncertainty has dimension {}, model.d is {d}", set.dim())));
        }
        expect_len("drift", self.drift.len(), m)?;
        expect_len("vol", self.vol.len(), m * d)?;
        expect_len("price_vol", self.price_vol.len(), d)?;
        expect_len("qv_rate", self.qv_rate.len(), d * d)?;
        expect_len("qv_drift", self.qv_drift.len(), d * d * m)?;
        let mut b = ModelSpec::builder(m, d, set);
        if !self.drift.is_empty() {
            b = b.drift(build_all(&self.drift)?);
        }
        if !self.vol.is_empty() {
            b = b.vol(build_all(&self.vol)?);
        }
        if let Some(r) = &self.rate {
            b = b.rate(r.build()?);
        }
        if !self.price_vol.is_empty() {
            b = b.price_vol(build_all(&self.price_vol)?);
        }
        for (ij, k) in self.qv_rate.iter().enumerate() {
            b = b.qv_rate(ij / d, ij % d, k.build()?);
        }
        if !self.qv_drift.is_empty() {
            let h = build_all(&self.qv_drift)?;
            for ij in 0..d * d {
                b = b.qv_drift(ij / d, ij % d, h[ij * m..(ij + 1) * m].to_vec());
            }
        }
        Ok(b.build()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
    /// Backward steps for the finite-horizon solve used by `price`.
    #[serde(default)]
    pub time_steps: Option<usize>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid, CliError> {
        let axes = self.axes.iter().map(|a| Axis { lower: a.lower, upper: a.upper, nodes: a.nodes }).collect();
        Ok(Grid::new(axes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub delta0: f64,
    pub tol: f64,
    pub max_halvings: usize,
    pub tol_inner: f64,
    pub max_iter: usize,
    pub anchor: Option<Vec<f64>>,
    pub truncation: Truncation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let e = ErgodicOptions::default();
        Self {
            delta0: e.delta0,
            tol: e.tol,
            max_halvings: e.max_halvings,
            tol_inner: e.stationary.tol_inner,
            max_iter: e.stationary.max_iter,
            anchor: None,
            truncation: e.stationary.truncation,
        }
    }
}

impl SolverConfig {
    pub fn ergodic(&self) -> ErgodicOptions {
        ErgodicOptions {
            delta0: self.delta0,
            tol: self.tol,
            max_halvings: self.max_halvings,
            anchor: self.anchor.clone(),
            stationary: StationaryOptions {
                truncation: self.truncation,
                tol_inner: self.tol_inner,
                max_iter: self.max_iter,
            },
            ..ErgodicOptions::default()
        }
    }
}

/// A covariance given as a scalar (`d = 1`) or a row-major `d×d` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Flat(Vec<f64>),
}

impl MatrixValue {
    fn flat(&self) -> Vec<f64> {
        match self {
            MatrixValue::Scalar(v) => vec![*v],
            MatrixValue::Flat(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    /// The member with the smallest trace.
    Lower,
    /// The member with the largest trace.
    Upper,
    /// Worst-case feedback policy from the solved equation.
    Feedback,
    Constant(MatrixValue),
    Piecewise { breakpoints: Vec<f64>, values: Vec<MatrixValue> },
}

impl ControlConfig {
    /// Builds a non-feedback control; `None` for [`ControlConfig::Feedback`].
    pub fn build_static(&self, set: &UncertaintySet) -> Result<Option<VolControl>, CliError> {
        let fixed = |idx: usize| Covariance::new(set, set.candidate(idx)).map(VolControl::Constant);
        Ok(Some(match self {
            ControlConfig::Lower => fixed(set.lower_index())?,
            ControlConfig::Upper => fixed(set.upper_index())?,
            ControlConfig::Feedback => return Ok(None),
            ControlConfig::Constant(q) => VolControl::constant(set, &q.flat())?,
            ControlConfig::Piecewise { breakpoints, values } => {
                VolControl::piecewise(set, breakpoints.clone(), values.iter().map(MatrixValue::flat).collect())?
            }
        }))
    }
}

fn default_controls() -> Vec<ControlConfig> {
    vec![ControlConfig::Lower, ControlConfig::Upper, ControlConfig::Feedback]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Initial state; the origin when absent.
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub controls: Vec<ControlConfig>,
    /// Paths per control written to the decomposition trace CSVs.
    pub trace_paths: usize,
    /// Horizons for the Monte Carlo long-term yield in `decompose`.
    pub yield_horizons: Option<Vec<f64>>,
    pub yield_dt: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            x0: None,
            horizon: 1.0,
            dt: 1e-3,
            n_paths: 1000,
            seed: 0,
            controls: default_controls(),
            trace_paths: 10,
            yield_horizons: None,
            yield_dt: None,
        }
    }
}

impl SimConfig {
    pub fn x0(&self, m: usize) -> Result<Vec<f64>, CliError> {
        match &self.x0 {
            None => Ok(vec![0.0; m]),
            Some(x) if x.len() == m => Ok(x.clone()),
            Some(x) => Err(CliError::Config(format!("sim.x0 needs {m} entries, got {}", x.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("gkernel-out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Command-line overrides of scalar knobs.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.sim.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.sim.n_paths = paths;
        }
        if let Some(tol) = o.tol {
            self.solver.tol = tol;
        }
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        self.model.build(self.uncertainty.build()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"{
        "schema_version": 1,
        "model": {"m": 1, "d": 1, "drift": ["0.05 - x1"], "vol": [0.2], "rate": "x1"},
        "uncertainty": {"interval": {"lower": 0.8, "upper": 1.2}},
        "grid": {"axes": [{"lower": -2, "upper": 2, "nodes": 33}]}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::parse(OU).unwrap();
        let model = cfg.model().unwrap();
        assert_eq!(model.m(), 1);
        assert_eq!(cfg.sim.controls, default_controls());
        assert_eq!(cfg.grid.build().unwrap().len(), 33);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let extra = OU.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"colour\": 3,");
        assert!(matches!(RunConfig::parse(&extra), Err(CliError::Config(_))));
        let nested = OU.replace("\"rate\": \"x1\"", "\"rate\": \"x1\", \"rates\": 1");
        assert!(RunConfig::parse(&nested).is_err());
        let v2 = OU.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(RunConfig::parse(&v2).is_err());
    }

    #[test]
    fn controls_and_overrides() {
        let mut cfg = RunConfig::parse(OU).unwrap();
        cfg.apply(&Overrides { seed: Some(7), paths: Some(3), ..Default::default() });
        assert_eq!((cfg.sim.seed, cfg.sim.n_paths), (7, 3));
        let set = cfg.uncertainty.build().unwrap();
        let c: Vec<ControlConfig> =
            serde_json::from_str(r#"["lower", {"constant": 1.0}, {"piecewise": {"breakpoints": [0.5], "values": [1.2, 0.8]}}]"#)
                .unwrap();
        assert!(c.iter().all(|c| c.build_static(&set).unwrap().is_some()));
        assert!(ControlConfig::Constant(MatrixValue::Scalar(2.0)).build_static(&set).is_err());
    }

    #[test]
    fn bad_expression_is_a_parse_error() {
        let bad = OU.replace("0.05 - x1", "0.05 - * x1");
        let cfg = RunConfig::parse(&bad).unwrap();
        assert!(matches!(cfg.model(), Err(CliError::Core(gkernel::Error::Parse(_)))));
    }
}
