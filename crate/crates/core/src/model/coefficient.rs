use std::fmt;

use crate::error::{Error, Result};
use crate::model::expr::{self, Expr, Program};

/// A scalar coefficient function `ℝ^m → ℝ`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientFn {
    Constant(f64),
    Affine { intercept: f64, slope: Vec<f64> },
    Expression(Program),
    Table(Table),
}

/// Piecewise-linear table along one state axis, constant beyond its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    axis: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(axis: usize, nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != values.len() {
            return Err(Error::InvalidModel(format!(
                "table needs matching non-empty nodes/values ({} vs {})",
                nodes.len(),
                values.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel("table nodes must be strictly increasing".into()));
        }
        if nodes.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("table entries must be finite".into()));
        }
        Ok(Self { axis, nodes, values })
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let t = x.get(self.axis).copied().unwrap_or(0.0);
        let n = self.nodes.len();
        if t <= self.nodes[0] || n == 1 {
            return self.values[0];
        }
        if t >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.nodes.partition_point(|&v| v <= t);
        let lo = hi - 1;
        let w = (t - self.nodes[lo]) / (self.nodes[hi] - self.nodes[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }
}

impl CoefficientFn {
    pub fn zero() -> Self {
        CoefficientFn::Constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CoefficientFn::Constant(c) => *c,
            CoefficientFn::Affine { intercept, slope } => {
                intercept + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            CoefficientFn::Expression(p) => p.eval(x),
            CoefficientFn::Table(t) => t.eval(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            CoefficientFn::Constant(c) => *c == 0.0,
            CoefficientFn::Affine { intercept, slope } => {
                *intercept == 0.0 && slope.iter().all(|s| *s == 0.0)
            }
            _ => false,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            CoefficientFn::Constant(_) => true,
            CoefficientFn::Affine { slope, .. } => slope.iter().all(|s| *s == 0.0),
            _ => false,
        }
    }

    /// Number of state variables the function reads.
    pub fn arity(&self) -> usize {
        match self {
            CoefficientFn::Constant(_) => 0,
            CoefficientFn::Affine { slope, .. } => slope.len(),
            CoefficientFn::Expression(p) => p.tree().arity(),
            CoefficientFn::Table(t) => t.axis + 1,
        }
    }
}

/// Parses an expression; variable-free expressions fold to `Constant`.
pub fn parse_coefficient(source: &str) -> Result<CoefficientFn> {
    let tree = expr::parse(source)?;
    if tree.arity() == 0 {
        return Ok(CoefficientFn::Constant(tree.eval(&[])));
    }
    Ok(CoefficientFn::Expression(Program::new(tree)))
}

impl From<f64> for CoefficientFn {
    fn from(c: f64) -> Self {
        CoefficientFn::Constant(c)
    }
}

impl From<Expr> for CoefficientFn {
    fn from(e: Expr) -> Self {
        CoefficientFn::Expression(Program::new(e))
    }
}

/// Expression text for `Constant`, `Affine` and `Expression` (re-parseable);
/// tables print a descriptive summary.
impl fmt::Display for CoefficientFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientFn::Constant(c) => write!(f, "{}", Expr::Num(c.abs()).wrap_sign(*c)),
            CoefficientFn::Affine { intercept, slope } => {
                write!(f, "({})", Expr::Num(intercept.abs()).wrap_sign(*intercept))?;
                for (i, s) in slope.iter().enumerate() {
                    write!(f, " + ({}) * x{}", Expr::Num(s.abs()).wrap_sign(*s), i + 1)?;
                }
                Ok(())
            }
            CoefficientFn::Expression(p) => write!(f, "{}", p.tree()),
            CoefficientFn::Table(t) => {
                write!(f, "table(x{}, {} nodes)", t.axis + 1, t.nodes.len())
            }
        }
    }
}

impl Expr {
    fn wrap_sign(self, v: f64) -> Expr {
        if v.is_sign_negative() {
            Expr::Neg(Box::new(self))
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let c = parse_coefficient("0.02").unwrap();
        assert_eq!(c, CoefficientFn::Constant(0.02));
        assert_eq!(c.eval(&[5.0]), 0.02);

        let neg = parse_coefficient("-x1").unwrap();
        assert_eq!(neg.eval(&[0.3]), -0.3);

        let e = parse_coefficient("exp(-x1*x1/2) + max(x1, 0)").unwrap();
        let expected = (-0.5f64).exp() + 1.0;
        assert!((e.eval(&[1.0]) - expected).abs() < 1e-15);
        assert!((e.eval(&[1.0]) - 1.606531).abs() < 1e-6);
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let t = CoefficientFn::Table(Table::new(0, vec![0.0, 1.0, 3.0], vec![1.0, 3.0, 2.0]).unwrap());
        assert_eq!(t.eval(&[-5.0]), 1.0);
        assert_eq!(t.eval(&[0.5]), 2.0);
        assert_eq!(t.eval(&[2.0]), 2.5);
        assert_eq!(t.eval(&[1.0]), 3.0);
        assert_eq!(t.eval(&[10.0]), 2.0);
        assert!(Table::new(0, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Table::new(0, vec![0.0], vec![]).is_err());
    }

    #[test]
    fn affine_and_constant_print_reparse() {
        let a = CoefficientFn::Affine { intercept: -0.05, slope: vec![1.0, -2.5] };
        let p = parse_coefficient(&a.to_string()).unwrap();
        for x in [[0.3, -1.0], [2.0, 0.7]] {
            assert!((a.eval(&x) - p.eval(&x)).abs() < 1e-15);
        }
        let c = CoefficientFn::Constant(-3.25);
        assert_eq!(parse_coefficient(&c.to_string()).unwrap(), c);
    }
}
