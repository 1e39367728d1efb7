use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform axis `lower + i·h`, `i = 0..nodes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lower + self.step() * i as f64
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.horizon / self.steps as f64
        }
    }
}

/// Tensor grid in one or two state dimensions, nodes stored row-major
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
    time: Option<TimeGrid>,
}

pub const MIN_NODES: usize = 16;

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "grids support 1 or 2 state dimensions, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.nodes < MIN_NODES {
                return Err(Error::Config(format!(
                    "axis {k} needs at least {MIN_NODES} nodes, got {}",
                    a.nodes
                )));
            }
            if !(a.upper > a.lower) || !a.lower.is_finite() || !a.upper.is_finite() {
                return Err(Error::Config(format!("axis {k} has invalid bounds")));
            }
        }
        Ok(Self { axes, time: None })
    }

    pub fn uniform(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![Axis { lower, upper, nodes }])
    }

    pub fn with_time(mut self, horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        if horizon > 0.0 && steps == 0 {
            return Err(Error::Config("positive horizon needs at least one time step".into()));
        }
        self.time = Some(TimeGrid { horizon, steps });
        Ok(self)
    }

    pub fn time(&self) -> Option<TimeGrid> {
        self.time
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::step).collect()
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [idx, 0],
            _ => [idx / self.axes[1].nodes, idx % self.axes[1].nodes],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.axes.len() {
            1 => mi[0],
            _ => mi[0] * self.axes[1].nodes + mi[1],
        }
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let mi = self.multi_index(idx);
        for (k, a) in self.axes.iter().enumerate() {
            out[k] = a.coord(mi[k]);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(idx, &mut p);
        p
    }

    /// Node nearest to `x` (ties resolved toward the lower index).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut mi = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let t = ((x[k] - a.lower) / a.step()).round();
            mi[k] = t.clamp(0.0, (a.nodes - 1) as f64) as usize;
        }
        self.flat_index(mi)
    }

    /// True when `idx` lies within `band` nodes of any edge.
    pub fn in_band(&self, idx: usize, band: usize) -> bool {
        let mi = self.multi_index(idx);
        self.axes
            .iter()
            .enumerate()
            .any(|(k, a)| mi[k] < band || mi[k] + band >= a.nodes)
    }

    /// Same bounds with `2n − 1` nodes per axis (every old node kept).
    pub fn refined(&self) -> Self {
        let axes = self
            .axes
            .iter()
            .map(|a| Axis { nodes: 2 * a.nodes - 1, ..*a })
            .collect();
        Self { axes, time: self.time }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = Grid::new(vec![
            Axis { lower: -1.0, upper: 1.0, nodes: 17 },
            Axis { lower: 0.0, upper: 2.0, nodes: 21 },
        ])
        .unwrap();
        assert_eq!(g.len(), 17 * 21);
        for idx in [0, 5, 20, 21, 200, g.len() - 1] {
            assert_eq!(g.flat_index(g.multi_index(idx)), idx);
        }
        let p = g.point(21 + 3);
        assert!((p[0] - (-1.0 + 0.125)).abs() < 1e-15);
        assert!((p[1] - 0.3).abs() < 1e-15);
        assert_eq!(g.nearest_node(&p), 24);
    }

    #[test]
    fn validation() {
        assert!(Grid::uniform(0.0, 1.0, 15).is_err());
        assert!(Grid::uniform(1.0, 1.0, 32).is_err());
        let three = vec![Axis { lower: 0.0, upper: 1.0, nodes: 16 }; 3];
        assert!(Grid::new(three).is_err());
        let g = Grid::uniform(-3.0, 3.0, 257).unwrap();
        assert!((g.steps()[0] - 6.0 / 256.0).abs() < 1e-15);
        assert_eq!(g.nearest_node(&[0.0]), 128);
        assert!(g.clone().with_time(1.0, 0).is_err());
        assert!(g.with_time(0.0, 0).is_ok());
    }

    #[test]
    fn band_and_refinement() {
        let g = Grid::uniform(0.0, 1.0, 16).unwrap();
        assert!(g.in_band(1, 2));
        assert!(!g.in_band(2, 2));
        assert!(g.in_band(14, 2));
        let r = g.refined();
        assert_eq!(r.axes()[0].nodes, 31);
        assert_eq!(r.point(2), g.point(1));
    }
}
