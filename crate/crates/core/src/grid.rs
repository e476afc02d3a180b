//! Time partitions `pi = {t = t_0 < t_1 < ... < t_n = T}`.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A strictly increasing time partition of `[t_0, t_n]` with at least one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// Uniform partition of `[start, horizon]` into `n` steps.
    pub fn uniform(start: f64, horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("n must be positive".into()));
        }
        if horizon <= start || horizon.is_nan() || start.is_nan() {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} must exceed start {start}"
            )));
        }
        let h = (horizon - start) / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| start + i as f64 * h).collect();
        // pin the endpoint so nested grids share it bit-exactly
        nodes[n] = horizon;
        Self::new(nodes)
    }

    /// Number of steps `n`.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `t_0`.
    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    /// `t_n`.
    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Step `h_i = t_{i+1} - t_i`.
    pub fn step(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Mesh size `|pi| = max_i h_i`.
    pub fn mesh(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// True when every node of `coarse` is also a node of `self`
    /// (same endpoints, exact comparison).
    pub fn refines(&self, coarse: &TimeGrid) -> bool {
        if self.start() != coarse.start() || self.horizon() != coarse.horizon() {
            return false;
        }
        let mut j = 0;
        for &t in &coarse.nodes {
            while j < self.nodes.len() && self.nodes[j] < t {
                j += 1;
            }
            if j == self.nodes.len() || self.nodes[j] != t {
                return false;
            }
        }
        true
    }

    /// Index of `t` among the nodes, if present (exact comparison).
    pub fn position(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&u| u == t)
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(nodes: Vec<f64>) -> Result<Self> {
        Self::new(nodes)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_basics() {
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(g.n_steps(), 4);
        assert_eq!(g.start(), 0.0);
        assert_eq!(g.horizon(), 1.0);
        assert!((g.mesh() - 0.25).abs() < 1e-15);
        assert!((g.step(2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, -1.0]).is_err());
        assert!(TimeGrid::uniform(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn refinement_detection() {
        let coarse = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let fine = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        assert!(fine.refines(&coarse));
        assert!(!coarse.refines(&fine));
        let shifted = TimeGrid::uniform(0.0, 2.0, 16).unwrap();
        assert!(!shifted.refines(&coarse));
        // a power-of-two refinement shares nodes bit-exactly
        let odd = TimeGrid::uniform(0.0, 1.0, 12).unwrap();
        assert!(!fine.refines(&odd) || 16 % 12 == 0);
    }

    #[test]
    fn serde_round_trip() {
        let g = TimeGrid::uniform(0.5, 1.0, 8).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: TimeGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}
