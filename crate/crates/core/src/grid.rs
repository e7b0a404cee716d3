//! SOC grids and the value interpolation shared by the DP and NMPC solvers.

use crate::error::{Error, Result};

/// Strictly increasing SOC nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SocGrid {
    nodes: Vec<f64>,
}

impl SocGrid {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "uniform grid needs count >= 2 and lo < hi (got {count}, {lo}, {hi})"
            )));
        }
        let span = hi - lo;
        let mut nodes: Vec<f64> = (0..count).map(|i| lo + span * i as f64 / (count - 1) as f64).collect();
        nodes[count - 1] = hi;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("SOC grid"));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "SOC grid nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Linear interpolation of node values at `x`, clamped at the ends.
    ///
    /// A query that hits a node returns that node's value exactly. If either
    /// bracketing node is infinite the result is infinite.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return values[0];
        }
        if x >= self.nodes[n - 1] {
            return values[n - 1];
        }
        let hi = self.nodes.partition_point(|&k| k <= x);
        let lo = hi - 1;
        if self.nodes[lo] == x {
            return values[lo];
        }
        let (a, b) = (values[lo], values[hi]);
        if a.is_infinite() || b.is_infinite() {
            return f64::INFINITY;
        }
        let t = (x - self.nodes[lo]) / (self.nodes[hi] - self.nodes[lo]);
        a + t * (b - a)
    }

    /// Like [`interp`](Self::interp) but NaN marks a missing value; a missing
    /// neighbour falls back to the other one.
    pub fn interp_sparse(&self, values: &[f64], x: f64) -> Option<f64> {
        let n = self.nodes.len();
        let pick = |i: usize| Some(values[i]).filter(|v| v.is_finite());
        if x <= self.nodes[0] {
            return pick(0);
        }
        if x >= self.nodes[n - 1] {
            return pick(n - 1);
        }
        let hi = self.nodes.partition_point(|&k| k <= x);
        let lo = hi - 1;
        match (pick(lo), pick(hi)) {
            (Some(a), Some(b)) => {
                let t = (x - self.nodes[lo]) / (self.nodes[hi] - self.nodes[lo]);
                Some(a + t * (b - a))
            }
            (a, b) => a.or(b),
        }
    }
}

/// `count` evenly spaced split ratios from 0 to 1 inclusive.
///
/// `i / (count - 1)` is correctly rounded, so the grid of `count` levels is a
/// bitwise subset of the grid of `2 * count - 1` levels.
pub fn u_levels(count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidConfig(format!(
            "u grid needs at least 2 levels, got {count}"
        )));
    }
    Ok((0..count).map(|i| i as f64 / (count - 1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_exact_at_nodes() {
        let g = SocGrid::from_nodes(vec![0.1, 0.2, 0.35]).unwrap();
        let v = [1.0, f64::INFINITY, 3.0];
        assert_eq!(g.interp(&v, 0.1), 1.0);
        assert_eq!(g.interp(&v, 0.35), 3.0);
        assert_eq!(g.interp(&v, 0.2), f64::INFINITY);
        assert_eq!(g.interp(&v, 0.15), f64::INFINITY);
        let w = [1.0, 2.0, 3.0];
        assert!((g.interp(&w, 0.15) - 1.5).abs() < 1e-15);
        assert_eq!(g.interp(&w, 0.0), 1.0);
        assert_eq!(g.interp(&w, 1.0), 3.0);
    }

    #[test]
    fn sparse_falls_back() {
        let g = SocGrid::uniform(0.0, 1.0, 3).unwrap();
        assert_eq!(g.interp_sparse(&[f64::NAN, 2.0, 4.0], 0.25), Some(2.0));
        assert_eq!(g.interp_sparse(&[f64::NAN, f64::NAN, 4.0], 0.25), None);
        assert_eq!(g.interp_sparse(&[0.0, 2.0, 4.0], 0.75), Some(3.0));
    }

    #[test]
    fn u_levels_nest() {
        let coarse = u_levels(5).unwrap();
        let fine = u_levels(9).unwrap();
        for (i, u) in coarse.iter().enumerate() {
            assert_eq!(u.to_bits(), fine[2 * i].to_bits());
        }
        assert!(u_levels(1).is_err());
    }

    #[test]
    fn uniform_grid_hits_end() {
        let g = SocGrid::uniform(0.4, 0.8, 201).unwrap();
        assert_eq!(g.nodes()[200], 0.8);
        assert!(SocGrid::from_nodes(vec![0.5, 0.5]).is_err());
    }
}
