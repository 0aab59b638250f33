//! The augmented (state, confidence level) mesh and tables defined on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `G_s × G_c`. Both axes are kept in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGrid {
    states: Vec<f64>,
    levels: Vec<f64>,
}

/// The pond confidence levels, listed from risk-neutral to near worst-case.
pub const POND_LEVELS: [f64; 9] = [0.999, 0.95, 0.80, 0.65, 0.5, 0.35, 0.20, 0.05, 0.001];

impl AugmentedGrid {
    /// Builds a grid; `levels` may be given in any order.
    pub fn new(states: Vec<f64>, mut levels: Vec<f64>) -> Result<Self> {
        if states.len() < 2 || levels.len() < 2 {
            return Err(Error::InvalidGrid(
                "each axis needs at least two points".into(),
            ));
        }
        if states.iter().any(|s| !s.is_finite()) || states.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("states must be strictly increasing".into()));
        }
        levels.sort_by(f64::total_cmp);
        if levels.iter().any(|y| !(*y > 0.0 && *y <= 1.0)) {
            return Err(Error::InvalidGrid("confidence levels must lie in (0, 1]".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("duplicate confidence level".into()));
        }
        Ok(Self { states, levels })
    }

    /// `lo, lo + step, …, hi` computed per point to avoid drift. A step of
    /// `1/d` for integer `d` uses `lo + i/d`, so decimal grids come out exact.
    pub fn uniform_states(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || !(hi > lo) {
            return Err(Error::InvalidGrid(format!("bad state range [{lo}, {hi}] step {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).round() as usize;
        let d = (1.0 / step).round();
        let point = |i: usize| {
            if d >= 1.0 && (d * step - 1.0).abs() < 1e-12 {
                lo + i as f64 / d
            } else {
                lo + i as f64 * step
            }
        };
        let pts: Vec<f64> = (0..=n).map(point).collect();
        if (pts[n] - hi).abs() > 1e-9 * step.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "step {step} does not divide [{lo}, {hi}]"
            )));
        }
        Ok(pts)
    }

    /// 66 water levels × 9 confidence levels = 594 points.
    pub fn pond_v1() -> Self {
        let states = (0..=65).map(|i| i as f64 / 10.0).collect();
        Self::new(states, POND_LEVELS.to_vec()).expect("pond grid is valid")
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.states.len() * self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_level(&self) -> f64 {
        self.levels[0]
    }

    pub fn max_level(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.levels.len() + iy
    }

    pub fn split(&self, point: usize) -> (usize, usize) {
        (point / self.levels.len(), point % self.levels.len())
    }

    /// Exact match of a confidence level.
    pub fn level_index(&self, alpha: f64) -> Option<usize> {
        self.levels.iter().position(|y| *y == alpha)
    }

    pub fn nearest_state(&self, x: f64) -> usize {
        nearest(&self.states, x)
    }

    pub fn nearest_level(&self, y: f64) -> usize {
        nearest(&self.levels, y)
    }

    /// Bracketing cell of `x` after clamping into the state range.
    pub fn bracket(&self, x: f64) -> Bracket {
        let s = &self.states;
        let n = s.len();
        let x = x.clamp(s[0], s[n - 1]);
        let hi = s.partition_point(|v| *v < x);
        if hi < n && s[hi] == x {
            return Bracket::OnGrid(hi);
        }
        Bracket::Between { lo: hi - 1, x }
    }
}

fn nearest(axis: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, a) in axis.iter().enumerate() {
        if (a - v).abs() < (axis[best] - v).abs() {
            best = i;
        }
    }
    best
}

/// Location of a state relative to the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bracket {
    OnGrid(usize),
    Between { lo: usize, x: f64 },
}

/// `J_k(x, y)` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub stage: usize,
    n_levels: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn new(stage: usize, grid: &AugmentedGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "table has {} entries, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            stage,
            n_levels: grid.n_levels(),
            values,
        })
    }

    pub fn from_fn(stage: usize, grid: &AugmentedGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid
            .states()
            .iter()
            .flat_map(|&x| grid.levels().iter().map(move |&y| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            stage,
            n_levels: grid.n_levels(),
            values,
        }
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.n_levels + iy]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row of values over the confidence levels at state index `ix`.
    pub fn row(&self, ix: usize) -> &[f64] {
        &self.values[ix * self.n_levels..(ix + 1) * self.n_levels]
    }
}

/// Linear interpolation in the state at confidence index `iy`; states outside
/// the grid clamp to its ends.
pub fn interpolate_state_value(j: &ValueTable, grid: &AugmentedGrid, x: f64, iy: usize) -> f64 {
    interpolate_bracket(j, grid, grid.bracket(x), iy)
}

pub fn interpolate_bracket(j: &ValueTable, grid: &AugmentedGrid, b: Bracket, iy: usize) -> f64 {
    match b {
        Bracket::OnGrid(i) => j.get(i, iy),
        Bracket::Between { lo, x } => {
            let s = grid.states();
            let (xi, xi1) = (s[lo], s[lo + 1]);
            ((x - xi) * j.get(lo + 1, iy) + (xi1 - x) * j.get(lo, iy)) / (xi1 - xi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pond_grid_shape() {
        let g = AugmentedGrid::pond_v1();
        assert_eq!(g.len(), 594);
        assert_eq!(g.min_level(), 0.001);
        assert_eq!(g.max_level(), 0.999);
        assert_eq!(g.states()[65], 6.5);
        assert_eq!(g.states()[1], 0.1);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(AugmentedGrid::new(vec![0.0], vec![0.5, 1.0]).is_err());
        assert!(AugmentedGrid::new(vec![1.0, 0.0], vec![0.5, 1.0]).is_err());
        assert!(AugmentedGrid::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(AugmentedGrid::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(AugmentedGrid::uniform_states(0.0, 1.0, 0.3).is_err());
        assert_eq!(AugmentedGrid::uniform_states(0.0, 6.5, 0.1).unwrap().len(), 66);
        assert_eq!(AugmentedGrid::uniform_states(0.0, 6.5, 0.1).unwrap(), AugmentedGrid::pond_v1().states());
    }

    #[test]
    fn state_interpolation() {
        let g = AugmentedGrid::new(vec![0.0, 1.0, 2.0], vec![0.5, 1.0]).unwrap();
        let j = ValueTable::from_fn(0, &g, |x, _| if x == 1.0 { 2.0 } else if x == 2.0 { 4.0 } else { 0.0 });
        assert_eq!(interpolate_state_value(&j, &g, 1.0, 0), 2.0);
        assert_eq!(interpolate_state_value(&j, &g, 1.5, 1), 3.0);
        assert_eq!(interpolate_state_value(&j, &g, 9.0, 0), 4.0);
        assert_eq!(interpolate_state_value(&j, &g, -1.0, 0), 0.0);
    }

    #[test]
    fn nearest_lookup() {
        let g = AugmentedGrid::pond_v1();
        assert_eq!(g.levels()[g.nearest_level(0.04)], 0.05);
        assert_eq!(g.levels()[g.nearest_level(0.0)], 0.001);
        assert_eq!(g.states()[g.nearest_state(3.04)], 3.0);
        assert_eq!(g.level_index(0.5), Some(4));
        assert_eq!(g.level_index(0.51), None);
    }
}
