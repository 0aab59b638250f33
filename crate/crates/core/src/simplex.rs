//! Dense two-phase tableau simplex for small linear programs.
//!
//! Maximizes `c·x` subject to linear rows and `x ≥ 0`. Pivoting uses Bland's
//! rule, so the method terminates on degenerate problems. Only meant for the
//! handful of variables that appear in one envelope subproblem.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-10;

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    // m constraint rows followed by the objective row; last column is the rhs
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    first_art: usize,
    cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.rows.len();
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .rows
            .iter()
            .map(|(a, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|v| -v).collect(), flipped, -b)
                } else {
                    (a.clone(), *rel, *b)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let first_art = n + n_slack;
        let cols = first_art + n_art;

        let mut t = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let (mut s, mut a) = (n, first_art);
        for (i, (coeffs, rel, b)) in rows.iter().enumerate() {
            t[i][..n].copy_from_slice(coeffs);
            t[i][cols] = *b;
            match rel {
                Relation::Le => {
                    t[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t[i][s] = -1.0;
                    s += 1;
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t[i][a] = 1.0;
                    basis[i] = a;
                    a += 1;
                }
            }
        }
        Self {
            t,
            basis,
            n,
            first_art,
            cols,
        }
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Pivots until optimal over columns `< limit`. Returns false if unbounded.
    fn optimize(&mut self, limit: usize) -> bool {
        let obj = self.m();
        loop {
            let Some(col) = (0..limit).find(|&j| self.t[obj][j] < -EPS) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..obj {
                let a = self.t[i][col];
                if a > EPS {
                    let ratio = self.t[i][self.cols] / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let obj = self.m();
        let cols = self.cols;
        self.t[obj] = vec![0.0; cols + 1];
        for (j, c) in costs.iter().enumerate() {
            self.t[obj][j] = -c;
        }
        for i in 0..obj {
            let f = self.t[obj][self.basis[i]];
            if f != 0.0 {
                let row = self.t[i].clone();
                for (v, rv) in self.t[obj].iter_mut().zip(&row) {
                    *v -= f * rv;
                }
            }
        }
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        if self.first_art < self.cols {
            // phase one: maximize -Σ artificials
            let mut phase1 = vec![0.0; self.cols];
            for c in phase1.iter_mut().skip(self.first_art) {
                *c = -1.0;
            }
            self.set_objective(&phase1);
            self.optimize(self.cols);
            if self.t[self.m()][self.cols] < -1e-8 {
                return LpOutcome::Infeasible;
            }
            // drive zero-level artificials out of the basis
            let mut i = 0;
            while i < self.m() {
                if self.basis[i] >= self.first_art {
                    if let Some(j) = (0..self.first_art).find(|&j| self.t[i][j].abs() > EPS) {
                        self.pivot(i, j);
                    } else {
                        // redundant row
                        self.t.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
                i += 1;
            }
        }
        let mut costs = objective.to_vec();
        costs.resize(self.cols, 0.0);
        self.set_objective(&costs);
        if !self.optimize(self.first_art) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                x[b] = self.t[i][self.cols];
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { x, value }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (Vec<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add_row(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add_row(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add_row(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(lp.solve());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + 2y, x + y = 3, x ≥ 1, y ≥ 1 → (1, 2), value 5
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 3.0);
        lp.add_row(vec![1.0, 0.0], Relation::Ge, 1.0);
        lp.add_row(vec![0.0, 1.0], Relation::Ge, 1.0);
        let (x, v) = optimal(lp.solve());
        assert!((x[0] - 1.0).abs() < 1e-9);
        assert!((v - 5.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add_row(vec![1.0], Relation::Le, 1.0);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add_row(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x ≥ -2 (x ≤ 2), x + y = 1 twice
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.5];
        lp.add_row(vec![-1.0, 0.0], Relation::Ge, -2.0);
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add_row(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, v) = optimal(lp.solve());
        assert!((x[0] - 1.0).abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-9);
    }
}
