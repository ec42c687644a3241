//! Standard-form linear programs, `min c·x  s.t.  A x = b,  x ≥ 0`.
//!
//! The simplex itself is delegated to `microlp`; this module owns the problem
//! layout (column-wise, which suits the wide embedding programs) and an
//! iterative-refinement pass that pushes the equality residual of the returned
//! basic solution down to round-off.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::linalg::pinv_with_tol;

/// Entries of `x` below this are considered outside the support when polishing.
const SUPPORT_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct StandardLp {
    nrows: usize,
    b: Vec<f64>,
    /// Sparse columns: (cost, [(row, coefficient)]).
    cols: Vec<(f64, Vec<(usize, f64)>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl StandardLp {
    pub fn new(b: Vec<f64>) -> Self {
        StandardLp {
            nrows: b.len(),
            b,
            cols: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    /// Adds a nonnegative variable with a dense column; returns its index.
    pub fn add_dense_column(&mut self, cost: f64, column: &[f64]) -> usize {
        debug_assert_eq!(column.len(), self.nrows);
        let entries = column
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        self.cols.push((cost, entries));
        self.cols.len() - 1
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.b.clone();
        for (j, (_, col)) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                r[i] -= v * x[j];
            }
        }
        r
    }

    pub fn solve(&self) -> crate::Result<LpOutcome> {
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = self
            .cols
            .iter()
            .map(|(c, _)| problem.add_var(*c, (0.0, f64::INFINITY)))
            .collect();
        let mut rows: Vec<LinearExpr> = (0..self.nrows).map(|_| LinearExpr::empty()).collect();
        for (j, (_, col)) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                rows[i].add(vars[j], v);
            }
        }
        for (expr, &rhs) in rows.into_iter().zip(&self.b) {
            problem.add_constraint(expr, ComparisonOp::Eq, rhs);
        }
        let outcome = match problem.solve() {
            Ok(o) => o,
            Err(microlp::Error::Infeasible) => return Ok(LpOutcome::Infeasible),
            Err(microlp::Error::Unbounded) => return Ok(LpOutcome::Unbounded),
            Err(e) => return Err(crate::Error::internal(format!("LP solver: {e}"))),
        };
        let solution = outcome
            .into_solution()
            .map_err(|_| crate::Error::internal("LP solve interrupted"))?;
        let mut x: Vec<f64> = vars
            .iter()
            .map(|&v| solution.var_value(v).max(0.0))
            .collect();
        self.polish(&mut x);
        let objective = self.cols.iter().zip(&x).map(|((c, _), xi)| c * xi).sum();
        Ok(LpOutcome::Optimal { x, objective })
    }

    /// Minimum-norm correction on the support of `x` so that `A x = b` holds
    /// to round-off, keeping `x ≥ 0`.
    fn polish(&self, x: &mut [f64]) {
        for _ in 0..3 {
            let r = self.residual(x);
            let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rnorm < 1e-15 {
                return;
            }
            let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] > SUPPORT_TOL).collect();
            if support.is_empty() {
                return;
            }
            let mut a_s = DMatrix::zeros(self.nrows, support.len());
            for (k, &j) in support.iter().enumerate() {
                for &(i, v) in &self.cols[j].1 {
                    a_s[(i, k)] = v;
                }
            }
            let delta = pinv_with_tol(&a_s, 1e-12) * DVector::from_column_slice(&r);
            let mut candidate = x.to_vec();
            for (k, &j) in support.iter().enumerate() {
                candidate[j] += delta[k];
            }
            if candidate.iter().any(|&v| v < -1e-12) {
                return;
            }
            let cnorm = self
                .residual(&candidate)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if cnorm >= rnorm {
                return;
            }
            for (xi, ci) in x.iter_mut().zip(candidate) {
                *xi = ci.max(0.0);
            }
        }
    }
}
