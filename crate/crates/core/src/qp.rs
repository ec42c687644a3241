//! Primal active-set solver for small strictly convex quadratic programs
//!
//! ```text
//!   minimize   ½ xᵀ H x + gᵀ x
//!   subject to lo_c ≤ C_c · x ≤ hi_c     for every row c of C
//! ```
//!
//! The solver starts from a feasible point and every accepted step is a
//! descent step, so the objective never increases. That property is what the
//! see-saw relies on for its monotone χ² sequence.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// KKT conditions met (as opposed to hitting the iteration cap).
    pub optimal: bool,
}

/// Two-sided linear inequality constraints stored row-major.
#[derive(Debug, Clone, Copy)]
pub struct Constraints<'a> {
    pub rows: &'a [f64],
    pub lo: &'a [f64],
    pub hi: &'a [f64],
}

impl Constraints<'_> {
    fn count(&self) -> usize {
        self.lo.len()
    }

    fn row(&self, c: usize, k: usize) -> &[f64] {
        &self.rows[c * k..(c + 1) * k]
    }
}

pub fn objective(h: &DMatrix<f64>, g: &[f64], x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    0.5 * xv.dot(&(h * &xv)) + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// Largest violation of the constraints at `x` (0 when feasible).
pub fn max_violation(cons: &Constraints<'_>, x: &[f64]) -> f64 {
    let k = x.len();
    (0..cons.count())
        .map(|c| {
            let v: f64 = cons.row(c, k).iter().zip(x).map(|(a, b)| a * b).sum();
            (cons.lo[c] - v).max(v - cons.hi[c]).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Solves the QP from the feasible starting point `x0`.
///
/// `kkt_tol` bounds the multiplier sign violation accepted at termination.
pub fn solve(
    h: &DMatrix<f64>,
    g: &[f64],
    cons: &Constraints<'_>,
    x0: &[f64],
    kkt_tol: f64,
    max_iter: usize,
) -> crate::Result<QpSolution> {
    let k = g.len();
    assert_eq!(h.shape(), (k, k));
    assert_eq!(x0.len(), k);
    assert_eq!(cons.rows.len(), cons.count() * k);

    let scale = 1.0 + x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let viol = max_violation(cons, x0);
    if viol > 1e-7 * scale {
        return Err(crate::Error::internal(format!(
            "QP start point infeasible (violation {viol:.3e})"
        )));
    }

    let mut h = h.clone();
    let mut chol = h.clone().cholesky();
    if chol.is_none() {
        let ridge = 1e-12 * (h.trace().abs() / k as f64).max(1e-300);
        for i in 0..k {
            h[(i, i)] += ridge;
        }
        chol = h.clone().cholesky();
    }
    let chol = chol.ok_or_else(|| crate::Error::internal("QP Hessian is not positive definite"))?;

    let gv = DVector::from_column_slice(g);
    let mut x = DVector::from_column_slice(x0);
    let mut working: Vec<(usize, Side)> = Vec::new();
    let mut in_working = vec![false; cons.count()];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let grad = &h * &x + &gv;
        let gscale = 1.0 + grad.amax();

        let (p, nu) = if working.is_empty() {
            (chol.solve(&(-&grad)), DVector::zeros(0))
        } else {
            let w = working.len();
            let mut kkt = DMatrix::zeros(k + w, k + w);
            kkt.view_mut((0, 0), (k, k)).copy_from(&h);
            for (r, &(c, _)) in working.iter().enumerate() {
                for (j, &a) in cons.row(c, k).iter().enumerate() {
                    kkt[(k + r, j)] = a;
                    kkt[(j, k + r)] = a;
                }
            }
            let mut rhs = DVector::zeros(k + w);
            rhs.rows_mut(0, k).copy_from(&(-&grad));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| crate::Error::internal("singular KKT system in QP"))?;
            (sol.rows(0, k).into_owned(), sol.rows(k, w).into_owned())
        };

        let xscale = 1.0 + x.amax();
        if p.amax() <= 1e-13 * xscale {
            // Stationary on the working set: check multiplier signs.
            let mut worst: Option<(usize, f64)> = None;
            for (r, &(_, side)) in working.iter().enumerate() {
                let wrong = match side {
                    Side::Upper => -nu[r],
                    Side::Lower => nu[r],
                };
                if wrong > kkt_tol * gscale && worst.is_none_or(|(_, v)| wrong > v) {
                    worst = Some((r, wrong));
                }
            }
            match worst {
                None => {
                    let xs: Vec<f64> = x.iter().copied().collect();
                    return Ok(QpSolution {
                        objective: objective(&h, g, &xs),
                        x: xs,
                        iterations,
                        optimal: true,
                    });
                }
                Some((r, _)) => {
                    let (c, _) = working.remove(r);
                    in_working[c] = false;
                    continue;
                }
            }
        }

        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Side)> = None;
        for c in 0..cons.count() {
            if in_working[c] {
                continue;
            }
            let row = cons.row(c, k);
            let cp: f64 = row.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
            if cp.abs() <= 1e-15 * xscale {
                continue;
            }
            let cx: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            let (room, side) = if cp > 0.0 {
                (cons.hi[c] - cx, Side::Upper)
            } else {
                (cx - cons.lo[c], Side::Lower)
            };
            let step = room.max(0.0) / cp.abs();
            if step < alpha {
                alpha = step;
                blocking = Some((c, side));
            }
        }
        x += alpha * &p;
        if let Some((c, side)) = blocking {
            working.push((c, side));
            in_working[c] = true;
        }
    }

    let xs: Vec<f64> = x.iter().copied().collect();
    Ok(QpSolution {
        objective: objective(&h, g, &xs),
        x: xs,
        iterations,
        optimal: false,
    })
}
