//! A shared affine frame for three-dimensional state spaces: centre the
//! consistent state space and stretch/rotate it so its boundary sits close to
//! the unit sphere.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gptmodel::Reparametrization;
use crate::linalg::affine_rank;
use crate::{Error, Result};

pub const DEFAULT_STARTS: usize = 10;
const MAX_ITERS: usize = 2000;
const GRAD_TOL: f64 = 1e-10;
const MAX_STEP: f64 = 0.5;

/// `s' = diag(sigma) · Vᵀ · (s − mean)`, with `V` given by Euler angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereFit {
    pub sigma: [f64; 3],
    pub angles: [f64; 3],
    pub mean: [f64; 3],
    pub objective: f64,
}

/// A fit together with the per-start optimizer traces (cost after each
/// accepted step, starting with the initial cost).
#[derive(Debug, Clone)]
pub struct SphereFitTrace {
    pub fit: SphereFit,
    pub start: usize,
    pub initial_objectives: Vec<f64>,
    pub histories: Vec<Vec<f64>>,
}

pub fn center(points: &[[f64; 3]]) -> (Vec<[f64; 3]>, [f64; 3]) {
    let mut mean = [0.0; 3];
    if points.is_empty() {
        return (Vec::new(), mean);
    }
    for p in points {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for m in &mut mean {
        *m /= points.len() as f64;
    }
    let centered = points
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect();
    (centered, mean)
}

pub fn euler_rotation(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    Matrix3::new(
        ca * cg - sa * cb * sg,
        -ca * sg - sa * cb * cg,
        sa * sb,
        sa * cg + ca * cb * sg,
        -sa * sg + ca * cb * cg,
        -ca * sb,
        sb * sg,
        sb * cg,
        cb,
    )
}

/// Partial derivatives of [`euler_rotation`] with respect to each angle.
fn euler_partials(alpha: f64, beta: f64, gamma: f64) -> [Matrix3<f64>; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let d_alpha = Matrix3::new(
        -sa * cg - ca * cb * sg,
        sa * sg - ca * cb * cg,
        ca * sb,
        ca * cg - sa * cb * sg,
        -ca * sg - sa * cb * cg,
        sa * sb,
        0.0,
        0.0,
        0.0,
    );
    let d_beta = Matrix3::new(
        sa * sb * sg,
        sa * sb * cg,
        sa * cb,
        -ca * sb * sg,
        -ca * sb * cg,
        -ca * cb,
        cb * sg,
        cb * cg,
        -sb,
    );
    let d_gamma = Matrix3::new(
        -ca * sg - sa * cb * cg,
        -ca * cg + sa * cb * sg,
        0.0,
        -sa * sg + ca * cb * cg,
        -sa * cg - ca * cb * sg,
        0.0,
        sb * cg,
        -sb * sg,
        0.0,
    );
    [d_alpha, d_beta, d_gamma]
}

impl SphereFit {
    pub fn identity() -> Self {
        SphereFit {
            sigma: [1.0; 3],
            angles: [0.0; 3],
            mean: [0.0; 3],
            objective: 0.0,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_rotation(self.angles[0], self.angles[1], self.angles[2])
    }

    /// The linear part `diag(sigma) · Vᵀ`.
    pub fn linear(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.sigma)) * self.rotation().transpose()
    }

    pub fn apply_point(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = Vector3::new(p[0] - self.mean[0], p[1] - self.mean[1], p[2] - self.mean[2]);
        let out = self.linear() * v;
        [out[0], out[1], out[2]]
    }

    /// The 4×4 map acting on GPT state rows `(1, x)` from the right that
    /// realizes this transform, for use with `apply_reparametrization`.
    pub fn induced_map(&self) -> Reparametrization {
        let lin = self.linear();
        let shift = lin * Vector3::from(self.mean);
        let mut l = DMatrix::zeros(4, 4);
        l[(0, 0)] = 1.0;
        for a in 0..3 {
            l[(0, a + 1)] = -shift[a];
            for b in 0..3 {
                // row-vector convention: x'ᵀ = xᵀ · linᵀ
                l[(b + 1, a + 1)] = lin[(a, b)];
            }
        }
        Reparametrization { linear_map: l }
    }
}

pub fn apply_transform(fit: &SphereFit, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    points.iter().map(|p| fit.apply_point(p)).collect()
}

/// `Σᵢ (1 − ‖s'ᵢ‖²)²` for already-centred points.
pub fn sphere_objective(sigma: &[f64; 3], angles: &[f64; 3], centered: &[[f64; 3]]) -> f64 {
    let params = [sigma[0].ln(), sigma[1].ln(), sigma[2].ln(), angles[0], angles[1], angles[2]];
    SphereCost { points: centered }.value(&params)
}

struct SphereCost<'a> {
    points: &'a [[f64; 3]],
}

impl SphereCost<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let sig2: Vec<f64> = (0..3).map(|a| (2.0 * p[a]).exp()).collect();
        let v = euler_rotation(p[3], p[4], p[5]);
        self.points
            .iter()
            .map(|x| {
                let y = v.transpose() * Vector3::from(*x);
                let r = 1.0 - (0..3).map(|a| sig2[a] * y[a] * y[a]).sum::<f64>();
                r * r
            })
            .sum()
    }

    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let sig2: Vec<f64> = (0..3).map(|a| (2.0 * p[a]).exp()).collect();
        let v = euler_rotation(p[3], p[4], p[5]);
        let dv = euler_partials(p[3], p[4], p[5]);
        let mut g = vec![0.0; 6];
        for x in self.points {
            let xv = Vector3::from(*x);
            let y = v.transpose() * xv;
            let r = 1.0 - (0..3).map(|a| sig2[a] * y[a] * y[a]).sum::<f64>();
            for a in 0..3 {
                // d‖s'‖²/d log σ_a = 2 σ_a² y_a²
                g[a] += 2.0 * r * (-2.0 * sig2[a] * y[a] * y[a]);
            }
            for (t, d) in dv.iter().enumerate() {
                let dy = d.transpose() * xv;
                let dn: f64 = (0..3).map(|a| 2.0 * sig2[a] * y[a] * dy[a]).sum();
                g[3 + t] += 2.0 * r * (-dn);
            }
        }
        g
    }
}

/// Finite-difference gradient (central, step `h`) of the objective at a fit.
pub fn numeric_gradient(fit: &SphereFit, centered: &[[f64; 3]], h: f64) -> Vec<f64> {
    let cost = SphereCost { points: centered };
    let p0 = fit_params(fit);
    (0..6)
        .map(|i| {
            let mut hi = p0.clone();
            let mut lo = p0.clone();
            hi[i] += h;
            lo[i] -= h;
            (cost.value(&hi) - cost.value(&lo)) / (2.0 * h)
        })
        .collect()
}

fn fit_params(fit: &SphereFit) -> Vec<f64> {
    let mut p: Vec<f64> = fit.sigma.iter().map(|s| s.ln()).collect();
    p.extend_from_slice(&fit.angles);
    p
}

pub fn fit_sphere_transform(points: &[[f64; 3]]) -> Result<SphereFit> {
    Ok(fit_sphere_transform_traced(points, 0, DEFAULT_STARTS)?.fit)
}

/// Multi-start BFGS over `(log σ, α, β, γ)`; the champion is the lowest
/// objective, ties broken by start index.
pub fn fit_sphere_transform_traced(points: &[[f64; 3]], seed: u64, starts: usize) -> Result<SphereFitTrace> {
    if points.len() < 6 {
        return Err(Error::invalid(format!("sphere fit needs at least 6 points, got {}", points.len())));
    }
    if starts == 0 {
        return Err(Error::invalid("sphere fit needs at least one start"));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let dim = affine_rank(&rows, 1e-9);
    if dim < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "boundary points span only {dim} dimensions"
        )));
    }
    let (centered, mean) = center(points);
    let extents: Vec<f64> = (0..3)
        .map(|a| centered.iter().map(|p| p[a].abs()).fold(0.0, f64::max))
        .collect();
    let cost = SphereCost { points: &centered };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut initial_objectives = Vec::with_capacity(starts);
    let mut histories = Vec::with_capacity(starts);
    for start in 0..starts {
        let mut p0: Vec<f64> = extents.iter().map(|e| -e.ln()).collect();
        p0.push(rng.random_range(0.0..2.0 * PI));
        p0.push(rng.random_range(0.0..PI));
        p0.push(rng.random_range(0.0..2.0 * PI));
        let f0 = cost.value(&p0);
        initial_objectives.push(f0);
        let (p, history) = bfgs(&cost, p0);
        let f = *history.last().expect("history starts with the initial cost");
        histories.push(history);
        if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
            best = Some((f, start, p));
        }
    }
    let (objective, start, p) = best.expect("at least one start");
    Ok(SphereFitTrace {
        fit: SphereFit {
            sigma: [p[0].exp(), p[1].exp(), p[2].exp()],
            angles: [p[3], p[4], p[5]],
            mean,
            objective,
        },
        start,
        initial_objectives,
        histories,
    })
}

/// BFGS with Armijo backtracking. Returns the final point and the cost after
/// every accepted step (starting with the initial cost); accepted steps
/// never increase the cost.
fn bfgs(cost: &SphereCost, mut x: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let identity = DMatrix::<f64>::identity(n, n);
    let mut h = identity.clone();
    let mut f = cost.value(&x);
    let mut g = DVector::from_vec(cost.gradient(&x));
    let mut history = vec![f];
    for _ in 0..MAX_ITERS {
        if g.norm() < GRAD_TOL {
            break;
        }
        let mut dir = -(&h * &g);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            h = identity.clone();
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        // Cap the step so one move cannot collapse every scale to zero.
        let mut step = (MAX_STEP / dir.norm()).min(1.0);
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let ft = cost.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                break Some((trial, ft));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((x_new, f_new)) = accepted else {
            if h == identity {
                break;
            }
            h = identity.clone();
            continue;
        };
        let g_new = DVector::from_vec(cost.gradient(&x_new));
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let left = &identity - rho * &s * y.transpose();
            let right = &identity - rho * &y * s.transpose();
            h = left * &h * right + rho * &s * s.transpose();
        }
        let stalled = f - f_new <= 1e-16 * f.abs().max(1e-300) && f_new > 0.0;
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        if stalled || f == 0.0 {
            break;
        }
    }
    (x, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gptmodel::{apply_reparametrization, GptModel};
    use crate::nonclassicality::icosphere;

    fn ellipsoid(axes: [f64; 3], rot: Matrix3<f64>, shift: [f64; 3]) -> Vec<[f64; 3]> {
        icosphere(2)
            .into_iter()
            .map(|d| {
                let p = rot * Vector3::new(axes[0] * d[0], axes[1] * d[1], axes[2] * d[2]);
                [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]
            })
            .collect()
    }

    #[test]
    fn center_properties() {
        let (c, mu) = center(&[[1.0, 2.0, 3.0]]);
        assert_eq!(mu, [1.0, 2.0, 3.0]);
        assert_eq!(c, vec![[0.0; 3]]);
        let (_, mu) = center(&[[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]]);
        assert_eq!(mu, [0.0; 3]);
    }

    #[test]
    fn euler_quarter_turn_about_z() {
        let v = euler_rotation(PI / 2.0, 0.0, 0.0);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((v - expected).abs().max() < 1e-15);
        assert_eq!(euler_rotation(0.0, 0.0, 0.0), Matrix3::identity());
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let pts = ellipsoid([2.0, 1.0, 0.5], euler_rotation(0.3, 1.1, -0.4), [0.0; 3]);
        let cost = SphereCost { points: &pts };
        let p = vec![0.1, -0.2, 0.3, 0.7, 0.5, 2.0];
        let g = cost.gradient(&p);
        for i in 0..6 {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (cost.value(&hi) - cost.value(&lo)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn unit_sphere_is_a_fixed_point() {
        let pts = ellipsoid([1.0; 3], Matrix3::identity(), [0.0; 3]);
        let fit = fit_sphere_transform(&pts).unwrap();
        assert!(fit.objective < 1e-12);
        for p in apply_transform(&fit, &pts) {
            assert!((Vector3::from(p).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn planted_axis_aligned_ellipsoid() {
        let pts = ellipsoid([2.0, 1.0, 0.5], Matrix3::identity(), [0.3, -0.1, 0.2]);
        let fit = fit_sphere_transform(&pts).unwrap();
        assert!(fit.objective < 1e-8, "objective {}", fit.objective);
        let mut s = fit.sigma;
        s.sort_by(|a, b| b.total_cmp(a));
        assert!((s[0] - 2.0).abs() < 1e-4 && (s[1] - 1.0).abs() < 1e-4 && (s[2] - 0.5).abs() < 1e-4, "{s:?}");
        let g = numeric_gradient(&fit, &center(&pts).0, 1e-6);
        assert!(crate::linalg::norm(&g) < 1e-5);
    }

    #[test]
    fn planted_rotated_ellipsoid() {
        let pts = ellipsoid([1.5, 0.8, 0.4], euler_rotation(0.9, 0.6, 2.2), [0.0; 3]);
        let trace = fit_sphere_transform_traced(&pts, 7, DEFAULT_STARTS).unwrap();
        for p in apply_transform(&trace.fit, &pts) {
            assert!((Vector3::from(p).norm() - 1.0).abs() < 1e-4);
        }
        for h in &trace.histories {
            assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
        }
        let reproduced: f64 = apply_transform(&trace.fit, &pts)
            .iter()
            .map(|p| (1.0 - Vector3::from(*p).norm_squared()).powi(2))
            .sum();
        assert!((reproduced - trace.fit.objective).abs() < 1e-12);
    }

    #[test]
    fn coplanar_and_small_inputs_rejected() {
        let flat: Vec<[f64; 3]> = (0..8).map(|i| [(i as f64).cos(), (i as f64).sin(), 0.0]).collect();
        assert!(matches!(fit_sphere_transform(&flat), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(fit_sphere_transform(&flat[..4]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn induced_map_preserves_probabilities() {
        let fit = SphereFit { sigma: [0.7, 1.3, 2.1], angles: [0.4, 1.2, -0.8], mean: [0.1, -0.2, 0.05], objective: 0.0 };
        let dirs = icosphere(0);
        let states = DMatrix::from_fn(dirs.len(), 4, |i, j| if j == 0 { 1.0 } else { 0.9 * dirs[i][j - 1] });
        let effects = DMatrix::from_fn(4, dirs.len(), |i, j| if i == 0 { 0.5 } else { 0.5 * dirs[j][i - 1] });
        let model = GptModel { rank: 4, tau_labels: None, states, effects, provenance: None };
        let moved = apply_reparametrization(&model, &fit.induced_map()).unwrap();
        assert!(crate::linalg::max_abs_diff(&model.probabilities(), &moved.probabilities()) < 1e-9);
        for (i, d) in dirs.iter().enumerate() {
            let want = fit.apply_point(&[0.9 * d[0], 0.9 * d[1], 0.9 * d[2]]);
            for a in 0..3 {
                assert!((moved.states[(i, a + 1)] - want[a]).abs() < 1e-12);
            }
            assert!((moved.states[(i, 0)] - 1.0).abs() < 1e-12);
        }
    }
}
