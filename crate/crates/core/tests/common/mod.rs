//! Oracles shared by the integration suites.
#![allow(dead_code)]

use gptomo::polytope::*;
use nalgebra::{DMatrix, Matrix3, Vector3};
use proptest::prelude::ProptestConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

pub fn unit_vec(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Extreme points of a planar set by gift wrapping (collinear points dropped).
pub fn gift_wrap(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let start = (0..points.len())
        .min_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1])))
        .unwrap();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut next = if cur == 0 { 1 } else { 0 };
        for i in 0..points.len() {
            if i == cur {
                continue;
            }
            let c = cross(points[cur], points[next], points[i]);
            // Clockwise candidates win; on a tie keep the farther point.
            if c < 0.0 || (c == 0.0 && d2(points[cur], points[i]) > d2(points[cur], points[next])) {
                next = i;
            }
        }
        if next == start {
            break;
        }
        hull.push(next);
        cur = next;
    }
    hull.into_iter().map(|i| points[i]).collect()
}

/// Vertices of `{a·x ≤ b}` in 3-D from every triple of tight inequalities.
pub fn brute_vertices(h: &HPolytope) -> Vec<Vec<f64>> {
    let n = h.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                let a = Matrix3::from_rows(&[
                    Vector3::from_column_slice(&h.normals[i]).transpose(),
                    Vector3::from_column_slice(&h.normals[j]).transpose(),
                    Vector3::from_column_slice(&h.normals[l]).transpose(),
                ]);
                if a.determinant().abs() < 1e-10 {
                    continue;
                }
                let x = a.try_inverse().unwrap() * Vector3::new(h.offsets[i], h.offsets[j], h.offsets[l]);
                let x = vec![x[0], x[1], x[2]];
                if h.max_violation(&x) <= 1e-9 && !out.iter().any(|y| dist(y, &x) < 1e-8) {
                    out.push(x);
                }
            }
        }
    }
    out
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest distance from a point of one set to the nearest point of the other.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let one = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter()
            .map(|x| q.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Bounded polytope from `count` random inequalities around the origin.
pub fn random_h(rng: &mut ChaCha8Rng, count: usize) -> (HPolytope, VPolytope) {
    loop {
        let normals: Vec<Vec<f64>> = (0..count).map(|_| unit_vec(rng)).collect();
        let offsets: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..1.5)).collect();
        let h = HPolytope::new(normals, offsets).unwrap();
        if let Ok(v) = h_to_v(&h) {
            return (h, v);
        }
    }
}

pub fn cube_h() -> HPolytope {
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..3 {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; 3];
            a[i] = s;
            normals.push(a);
            offsets.push(if s > 0.0 { 1.0 } else { 0.0 });
        }
    }
    HPolytope::new(normals, offsets).unwrap()
}

pub fn octahedron() -> VPolytope {
    let mut v = Vec::new();
    for i in 0..3 {
        for s in [1.0, -1.0] {
            let mut p = vec![0.0; 3];
            p[i] = s;
            v.push(p);
        }
    }
    VPolytope::new(v).unwrap()
}

/// Weighted least squares for `A·exp(−τ/B)` by profiling out `A` (linear for
/// fixed `B`) and a golden-section search over `ln B` after a coarse grid.
/// Returns `(A, B)`.
pub fn decay_oracle(taus: &[f64], y: &[f64], sd: &[f64]) -> (f64, f64) {
    let w: Vec<f64> = if sd.iter().all(|s| *s > 0.0) {
        sd.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; y.len()]
    };
    let profile = |ln_b: f64| {
        let b = ln_b.exp();
        let e: Vec<f64> = taus.iter().map(|t| (-t / b).exp()).collect();
        let num: f64 = (0..y.len()).map(|i| w[i] * y[i] * e[i]).sum();
        let den: f64 = (0..y.len()).map(|i| w[i] * e[i] * e[i]).sum();
        let a = num / den;
        let chi2: f64 = (0..y.len()).map(|i| w[i] * (y[i] - a * e[i]).powi(2)).sum();
        (chi2, a)
    };
    let grid: Vec<f64> = (0..=2000).map(|i| -3.0 + 12.0 * i as f64 / 2000.0).collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| profile(*a).0.total_cmp(&profile(*b).0))
        .unwrap();
    let step = 12.0 / 2000.0;
    let (mut lo, mut hi) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-13 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if profile(c).0 < profile(d).0 {
            hi = d;
        } else {
            lo = c;
        }
    }
    let ln_b = 0.5 * (lo + hi);
    (profile(ln_b).1, ln_b.exp())
}

/// Mixtures of `k` random rows: entries in [0, 1], rank `k` including the
/// all-ones column.
pub fn planted_table(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> DMatrix<f64> {
    let basis = DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..1.0));
    let w = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
    let w = DMatrix::from_fn(m, k, |i, a| w[(i, a)] / w.row(i).sum());
    w * basis
}
