//! Convex polytopes in vertex (V) and inequality (H) form.
//!
//! Conversions go through a floating-point double-description method on
//! pointed polyhedral cones `{x : A x ≥ 0}`. Rows are scaled to unit length
//! and rays to unit length, so a single absolute tolerance decides incidence.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{affine_rank, column_basis, dot, norm, null_space};
use crate::lp::{LpOutcome, StandardLp};
use crate::{Error, Result};

/// Incidence tolerance on unit-scaled data.
pub const TOL: f64 = 1e-9;
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VPolytope {
    pub dimension: usize,
    pub vertices: Vec<Vec<f64>>,
}

/// Inequalities `normals[i]·x ≤ offsets[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    pub dimension: usize,
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    V,
    H,
}

/// On-disk layout. V rows are vertices; H rows are `[a_1, …, a_d, b]` for `a·x ≤ b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeFile {
    pub dimension: usize,
    pub kind: Kind,
    pub rows: Vec<Vec<f64>>,
}

impl VPolytope {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let dimension = check_points(&vertices)?;
        Ok(VPolytope {
            dimension,
            vertices,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Dimension of the affine hull of the vertices.
    pub fn affine_dimension(&self) -> usize {
        affine_rank(&self.vertices, RANK_RTOL)
    }

    pub fn centroid(&self) -> Vec<f64> {
        centroid(&self.vertices)
    }

    pub fn to_file(&self) -> PolytopeFile {
        PolytopeFile {
            dimension: self.dimension,
            kind: Kind::V,
            rows: self.vertices.clone(),
        }
    }
}

impl HPolytope {
    /// Builds a canonical H-representation: rows scaled to unit normals,
    /// zero rows dropped, duplicates removed.
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::invalid("normals and offsets differ in length"));
        }
        let dimension = check_points(&normals)?;
        let mut h = HPolytope {
            dimension,
            normals: Vec::new(),
            offsets: Vec::new(),
        };
        for (a, b) in normals.into_iter().zip(offsets) {
            h.push(a, b)?;
        }
        Ok(h)
    }

    fn push(&mut self, a: Vec<f64>, b: f64) -> Result<()> {
        let n = norm(&a);
        if n <= 1e-14 {
            if b < -TOL {
                return Err(Error::Infeasible("inequality 0 <= negative".into()));
            }
            return Ok(());
        }
        let a: Vec<f64> = a.iter().map(|v| v / n).collect();
        let b = b / n;
        let dup = self.normals.iter().zip(&self.offsets).any(|(c, d)| {
            (d - b).abs() <= TOL && c.iter().zip(&a).all(|(x, y)| (x - y).abs() <= TOL)
        });
        if !dup {
            self.normals.push(a);
            self.offsets.push(b);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Largest violation `a·x − b` over all rows (negative when strictly inside).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| dot(a, x) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Indices of inequalities tight at `x`.
    pub fn active_set(&self, x: &[f64], tol: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| (dot(&self.normals[i], x) - self.offsets[i]).abs() <= tol)
            .collect()
    }

    pub fn to_file(&self) -> PolytopeFile {
        PolytopeFile {
            dimension: self.dimension,
            kind: Kind::H,
            rows: self
                .normals
                .iter()
                .zip(&self.offsets)
                .map(|(a, b)| {
                    let mut r = a.clone();
                    r.push(*b);
                    r
                })
                .collect(),
        }
    }
}

impl PolytopeFile {
    pub fn into_v(self) -> Result<VPolytope> {
        if self.kind != Kind::V {
            return Err(Error::invalid("expected a V-representation"));
        }
        let p = VPolytope::new(self.rows)?;
        if p.dimension != self.dimension {
            return Err(Error::invalid("declared dimension differs from the rows"));
        }
        Ok(p)
    }

    pub fn into_h(self) -> Result<HPolytope> {
        if self.kind != Kind::H {
            return Err(Error::invalid("expected an H-representation"));
        }
        let d = self.dimension;
        if self.rows.iter().any(|r| r.len() != d + 1) {
            return Err(Error::invalid("H rows must have dimension + 1 entries"));
        }
        let (normals, offsets) = self
            .rows
            .into_iter()
            .map(|mut r| {
                let b = r.pop().expect("nonempty row");
                (r, b)
            })
            .unzip();
        HPolytope::new(normals, offsets)
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("empty point list"))?;
    if d == 0 {
        return Err(Error::invalid("points must have positive dimension"));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points differ in dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points must be finite"));
    }
    Ok(d)
}

fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for p in points {
        for (ci, pi) in c.iter_mut().zip(p) {
            *ci += pi;
        }
    }
    c.iter_mut().for_each(|v| *v /= points.len() as f64);
    c
}

fn diameter(points: &[Vec<f64>]) -> f64 {
    let c = centroid(points);
    2.0 * points
        .iter()
        .map(|p| norm(&p.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Double description.

#[derive(Debug, Clone)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn new(bits: usize) -> Self {
        BitSet(vec![0; bits.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    fn and(&self, other: &BitSet) -> BitSet {
        BitSet(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn contains(&self, other: &BitSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & b == *b)
    }
}

#[derive(Debug, Clone)]
struct Ray {
    x: Vec<f64>,
    zeros: BitSet,
}

#[derive(Debug)]
enum Cone {
    Rays(Vec<Ray>),
    /// `{x : A x ≥ 0}` contains the line spanned by this vector.
    NotPointed(Vec<f64>),
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 1e-300).then(|| v.iter().map(|x| x / n).collect())
}

/// Extreme rays of the pointed cone `{x : rows·x ≥ 0}`.
fn extreme_rays(rows: &[Vec<f64>], d: usize) -> Result<Cone> {
    let rows: Vec<Vec<f64>> = rows.iter().filter_map(|r| unit(r)).collect();
    let nrows = rows.len();

    // Initial simplicial cone from the first independent rows in input order.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut chosen = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if chosen.len() == d {
            break;
        }
        let mut v = r.clone();
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        if let Some(u) = unit(&v).filter(|_| norm(&v) > 1e-10) {
            basis.push(u);
            chosen.push(i);
        }
    }
    if chosen.len() < d {
        let a = DMatrix::from_fn(nrows, d, |i, j| rows[i][j]);
        let ns = null_space(&a, RANK_RTOL);
        let line = if ns.ncols() > 0 {
            ns.column(0).iter().copied().collect()
        } else {
            vec![0.0; d]
        };
        return Ok(Cone::NotPointed(line));
    }
    let a0 = DMatrix::from_fn(d, d, |i, j| rows[chosen[i]][j]);
    let inv = a0
        .try_inverse()
        .ok_or_else(|| Error::internal("initial double-description basis is singular"))?;
    let mut rays: Vec<Ray> = (0..d)
        .map(|j| {
            let x = unit(&inv.column(j).iter().copied().collect::<Vec<_>>()).expect("nonzero");
            let mut zeros = BitSet::new(nrows);
            for (r, &ci) in chosen.iter().enumerate() {
                if r != j {
                    zeros.set(ci);
                }
            }
            Ray { x, zeros }
        })
        .collect();

    let mut processed: Vec<bool> = vec![false; nrows];
    for &c in &chosen {
        processed[c] = true;
    }
    for i in 0..nrows {
        if processed[i] {
            continue;
        }
        processed[i] = true;
        let a = &rows[i];
        let vals: Vec<f64> = rays.iter().map(|r| dot(a, &r.x)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&j| vals[j] > TOL).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&j| vals[j] < -TOL).collect();
        if neg.is_empty() {
            for (j, r) in rays.iter_mut().enumerate() {
                if vals[j].abs() <= TOL {
                    r.zeros.set(i);
                }
            }
            continue;
        }
        let mut created = Vec::new();
        for &p in &pos {
            for &n in &neg {
                let common = rays[p].zeros.and(&rays[n].zeros);
                if common.count() + 2 < d {
                    continue;
                }
                let adjacent = rays
                    .iter()
                    .enumerate()
                    .all(|(q, r)| q == p || q == n || !r.zeros.contains(&common));
                if !adjacent {
                    continue;
                }
                let (vp, vn) = (vals[p], vals[n]);
                let x: Vec<f64> = rays[n]
                    .x
                    .iter()
                    .zip(&rays[p].x)
                    .map(|(xn, xp)| vp * xn - vn * xp)
                    .collect();
                if let Some(x) = unit(&x) {
                    let mut zeros = common;
                    zeros.set(i);
                    created.push(Ray { x, zeros });
                }
            }
        }
        let mut next: Vec<Ray> = Vec::with_capacity(pos.len() + created.len());
        for (j, mut r) in rays.into_iter().enumerate() {
            if vals[j] >= -TOL {
                if vals[j] <= TOL {
                    r.zeros.set(i);
                }
                next.push(r);
            }
        }
        next.extend(created);
        rays = next;
    }
    // Duplicates can only arise from round-off; merge them.
    let mut out: Vec<Ray> = Vec::with_capacity(rays.len());
    for r in rays {
        if !out
            .iter()
            .any(|o| o.x.iter().zip(&r.x).all(|(a, b)| (a - b).abs() <= 1e-8))
        {
            out.push(r);
        }
    }
    Ok(Cone::Rays(out))
}

// ---------------------------------------------------------------------------
// Conversions.

/// Vertices of a bounded H-polytope.
pub fn h_to_v(h: &HPolytope) -> Result<VPolytope> {
    h_to_v_with_incidence(h).map(|(v, _)| v)
}

/// Vertices together with the indices of the inequalities tight at each.
fn h_to_v_with_incidence(h: &HPolytope) -> Result<(VPolytope, Vec<Vec<usize>>)> {
    let d = h.dimension;
    if h.is_empty() {
        let mut ray = vec![0.0; d];
        ray[0] = 1.0;
        return Err(Error::Unbounded { ray });
    }
    // Homogenize: (t, x) with b t − a·x ≥ 0 and t ≥ 0.
    let mut rows: Vec<Vec<f64>> = h
        .normals
        .iter()
        .zip(&h.offsets)
        .map(|(a, b)| {
            let mut r = vec![*b];
            r.extend(a.iter().map(|v| -v));
            r
        })
        .collect();
    let mut t_row = vec![0.0; d + 1];
    t_row[0] = 1.0;
    rows.push(t_row);
    let rays = match extreme_rays(&rows, d + 1)? {
        Cone::Rays(r) => r,
        Cone::NotPointed(line) => {
            return Err(Error::Unbounded {
                ray: line[1..].to_vec(),
            })
        }
    };
    let mut vertices = Vec::new();
    for r in &rays {
        if r.x[0] <= 1e-12 {
            return Err(Error::Unbounded {
                ray: r.x[1..].to_vec(),
            });
        }
        vertices.push(r.x[1..].iter().map(|v| v / r.x[0]).collect::<Vec<f64>>());
    }
    if vertices.is_empty() {
        return Err(Error::Infeasible("H-polytope has no feasible point".into()));
    }
    let scale = 1.0 + diameter(&vertices);
    let incidence = vertices
        .iter()
        .map(|v| h.active_set(v, TOL * scale))
        .collect();
    Ok((VPolytope::new(vertices)?, incidence))
}

/// Facet inequalities of a full-dimensional V-polytope.
pub fn v_to_h(v: &VPolytope) -> Result<HPolytope> {
    facets_with_incidence(v).map(|(h, _)| h)
}

/// Facets plus, for each facet, the indices of the vertices lying on it.
fn facets_with_incidence(v: &VPolytope) -> Result<(HPolytope, Vec<Vec<usize>>)> {
    let d = v.dimension;
    let dim = v.affine_dimension();
    if dim < d {
        return Err(Error::DegenerateGeometry(format!(
            "polytope spans {dim} of {d} dimensions"
        )));
    }
    let c = v.centroid();
    let scale = diameter(&v.vertices).max(f64::MIN_POSITIVE);
    let scaled: Vec<Vec<f64>> = v
        .vertices
        .iter()
        .map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) / scale).collect())
        .collect();
    // Facets are the extreme rays of {(h0, h) : h0 + h·y ≥ 0 for all points y}.
    let rows: Vec<Vec<f64>> = scaled
        .iter()
        .map(|y| {
            let mut r = vec![1.0];
            r.extend(y);
            r
        })
        .collect();
    let rays = match extreme_rays(&rows, d + 1)? {
        Cone::Rays(r) => r,
        Cone::NotPointed(_) => {
            return Err(Error::internal("cone over a full-dimensional polytope is not pointed"))
        }
    };
    let mut h = HPolytope {
        dimension: d,
        normals: Vec::new(),
        offsets: Vec::new(),
    };
    let mut incidence = Vec::new();
    for r in rays {
        // h0 + h·y ≥ 0  ⇔  (−h)·x ≤ h0·scale − h·c
        let a: Vec<f64> = r.x[1..].iter().map(|v| -v).collect();
        let b = r.x[0] * scale + dot(&a, &c);
        let on: Vec<usize> = (0..rows.len()).filter(|&i| r.zeros.get(i)).collect();
        let before = h.len();
        h.push(a, b)?;
        if h.len() > before {
            incidence.push(on);
        }
    }
    Ok((h, incidence))
}

/// Points of `points` that are not convex combinations of the others, in
/// their original order. Exact repeats keep their first occurrence.
pub fn remove_interior(points: &[Vec<f64>]) -> Result<VPolytope> {
    check_points(points)?;
    let mut unique: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !unique.iter().any(|&j| points[j] == *p) {
            unique.push(i);
        }
    }
    let tol = TOL * (1.0 + diameter(points));
    let mut alive = unique.clone();
    for &i in &unique {
        let others: Vec<Vec<f64>> = alive
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| points[j].clone())
            .collect();
        if others.is_empty() {
            continue;
        }
        if hull_distance(&others, &points[i])? <= tol {
            alive.retain(|&j| j != i);
        }
    }
    VPolytope::new(alive.into_iter().map(|i| points[i].clone()).collect())
}

/// 1-norm distance from `x` to the convex hull of `points`, by LP.
fn hull_distance(points: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    let d = x.len();
    let mut b = x.to_vec();
    b.push(1.0);
    let mut lp = StandardLp::new(b);
    for p in points {
        let mut col = p.clone();
        col.push(1.0);
        lp.add_dense_column(0.0, &col);
    }
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut col = vec![0.0; d + 1];
            col[k] = sign;
            lp.add_dense_column(1.0, &col);
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { objective, .. } => Ok(objective.max(0.0)),
        other => Err(Error::internal(format!("hull distance LP: {other:?}"))),
    }
}

/// True when `x` lies within `tol` (1-norm) of the convex hull of `p`.
pub fn contains(p: &VPolytope, x: &[f64], tol: f64) -> Result<bool> {
    if x.len() != p.dimension {
        return Err(Error::invalid("point dimension differs from the polytope"));
    }
    Ok(hull_distance(&p.vertices, x)? <= tol)
}

/// Vertices of `{x : 0 ≤ g·x ≤ 1 for every generator g}`, intersected with
/// `u·x = 1` when a normalization `u` is given.
pub fn consistent_dual(generators: &[Vec<f64>], normalization: Option<&[f64]>) -> Result<VPolytope> {
    let k = check_points(generators)?;
    match normalization {
        None => {
            let mut normals = Vec::new();
            let mut offsets = Vec::new();
            for g in generators {
                normals.push(g.clone());
                offsets.push(1.0);
                normals.push(g.iter().map(|v| -v).collect());
                offsets.push(0.0);
            }
            h_to_v(&HPolytope::new(normals, offsets)?)
        }
        Some(u) => {
            if u.len() != k {
                return Err(Error::invalid("normalization has the wrong dimension"));
            }
            let uu = dot(u, u);
            if uu <= 0.0 {
                return Err(Error::invalid("normalization must be nonzero"));
            }
            // x = x0 + N y parametrizes the hyperplane u·x = 1.
            let x0: Vec<f64> = u.iter().map(|v| v / uu).collect();
            let n = if u.iter().skip(1).all(|&v| v == 0.0) {
                let mut n = DMatrix::zeros(k, k - 1);
                for j in 0..k - 1 {
                    n[(j + 1, j)] = 1.0;
                }
                n
            } else {
                null_space(&DMatrix::from_row_slice(1, k, u), RANK_RTOL)
            };
            let mut normals = Vec::new();
            let mut offsets = Vec::new();
            for g in generators {
                let gy: Vec<f64> = (0..k - 1)
                    .map(|j| (0..k).map(|i| g[i] * n[(i, j)]).sum())
                    .collect();
                let g0 = dot(g, &x0);
                normals.push(gy.clone());
                offsets.push(1.0 - g0);
                normals.push(gy.iter().map(|v| -v).collect());
                offsets.push(g0);
            }
            if k == 1 {
                let ok = offsets.iter().all(|&b| b >= -TOL);
                return if ok {
                    VPolytope::new(vec![x0])
                } else {
                    Err(Error::Infeasible("normalized dual is empty".into()))
                };
            }
            let y = h_to_v(&HPolytope::new(normals, offsets)?)?;
            VPolytope::new(
                y.vertices
                    .iter()
                    .map(|yv| {
                        (0..k)
                            .map(|i| x0[i] + (0..k - 1).map(|j| n[(i, j)] * yv[j]).sum::<f64>())
                            .collect()
                    })
                    .collect(),
            )
        }
    }
}

/// Facet normals `h` (with `h·g ≥ 0` for every generator) of the cone
/// generated by `generators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeFacets {
    /// Rows in ambient coordinates, unit length.
    pub facets: Vec<Vec<f64>>,
    /// Orthonormal basis (columns) of the generators' span when it is a
    /// proper subspace; facets then describe the cone within that span.
    pub projection: Option<Vec<Vec<f64>>>,
}

pub fn cone_facets(generators: &[Vec<f64>]) -> Result<ConeFacets> {
    let k = check_points(generators)?;
    let gens: Vec<Vec<f64>> = generators
        .iter()
        .filter(|g| norm(g) > 1e-14)
        .cloned()
        .collect();
    if gens.is_empty() {
        return Err(Error::invalid("cone generators are all zero"));
    }
    let gm = DMatrix::from_fn(k, gens.len(), |i, j| gens[j][i]);
    let basis = column_basis(&gm, RANK_RTOL);
    let r = basis.ncols();
    let (coords, projection): (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>) = if r == k {
        (gens.clone(), None)
    } else {
        let coords = gens
            .iter()
            .map(|g| (0..r).map(|c| (0..k).map(|i| basis[(i, c)] * g[i]).sum()).collect())
            .collect();
        let cols = (0..r).map(|c| basis.column(c).iter().copied().collect()).collect();
        (coords, Some(cols))
    };
    let rays = match extreme_rays(&coords, r)? {
        Cone::Rays(rays) => rays,
        Cone::NotPointed(_) => {
            return Err(Error::internal("dual of a spanning cone is not pointed"))
        }
    };
    let mut facets: Vec<Vec<f64>> = Vec::new();
    for ray in rays {
        let h: Vec<f64> = if r == k {
            ray.x
        } else {
            (0..k)
                .map(|i| (0..r).map(|c| basis[(i, c)] * ray.x[c]).sum())
                .collect()
        };
        let h = unit(&h).expect("nonzero facet");
        if !facets
            .iter()
            .any(|f| f.iter().zip(&h).all(|(a, b)| (a - b).abs() <= 1e-8))
        {
            facets.push(h);
        }
    }
    Ok(ConeFacets { facets, projection })
}

// ---------------------------------------------------------------------------
// Volume.

/// Volume of the convex hull together with its affine dimension. Hulls of
/// lower dimension than the ambient space have volume 0.
pub fn volume_with_dimension(v: &VPolytope) -> Result<(f64, usize)> {
    let dim = v.affine_dimension();
    if dim < v.dimension {
        return Ok((0.0, dim));
    }
    let c = v.centroid();
    let scale = diameter(&v.vertices).max(f64::MIN_POSITIVE);
    let scaled: Vec<Vec<f64>> = v
        .vertices
        .iter()
        .map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) / scale).collect())
        .collect();
    let vol = full_dim_volume(&scaled)?;
    Ok((vol * scale.powi(v.dimension as i32), dim))
}

pub fn volume(v: &VPolytope) -> Result<f64> {
    volume_with_dimension(v).map(|(vol, _)| vol)
}

/// Volume of a full-dimensional point hull, as the sum of pyramids from the
/// centroid over every facet.
fn full_dim_volume(points: &[Vec<f64>]) -> Result<f64> {
    let d = points[0].len();
    if d == 1 {
        let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        return Ok(hi - lo);
    }
    let poly = VPolytope::new(points.to_vec())?;
    let (h, incidence) = facets_with_incidence(&poly)?;
    let c = poly.centroid();
    let mut total = 0.0;
    for (f, on) in incidence.iter().enumerate() {
        let a = &h.normals[f];
        let height = h.offsets[f] - dot(a, &c);
        if on.len() < d {
            return Err(Error::internal("facet with too few vertices"));
        }
        // Orthonormal coordinates inside the facet hyperplane.
        let basis = null_space(&DMatrix::from_row_slice(1, d, a), RANK_RTOL);
        let origin = &points[on[0]];
        let face: Vec<Vec<f64>> = on
            .iter()
            .map(|&i| {
                let diff: Vec<f64> = points[i].iter().zip(origin).map(|(x, o)| x - o).collect();
                (0..d - 1)
                    .map(|j| (0..d).map(|t| basis[(t, j)] * diff[t]).sum())
                    .collect()
            })
            .collect();
        let area = if d == 2 {
            full_dim_volume(&face)?
        } else {
            volume(&VPolytope::new(face)?)?
        };
        total += height * area / d as f64;
    }
    Ok(total)
}
