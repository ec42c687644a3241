//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SVD};

/// Singular values below `PINV_RTOL * sigma_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Convergence threshold passed to the SVD iteration. The library default
/// can stop early on rank-deficient inputs and return factors that are off by
/// several percent.
const SVD_EPS: f64 = 1e-17;
const SVD_MAX_ITER: usize = 1_000_000;

pub fn svd(m: &DMatrix<f64>, compute_u: bool, compute_v: bool) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    m.clone()
        .try_svd(compute_u, compute_v, SVD_EPS, SVD_MAX_ITER)
        .unwrap_or_else(|| m.clone().svd(compute_u, compute_v))
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    svd(m, false, false).singular_values
}

/// Moore-Penrose pseudoinverse through the SVD.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_with_tol(m, PINV_RTOL)
}

pub fn pinv_with_tol(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = svd(m, true, true);
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.max();
    let cut = smax * rtol;
    let mut out = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}

/// Number of singular values above `rtol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Singular values sorted in decreasing order.
pub fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = singular_values(m).iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Orthonormal basis (as columns) of the span of `cols`' columns.
pub fn column_basis(cols: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let d = cols.nrows();
    if cols.ncols() == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = svd(cols, true, false);
    let u = svd.u.expect("svd u");
    let smax = svd.singular_values.max();
    let mut keep: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > rtol * smax)
        .map(|(i, &s)| (s, i))
        .collect();
    keep.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = DMatrix::zeros(d, keep.len());
    for (j, &(_, i)) in keep.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    out
}

/// Orthonormal basis of the null space of `m` (as columns).
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let c = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    // Pad to a square system so the SVD returns a full V.
    let mut padded = DMatrix::zeros(m.nrows().max(c), c);
    padded.view_mut((0, 0), (m.nrows(), c)).copy_from(m);
    let svd = svd(&padded, false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let idx: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= rtol * smax)
        .map(|(i, _)| i)
        .collect();
    let mut out = DMatrix::zeros(c, idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &v_t.row(i).transpose());
    }
    out
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Serializes a matrix as a list of rows.
pub mod rows_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(super::rows_to_matrix(&rows))
    }
}

/// Serializes a matrix as a list of columns.
pub mod cols_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(&m.transpose()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let cols = Vec::<Vec<f64>>::deserialize(d)?;
        if cols.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(serde::de::Error::custom("ragged matrix columns"));
        }
        Ok(super::rows_to_matrix(&cols).transpose())
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Affine dimension of a point set (rank of the differences to the first point).
pub fn affine_rank(points: &[Vec<f64>], rtol: f64) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let d = points[0].len();
    let diffs = DMatrix::from_fn(points.len() - 1, d, |i, j| points[i + 1][j] - points[0][j]);
    numerical_rank(&diffs, rtol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_full_column_rank_is_left_inverse() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]);
        let p = pinv(&m);
        let id = &p * &m;
        assert!(max_abs_diff(&id, &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn null_space_is_orthogonal_to_rows() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let n = null_space(&m, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).amax() < 1e-12);
    }

    #[test]
    fn affine_rank_of_coplanar_points() {
        let pts = vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        assert_eq!(affine_rank(&pts, 1e-10), 2);
    }
}
