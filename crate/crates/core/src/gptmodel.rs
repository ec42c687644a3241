//! GPT models: state rows and effect columns whose pairing reproduces a
//! probability table.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{cols_serde, max_abs_diff, numerical_rank, pinv, rows_serde};
use crate::synthdata::TauBlock;
use crate::tomofit::{FitOptions, FitResult};
use crate::{Error, Result};

/// Relative singular-value cut used to decide the rank of a table.
pub const RANK_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input_hash: String,
    pub fit_options: Option<FitOptions>,
}

/// States are rows of `states`; effects are columns of `effects`, ordered
/// as unit, zero, the `n` measured effects, then their `n` complements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptModel {
    pub rank: usize,
    #[serde(default)]
    pub tau_labels: Option<Vec<f64>>,
    #[serde(with = "rows_serde")]
    pub states: DMatrix<f64>,
    #[serde(with = "cols_serde")]
    pub effects: DMatrix<f64>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

/// An invertible change of coordinates `S → S·L`, `E → L⁻¹·E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reparametrization {
    #[serde(with = "rows_serde")]
    pub linear_map: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Basis {
    /// Column-pivoted Householder QR of the data columns.
    #[default]
    Qr,
    /// Leading left singular vectors.
    Svd,
}

impl GptModel {
    pub fn num_states(&self) -> usize {
        self.states.nrows()
    }

    /// Number of measured effects `n` (the matrix holds `2n + 2` columns).
    pub fn num_measurements(&self) -> usize {
        (self.effects.ncols() - 2) / 2
    }

    pub fn unit(&self) -> Vec<f64> {
        self.effects.column(0).iter().copied().collect()
    }

    /// Columns of the measured effects only.
    pub fn measured_effects(&self) -> DMatrix<f64> {
        self.effects.columns(2, self.num_measurements()).into_owned()
    }

    /// `S·E` over every effect column.
    pub fn probabilities(&self) -> DMatrix<f64> {
        &self.states * &self.effects
    }

    pub fn state_rows(&self) -> Vec<Vec<f64>> {
        crate::linalg::matrix_to_rows(&self.states)
    }

    pub fn effect_columns(&self) -> Vec<Vec<f64>> {
        crate::linalg::matrix_to_rows(&self.effects.transpose())
    }

    /// Distinct τ labels in order of first appearance.
    pub fn taus(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        if let Some(labels) = &self.tau_labels {
            for &t in labels {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    /// State rows tagged with `tau` (all rows when the model is untagged).
    pub fn states_at(&self, tau: Option<f64>) -> Vec<Vec<f64>> {
        match (&self.tau_labels, tau) {
            (Some(labels), Some(t)) => labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == t)
                .map(|(i, _)| self.states.row(i).iter().copied().collect())
                .collect(),
            _ => self.state_rows(),
        }
    }

    /// Factorizes a fitted table, carrying over its τ blocks.
    pub fn from_fit(fit: &FitResult) -> Result<GptModel> {
        let mut model = factorize(&fit.d_matrix, fit.rank)?;
        let mut labels = vec![0.0; fit.d_matrix.nrows()];
        for b in &fit.blocks {
            for l in labels.iter_mut().skip(b.start).take(b.rows) {
                *l = b.tau;
            }
        }
        model.tau_labels = Some(labels);
        Ok(model)
    }

    pub fn blocks(&self) -> Vec<TauBlock> {
        let Some(labels) = &self.tau_labels else {
            return vec![TauBlock {
                tau: 0.0,
                start: 0,
                rows: self.num_states(),
            }];
        };
        let mut out: Vec<TauBlock> = Vec::new();
        for (i, &t) in labels.iter().enumerate() {
            match out.last_mut() {
                Some(b) if b.tau == t && b.start + b.rows == i => b.rows += 1,
                _ => out.push(TauBlock {
                    tau: t,
                    start: i,
                    rows: 1,
                }),
            }
        }
        out
    }
}

/// Factorizes `[1 | D] = S·E` at rank `k` with a QR basis.
pub fn factorize(d: &DMatrix<f64>, k: usize) -> Result<GptModel> {
    factorize_with(d, k, Basis::Qr)
}

/// `S = [1 | √m·Q]` where `Q` is an orthonormal basis of the data columns with
/// the all-ones direction projected out; `E` follows by projection, so
/// `S·E = [1 | D]` whenever `[1 | D]` has rank `k`.
pub fn factorize_with(d: &DMatrix<f64>, k: usize, basis: Basis) -> Result<GptModel> {
    let (m, n) = d.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("empty probability table"));
    }
    if k == 0 {
        return Err(Error::invalid("rank must be positive"));
    }
    let mut augmented = DMatrix::from_element(m, n + 1, 1.0);
    augmented.columns_mut(1, n).copy_from(d);
    let found = numerical_rank(&augmented, RANK_RTOL);
    if found != k {
        return Err(Error::RankMismatch { expected: k, found });
    }
    let means = DMatrix::from_fn(1, n, |_, j| d.column(j).mean());
    let centered = DMatrix::from_fn(m, n, |i, j| d[(i, j)] - means[(0, j)]);
    let q = match basis {
        Basis::Svd => crate::linalg::column_basis(&centered, RANK_RTOL).columns(0, k - 1).into_owned(),
        Basis::Qr => {
            let qr = centered.clone().col_piv_qr();
            qr.q().columns(0, k - 1).into_owned()
        }
    };
    let scale = (m as f64).sqrt();
    let mut s = DMatrix::from_element(m, k, 1.0);
    s.columns_mut(1, k - 1).copy_from(&(&q * scale));
    // Coefficients in the basis {1, √m·q_c}: mean for the first, q_cᵀx/√m for the rest.
    let mut coef = DMatrix::zeros(k, n + 1);
    coef[(0, 0)] = 1.0;
    for j in 0..n {
        coef[(0, j + 1)] = means[(0, j)];
        for c in 1..k {
            coef[(c, j + 1)] = q.column(c - 1).dot(&d.column(j)) / scale;
        }
    }
    Ok(GptModel {
        rank: k,
        tau_labels: None,
        states: s,
        effects: with_complements(&coef),
        provenance: None,
    })
}

/// `[u | e_1 … e_n]` → `[u | 0 | e_1 … e_n | u − e_1 … u − e_n]`.
fn with_complements(coef: &DMatrix<f64>) -> DMatrix<f64> {
    let k = coef.nrows();
    let n = coef.ncols() - 1;
    let u = coef.column(0).into_owned();
    let mut e = DMatrix::zeros(k, 2 * n + 2);
    e.set_column(0, &u);
    for j in 0..n {
        e.set_column(2 + j, &coef.column(j + 1));
        e.set_column(2 + n + j, &(&u - coef.column(j + 1)));
    }
    e
}

/// Recovers the `L` with `S·L = S'` and `L⁻¹·E = E'` for two factorizations
/// of the same table.
pub fn relate_factorizations(a: &GptModel, b: &GptModel) -> Result<Reparametrization> {
    if a.rank != b.rank || a.states.shape() != b.states.shape() || a.effects.shape() != b.effects.shape()
    {
        return Err(Error::IncompatibleModels(format!(
            "shapes differ: rank {} with {:?}/{:?} vs rank {} with {:?}/{:?}",
            a.rank,
            a.states.shape(),
            a.effects.shape(),
            b.rank,
            b.states.shape(),
            b.effects.shape()
        )));
    }
    let l = pinv(&a.states) * &b.states;
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IncompatibleModels("recovered map is singular".into()))?;
    let rs = max_abs_diff(&(&a.states * &l), &b.states);
    let re = max_abs_diff(&(&l_inv * &a.effects), &b.effects);
    if rs > 1e-8 || re > 1e-8 {
        return Err(Error::IncompatibleModels(format!(
            "models do not factor the same table (state residual {rs:.2e}, effect residual {re:.2e})"
        )));
    }
    Ok(Reparametrization { linear_map: l })
}

pub fn apply_reparametrization(model: &GptModel, l: &Reparametrization) -> Result<GptModel> {
    let k = model.rank;
    if l.linear_map.shape() != (k, k) {
        return Err(Error::invalid(format!("map must be {k}x{k}")));
    }
    let sv = crate::linalg::singular_values(&l.linear_map);
    if !(sv.min() > 1e-14 * sv.max()) {
        return Err(Error::invalid("reparametrization map is singular"));
    }
    let inv = l
        .linear_map
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::invalid("reparametrization map is singular"))?;
    Ok(GptModel {
        states: &model.states * &l.linear_map,
        effects: inv * &model.effects,
        ..model.clone()
    })
}

/// `max_e |⟨e, s⟩ − ⟨e, s'⟩|` over the given effect columns.
pub fn distinguishability(s: &[f64], s_prime: &[f64], effects: &DMatrix<f64>) -> f64 {
    let diff = DMatrix::from_fn(1, s.len(), |_, i| s[i] - s_prime[i]);
    (diff * effects).amax()
}

/// For each state, its largest distinguishability from any other state.
pub fn per_state_f(model: &GptModel) -> Result<Vec<f64>> {
    if model.num_states() < 2 {
        return Err(Error::invalid("need at least two states"));
    }
    let p = model.probabilities();
    let lo: Vec<f64> = p.column_iter().map(|c| c.min()).collect();
    let hi: Vec<f64> = p.column_iter().map(|c| c.max()).collect();
    Ok(p.row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| (v - lo[j]).max(hi[j] - v))
                .fold(0.0, f64::max)
        })
        .collect())
}

pub fn max_pairwise_distinguishability(model: &GptModel) -> Result<f64> {
    Ok(per_state_f(model)?.into_iter().fold(0.0, f64::max))
}

/// Lower bound `½(1 + max 𝒟)` on the purity of the best-distinguished state.
pub fn purity_lower_bound(max_dist: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&max_dist) {
        return Err(Error::invalid(format!(
            "distinguishability must lie in [0, 1], got {max_dist}"
        )));
    }
    Ok(0.5 * (1.0 + max_dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(m: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let basis = DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..1.0));
        let mut w = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
        for mut row in w.row_iter_mut() {
            let t = row.sum();
            row /= t;
        }
        w * basis
    }

    #[test]
    fn constant_table_is_rank_one() {
        let d = DMatrix::from_element(3, 1, 0.5);
        let m = factorize(&d, 1).unwrap();
        assert!(m.states.iter().all(|&v| v == 1.0));
        assert_eq!(m.effects.column(0).as_slice(), &[1.0]);
        assert!((m.effects[(0, 2)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn factorization_reproduces_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_table(6, 6, 3, &mut rng);
        for basis in [Basis::Qr, Basis::Svd] {
            let m = factorize_with(&d, 3, basis).unwrap();
            let p = m.probabilities();
            assert!(max_abs_diff(&p.columns(2, 6).into_owned(), &d) < 1e-9);
            assert!(p.column(0).iter().all(|v| (v - 1.0).abs() < 1e-12));
            assert_eq!(m.unit(), vec![1.0, 0.0, 0.0]);
            assert!(m.states.column(0).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn rank_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = random_table(6, 6, 2, &mut rng);
        assert!(matches!(
            factorize(&d, 3),
            Err(Error::RankMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn planted_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = random_table(8, 7, 4, &mut rng);
        let a = factorize(&d, 4).unwrap();
        let l0 = DMatrix::from_fn(4, 4, |i, j| {
            let diag = if i == j { 2.0 } else { 0.0 };
            diag + rng.random_range(-0.5..0.5)
        });
        let b = apply_reparametrization(
            &a,
            &Reparametrization {
                linear_map: l0.clone(),
            },
        )
        .unwrap();
        let l = relate_factorizations(&a, &b).unwrap();
        assert!(max_abs_diff(&l.linear_map, &l0) < 1e-8);
        let id = relate_factorizations(&a, &a).unwrap();
        assert!(max_abs_diff(&id.linear_map, &DMatrix::identity(4, 4)) < 1e-10);
    }

    #[test]
    fn unrelated_models_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = factorize(&random_table(6, 5, 3, &mut rng), 3).unwrap();
        let b = factorize(&random_table(6, 5, 3, &mut rng), 3).unwrap();
        assert!(matches!(
            relate_factorizations(&a, &b),
            Err(Error::IncompatibleModels(_))
        ));
    }

    #[test]
    fn diagonal_map_preserves_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = factorize(&random_table(9, 9, 4, &mut rng), 4).unwrap();
        let l = Reparametrization {
            linear_map: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 2.0, 2.0])),
        };
        let b = apply_reparametrization(&a, &l).unwrap();
        assert!(max_abs_diff(&a.probabilities(), &b.probabilities()) < 1e-10);
        let singular = Reparametrization {
            linear_map: DMatrix::zeros(4, 4),
        };
        assert!(apply_reparametrization(&a, &singular).is_err());
    }

    #[test]
    fn distinguishability_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = factorize(&random_table(7, 6, 3, &mut rng), 3).unwrap();
        let rows = m.state_rows();
        let f = per_state_f(&m).unwrap();
        for (i, fi) in f.iter().enumerate() {
            let brute = rows
                .iter()
                .map(|r| distinguishability(&rows[i], r, &m.effects))
                .fold(0.0, f64::max);
            assert!((fi - brute).abs() < 1e-12);
        }
        assert_eq!(distinguishability(&rows[0], &rows[0], &m.effects), 0.0);
    }

    #[test]
    fn classical_bit_is_perfectly_distinguishable() {
        let m = GptModel {
            rank: 2,
            tau_labels: None,
            states: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            effects: DMatrix::from_column_slice(
                2,
                4,
                &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            ),
            provenance: None,
        };
        assert_eq!(per_state_f(&m).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn purity_bound_examples() {
        assert_eq!(purity_lower_bound(1.0).unwrap(), 1.0);
        assert_eq!(purity_lower_bound(0.0).unwrap(), 0.5);
        assert!(purity_lower_bound(1.5).is_err());
    }
}
