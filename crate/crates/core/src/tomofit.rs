//! Weighted low-rank fits of frequency tables and train/test rank selection.
//!
//! A rank-`k` model is a product `D = S·E` with `S` of shape `m×k` whose first
//! column is fixed to ones (so the unit effect is always representable) and
//! `E` of shape `k×n`. The fit alternates between the rows of `S` and the
//! columns of `E`; each half-step is a set of independent small convex QPs
//! with the probability constraints `0 ≤ (S·E)_ij ≤ 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{pinv, rows_serde};
use crate::qp::{self, Constraints};
use crate::synthdata::{mix_seed, FrequencyTable, TauBlock};
use crate::{Error, Result};

/// A χ² below this counts as an exact fit.
const EXACT_FIT: f64 = 1e-20;
const QP_KKT_TOL: f64 = 1e-10;
const QP_MAX_ITER: usize = 10_000;
/// Amplitude of the uniform noise added to `F` when seeding a restart.
const RESTART_NOISE: f64 = 0.05;

/// Binomial variance `F(1-F)/N`, floored at a quarter shot `1/(4N²)`.
pub fn variance_table(f: &DMatrix<f64>, shots: u64) -> DMatrix<f64> {
    let n = shots as f64;
    let floor = 1.0 / (4.0 * n * n);
    f.map(|p| (p * (1.0 - p) / n).max(floor))
}

pub fn chi_squared(f: &DMatrix<f64>, d: &DMatrix<f64>, variance: &DMatrix<f64>) -> Result<f64> {
    if f.shape() != d.shape() || f.shape() != variance.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: F {:?}, D {:?}, variance {:?}",
            f.shape(),
            d.shape(),
            variance.shape()
        )));
    }
    Ok(f.iter()
        .zip(d.iter())
        .zip(variance.iter())
        .map(|((a, b), v)| (a - b) * (a - b) / v)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub rank: usize,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
    /// χ² after every half-step of the winning restart.
    pub chi2_history: Vec<f64>,
    #[serde(with = "rows_serde")]
    pub d_matrix: DMatrix<f64>,
    #[serde(with = "rows_serde")]
    pub states: DMatrix<f64>,
    #[serde(with = "rows_serde")]
    pub effects: DMatrix<f64>,
    pub shots: u64,
    pub blocks: Vec<TauBlock>,
}

struct Run {
    s: DMatrix<f64>,
    e: DMatrix<f64>,
    chi2: f64,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Fits a rank-`k` probability table to `table` (best of `options.restarts`).
pub fn fit_rank_k(table: &FrequencyTable, k: usize, options: &FitOptions) -> Result<FitResult> {
    fit_matrix(&table.entries, &table.variance, k, options).map(|mut r| {
        r.shots = table.shots;
        r.blocks = table.blocks.clone();
        r
    })
}

/// Same as [`fit_rank_k`] on bare matrices.
pub fn fit_matrix(
    f: &DMatrix<f64>,
    variance: &DMatrix<f64>,
    k: usize,
    options: &FitOptions,
) -> Result<FitResult> {
    let (m, n) = f.shape();
    if k < 2 || k > m.min(n) {
        return Err(Error::invalid(format!(
            "rank must satisfy 2 <= k <= min(m, n) = {}, got {k}",
            m.min(n)
        )));
    }
    if variance.shape() != f.shape() {
        return Err(Error::invalid("variance shape differs from the table"));
    }
    if variance.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("variances must be positive"));
    }
    if options.restarts == 0 || options.max_iter == 0 {
        return Err(Error::invalid("restarts and max_iter must be positive"));
    }
    let w = variance.map(|v| 1.0 / v);

    let mut best: Option<(usize, Run)> = None;
    for restart in 0..options.restarts {
        let start = if restart == 0 {
            f.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(options.seed, restart as u64));
            f.map(|p| (p + rng.random_range(-RESTART_NOISE..=RESTART_NOISE)).clamp(0.0, 1.0))
        };
        let (s, e) = initialize(&start, k);
        let run = seesaw(f, &w, s, e, options)?;
        log::debug!(
            "rank {k} restart {restart}: chi2 {:.6e} after {} iterations",
            run.chi2,
            run.iterations
        );
        // Strict comparison keeps the lowest restart index on ties.
        if best.as_ref().is_none_or(|(_, b)| run.chi2 < b.chi2) {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");
    let d = (&run.s * &run.e).map(|v| v.clamp(0.0, 1.0));
    Ok(FitResult {
        rank: k,
        chi2: run.chi2,
        iterations: run.iterations,
        converged: run.converged,
        restart,
        chi2_history: run.history,
        d_matrix: d,
        states: run.s,
        effects: run.e,
        shots: 0,
        blocks: vec![TauBlock {
            tau: 0.0,
            start: 0,
            rows: m,
        }],
    })
}

/// Starting point: `S = [1 | √m·U]` where `U` holds the leading left singular
/// vectors of `F` with the all-ones direction projected out, and `E` is the
/// least-squares fit, shrunk column by column toward the constant-½ effect
/// until every entry of `S·E` lies in `[0, 1]`.
fn initialize(f: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = f.shape();
    let mean = DMatrix::from_fn(1, n, |_, j| f.column(j).mean());
    let centered = DMatrix::from_fn(m, n, |i, j| f[(i, j)] - mean[(0, j)]);
    let svd = crate::linalg::svd(&centered, true, false);
    let u = svd.u.expect("svd u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let scale = (m as f64).sqrt();
    let mut s = DMatrix::zeros(m, k);
    s.column_mut(0).fill(1.0);
    for c in 1..k {
        s.set_column(c, &(u.column(order[c - 1]) * scale));
    }
    let mut e = pinv(&s) * f;
    let d = &s * &e;
    for j in 0..n {
        let mut t: f64 = 0.0;
        for i in 0..m {
            let v = d[(i, j)];
            if v > 1.0 {
                t = t.max((v - 1.0) / (v - 0.5));
            } else if v < 0.0 {
                t = t.max(-v / (0.5 - v));
            }
        }
        if t > 0.0 {
            let t = (t * (1.0 + 1e-9) + 1e-12).min(1.0);
            let mut col = e.column_mut(j);
            col *= 1.0 - t;
            col[0] += 0.5 * t;
        }
    }
    (s, e)
}

fn weighted_chi2(f: &DMatrix<f64>, w: &DMatrix<f64>, s: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
    let d = s * e;
    f.iter()
        .zip(d.iter())
        .zip(w.iter())
        .map(|((a, b), wi)| (a - b) * (a - b) * wi)
        .sum()
}

fn seesaw(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mut s: DMatrix<f64>,
    mut e: DMatrix<f64>,
    options: &FitOptions,
) -> Result<Run> {
    let mut chi2 = weighted_chi2(f, w, &s, &e);
    let mut history = vec![chi2];
    let mut converged = chi2 <= EXACT_FIT;
    let mut iterations = 0;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        update_states(f, w, &mut s, &e)?;
        history.push(weighted_chi2(f, w, &s, &e));
        update_effects(f, w, &s, &mut e)?;
        let next = weighted_chi2(f, w, &s, &e);
        history.push(next);
        let rel = (chi2 - next) / chi2.max(f64::MIN_POSITIVE);
        chi2 = next;
        converged = chi2 <= EXACT_FIT || rel < options.tol;
    }
    Ok(Run {
        s,
        e,
        chi2,
        history,
        iterations,
        converged,
    })
}

/// Re-optimizes every row of `S` (except its fixed leading 1) with `E` fixed.
fn update_states(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    s: &mut DMatrix<f64>,
    e: &DMatrix<f64>,
) -> Result<()> {
    let (m, n) = f.shape();
    let k = e.nrows();
    let free = k - 1;
    // Constraint rows are the trailing effect coordinates, shared by all rows of S.
    let mut rows = Vec::with_capacity(n * free);
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for j in 0..n {
        rows.extend((1..k).map(|a| e[(a, j)]));
        lo.push(-e[(0, j)]);
        hi.push(1.0 - e[(0, j)]);
    }
    let cons = Constraints {
        rows: &rows,
        lo: &lo,
        hi: &hi,
    };
    for i in 0..m {
        let mut h = DMatrix::zeros(free, free);
        let mut g = vec![0.0; free];
        for j in 0..n {
            let wij = w[(i, j)];
            let target = f[(i, j)] - e[(0, j)];
            let ej = &rows[j * free..(j + 1) * free];
            for a in 0..free {
                g[a] -= wij * target * ej[a];
                for b in 0..=a {
                    h[(a, b)] += wij * ej[a] * ej[b];
                }
            }
        }
        symmetrize(&mut h);
        let x0: Vec<f64> = (1..k).map(|a| s[(i, a)]).collect();
        let sol = qp::solve(&h, &g, &cons, &x0, QP_KKT_TOL, QP_MAX_ITER)
            .map_err(|err| Error::internal(format!("state row {i}: {err}")))?;
        for a in 0..free {
            s[(i, a + 1)] = sol.x[a];
        }
    }
    Ok(())
}

/// Re-optimizes every column of `E` with `S` fixed.
fn update_effects(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    e: &mut DMatrix<f64>,
) -> Result<()> {
    let (m, n) = f.shape();
    let k = s.ncols();
    let mut rows = Vec::with_capacity(m * k);
    for i in 0..m {
        rows.extend(s.row(i).iter());
    }
    let lo = vec![0.0; m];
    let hi = vec![1.0; m];
    let cons = Constraints {
        rows: &rows,
        lo: &lo,
        hi: &hi,
    };
    for j in 0..n {
        let mut h = DMatrix::zeros(k, k);
        let mut g = vec![0.0; k];
        for i in 0..m {
            let wij = w[(i, j)];
            let si = &rows[i * k..(i + 1) * k];
            for a in 0..k {
                g[a] -= wij * f[(i, j)] * si[a];
                for b in 0..=a {
                    h[(a, b)] += wij * si[a] * si[b];
                }
            }
        }
        symmetrize(&mut h);
        let x0: Vec<f64> = e.column(j).iter().copied().collect();
        let sol = qp::solve(&h, &g, &cons, &x0, QP_KKT_TOL, QP_MAX_ITER)
            .map_err(|err| Error::internal(format!("effect column {j}: {err}")))?;
        e.set_column(j, &DVector::from_vec(sol.x));
    }
    Ok(())
}

fn symmetrize(h: &mut DMatrix<f64>) {
    for a in 0..h.nrows() {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
}

/// Mean, plain standard deviation and standard error of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        if values.is_empty() {
            return Spread {
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std_dev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Spread {
            mean,
            std_dev,
            std_err: std_dev / n.sqrt(),
        }
    }
}

/// Test-error increments `χ²_k − χ²_{k−1}` over all train/test pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiff {
    pub rank: usize,
    pub values: Vec<f64>,
    pub spread: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScan {
    pub ranks: Vec<usize>,
    /// Ordered (train, test) table pairs, train ≠ test.
    pub pairs: Vec<(usize, usize)>,
    /// `train_errors[r][t]`: χ² of the rank `ranks[r]` fit on its own table `t`.
    pub train_errors: Vec<Vec<f64>>,
    /// `test_errors[r][p]`: χ² of the model trained on `pairs[p].0` against `pairs[p].1`.
    pub test_errors: Vec<Vec<f64>>,
    /// One entry per rank after the first.
    pub test_error_diffs: Vec<RankDiff>,
}

impl RankScan {
    pub fn mean_test_errors(&self) -> Vec<f64> {
        self.test_errors.iter().map(|v| Spread::of(v).mean).collect()
    }

    pub fn mean_train_errors(&self) -> Vec<f64> {
        self.train_errors.iter().map(|v| Spread::of(v).mean).collect()
    }

    pub fn diff(&self, rank: usize) -> Option<&RankDiff> {
        self.test_error_diffs.iter().find(|d| d.rank == rank)
    }

    /// Rows `(rank, mean train, mean test, diff mean, diff sd, diff se)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,train_mean,test_mean,diff_mean,diff_std_dev,diff_std_err\n");
        let train = self.mean_train_errors();
        let test = self.mean_test_errors();
        for (r, &k) in self.ranks.iter().enumerate() {
            let (dm, dsd, dse) = match self.diff(k) {
                Some(d) => (
                    d.spread.mean.to_string(),
                    d.spread.std_dev.to_string(),
                    d.spread.std_err.to_string(),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!("{k},{},{},{dm},{dsd},{dse}\n", train[r], test[r]));
        }
        out
    }
}

/// Fits every table at every rank and cross-evaluates each model on every
/// other table.
pub fn rank_scan(tables: &[FrequencyTable], ranks: &[usize], options: &FitOptions) -> Result<RankScan> {
    if tables.len() < 2 {
        return Err(Error::invalid("rank scan needs at least two tables"));
    }
    if ranks.is_empty() {
        return Err(Error::invalid("rank list is empty"));
    }
    let shape = tables[0].entries.shape();
    if tables.iter().any(|t| t.entries.shape() != shape) {
        return Err(Error::invalid("all tables of a scan must share one shape"));
    }
    let pairs: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|a| (0..tables.len()).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let mut train_errors = Vec::with_capacity(ranks.len());
    let mut test_errors = Vec::with_capacity(ranks.len());
    for &k in ranks {
        let fits = tables
            .iter()
            .enumerate()
            .map(|(t, table)| {
                let opts = FitOptions {
                    seed: mix_seed(options.seed, t as u64),
                    ..*options
                };
                fit_rank_k(table, k, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        train_errors.push(fits.iter().map(|r| r.chi2).collect());
        test_errors.push(
            pairs
                .iter()
                .map(|&(a, b)| chi_squared(&tables[b].entries, &fits[a].d_matrix, &tables[b].variance))
                .collect::<Result<Vec<_>>>()?,
        );
        log::info!("rank {k}: scanned {} tables", tables.len());
    }
    Ok(scan_from_errors(ranks.to_vec(), pairs, train_errors, test_errors))
}

/// Assembles a scan, deriving the rank-to-rank test-error differences.
pub fn scan_from_errors(
    ranks: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    train_errors: Vec<Vec<f64>>,
    test_errors: Vec<Vec<f64>>,
) -> RankScan {
    let test_error_diffs = (1..ranks.len())
        .map(|r| {
            let values: Vec<f64> = test_errors[r]
                .iter()
                .zip(&test_errors[r - 1])
                .map(|(a, b)| a - b)
                .collect();
            RankDiff {
                rank: ranks[r],
                spread: Spread::of(&values),
                values,
            }
        })
        .collect();
    RankScan {
        ranks,
        pairs,
        train_errors,
        test_errors,
        test_error_diffs,
    }
}

/// Smallest rank where the mean test-error difference turns from clearly
/// negative to clearly positive (each beyond one standard error). Falls back
/// to the rank of minimal mean test error when that minimum is interior.
pub fn select_rank(scan: &RankScan) -> Result<usize> {
    if scan.ranks.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::invalid("rank scan must cover a contiguous rank range"));
    }
    let diffs = &scan.test_error_diffs;
    for pair in diffs.windows(2) {
        let (a, b) = (&pair[0].spread, &pair[1].spread);
        if a.mean < 0.0 && -a.mean > a.std_err && b.mean > 0.0 && b.mean > b.std_err {
            return Ok(pair[0].rank);
        }
    }
    let means = scan.mean_test_errors();
    if means.len() == scan.ranks.len() && means.iter().all(|v| v.is_finite()) {
        let (idx, _) = means
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        if idx > 0 && idx + 1 < means.len() {
            return Ok(scan.ranks[idx]);
        }
    }
    Err(Error::AmbiguousSelection {
        scan: Box::new(scan.clone()),
    })
}

/// Stacks tables sharing measurements into one tall table, in input order.
pub fn stack_tables(tables: &[FrequencyTable]) -> Result<FrequencyTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::invalid("nothing to stack"))?;
    let n = first.ncols();
    if tables.iter().any(|t| t.ncols() != n) {
        return Err(Error::invalid("tables to stack must share the measurement count"));
    }
    if tables.iter().any(|t| t.shots != first.shots) {
        return Err(Error::invalid("tables to stack must share the shot count"));
    }
    let m: usize = tables.iter().map(FrequencyTable::nrows).sum();
    let mut entries = DMatrix::zeros(m, n);
    let mut variance = DMatrix::zeros(m, n);
    let mut blocks = Vec::new();
    let mut start = 0;
    for t in tables {
        for b in &t.blocks {
            blocks.push(TauBlock {
                tau: b.tau,
                start: start + b.start,
                rows: b.rows,
            });
        }
        entries.rows_mut(start, t.nrows()).copy_from(&t.entries);
        variance.rows_mut(start, t.nrows()).copy_from(&t.variance);
        start += t.nrows();
    }
    Ok(FrequencyTable {
        entries,
        shots: first.shots,
        tau: first.tau,
        seed: first.seed,
        variance,
        blocks,
    })
}

/// Extracts block `index` of a stacked table.
pub fn block(table: &FrequencyTable, index: usize) -> Result<FrequencyTable> {
    let b = table
        .blocks
        .get(index)
        .ok_or_else(|| Error::invalid(format!("no block {index}")))?;
    let entries = table.entries.rows(b.start, b.rows).into_owned();
    let variance = table.variance.rows(b.start, b.rows).into_owned();
    Ok(FrequencyTable {
        entries,
        shots: table.shots,
        tau: b.tau,
        seed: table.seed,
        variance,
        blocks: vec![TauBlock {
            tau: b.tau,
            start: 0,
            rows: b.rows,
        }],
    })
}
