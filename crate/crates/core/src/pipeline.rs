//! End-to-end runs: simulate, select a rank, fit every repetition over the
//! whole τ grid, then measure contextuality and state-space volumes over τ.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::gptmodel::{max_pairwise_distinguishability, purity_lower_bound, GptModel};
use crate::io::{sha256_hex, write_json, write_table};
use crate::nonclassicality::{robustness_vs_tau, RobustnessSeries};
use crate::polytope::{consistent_dual, remove_interior, volume, VPolytope};
use crate::reparam::{apply_transform, fit_sphere_transform_traced, SphereFit};
use crate::synthdata::{simulate, FrequencyTable, SimulationConfig};
use crate::tomofit::{fit_rank_k, rank_scan, select_rank, stack_tables, FitOptions, RankScan, Spread};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitStage {
    /// Ranks to scan; a single entry skips the scan and fits at that rank.
    pub ranks: Vec<usize>,
    pub scan_tables: usize,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitStage {
    fn default() -> Self {
        FitStage {
            ranks: vec![2, 3, 4, 5, 6],
            scan_tables: 10,
            restarts: 2,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextualityStage {
    pub enabled: bool,
    pub repetitions: usize,
}

impl Default for ContextualityStage {
    fn default() -> Self {
        ContextualityStage {
            enabled: true,
            repetitions: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeStage {
    pub enabled: bool,
    pub repetitions: usize,
    /// Increases larger than this many combined standard deviations are
    /// reported as non-Markovian.
    pub sigmas: f64,
    pub sphere_starts: usize,
}

impl Default for VolumeStage {
    fn default() -> Self {
        VolumeStage {
            enabled: true,
            repetitions: 7,
            sigmas: 3.0,
            sphere_starts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub simulate: SimulationConfig,
    pub fit: FitStage,
    pub contextuality: ContextualityStage,
    pub volumes: VolumeStage,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.simulate.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.simulate.validate().map_err(cfg_err)?;
        let f = &self.fit;
        let max_rank = self.simulate.m.min(self.simulate.n);
        if f.ranks.is_empty() || f.ranks.iter().any(|&k| k < 2 || k > max_rank) {
            return Err(Error::Config(format!("ranks must lie in 2..={max_rank}")));
        }
        if f.ranks.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Config("ranks must be a contiguous increasing range".into()));
        }
        if f.ranks.len() > 1 && f.scan_tables < 2 {
            return Err(Error::Config("a rank scan needs at least two tables".into()));
        }
        if f.restarts == 0 || f.max_iter == 0 || !(f.tol > 0.0) {
            return Err(Error::Config("restarts, max_iter and tol must be positive".into()));
        }
        if self.contextuality.enabled && self.contextuality.repetitions == 0 {
            return Err(Error::Config("contextuality needs at least one repetition".into()));
        }
        if self.volumes.enabled
            && (self.volumes.repetitions == 0 || self.volumes.sphere_starts == 0 || !(self.volumes.sigmas >= 0.0))
        {
            return Err(Error::Config(
                "volumes need repetitions >= 1, sphere_starts >= 1 and sigmas >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Repetitions that need a full fit over the τ grid.
    fn analysis_repetitions(&self) -> usize {
        let c = if self.contextuality.enabled { self.contextuality.repetitions } else { 0 };
        let v = if self.volumes.enabled { self.volumes.repetitions } else { 0 };
        c.max(v).max(1)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            restarts: self.fit.restarts,
            tol: self.fit.tol,
            max_iter: self.fit.max_iter,
            seed: self.simulate.seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Volumes.

/// Relative volume per τ across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSeries {
    pub taus: Vec<f64>,
    /// Mean over repetitions of `Vol(S^τ) / Vol(consistent)`.
    pub relative_volumes: Vec<f64>,
    /// Sample standard deviation across repetitions (0 with one repetition).
    pub std_dev: Vec<f64>,
    /// `values[t][rep]`.
    pub values: Vec<Vec<f64>>,
}

impl VolumeSeries {
    pub fn from_values(taus: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let relative_volumes = values.iter().map(|v| Spread::of(v).mean).collect();
        let std_dev = values
            .iter()
            .map(|v| if v.len() > 1 { Spread::of(v).std_dev } else { 0.0 })
            .collect();
        VolumeSeries {
            taus,
            relative_volumes,
            std_dev,
            values,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau_us,relative_volume,std_dev\n");
        for i in 0..self.taus.len() {
            out.push_str(&format!("{},{},{}\n", self.taus[i], self.relative_volumes[i], self.std_dev[i]));
        }
        out
    }
}

/// One repetition's consistent state space and realized state spaces, all in
/// the shared sphere frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub fit: SphereFit,
    pub consistent: Vec<[f64; 3]>,
    pub taus: Vec<f64>,
    /// `states[t]` are the transformed states at `taus[t]`.
    pub states: Vec<Vec<[f64; 3]>>,
}

fn affine_part(rows: &[Vec<f64>]) -> Vec<[f64; 3]> {
    rows.iter().map(|r| [r[1], r[2], r[3]]).collect()
}

/// Builds the consistent state space of a rank-4 model (the dual of its
/// effects on the normalized hyperplane), fits the sphere frame to its
/// boundary and maps every τ block into that frame.
pub fn shared_frame(model: &GptModel, starts: usize, seed: u64) -> Result<Frame> {
    if model.rank != 4 {
        return Err(Error::invalid(format!(
            "the sphere frame is only defined for rank 4, got rank {}",
            model.rank
        )));
    }
    let unit = model.unit();
    if unit != [1.0, 0.0, 0.0, 0.0] {
        return Err(Error::invalid("model must use the first coordinate as normalization"));
    }
    let consistent = consistent_dual(&model.effect_columns(), Some(&unit))?;
    let boundary = remove_interior(&consistent.vertices)?;
    let boundary3 = affine_part(&boundary.vertices);
    let fit = fit_sphere_transform_traced(&boundary3, seed, starts)?.fit;
    let taus = model.taus();
    let states = if taus.is_empty() {
        vec![apply_transform(&fit, &affine_part(&model.state_rows()))]
    } else {
        taus.iter()
            .map(|&t| apply_transform(&fit, &affine_part(&model.states_at(Some(t)))))
            .collect()
    };
    Ok(Frame {
        consistent: apply_transform(&fit, &boundary3),
        fit,
        taus,
        states,
    })
}

fn hull_volume(points: &[[f64; 3]]) -> Result<f64> {
    volume(&VPolytope::new(points.iter().map(|p| p.to_vec()).collect())?)
}

/// `realized[rep][t]` are the state points at `taus[t]`, `consistent[rep]`
/// the consistent space of the same repetition, all in one frame per
/// repetition.
pub fn relative_volumes(
    taus: &[f64],
    realized: &[Vec<Vec<[f64; 3]>>],
    consistent: &[Vec<[f64; 3]>],
) -> Result<VolumeSeries> {
    if realized.is_empty() || realized.len() != consistent.len() {
        return Err(Error::invalid("need one consistent space per repetition"));
    }
    let mut values = vec![Vec::with_capacity(realized.len()); taus.len()];
    for (rep, sets) in realized.iter().enumerate() {
        if sets.len() != taus.len() {
            return Err(Error::invalid(format!(
                "repetition {rep} has {} state sets for {} times",
                sets.len(),
                taus.len()
            )));
        }
        let denom = hull_volume(&consistent[rep])?;
        if !(denom > 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "consistent state space of repetition {rep} has zero volume"
            )));
        }
        for (t, pts) in sets.iter().enumerate() {
            values[t].push(hull_volume(pts)? / denom);
        }
    }
    Ok(VolumeSeries::from_values(taus.to_vec(), values))
}

pub fn volume_series_from_frames(frames: &[Frame]) -> Result<VolumeSeries> {
    let first = frames.first().ok_or_else(|| Error::invalid("no frames"))?;
    if frames.iter().any(|f| f.taus != first.taus) {
        return Err(Error::invalid("frames disagree on the τ grid"));
    }
    let realized: Vec<_> = frames.iter().map(|f| f.states.clone()).collect();
    let consistent: Vec<_> = frames.iter().map(|f| f.consistent.clone()).collect();
    relative_volumes(&first.taus, &realized, &consistent)
}

// ---------------------------------------------------------------------------
// Decay fit.

/// `A·exp(−τ/B)` fitted by weighted least squares; `B` is a time in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub decay_time: f64,
    pub amplitude_err: f64,
    pub decay_time_err: f64,
    /// Covariance of `(amplitude, decay_time)`.
    pub covariance: [[f64; 2]; 2],
    /// `observed − model` per τ.
    pub residuals: Vec<f64>,
    pub chi2: f64,
    /// False when some spread was zero and unit weights were used instead.
    pub inverse_variance_weights: bool,
}

const DECAY_MAX_ITER: usize = 500;

fn decay_chi2(taus: &[f64], y: &[f64], w: &[f64], a: f64, b: f64) -> f64 {
    taus.iter()
        .zip(y)
        .zip(w)
        .map(|((t, v), wi)| wi * (v - a * (-t / b).exp()).powi(2))
        .sum()
}

/// Normal matrix `JᵀWJ` and gradient `JᵀW r` at `(a, b)`.
fn decay_normal(taus: &[f64], y: &[f64], w: &[f64], a: f64, b: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let mut jtj = Matrix2::zeros();
    let mut jtr = Vector2::zeros();
    for ((t, v), wi) in taus.iter().zip(y).zip(w) {
        let e = (-t / b).exp();
        let j = Vector2::new(e, a * e * t / (b * b));
        jtj += *wi * j * j.transpose();
        jtr += *wi * (v - a * e) * j;
    }
    (jtj, jtr)
}

pub fn fit_decay(series: &VolumeSeries) -> Result<DecayFit> {
    let taus = &series.taus;
    let y = &series.relative_volumes;
    if taus.len() < 3 || y.len() != taus.len() {
        return Err(Error::FitFailure(format!("need at least 3 points, got {}", taus.len())));
    }
    if let Some(i) = y.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::FitFailure(format!(
            "volume at tau = {} is {}; all volumes must be positive",
            taus[i], y[i]
        )));
    }
    let weighted = series.std_dev.len() == y.len() && series.std_dev.iter().all(|s| *s > 0.0);
    let w: Vec<f64> = if weighted {
        series.std_dev.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; y.len()]
    };

    // Log-linear start: ln y = ln A − τ/B, weighted by w·y² (delta method).
    let lw: Vec<f64> = w.iter().zip(y).map(|(wi, v)| wi * v * v).collect();
    let sw: f64 = lw.iter().sum();
    let mt = taus.iter().zip(&lw).map(|(t, wi)| wi * t).sum::<f64>() / sw;
    let ml = y.iter().zip(&lw).map(|(v, wi)| wi * v.ln()).sum::<f64>() / sw;
    let stt: f64 = taus.iter().zip(&lw).map(|(t, wi)| wi * (t - mt).powi(2)).sum();
    let stl: f64 = taus
        .iter()
        .zip(y)
        .zip(&lw)
        .map(|((t, v), wi)| wi * (t - mt) * (v.ln() - ml))
        .sum();
    if !(stt > 0.0) {
        return Err(Error::FitFailure("all points share one time".into()));
    }
    let slope = stl / stt;
    if !(slope < 0.0) {
        return Err(Error::FitFailure(format!(
            "series does not decay (log-linear slope {slope:.3e})"
        )));
    }
    let mut a = y[0];
    let mut b = -1.0 / slope;
    // Anchor A at the first point's time when the grid does not start at 0.
    a *= (taus[0] / b).exp();

    let mut chi2 = decay_chi2(taus, y, &w, a, b);
    let mut lambda = 1e-3;
    for _ in 0..DECAY_MAX_ITER {
        let (jtj, jtr) = decay_normal(taus, y, &w, a, b);
        let mut improved = false;
        while lambda < 1e16 {
            let damped = jtj + lambda * Matrix2::from_diagonal(&jtj.diagonal());
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let (na, nb) = (a + step[0], b + step[1]);
            if nb > 0.0 {
                let nc = decay_chi2(taus, y, &w, na, nb);
                if nc <= chi2 {
                    let rel = (step[0] / a).abs().max((step[1] / b).abs());
                    a = na;
                    b = nb;
                    let done = chi2 - nc <= 1e-15 * chi2 && rel < 1e-12;
                    chi2 = nc;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = !done;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let span = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - taus.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(a > 0.0 && b > 0.0 && b < 1e6 * span.max(1.0)) {
        return Err(Error::FitFailure(format!("no decay: A = {a:.3e}, B = {b:.3e}")));
    }
    let (jtj, _) = decay_normal(taus, y, &w, a, b);
    let mut cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular normal equations at the optimum".into()))?;
    if !weighted {
        let dof = (y.len() - 2).max(1) as f64;
        cov *= chi2 / dof;
    }
    let residuals = taus
        .iter()
        .zip(y)
        .map(|(t, v)| v - a * (-t / b).exp())
        .collect();
    Ok(DecayFit {
        amplitude: a,
        decay_time: b,
        amplitude_err: cov[(0, 0)].max(0.0).sqrt(),
        decay_time_err: cov[(1, 1)].max(0.0).sqrt(),
        covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        residuals,
        chi2,
        inverse_variance_weights: weighted,
    })
}

/// Consecutive `(τ_a, τ_b)` where the volume grows by more than
/// `threshold_sigmas · sqrt(sd_a² + sd_b²)`.
pub fn detect_nonmarkovianity(series: &VolumeSeries, threshold_sigmas: f64) -> Vec<(f64, f64)> {
    let v = &series.relative_volumes;
    let sd = &series.std_dev;
    (1..v.len())
        .filter(|&i| {
            let spread = (sd[i - 1].powi(2) + sd[i].powi(2)).sqrt();
            v[i] - v[i - 1] > threshold_sigmas * spread
        })
        .map(|i| (series.taus[i - 1], series.taus[i]))
        .collect()
}

// ---------------------------------------------------------------------------
// Full run.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Section<T> {
    Done(T),
    Skipped { reason: String },
}

impl<T> Section<T> {
    pub fn done(&self) -> Option<&T> {
        match self {
            Section::Done(v) => Some(v),
            Section::Skipped { .. } => None,
        }
    }

    fn skipped(reason: impl Into<String>) -> Self {
        Section::Skipped { reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub ranks: Vec<usize>,
    pub mean_train_errors: Vec<f64>,
    pub mean_test_errors: Vec<f64>,
    /// `(rank, mean, standard error)` of the test-error differences.
    pub diffs: Vec<(usize, f64, f64)>,
}

impl RankSummary {
    fn of(scan: &RankScan) -> Self {
        RankSummary {
            ranks: scan.ranks.clone(),
            mean_train_errors: scan.mean_train_errors(),
            mean_test_errors: scan.mean_test_errors(),
            diffs: scan
                .test_error_diffs
                .iter()
                .map(|d| (d.rank, d.spread.mean, d.spread.std_err))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSection {
    pub selected: usize,
    pub scan: Section<RankSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySection {
    /// Largest distinguishability among the first-τ states, per repetition.
    pub max_distinguishability: Vec<f64>,
    pub mean_max_distinguishability: f64,
    pub purity_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub rank: RankSection,
    pub purity: PuritySection,
    pub robustness: Section<RobustnessSeries>,
    pub volumes: Section<VolumeSeries>,
    pub decay: Section<DecayFit>,
    pub non_markovian: Section<Vec<(f64, f64)>>,
    pub artifacts: Vec<Artifact>,
}

/// Writes artifacts under an optional output directory and records hashes.
struct Store {
    root: Option<PathBuf>,
    artifacts: Vec<Artifact>,
}

impl Store {
    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        if let Some(root) = &self.root {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, text)?;
        }
        self.record(rel, text.as_bytes());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(rel, &text)
    }

    fn table(&mut self, rel: &str, table: &FrequencyTable) -> Result<()> {
        if let Some(root) = &self.root {
            write_table(&root.join(rel), table)?;
        }
        let mut text = serde_json::to_string_pretty(&table.to_file())?;
        text.push('\n');
        self.record(rel, text.as_bytes());
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
    }
}

/// Comma-separated rows of a table, for heat-map plots.
pub fn heatmap_csv(table: &FrequencyTable) -> String {
    let mut out = String::new();
    for row in table.entries.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Fits every repetition's stacked τ tables at rank `k`.
pub fn fit_repetitions(tables: &[Vec<FrequencyTable>], k: usize, options: &FitOptions) -> Result<Vec<GptModel>> {
    tables
        .iter()
        .enumerate()
        .map(|(rep, per_tau)| {
            let stacked = stack_tables(per_tau)?;
            let opts = FitOptions {
                seed: crate::synthdata::mix_seed(options.seed, rep as u64),
                ..*options
            };
            let fit = fit_rank_k(&stacked, k, &opts)?;
            GptModel::from_fit(&fit)
        })
        .collect()
}

/// Runs every enabled stage; with `out_dir` set, artifacts are written there
/// as they are produced, so a failing stage leaves earlier ones on disk.
pub fn run_full_pipeline(config: &PipelineConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let mut store = Store {
        root: out_dir.map(Path::to_path_buf),
        artifacts: Vec::new(),
    };
    let config_text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    store.text("config.toml", &config_text)?;
    let provenance = Provenance {
        seed: config.simulate.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
    };

    let reps = config.analysis_repetitions();
    let scanning = config.fit.ranks.len() > 1;
    let sim = SimulationConfig {
        tables: if scanning { reps.max(config.fit.scan_tables) } else { reps },
        ..config.simulate.clone()
    };
    let tables = simulate(&sim).map_err(|e| e.in_stage("simulate"))?;
    for (rep, per_tau) in tables.iter().enumerate() {
        for (t, table) in per_tau.iter().enumerate() {
            store
                .table(&format!("tables/rep{rep:02}_tau{t:02}.json"), table)
                .map_err(|e| e.in_stage("simulate"))?;
        }
    }
    store
        .text("series/heatmap_first_table.csv", &heatmap_csv(&tables[0][0]))
        .map_err(|e| e.in_stage("simulate"))?;

    let options = config.fit_options();
    let rank = if scanning {
        let first_tau: Vec<FrequencyTable> = tables
            .iter()
            .take(config.fit.scan_tables)
            .map(|per_tau| per_tau[0].clone())
            .collect();
        let scan = rank_scan(&first_tau, &config.fit.ranks, &options).map_err(|e| e.in_stage("rank-scan"))?;
        store
            .text("series/rank_scan.csv", &scan.to_csv())
            .map_err(|e| e.in_stage("rank-scan"))?;
        let selected = select_rank(&scan).map_err(|e| e.in_stage("rank-scan"))?;
        RankSection {
            selected,
            scan: Section::Done(RankSummary::of(&scan)),
        }
    } else {
        RankSection {
            selected: config.fit.ranks[0],
            scan: Section::skipped("a single rank was configured"),
        }
    };
    let k = rank.selected;

    let models = fit_repetitions(&tables[..reps], k, &options).map_err(|e| e.in_stage("fit"))?;
    for (rep, m) in models.iter().enumerate() {
        store
            .json(&format!("models/rep{rep:02}.json"), m)
            .map_err(|e| e.in_stage("fit"))?;
    }

    let purity = purity_section(&models, config.simulate.taus[0]).map_err(|e| e.in_stage("purity"))?;

    let robustness = if config.contextuality.enabled {
        let series = robustness_vs_tau(&models[..config.contextuality.repetitions], &config.simulate.taus)
            .map_err(|e| e.in_stage("contextuality"))?;
        store
            .text("series/robustness.csv", &series.to_csv())
            .map_err(|e| e.in_stage("contextuality"))?;
        Section::Done(series)
    } else {
        Section::skipped("disabled in config")
    };

    let (volumes, decay, non_markovian) = if !config.volumes.enabled {
        let s = "disabled in config";
        (Section::skipped(s), Section::skipped(s), Section::skipped(s))
    } else if k != 4 {
        let s = format!("volumes are only computed for rank 4 (selected rank {k})");
        (Section::skipped(&s), Section::skipped(&s), Section::skipped(&s))
    } else {
        let frames = models[..config.volumes.repetitions]
            .iter()
            .enumerate()
            .map(|(rep, m)| shared_frame(m, config.volumes.sphere_starts, crate::synthdata::mix_seed(config.simulate.seed, rep as u64)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("reparam"))?;
        for (rep, f) in frames.iter().enumerate() {
            store
                .json(&format!("frames/rep{rep:02}.json"), f)
                .map_err(|e| e.in_stage("reparam"))?;
        }
        let series = volume_series_from_frames(&frames).map_err(|e| e.in_stage("volumes"))?;
        store
            .text("series/volumes.csv", &series.to_csv())
            .map_err(|e| e.in_stage("volumes"))?;
        let decay = if series.taus.len() >= 3 {
            let fit = fit_decay(&series).map_err(|e| e.in_stage("decay"))?;
            Section::Done(fit)
        } else {
            Section::skipped("fewer than three times")
        };
        let intervals = detect_nonmarkovianity(&series, config.volumes.sigmas);
        (Section::Done(series), decay, Section::Done(intervals))
    };

    let mut report = RunReport {
        provenance,
        rank,
        purity,
        robustness,
        volumes,
        decay,
        non_markovian,
        artifacts: Vec::new(),
    };
    report.artifacts = store.artifacts;
    if let Some(root) = out_dir {
        write_json(&root.join("report.json"), &report).map_err(|e| e.in_stage("report"))?;
    }
    Ok(report)
}

fn purity_section(models: &[GptModel], first_tau: f64) -> Result<PuritySection> {
    let max_distinguishability = models
        .iter()
        .map(|m| {
            let states = m.states_at(Some(first_tau));
            let sub = GptModel {
                states: crate::linalg::rows_to_matrix(&states),
                tau_labels: None,
                ..m.clone()
            };
            max_pairwise_distinguishability(&sub)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = Spread::of(&max_distinguishability).mean;
    Ok(PuritySection {
        purity_bound: purity_lower_bound(mean.clamp(0.0, 1.0))?,
        mean_max_distinguishability: mean,
        max_distinguishability,
    })
}
