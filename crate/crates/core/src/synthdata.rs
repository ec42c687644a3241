//! Prepare-and-measure simulator for a decohering two-level system.
//!
//! Preparations and measurements are directions on the Bloch sphere. A cell
//! `(i, j)` of a table at waiting time `tau` is sampled from
//! `Binomial(shots, p_ij)` where `p_ij` composes, in order, the relaxation /
//! dephasing channel, the Born rule and a symmetric readout flip.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::tomofit::variance_table;
use crate::{Error, Result};

/// z-coordinate of the fixed point of the relaxation channel.
pub const GROUND_POLE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction([f64; 3]);

impl Direction {
    /// Normalizes `v`; fails on the zero vector.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("direction must be a finite nonzero vector"));
        }
        Ok(Direction([v[0] / n, v[1] / n, v[2] / n]))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        dot3(&self.0, &other.0)
    }

    pub fn neg(&self) -> Direction {
        Direction([-self.0[0], -self.0[1], -self.0[2]])
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Relaxation time `t1`, coherence time `t2` (both µs) and readout fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub t1: f64,
    pub t2: f64,
    pub readout_fidelity: f64,
}

impl ChannelParams {
    pub fn new(t1: f64, t2: f64, readout_fidelity: f64) -> Result<Self> {
        let p = ChannelParams {
            t1,
            t2,
            readout_fidelity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) {
            return Err(Error::invalid(format!("t1 must be positive, got {}", self.t1)));
        }
        if !(self.t2 > 0.0 && self.t2 <= 2.0 * self.t1) {
            return Err(Error::invalid(format!(
                "t2 must satisfy 0 < t2 <= 2 t1, got t2={} t1={}",
                self.t2, self.t1
            )));
        }
        if !(0.5..=1.0).contains(&self.readout_fidelity) {
            return Err(Error::invalid(format!(
                "readout fidelity must lie in [0.5, 1], got {}",
                self.readout_fidelity
            )));
        }
        Ok(())
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            t1: 21.9,
            t2: 12.7,
            readout_fidelity: 0.85,
        }
    }
}

/// Phenomenological non-Markovian revival of the transverse components.
///
/// The transverse scale factor is multiplied by `1 + amplitude·h(tau)` where
/// `h` is a tent rising from 0 at `start` to 1 at `end` and falling back to 0
/// at `end + (end - start)`. Bloch vectors are capped to the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpParams {
    pub start: f64,
    pub end: f64,
    pub amplitude: f64,
}

impl BumpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.end > self.start && self.start >= 0.0 && self.amplitude >= 0.0) {
            return Err(Error::invalid(
                "bump requires 0 <= start < end and amplitude >= 0",
            ));
        }
        Ok(())
    }

    fn tent(&self, tau: f64) -> f64 {
        let w = self.end - self.start;
        if tau <= self.start || tau >= self.end + w {
            0.0
        } else if tau <= self.end {
            (tau - self.start) / w
        } else {
            (self.end + w - tau) / w
        }
    }
}

/// Fibonacci lattice: `z_i = 1 - 2(i + ½)/m`, azimuth `2πi/ϕ²`.
pub fn fibonacci_directions(m: usize) -> Result<Vec<Direction>> {
    if m == 0 {
        return Err(Error::invalid("need at least one direction"));
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let increment = 2.0 * PI / (golden * golden);
    Ok((0..m)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = increment * i as f64;
            let v = [r * phi.cos(), r * phi.sin(), z];
            // Already unit up to rounding; renormalize to pin the norm.
            Direction::from_vector(v).expect("nonzero lattice point")
        })
        .collect())
}

/// Outcome-0 probability of a pure state along `prep` measured along `meas`.
pub fn ideal_probability(prep: &Direction, meas: &Direction) -> f64 {
    born(&prep.0, meas)
}

fn born(bloch: &[f64; 3], meas: &Direction) -> f64 {
    (0.5 * (1.0 + dot3(bloch, &meas.0))).clamp(0.0, 1.0)
}

/// Relaxes `bloch` for time `tau` toward `(0, 0, GROUND_POLE)`.
pub fn apply_decoherence(bloch: [f64; 3], tau: f64, params: &ChannelParams) -> Result<[f64; 3]> {
    apply_decoherence_with_bump(bloch, tau, params, None)
}

pub fn apply_decoherence_with_bump(
    bloch: [f64; 3],
    tau: f64,
    params: &ChannelParams,
    bump: Option<&BumpParams>,
) -> Result<[f64; 3]> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be nonnegative, got {tau}")));
    }
    let mut transverse = (-tau / params.t2).exp();
    if let Some(b) = bump {
        transverse *= 1.0 + b.amplitude * b.tent(tau);
    }
    let longitudinal = (-tau / params.t1).exp();
    let z = GROUND_POLE + (bloch[2] - GROUND_POLE) * longitudinal;
    let mut x = bloch[0] * transverse;
    let mut y = bloch[1] * transverse;
    let norm2 = x * x + y * y + z * z;
    if norm2 > 1.0 {
        let room = (1.0 - z * z).max(0.0).sqrt();
        let t = (x * x + y * y).sqrt();
        if t > 0.0 {
            x *= room / t;
            y *= room / t;
        }
    }
    Ok([x, y, z])
}

/// Symmetric bit flip with probability `1 - fidelity`.
pub fn apply_readout_error(p: f64, fidelity: f64) -> f64 {
    fidelity * p + (1.0 - fidelity) * (1.0 - p)
}

/// Exact outcome-0 probability for one cell.
pub fn cell_probability(
    prep: &Direction,
    meas: &Direction,
    tau: f64,
    params: &ChannelParams,
    bump: Option<&BumpParams>,
) -> Result<f64> {
    let evolved = apply_decoherence_with_bump(prep.0, tau, params, bump)?;
    Ok(apply_readout_error(born(&evolved, meas), params.readout_fidelity))
}

/// Table of exact probabilities (no shot noise).
pub fn probability_table(
    preps: &[Direction],
    meas: &[Direction],
    tau: f64,
    params: &ChannelParams,
    bump: Option<&BumpParams>,
) -> Result<DMatrix<f64>> {
    let mut d = DMatrix::zeros(preps.len(), meas.len());
    for (i, p) in preps.iter().enumerate() {
        for (j, q) in meas.iter().enumerate() {
            d[(i, j)] = cell_probability(p, q, tau, params, bump)?;
        }
    }
    Ok(d)
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row block of a (possibly stacked) table that shares one waiting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauBlock {
    pub tau: f64,
    pub start: usize,
    pub rows: usize,
}

/// Observed outcome-0 frequencies with their binomial variance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub entries: DMatrix<f64>,
    pub shots: u64,
    pub tau: f64,
    pub seed: u64,
    pub variance: DMatrix<f64>,
    pub blocks: Vec<TauBlock>,
}

impl FrequencyTable {
    pub fn new(entries: DMatrix<f64>, shots: u64, tau: f64, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::invalid("shots must be positive"));
        }
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid("frequency table must be nonempty"));
        }
        if entries.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::invalid("frequencies must lie in [0, 1]"));
        }
        let variance = variance_table(&entries, shots);
        let rows = entries.nrows();
        Ok(FrequencyTable {
            entries,
            shots,
            tau,
            seed,
            variance,
            blocks: vec![TauBlock { tau, start: 0, rows }],
        })
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn to_file(&self) -> TableFile {
        TableFile {
            m: self.nrows(),
            n: self.ncols(),
            shots: self.shots,
            tau_us: self.tau,
            seed: self.seed,
            rows: crate::linalg::matrix_to_rows(&self.entries),
            blocks: (self.blocks.len() > 1).then(|| self.blocks.clone()),
        }
    }

    pub fn from_file(file: TableFile) -> Result<Self> {
        if file.rows.len() != file.m || file.rows.iter().any(|r| r.len() != file.n) {
            return Err(Error::invalid("table rows do not match the declared m x n"));
        }
        let entries = crate::linalg::rows_to_matrix(&file.rows);
        let mut t = FrequencyTable::new(entries, file.shots, file.tau_us, file.seed)?;
        if let Some(blocks) = file.blocks {
            t.blocks = blocks;
        }
        Ok(t)
    }
}

/// On-disk layout of a frequency table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableFile {
    pub m: usize,
    pub n: usize,
    pub shots: u64,
    pub tau_us: f64,
    pub seed: u64,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<TauBlock>>,
}

/// Samples one frequency table. Each cell draws from its own ChaCha stream
/// keyed by `(seed, tau, i, j)`, so the result does not depend on the order in
/// which cells are visited.
pub fn sample_frequency_table(
    preps: &[Direction],
    meas: &[Direction],
    tau: f64,
    shots: u64,
    params: &ChannelParams,
    seed: u64,
) -> Result<FrequencyTable> {
    sample_frequency_table_with_bump(preps, meas, tau, shots, params, None, seed)
}

pub fn sample_frequency_table_with_bump(
    preps: &[Direction],
    meas: &[Direction],
    tau: f64,
    shots: u64,
    params: &ChannelParams,
    bump: Option<&BumpParams>,
    seed: u64,
) -> Result<FrequencyTable> {
    if preps.is_empty() || meas.is_empty() {
        return Err(Error::invalid("direction lists must be nonempty"));
    }
    if shots == 0 {
        return Err(Error::invalid("shots must be positive"));
    }
    params.validate()?;
    let probs = probability_table(preps, meas, tau, params, bump)?;
    let key = mix_seed(seed, tau.to_bits());
    let mut f = DMatrix::zeros(preps.len(), meas.len());
    for i in 0..preps.len() {
        for j in 0..meas.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.set_stream(((i as u64) << 32) | j as u64);
            let dist = Binomial::new(shots, probs[(i, j)])
                .map_err(|e| Error::internal(format!("binomial: {e}")))?;
            f[(i, j)] = dist.sample(&mut rng) as f64 / shots as f64;
        }
    }
    FrequencyTable::new(f, shots, tau, seed)
}

/// Everything needed to simulate a run of repeated tables over a τ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub m: usize,
    pub n: usize,
    pub shots: u64,
    pub taus: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub fidelity: f64,
    pub tables: usize,
    pub seed: u64,
    pub bump: Option<BumpParams>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let p = ChannelParams::default();
        SimulationConfig {
            m: 100,
            n: 100,
            shots: 2000,
            taus: vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0],
            t1: p.t1,
            t2: p.t2,
            fidelity: p.readout_fidelity,
            tables: 10,
            seed: 0,
            bump: None,
        }
    }
}

impl SimulationConfig {
    pub fn params(&self) -> Result<ChannelParams> {
        ChannelParams::new(self.t1, self.t2, self.fidelity)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.m == 0 || self.n == 0 || self.shots == 0 || self.tables == 0 {
            return Err(Error::invalid("m, n, shots and tables must be positive"));
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("tau grid must be nonempty and nonnegative"));
        }
        if let Some(b) = &self.bump {
            b.validate()?;
        }
        Ok(())
    }

    /// Seed of repetition `table`; tables of one repetition share it.
    pub fn table_seed(&self, table: usize) -> u64 {
        mix_seed(self.seed, table as u64)
    }
}

/// `result[t][k]` is repetition `t` at waiting time `taus[k]`.
pub fn simulate(cfg: &SimulationConfig) -> Result<Vec<Vec<FrequencyTable>>> {
    cfg.validate()?;
    let params = cfg.params()?;
    let preps = fibonacci_directions(cfg.m)?;
    let meas = fibonacci_directions(cfg.n)?;
    (0..cfg.tables)
        .map(|t| {
            cfg.taus
                .iter()
                .map(|&tau| {
                    sample_frequency_table_with_bump(
                        &preps,
                        &meas,
                        tau,
                        cfg.shots,
                        &params,
                        cfg.bump.as_ref(),
                        cfg.table_seed(t),
                    )
                })
                .collect()
        })
        .collect()
}
