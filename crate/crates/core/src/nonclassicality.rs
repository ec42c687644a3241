//! Simplex embeddability of a GPT fragment and its robustness of
//! nonclassicality.
//!
//! With `H_S` the facet normals of the cone generated by the states and `H_E`
//! those of the cone generated by the effects, the fragment depolarized by
//! weight `r` toward the mixed state `m` embeds in a simplex iff some
//! entrywise-nonnegative `σ` satisfies
//!
//! ```text
//!   H_Eᵀ σ H_S = (1 − r)·I + r·m uᵀ
//! ```
//!
//! The robustness is the least such `r`. The facets of the state cone index
//! the ontic states of the reconstructed model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gptmodel::GptModel;
use crate::linalg::{column_basis, dot, rows_serde};
use crate::lp::{LpOutcome, StandardLp};
use crate::polytope::{cone_facets, remove_interior};
use crate::tomofit::Spread;
use crate::{Error, Result};

/// Response normalizers below this are treated as zero.
const NORMALIZER_TOL: f64 = 1e-12;
const SPAN_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProblem {
    pub state_vertices: Vec<Vec<f64>>,
    /// Effects including the unit, the zero effect and every complement.
    pub effect_vertices: Vec<Vec<f64>>,
    pub unit: Vec<f64>,
    pub mixed: Vec<f64>,
    /// Orthonormal basis (columns, ambient coordinates) when the fragment
    /// was projected onto the common span of its states and effects.
    pub projection: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepolarizationMap {
    pub r: f64,
    pub mixed: Vec<f64>,
}

impl DepolarizationMap {
    /// `(1 − r)s + r·m` for a normalized state `s`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.mixed)
            .map(|(a, b)| (1.0 - self.r) * a + self.r * b)
            .collect()
    }
}

/// A classical model: ontic states `λ`, a distribution over them for every
/// state and a response probability per ontic state for every effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologicalModel {
    /// Facet index of each retained ontic state.
    pub ontic_states: Vec<usize>,
    pub epistemic_states: Vec<Vec<f64>>,
    pub response_functions: Vec<Vec<f64>>,
}

impl OntologicalModel {
    /// `p(e|s) = Σ_λ μ_s(λ) χ_e(λ)` for every state/effect pair.
    pub fn probabilities(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.epistemic_states.len(),
            self.response_functions.len(),
            |i, j| dot(&self.epistemic_states[i], &self.response_functions[j]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub r: f64,
    /// `σ`, rows indexed by effect-cone facets, columns by state-cone facets.
    #[serde(with = "rows_serde")]
    pub witness: DMatrix<f64>,
    pub state_facets: Vec<Vec<f64>>,
    pub effect_facets: Vec<Vec<f64>>,
    pub model: Option<OntologicalModel>,
}

impl EmbeddingProblem {
    /// Keeps the extremal states, takes their average as the mixed state and
    /// projects onto the common span when states or effects are deficient.
    pub fn new(states: &[Vec<f64>], effects: &[Vec<f64>], unit: &[f64]) -> Result<Self> {
        let vertices = remove_interior(states)?.vertices;
        let k = unit.len();
        let mixed = (0..k)
            .map(|i| vertices.iter().map(|v| v[i]).sum::<f64>() / vertices.len() as f64)
            .collect();
        EmbeddingProblem::with_mixed(vertices, effects.to_vec(), unit.to_vec(), mixed)
    }

    /// Uses the given states verbatim and an explicit mixed state.
    pub fn with_mixed(
        states: Vec<Vec<f64>>,
        effects: Vec<Vec<f64>>,
        unit: Vec<f64>,
        mixed: Vec<f64>,
    ) -> Result<Self> {
        let k = unit.len();
        if states.is_empty() || effects.is_empty() {
            return Err(Error::invalid("fragment needs states and effects"));
        }
        if states.iter().chain(&effects).any(|v| v.len() != k) || mixed.len() != k {
            return Err(Error::invalid("fragment vectors differ in dimension"));
        }
        for s in &states {
            let n = dot(&unit, s);
            if (n - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!("state is not normalized (u·s = {n})")));
            }
        }
        let mut effects = effects;
        let zero = vec![0.0; k];
        if !effects.iter().any(|e| e == &unit) {
            effects.insert(0, unit.clone());
        }
        if !effects.iter().any(|e| e == &zero) {
            effects.insert(1, zero);
        }
        // Every effect needs its complement: a response function can only be
        // normalized when χ_e ≤ χ_u on each ontic state.
        let complements: Vec<Vec<f64>> = effects
            .iter()
            .map(|e| unit.iter().zip(e).map(|(u, v)| u - v).collect())
            .collect();
        for c in complements {
            if !effects.iter().any(|e| close(e, &c)) {
                effects.push(c);
            }
        }
        let problem = EmbeddingProblem {
            state_vertices: states,
            effect_vertices: effects,
            unit,
            mixed,
            projection: None,
        };
        problem.project_to_common_span()
    }

    fn project_to_common_span(self) -> Result<Self> {
        let k = self.unit.len();
        let coords = |b: &DMatrix<f64>, v: &[f64]| -> Vec<f64> {
            (0..b.ncols())
                .map(|c| (0..b.nrows()).map(|i| b[(i, c)] * v[i]).sum())
                .collect()
        };
        let as_cols = |b: &DMatrix<f64>, v: &[Vec<f64>]| {
            let p: Vec<Vec<f64>> = v.iter().map(|x| coords(b, x)).collect();
            DMatrix::from_fn(b.ncols(), p.len(), |i, j| p[j][i])
        };
        // Pairings only see the part of each state inside the effect span and
        // vice versa. Projecting one side can shrink the other's span, so
        // alternate until both span the same subspace.
        let mut basis = DMatrix::identity(k, k);
        loop {
            let r = basis.ncols();
            let bs = column_basis(&as_cols(&basis, &self.state_vertices), SPAN_RTOL);
            let be = column_basis(&as_cols(&basis, &self.effect_vertices), SPAN_RTOL);
            if bs.ncols() == r && be.ncols() == r {
                break;
            }
            let inner = &basis * &bs;
            let be2 = column_basis(&as_cols(&inner, &self.effect_vertices), SPAN_RTOL);
            basis = inner * be2;
            if basis.ncols() == 0 {
                return Err(Error::DegenerateGeometry("states and effects share no span".into()));
            }
        }
        if basis.ncols() == k {
            return Ok(self);
        }
        let project = |v: &Vec<f64>| coords(&basis, v);
        Ok(EmbeddingProblem {
            state_vertices: self.state_vertices.iter().map(project).collect(),
            effect_vertices: self.effect_vertices.iter().map(project).collect(),
            unit: project(&self.unit),
            mixed: project(&self.mixed),
            projection: Some(
                (0..basis.ncols())
                    .map(|c| basis.column(c).iter().copied().collect())
                    .collect(),
            ),
        })
    }

    pub fn dimension(&self) -> usize {
        self.unit.len()
    }

    /// `p(e_j | s_i)` for the raw fragment.
    pub fn probabilities(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.state_vertices.len(), self.effect_vertices.len(), |i, j| {
            dot(&self.effect_vertices[j], &self.state_vertices[i])
        })
    }

    /// Statistics of the fragment after depolarizing every state by `r`.
    pub fn depolarized_probabilities(&self, r: f64) -> DMatrix<f64> {
        let map = DepolarizationMap {
            r,
            mixed: self.mixed.clone(),
        };
        let states: Vec<Vec<f64>> = self.state_vertices.iter().map(|s| map.apply(s)).collect();
        DMatrix::from_fn(states.len(), self.effect_vertices.len(), |i, j| {
            dot(&self.effect_vertices[j], &states[i])
        })
    }

    /// The same fragment with its states depolarized by `r`.
    pub fn depolarized(&self, r: f64) -> EmbeddingProblem {
        let map = DepolarizationMap {
            r,
            mixed: self.mixed.clone(),
        };
        EmbeddingProblem {
            state_vertices: self.state_vertices.iter().map(|s| map.apply(s)).collect(),
            ..self.clone()
        }
    }
}

/// Embedding problem for the states of `model` tagged `tau` (all states when
/// `tau` is `None`) against every effect column of the model.
pub fn build_problem(model: &GptModel, tau: Option<f64>) -> Result<EmbeddingProblem> {
    let states = model.states_at(tau);
    if states.is_empty() {
        return Err(Error::invalid(format!("no states for tau = {tau:?}")));
    }
    let unit = model.unit();
    let mut effects: Vec<Vec<f64>> = Vec::new();
    for e in model.effect_columns() {
        if !effects.contains(&e) {
            effects.push(e);
        }
    }
    EmbeddingProblem::new(&states, &effects, &unit)
}

/// Solves the embedding LP. Returns `r = 0` exactly when the raw fragment
/// already embeds.
pub fn robustness(problem: &EmbeddingProblem) -> Result<RobustnessResult> {
    let k = problem.dimension();
    let state_facets = cone_facets(&problem.state_vertices)?.facets;
    let effect_facets = cone_facets(&problem.effect_vertices)?.facets;
    let (ne, ns) = (effect_facets.len(), state_facets.len());

    let mut target = vec![0.0; k * k];
    for i in 0..k {
        target[i * k + i] = 1.0;
    }
    let mut lp = StandardLp::new(target);
    let mut col = vec![0.0; k * k];
    for he in &effect_facets {
        for hs in &state_facets {
            for i in 0..k {
                for j in 0..k {
                    col[i * k + j] = he[i] * hs[j];
                }
            }
            lp.add_dense_column(0.0, &col);
        }
    }

    let (r, x) = match lp.solve()? {
        LpOutcome::Optimal { x, .. } => (0.0, x),
        LpOutcome::Unbounded => return Err(Error::internal("embedding feasibility LP unbounded")),
        LpOutcome::Infeasible => {
            for i in 0..k {
                for j in 0..k {
                    let id = if i == j { 1.0 } else { 0.0 };
                    col[i * k + j] = id - problem.mixed[i] * problem.unit[j];
                }
            }
            lp.add_dense_column(1.0, &col);
            match lp.solve()? {
                LpOutcome::Optimal { x, .. } => {
                    let r = x[ne * ns].clamp(0.0, 1.0);
                    (r, x)
                }
                other => {
                    return Err(Error::internal(format!(
                        "embedding LP with depolarization returned {other:?}; \
                         {ns} state facets, {ne} effect facets"
                    )))
                }
            }
        }
    };
    let witness = DMatrix::from_fn(ne, ns, |a, b| x[a * ns + b].max(0.0));
    let mut result = RobustnessResult {
        r,
        witness,
        state_facets,
        effect_facets,
        model: None,
    };
    match reconstruct_model(problem, &result) {
        Ok(m) => result.model = Some(m),
        Err(e) => log::warn!("no ontological model for r = {r}: {e}"),
    }
    Ok(result)
}

/// `H_Eᵀ σ H_S − ((1 − r)I + r·m uᵀ)`, the largest entry in absolute value.
pub fn certificate_residual(problem: &EmbeddingProblem, result: &RobustnessResult) -> f64 {
    let k = problem.dimension();
    let he = DMatrix::from_fn(result.effect_facets.len(), k, |a, i| result.effect_facets[a][i]);
    let hs = DMatrix::from_fn(result.state_facets.len(), k, |b, j| result.state_facets[b][j]);
    let lhs = he.transpose() * &result.witness * hs;
    let r = result.r;
    let rhs = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        (1.0 - r) * id + r * problem.mixed[i] * problem.unit[j]
    });
    (lhs - rhs).amax()
}

/// Noncontextual model reproducing the `r`-depolarized statistics: `μ_s =
/// H_S s` and `χ_e = σᵀ H_E e`, rescaled so that the unit effect responds
/// with 1 on every retained ontic state.
pub fn reconstruct_model(problem: &EmbeddingProblem, result: &RobustnessResult) -> Result<OntologicalModel> {
    let ns = result.state_facets.len();
    let response = |e: &[f64]| -> Vec<f64> {
        let he: Vec<f64> = result.effect_facets.iter().map(|h| dot(h, e)).collect();
        (0..ns)
            .map(|b| (0..he.len()).map(|a| result.witness[(a, b)] * he[a]).sum())
            .collect()
    };
    let norm = response(&problem.unit);
    let scale = norm.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let keep: Vec<usize> = (0..ns).filter(|&b| norm[b] > NORMALIZER_TOL * scale).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateWitness(
            "unit effect has zero response on every ontic state".into(),
        ));
    }
    let epistemic_states = problem
        .state_vertices
        .iter()
        .map(|s| {
            keep.iter()
                .map(|&b| norm[b] * dot(&result.state_facets[b], s))
                .collect()
        })
        .collect();
    let response_functions = problem
        .effect_vertices
        .iter()
        .map(|e| {
            let chi = response(e);
            keep.iter().map(|&b| chi[b] / norm[b]).collect()
        })
        .collect();
    Ok(OntologicalModel {
        ontic_states: keep,
        epistemic_states,
        response_functions,
    })
}

/// Robustness per τ across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSeries {
    pub taus: Vec<f64>,
    /// `values[t][rep]`.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation; absent with a single repetition.
    pub std_dev: Vec<Option<f64>>,
}

impl RobustnessSeries {
    pub fn from_values(taus: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let mean = values.iter().map(|v| Spread::of(v).mean).collect();
        let std_dev = values
            .iter()
            .map(|v| (v.len() > 1).then(|| Spread::of(v).std_dev))
            .collect();
        RobustnessSeries {
            taus,
            values,
            mean,
            std_dev,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau_us,r_mean,r_std\n");
        for (i, t) in self.taus.iter().enumerate() {
            let sd = self.std_dev[i].map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{t},{},{sd}\n", self.mean[i]));
        }
        out
    }
}

/// `models[rep]` is one repetition's τ-labelled model.
pub fn robustness_vs_tau(models: &[GptModel], taus: &[f64]) -> Result<RobustnessSeries> {
    if models.is_empty() {
        return Err(Error::invalid("need at least one repetition"));
    }
    let values = taus
        .iter()
        .map(|&tau| {
            models
                .iter()
                .map(|m| robustness(&build_problem(m, Some(tau))?).map(|r| r.r))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessSeries::from_values(taus.to_vec(), values))
}

// ---------------------------------------------------------------------------
// Reference fragments.

/// Classical `d`-level system: simplex states, hypercube effects.
pub fn classical_fragment(d: usize) -> Result<EmbeddingProblem> {
    if d == 0 || d > 16 {
        return Err(Error::invalid("classical fragment needs 1 <= d <= 16"));
    }
    let states: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let effects: Vec<Vec<f64>> = (0..1usize << d)
        .map(|bits| (0..d).map(|i| ((bits >> i) & 1) as f64).collect())
        .collect();
    EmbeddingProblem::new(&states, &effects, &vec![1.0; d])
}

/// Bloch-ball vector `(1, a)` and projective effect `½(1, a)`.
fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

fn bloch_state(a: &[f64; 3]) -> Vec<f64> {
    vec![1.0, a[0], a[1], a[2]]
}

fn bloch_effect(a: &[f64; 3]) -> Vec<f64> {
    vec![0.5, 0.5 * a[0], 0.5 * a[1], 0.5 * a[2]]
}

/// Stabilizer qubit: the six Pauli eigenstates and the six Pauli effects.
pub fn stabilizer_fragment() -> Result<EmbeddingProblem> {
    let dirs: Vec<[f64; 3]> = (0..3)
        .flat_map(|i| {
            [1.0, -1.0].map(|s| {
                let mut a = [0.0; 3];
                a[i] = s;
                a
            })
        })
        .collect();
    let states: Vec<_> = dirs.iter().map(bloch_state).collect();
    let effects: Vec<_> = dirs.iter().map(bloch_effect).collect();
    EmbeddingProblem::new(&states, &effects, &[1.0, 0.0, 0.0, 0.0])
}

/// Vertices of the icosahedron refined `level` times by edge midpoints
/// pushed to the unit sphere (12, 42, 162, … points). Each level contains
/// the previous one.
pub fn icosphere(level: usize) -> Vec<[f64; 3]> {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ];
    let normalize = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    verts.iter_mut().for_each(|v| *v = normalize(*v));
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let (p, q) = (verts[a], verts[b]);
                    verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                    verts.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }
    verts
}

/// Discretized Bloch ball: icosphere states with the projective effects
/// along the same directions.
pub fn bloch_fragment(level: usize) -> Result<EmbeddingProblem> {
    let dirs = icosphere(level);
    let states: Vec<_> = dirs.iter().map(bloch_state).collect();
    let effects: Vec<_> = dirs.iter().map(bloch_effect).collect();
    EmbeddingProblem::new(&states, &effects, &[1.0, 0.0, 0.0, 0.0])
}

/// Unit vector at polar angle `theta` and azimuth `phi`.
pub fn bloch_direction(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// Regular `n`-gon of states on the equator with matching effects; handy
/// small contextual fragments for property tests.
pub fn polygon_fragment(n: usize) -> Result<EmbeddingProblem> {
    if n < 3 {
        return Err(Error::invalid("polygon needs at least three vertices"));
    }
    let dirs: Vec<[f64; 3]> = (0..n)
        .map(|i| bloch_direction(PI / 2.0, 2.0 * PI * i as f64 / n as f64))
        .collect();
    let states: Vec<_> = dirs.iter().map(bloch_state).collect();
    let effects: Vec<_> = dirs.iter().map(bloch_effect).collect();
    EmbeddingProblem::new(&states, &effects, &[1.0, 0.0, 0.0, 0.0])
}
