use gptomo::gptmodel::GptModel;
use gptomo::linalg::max_abs_diff;
use gptomo::nonclassicality::*;
use gptomo::pipeline::fit_repetitions;
use gptomo::polytope::{consistent_dual, contains, VPolytope};
use gptomo::synthdata::SimulationConfig;
use gptomo::tomofit::FitOptions;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

const UNIT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

fn state(a: &[f64; 3]) -> Vec<f64> {
    vec![1.0, a[0], a[1], a[2]]
}

fn effect(a: &[f64; 3]) -> Vec<f64> {
    vec![0.5, 0.5 * a[0], 0.5 * a[1], 0.5 * a[2]]
}

fn check_sound(problem: &EmbeddingProblem, result: &RobustnessResult) {
    assert!((0.0..=1.0).contains(&result.r));
    assert!(result.witness.iter().all(|&v| v >= -1e-10));
    let cert = certificate_residual(problem, result);
    assert!(cert < 1e-8, "certificate residual {cert}");
    let model = result.model.as_ref().expect("ontological model");
    let diff = max_abs_diff(&model.probabilities(), &problem.depolarized_probabilities(result.r));
    assert!(diff < 1e-8, "model residual {diff}");
}

fn fitted_models(m: usize, taus: Vec<f64>, reps: usize) -> Vec<GptModel> {
    let cfg = SimulationConfig {
        m,
        n: m,
        taus,
        tables: reps,
        seed: 3,
        ..Default::default()
    };
    let tables = gptomo::synthdata::simulate(&cfg).unwrap();
    fit_repetitions(&tables, 4, &FitOptions { restarts: 1, ..Default::default() }).unwrap()
}

fn same_polytope(a: &VPolytope, b: &VPolytope) -> bool {
    a.len() == b.len()
        && a.vertices.iter().all(|x| {
            b.vertices
                .iter()
                .any(|y| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-9))
        })
}

#[test]
fn anchors_are_sound() {
    for d in 2..=4 {
        let p = classical_fragment(d).unwrap();
        let r = robustness(&p).unwrap();
        assert_eq!(r.r, 0.0);
        check_sound(&p, &r);
        let raw = max_abs_diff(&r.model.as_ref().unwrap().probabilities(), &p.probabilities());
        assert!(raw < 1e-8);
    }
    let p = stabilizer_fragment().unwrap();
    let r = robustness(&p).unwrap();
    assert_eq!(r.r, 0.0);
    assert!(max_abs_diff(&r.model.as_ref().unwrap().probabilities(), &p.probabilities()) < 1e-8);
    for level in 0..2 {
        let p = bloch_fragment(level).unwrap();
        check_sound(&p, &robustness(&p).unwrap());
    }
}

#[test]
fn fitted_models_are_sound_at_every_tau() {
    let models = fitted_models(30, vec![0.0, 10.0, 30.0], 2);
    for model in &models {
        for tau in model.taus() {
            let p = build_problem(model, Some(tau)).unwrap();
            assert_eq!(p.unit, UNIT.to_vec());
            check_sound(&p, &robustness(&p).unwrap());
        }
    }
}

#[test]
fn removed_states_lie_inside_the_hull() {
    let model = &fitted_models(100, vec![0.0], 1)[0];
    let p = build_problem(model, Some(0.0)).unwrap();
    assert!(p.state_vertices.len() <= 100);
    let hull = VPolytope::new(p.state_vertices.clone()).unwrap();
    for s in model.states_at(Some(0.0)) {
        assert!(contains(&hull, &s, 1e-9).unwrap());
    }
}

#[test]
fn complements_change_neither_the_dual_nor_r() {
    let model = &fitted_models(24, vec![0.0, 5.0], 1)[0];
    let n = model.num_measurements();
    let cols = model.effect_columns();
    let without: Vec<Vec<f64>> = cols[..2 + n].to_vec();
    let unit = model.unit();
    let dual_with = consistent_dual(&cols, Some(&unit)).unwrap();
    let dual_without = consistent_dual(&without, Some(&unit)).unwrap();
    assert!(same_polytope(&dual_with, &dual_without));
    for tau in [0.0, 5.0] {
        let full = build_problem(model, Some(tau)).unwrap();
        let part = EmbeddingProblem::new(&model.states_at(Some(tau)), &without, &unit).unwrap();
        let (rw, ro) = (robustness(&full).unwrap(), robustness(&part).unwrap());
        assert!((rw.r - ro.r).abs() < 1e-9, "tau {tau}: {} vs {}", rw.r, ro.r);
        check_sound(&part, &ro);
    }
}

/// Model whose states at every τ are the six stabilizer states.
fn stabilizer_model(taus: &[f64]) -> GptModel {
    let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &tau in taus {
        for d in &dirs {
            for s in [1.0, -1.0] {
                rows.push(state(&[s * d[0], s * d[1], s * d[2]]));
                labels.push(tau);
            }
        }
    }
    let mut cols = vec![UNIT.to_vec(), vec![0.0; 4]];
    cols.extend(dirs.iter().map(effect));
    cols.extend(dirs.iter().map(|d| effect(&[-d[0], -d[1], -d[2]])));
    GptModel {
        rank: 4,
        tau_labels: Some(labels),
        states: DMatrix::from_fn(rows.len(), 4, |i, c| rows[i][c]),
        effects: DMatrix::from_fn(4, cols.len(), |c, j| cols[j][c]),
        provenance: None,
    }
}

#[test]
fn noncontextual_series_has_zero_spread() {
    let taus = [0.0, 5.0, 10.0];
    let models = vec![stabilizer_model(&taus); 3];
    let series = robustness_vs_tau(&models, &taus).unwrap();
    assert!(series.mean.iter().all(|&r| r == 0.0));
    assert!(series.std_dev.iter().all(|&s| s == Some(0.0)));
    let single = robustness_vs_tau(&models[..1], &taus).unwrap();
    assert!(single.std_dev.iter().all(Option::is_none));
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn depolarizing_composes_exactly(sides in 3usize..10, r0 in 0.0..0.95f64) {
        let p = polygon_fragment(sides).unwrap();
        let r = robustness(&p).unwrap().r;
        let q = p.depolarized(r0);
        let result = robustness(&q).unwrap();
        check_sound(&q, &result);
        let want = ((r - r0) / (1.0 - r0)).max(0.0);
        prop_assert!((result.r - want).abs() < 1e-6, "r {} r0 {} -> {} (want {})", r, r0, result.r, want);
        prop_assert!(result.r <= r + 1e-9);
    }

    #[test]
    fn subfragments_are_no_more_contextual(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs = icosphere(1);
        // Antipodal pairs keep the fixed mixed state inside every state subset.
        let mut pairs: Vec<usize> = (0..dirs.len())
            .filter(|&i| {
                let j = dirs.iter().position(|d| (0..3).all(|c| (d[c] + dirs[i][c]).abs() < 1e-12)).unwrap();
                i < j
            })
            .collect();
        pairs.shuffle(&mut rng);
        let keep = rng.random_range(3..=pairs.len());
        let mut sub_states = Vec::new();
        for &i in &pairs[..keep] {
            sub_states.push(state(&dirs[i]));
            sub_states.push(state(&[-dirs[i][0], -dirs[i][1], -dirs[i][2]]));
        }
        let mut order: Vec<usize> = (0..dirs.len()).collect();
        order.shuffle(&mut rng);
        let count = rng.random_range(1..=dirs.len());
        let sub_effects: Vec<Vec<f64>> = order[..count].iter().map(|&i| effect(&dirs[i])).collect();

        let all_states: Vec<Vec<f64>> = dirs.iter().map(state).collect();
        let all_effects: Vec<Vec<f64>> = dirs.iter().map(effect).collect();
        let full = EmbeddingProblem::with_mixed(all_states, all_effects, UNIT.to_vec(), UNIT.to_vec()).unwrap();
        let sub = EmbeddingProblem::with_mixed(sub_states, sub_effects, UNIT.to_vec(), UNIT.to_vec()).unwrap();
        let (rf, rs) = (robustness(&full).unwrap(), robustness(&sub).unwrap());
        prop_assert!(rs.r <= rf.r + 1e-9, "subset {} > full {}", rs.r, rf.r);
        check_sound(&sub, &rs);
    }
}
