use gptomo::gptmodel::*;
use gptomo::linalg::max_abs_diff;
use gptomo::synthdata::{fibonacci_directions, ideal_probability};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Table of exact rank `k` (counting the all-ones column) with entries in [0, 1].
fn planted_table(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> DMatrix<f64> {
    let basis = DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..1.0));
    let w = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
    let w = DMatrix::from_fn(m, k, |i, a| w[(i, a)] / w.row(i).sum());
    w * basis
}

/// Invertible map fixing the normalization functional: first column e_0.
fn random_map(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    loop {
        let mut l = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..k {
            l[(i, i)] += 2.0;
        }
        let sv = gptomo::linalg::singular_values(&l);
        if sv.max() / sv.min() < 100.0 {
            return l;
        }
    }
}

fn augmented(d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::from_element(d.nrows(), d.ncols() + 1, 1.0);
    a.columns_mut(1, d.ncols()).copy_from(d);
    a
}

#[test]
fn qubit_factor_is_bloch_up_to_a_map() {
    let dirs = fibonacci_directions(100).unwrap();
    let d = DMatrix::from_fn(100, 100, |i, j| ideal_probability(&dirs[i], &dirs[j]));
    let model = factorize(&d, 4).unwrap();
    let states = DMatrix::from_fn(100, 4, |i, c| if c == 0 { 1.0 } else { dirs[i].as_array()[c - 1] });
    let mut effects = DMatrix::zeros(4, 202);
    effects[(0, 0)] = 1.0;
    for j in 0..100 {
        let v = dirs[j].as_array();
        for c in 0..4 {
            let e = 0.5 * if c == 0 { 1.0 } else { v[c - 1] };
            effects[(c, 2 + j)] = e;
            effects[(c, 102 + j)] = if c == 0 { 1.0 } else { 0.0 } - e;
        }
    }
    let bloch = GptModel {
        states,
        effects,
        ..model.clone()
    };
    assert!(max_abs_diff(&bloch.probabilities(), &model.probabilities()) < 1e-12);
    let l = relate_factorizations(&model, &bloch).unwrap();
    assert!(l.linear_map.clone().try_inverse().is_some());
}

#[test]
fn fitted_model_distinguishability_matches_exhaustive_scan() {
    use gptomo::synthdata::{sample_frequency_table, ChannelParams};
    use gptomo::tomofit::{fit_rank_k, FitOptions};
    let dirs = fibonacci_directions(30).unwrap();
    let table = sample_frequency_table(&dirs, &dirs, 0.0, 2000, &ChannelParams::default(), 4).unwrap();
    let fit = fit_rank_k(&table, 4, &FitOptions { restarts: 1, ..Default::default() }).unwrap();
    let model = GptModel::from_fit(&fit).unwrap();
    let rows = model.state_rows();
    let cols = model.effect_columns();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (a, b) = (rng.random_range(0..30), rng.random_range(0..30));
        let brute = cols
            .iter()
            .map(|e| {
                let pa: f64 = e.iter().zip(&rows[a]).map(|(x, y)| x * y).sum();
                let pb: f64 = e.iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
                (pa - pb).abs()
            })
            .fold(0.0, f64::max);
        let got = distinguishability(&rows[a], &rows[b], &model.effects);
        assert!((got - brute).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn factorizations_are_unique_up_to_a_map(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = planted_table(&mut rng, 12, 10, k);
        let a = factorize_with(&d, k, Basis::Qr).unwrap();
        let b = factorize_with(&d, k, Basis::Svd).unwrap();
        let l = relate_factorizations(&a, &b).unwrap().linear_map;
        let inv = l.clone().try_inverse().unwrap();
        prop_assert!(max_abs_diff(&(&a.states * &l), &b.states) < 1e-8);
        prop_assert!(max_abs_diff(&(inv * &a.effects), &b.effects) < 1e-8);
    }

    #[test]
    fn planted_map_is_recovered_and_preserves_pairings(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = planted_table(&mut rng, 10, 9, k);
        let model = factorize(&d, k).unwrap();
        let l0 = random_map(&mut rng, k);
        let moved = apply_reparametrization(&model, &Reparametrization { linear_map: l0.clone() }).unwrap();
        prop_assert!(max_abs_diff(&moved.probabilities(), &model.probabilities()) < 1e-9);
        let l = relate_factorizations(&model, &moved).unwrap().linear_map;
        prop_assert!(max_abs_diff(&l, &l0) < 1e-8);
        let same = relate_factorizations(&model, &model).unwrap().linear_map;
        prop_assert!(max_abs_diff(&same, &DMatrix::identity(k, k)) < 1e-10);
    }

    #[test]
    fn model_structure(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (11, 8);
        let d = planted_table(&mut rng, m, n, k);
        let model = factorize(&d, k).unwrap();
        prop_assert!(model.states.column(0).iter().all(|&v| v == 1.0));
        let u = model.unit();
        prop_assert_eq!(u[0], 1.0);
        prop_assert!(u[1..].iter().all(|&v| v == 0.0));
        prop_assert!(model.effects.column(1).iter().all(|&v| v == 0.0));
        for j in 0..n {
            for c in 0..k {
                let sum = model.effects[(c, 2 + j)] + model.effects[(c, 2 + n + j)];
                prop_assert_eq!(sum, u[c]);
            }
        }
        let p = model.probabilities();
        for i in 0..m {
            prop_assert!((p[(i, 0)] - 1.0).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((p[(i, 2 + j)] + p[(i, 2 + n + j)] - 1.0).abs() < 1e-12);
            }
        }
        prop_assert!(max_abs_diff(&p.columns(2, n).into_owned(), &d) < 1e-9);
        prop_assert!(max_abs_diff(&(&model.states * &model.effects).columns(0, 1).into_owned(),
            &augmented(&d).columns(0, 1).into_owned()) < 1e-12);
    }

    #[test]
    fn per_state_distinguishability_matches_brute_force(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (9, 7);
        let model = factorize(&planted_table(&mut rng, m, n, k), k).unwrap();
        let rows = model.state_rows();
        let f = per_state_f(&model).unwrap();
        for i in 0..m {
            let brute = (0..m)
                .map(|l| distinguishability(&rows[i], &rows[l], &model.effects))
                .fold(0.0, f64::max);
            prop_assert!((f[i] - brute).abs() < 1e-12);
        }
        let max = max_pairwise_distinguishability(&model).unwrap();
        let bound = purity_lower_bound(max).unwrap();
        prop_assert!((0.5..=1.0).contains(&bound));
    }
}
