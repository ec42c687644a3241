mod common;

use gptomo::pipeline::*;
use gptomo::synthdata::SimulationConfig;
use gptomo::tomofit::FitOptions;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const TAUS: [f64; 8] = [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0];

fn noisy_series(rng: &mut ChaCha8Rng, a: f64, b: f64, reps: usize, noise: f64) -> VolumeSeries {
    let values = TAUS
        .iter()
        .map(|t| {
            (0..reps)
                .map(|_| a * (-t / b).exp() * (1.0 + noise * rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    VolumeSeries::from_values(TAUS.to_vec(), values)
}

#[test]
fn decay_fit_matches_the_profile_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let a = rng.random_range(0.1..1.0);
        let b = rng.random_range(2.0..30.0);
        let s = noisy_series(&mut rng, a, b, 7, 0.1);
        let fit = fit_decay(&s).unwrap();
        let (oa, ob) = decay_oracle(&s.taus, &s.relative_volumes, &s.std_dev);
        assert!((fit.amplitude - oa).abs() <= fit.amplitude_err, "A {} vs {}", fit.amplitude, oa);
        assert!((fit.decay_time - ob).abs() <= fit.decay_time_err, "B {} vs {}", fit.decay_time, ob);
        // Both minimize the same objective, so they should agree far more tightly.
        assert!((fit.amplitude - oa).abs() < 1e-6 * oa && (fit.decay_time - ob).abs() < 1e-6 * ob);
        let resid: f64 = fit.residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
        assert!(resid.is_finite());
    }
}

#[test]
fn fitted_volumes_never_exceed_the_consistent_space() {
    let cfg = SimulationConfig {
        m: 30,
        n: 30,
        taus: vec![0.0, 10.0, 30.0],
        tables: 2,
        seed: 5,
        ..Default::default()
    };
    let tables = gptomo::synthdata::simulate(&cfg).unwrap();
    let models = fit_repetitions(&tables, 4, &FitOptions { restarts: 1, ..Default::default() }).unwrap();
    let frames: Vec<Frame> = models.iter().map(|m| shared_frame(m, 4, 1).unwrap()).collect();
    let series = volume_series_from_frames(&frames).unwrap();
    for v in series.values.iter().flatten() {
        assert!(*v > 0.0 && *v <= 1.0 + 1e-6, "relative volume {v}");
    }
    assert!(series.relative_volumes[0] > series.relative_volumes[2]);
}

fn cube() -> Vec<[f64; 3]> {
    (0..8)
        .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
        .collect()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn planted_decays_are_recovered(a0 in 0.05..2.0f64, b0 in 1.0..60.0f64, rel in 0.01..0.3f64) {
        let y: Vec<f64> = TAUS.iter().map(|t| a0 * (-t / b0).exp()).collect();
        let sd: Vec<f64> = y.iter().map(|v| rel * v).collect();
        let s = VolumeSeries { taus: TAUS.to_vec(), relative_volumes: y.clone(), std_dev: sd, values: y.iter().map(|v| vec![*v]).collect() };
        let fit = fit_decay(&s).unwrap();
        prop_assert!((fit.amplitude - a0).abs() < 1e-6 && (fit.decay_time - b0).abs() < 1e-6, "{:?}", fit);
    }

    #[test]
    fn csv_round_trips(seed in any::<u64>(), reps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = noisy_series(&mut rng, 0.5, 8.0, reps, 0.2);
        let rows: Vec<Vec<f64>> = s.to_csv().lines().skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        prop_assert_eq!(rows.len(), TAUS.len());
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(r, &vec![s.taus[i], s.relative_volumes[i], s.std_dev[i]]);
        }
    }

    #[test]
    fn decreasing_series_are_markovian(seed in any::<u64>(), sigmas in 0.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = 1.0;
        let values: Vec<f64> = TAUS.iter().map(|_| { v *= rng.random_range(0.3..1.0); v }).collect();
        let sd: Vec<f64> = values.iter().map(|_| rng.random_range(0.0..0.05)).collect();
        let s = VolumeSeries { taus: TAUS.to_vec(), relative_volumes: values, std_dev: sd, values: vec![vec![]; TAUS.len()] };
        prop_assert!(detect_nonmarkovianity(&s, sigmas).is_empty());
    }

    #[test]
    fn planted_revival_is_found(seed in any::<u64>(), at in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = TAUS.iter().map(|t| 0.5 * (-t / 10.0).exp()).collect();
        let sd: Vec<f64> = values.iter().map(|_| rng.random_range(0.001..0.01)).collect();
        let spread = (sd[at - 1].powi(2) + sd[at].powi(2)).sqrt();
        values[at] = values[at - 1] + 3.0 * spread * rng.random_range(1.01..2.0);
        // Keep the next step a decrease so only the planted interval is flagged.
        for t in at + 1..values.len() {
            values[t] = values[t].min(values[t - 1] * 0.9);
        }
        let s = VolumeSeries { taus: TAUS.to_vec(), relative_volumes: values, std_dev: sd, values: vec![vec![]; TAUS.len()] };
        prop_assert_eq!(detect_nonmarkovianity(&s, 3.0), vec![(TAUS[at - 1], TAUS[at])]);
    }

    #[test]
    fn relative_volumes_are_affine_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = loop {
            let m = nalgebra::Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0f64));
            if m.determinant().abs() > 0.1 { break m; }
        };
        let shift = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0f64));
        let outer: Vec<[f64; 3]> = cube().iter().map(|p| [3.0 * p[0] - 1.0, 3.0 * p[1] - 1.0, 3.0 * p[2] - 1.0]).collect();
        let inner: Vec<[f64; 3]> = (0..12).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let apply = |pts: &[[f64; 3]]| -> Vec<[f64; 3]> {
            pts.iter().map(|p| { let q = map * nalgebra::Vector3::from(*p) + shift; [q[0], q[1], q[2]] }).collect()
        };
        let before = relative_volumes(&[0.0], &[vec![inner.clone()]], &[outer.clone()]).unwrap();
        let after = relative_volumes(&[0.0], &[vec![apply(&inner)]], &[apply(&outer)]).unwrap();
        let (x, y) = (before.relative_volumes[0], after.relative_volumes[0]);
        prop_assert!((x - y).abs() <= 1e-9 * x, "{} vs {}", x, y);
    }
}
