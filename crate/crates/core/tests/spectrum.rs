mod common;

use common::benettin;
use lyapunov_frames::dynamics::{builtin_field, default_initial_point, integrate_flow, SolverConfig};
use lyapunov_frames::frame::{evolve_frame, random_orthonormal_frame, FrameOptions};
use lyapunov_frames::spectrum::{classify_zero, estimate_from_run, estimate_spectrum, ExponentClass};

fn cfg() -> SolverConfig<f64> {
    SolverConfig::fixed(1e-3)
}

#[test]
fn diagonal_spectrum_exact() {
    let f = builtin_field::<f64>("linear_diag:2,0,-1").unwrap();
    let est = estimate_spectrum(f.as_ref(), &[0.0; 3], 3, 100.0, 10.0, &cfg(), 1).unwrap();
    for (v, e) in est.values.iter().zip([2.0, 0.0, -1.0]) {
        assert!((v - e).abs() < 1e-6, "{:?}", est.values);
    }
    assert_eq!(est.classification, vec![ExponentClass::Nonzero, ExponentClass::Zero, ExponentClass::Nonzero]);
    let c = classify_zero(&est, 0.05).unwrap();
    assert_eq!(c.selected, vec![0, 2]);
    assert!(est.differences_nonincreasing(3));
    assert_eq!(est.ascending(), est.values.iter().rev().copied().collect::<Vec<_>>());
}

#[test]
fn nonnormal_spectrum() {
    let f = builtin_field::<f64>("linear_nonnormal").unwrap();
    let est = estimate_spectrum(f.as_ref(), &[0.0, 0.0], 2, 200.0, 20.0, &cfg(), 2).unwrap();
    assert!((est.values[0] - 1.0).abs() < 1e-3 && (est.values[1] + 1.0).abs() < 1e-3, "{:?}", est.values);
}

#[test]
fn sorted_report_matches_directions() {
    let f = builtin_field::<f64>("vanderpol:1").unwrap();
    let q0 = random_orthonormal_frame(2, 2, 5).unwrap();
    let run = evolve_frame(f.as_ref(), &[2.0, 0.0], &q0, 50.0, &cfg(), &FrameOptions::default()).unwrap();
    let est = estimate_from_run(&run, 5.0).unwrap();
    let mut sorted = est.per_direction.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert_eq!(sorted, est.values);
    for (i, &o) in est.order.iter().enumerate() {
        assert_eq!(est.values[i], est.per_direction[o]);
    }
    let t: Vec<f64> = est.history.iter().map(|h| h.0).collect();
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*t.last().unwrap(), 50.0);
}

#[test]
fn backward_exponents_by_negative_time() {
    let f = builtin_field::<f64>("linear_nonnormal").unwrap();
    let est = estimate_spectrum(f.as_ref(), &[0.0, 0.0], 2, -100.0, 10.0, &cfg(), 3).unwrap();
    // rates per unit of signed time are the forward exponents again
    assert!((est.values[0] - 1.0).abs() < 1e-3 && (est.values[1] + 1.0).abs() < 1e-3, "{:?}", est.values);
}

#[test]
fn lorenz_spectrum_against_discrete_oracle() {
    let f = builtin_field::<f64>("lorenz").unwrap();
    let x0 = default_initial_point("lorenz").unwrap();
    let settle = integrate_flow(f.as_ref(), &x0, (0.0, 20.0), &cfg()).unwrap();
    let x = settle.last_point().to_vec();
    let est = estimate_spectrum(f.as_ref(), &x, 3, 300.0, 30.0, &cfg(), 11).unwrap();
    let q0 = random_orthonormal_frame::<f64>(3, 3, 11).unwrap();
    let cols: Vec<Vec<f64>> = (0..3).map(|j| q0.column(j)).collect();
    // the oracle runs burn-in then measures, with per-step Gram–Schmidt
    let (xb, cb, _) = benettin(f.as_ref(), &x, cols, 30.0, 1e-3);
    let (_, _, acc) = benettin(f.as_ref(), &xb, cb, 270.0, 1e-3);
    let mut oracle: Vec<f64> = acc.iter().map(|a| a / 270.0).collect();
    oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // separate chaotic runs only agree statistically at this horizon
    for k in 0..3 {
        assert!((est.values[k] - oracle[k]).abs() < 0.05, "{:?} vs {oracle:?}", est.values);
    }
    assert!((est.values[0] - 0.906).abs() < 0.0906);
    let sum: f64 = est.values.iter().sum();
    assert!((sum / (-41.0 / 3.0) - 1.0).abs() < 0.01);
}

#[test]
fn single_precision_pipeline() {
    let f = lyapunov_frames::builtin_field::<f32>("linear_nonnormal").unwrap();
    let est: lyapunov_frames::ExponentEstimate32 =
        lyapunov_frames::estimate_spectrum(f.as_ref(), &[0.0f32, 0.0], 2, 60.0, 10.0, &lyapunov_frames::SolverConfig32::fixed(1e-2), 3).unwrap();
    assert!((est.values[0] - 1.0).abs() < 1e-3 && (est.values[1] + 1.0).abs() < 1e-3, "{:?}", est.values);
    let sys = lyapunov_frames::ReducedSystemTape32::constant(&lyapunov_frames::Matrix32::from_diagonal(&[-0.5, 1.5]), 40.0, 0.01).unwrap();
    let e = lyapunov_frames::standard::exponents_of_reduced(&sys, 40.0).unwrap();
    assert!((e[0] + 0.5).abs() < 1e-4 && (e[1] - 1.5).abs() < 1e-4, "{e:?}");
}
