mod common;

use common::{benettin, mgs, pseudo_random, tangent_rk4};
use lyapunov_frames::dynamics::{builtin_field, integrate_flow, eval_jacobian, SolverConfig};
use lyapunov_frames::frame::{coupling_index, coupling_values, evolve_frame, omega_values, random_orthonormal_frame, FrameOptions};
use lyapunov_frames::linalg::Matrix;

fn cfg() -> SolverConfig<f64> {
    SolverConfig::fixed(1e-3)
}

fn columns(q: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..q.cols()).map(|j| q.column(j)).collect()
}

#[test]
fn rotation_frame_is_isometric() {
    let f = builtin_field::<f64>("rotation").unwrap();
    let t = 2.0 * std::f64::consts::PI;
    let run = evolve_frame(f.as_ref(), &[1.0, 0.0], &Matrix::identity(2), t, &cfg(), &FrameOptions::default()).unwrap();
    assert!(run.final_state.log_zeta.iter().all(|v| v.abs() < 1e-6));
    assert!(run.final_state.q.sub(&Matrix::identity(2)).max_abs() < 1e-6);
}

#[test]
fn diagonal_ledger() {
    let f = builtin_field::<f64>("linear_diag:2,-1").unwrap();
    let run = evolve_frame(f.as_ref(), &[0.1, 0.1], &Matrix::identity(2), 3.0, &cfg(), &FrameOptions::default()).unwrap();
    let lz = &run.final_state.log_zeta;
    assert!((lz[0] - 6.0).abs() < 1e-6 && (lz[1] + 3.0).abs() < 1e-6, "{lz:?}");
}

#[test]
fn lorenz_volume_contraction() {
    let f = builtin_field::<f64>("lorenz").unwrap();
    let q0 = random_orthonormal_frame(3, 3, 42).unwrap();
    let run = evolve_frame(f.as_ref(), &[1.0, 1.0, 1.0], &q0, 100.0, &cfg(), &FrameOptions::default()).unwrap();
    let sum: f64 = run.final_state.log_zeta.iter().sum::<f64>() / 100.0;
    assert!((sum / (-41.0 / 3.0) - 1.0).abs() < 0.01, "{sum}");
}

#[test]
fn omega_matches_short_time_oracle() {
    // ω_k = d/dt log ζ_k at t = 0, compared with an exact short variational step.
    for (name, x) in [("lorenz", vec![1.3, -0.4, 20.0]), ("vanderpol:1", vec![0.7, -1.1]), ("linear_nonnormal", vec![0.2, 0.3])] {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        for seed in 0..3 {
            let q = random_orthonormal_frame(n, n, seed).unwrap();
            let omega = omega_values(f.as_ref(), &x, &q).unwrap();
            let coup = coupling_values(f.as_ref(), &x, &q).unwrap();
            let mut errs = Vec::new();
            for dt in [1e-4, 5e-5] {
                let mut xs = x.clone();
                let mut cols = columns(&q);
                tangent_rk4(f.as_ref(), &mut xs, &mut cols, dt);
                let (z, r) = mgs(&mut cols);
                let mut e: f64 = 0.0;
                for k in 0..n {
                    e = e.max((z[k].ln() / dt - omega[k]).abs());
                }
                // B(δt) ≈ R; (B − I)/δt gives the upper factor U, r_jk = U_kj
                for j in 1..n {
                    for k in 0..j {
                        e = e.max((r[k][j] / dt - coup[coupling_index(j, k)]).abs());
                    }
                }
                errs.push(e);
            }
            let scale = eval_jacobian(f.as_ref(), &x).unwrap().spectral_norm();
            assert!(errs[0] < 1e-4 * scale.powi(2).max(1.0) * 10.0, "{name}: {errs:?}");
            assert!(errs[1] < 0.6 * errs[0] || errs[1] < 1e-9, "{name}: not first order {errs:?}");
        }
    }
}

#[test]
fn coupling_matches_random_oracle() {
    let f = builtin_field::<f64>("lorenz").unwrap();
    for seed in 0..5u64 {
        let p = pseudo_random(seed, 3);
        let x: Vec<f64> = vec![10.0 * p[0], 10.0 * p[1], 25.0 + 10.0 * p[2]];
        let q = random_orthonormal_frame(3, 3, 100 + seed).unwrap();
        let coup = coupling_values(f.as_ref(), &x, &q).unwrap();
        let dt = 1e-7;
        let mut xs = x.clone();
        let mut cols = columns(&q);
        tangent_rk4(f.as_ref(), &mut xs, &mut cols, dt);
        let (_, r) = mgs(&mut cols);
        for j in 1..3 {
            for k in 0..j {
                assert!((r[k][j] / dt - coup[coupling_index(j, k)]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn continuous_flow_matches_discrete_qr() {
    for (name, x0) in [("lorenz", vec![1.0, 1.0, 1.0]), ("vanderpol:1", vec![2.0, 0.0]), ("linear_nonnormal", vec![1.0, 0.0]), ("harmonic:1", vec![1.0, 0.0])] {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let q0 = random_orthonormal_frame(n, n, 9).unwrap();
        let run = evolve_frame(f.as_ref(), &x0, &q0, 10.0, &cfg(), &FrameOptions::default()).unwrap();
        let (_, cols, lz) = benettin(f.as_ref(), &x0, columns(&q0), 10.0, 1e-3);
        for k in 0..n {
            assert!((lz[k] - run.final_state.log_zeta[k]).abs() < 1e-6, "{name} log zeta {k}: {} vs {}", lz[k], run.final_state.log_zeta[k]);
            let qk = run.final_state.q.column(k);
            let d = qk.iter().zip(&cols[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-6, "{name} column {k}: {d}");
        }
    }
}

#[test]
fn ledger_equals_omega_integral() {
    for name in ["lorenz", "vanderpol:1", "linear_nonnormal", "linear_diag:2,0,-1", "rotation"] {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let x0 = lyapunov_frames::dynamics::default_initial_point(name).unwrap();
        let q0 = random_orthonormal_frame(n, n, 3).unwrap();
        let t = 50.0;
        let run = evolve_frame(f.as_ref(), &x0, &q0, t, &cfg(), &FrameOptions::default()).unwrap();
        for k in 0..n {
            let integral = run.tape.integral(k, 0.0, t).unwrap();
            let diff = (run.final_state.log_zeta[k] - integral).abs();
            assert!(diff <= 1e-5 * (1.0 + t), "{name} k={k}: {diff}");
        }
    }
}

#[test]
fn cocycle_and_equivariance() {
    let f = builtin_field::<f64>("lorenz").unwrap();
    let q0 = random_orthonormal_frame(3, 2, 5).unwrap();
    let x0 = [1.0, 1.0, 1.0];
    let opts = FrameOptions::default();
    let whole = evolve_frame(f.as_ref(), &x0, &q0, 4.0, &cfg(), &opts).unwrap();
    let first = evolve_frame(f.as_ref(), &x0, &q0, 1.5, &cfg(), &opts).unwrap();
    let second = evolve_frame(f.as_ref(), &first.final_state.x, &first.final_state.q, 2.5, &cfg(), &opts).unwrap();
    assert!(second.final_state.q.sub(&whole.final_state.q).max_abs() < 1e-6);
    for k in 0..2 {
        let joined = first.final_state.log_zeta[k] + second.final_state.log_zeta[k];
        assert!((joined - whole.final_state.log_zeta[k]).abs() < 1e-6);
    }
    let flow = integrate_flow(f.as_ref(), &x0, (0.0, 4.0), &cfg()).unwrap();
    let base = whole.tape.base().unwrap();
    assert_eq!(flow.len(), base.len());
    for i in 0..flow.len() {
        for (a, b) in flow.point(i).iter().zip(base.point(i)) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn full_frame_trace_identity() {
    for name in ["lorenz", "vanderpol:1", "linear_nonnormal"] {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let x0 = lyapunov_frames::dynamics::default_initial_point(name).unwrap();
        let q0 = random_orthonormal_frame(n, n, 1).unwrap();
        let run = evolve_frame(f.as_ref(), &x0, &q0, 5.0, &cfg(), &FrameOptions::default()).unwrap();
        let base = run.tape.base().unwrap();
        for i in 0..run.tape.len() {
            let s: f64 = run.tape.omega_at(i).iter().sum();
            let tr = eval_jacobian(f.as_ref(), base.point(i)).unwrap().trace();
            assert!((s - tr).abs() < 1e-8 * (1.0 + tr.abs()), "{name} at {i}: {s} vs {tr}");
        }
    }
}

#[test]
fn tape_entries_bounded_by_jacobian_norm() {
    for name in ["lorenz", "vanderpol:1", "linear_nonnormal", "rotation"] {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let x0 = lyapunov_frames::dynamics::default_initial_point(name).unwrap();
        let q0 = random_orthonormal_frame(n, n, 2).unwrap();
        let run = evolve_frame(f.as_ref(), &x0, &q0, 5.0, &SolverConfig::fixed(1e-3).with_stride(1e-2), &FrameOptions::default()).unwrap();
        let bound = run.tape.jacobian_norm_max(f.as_ref()).unwrap();
        assert!(run.tape.max_abs_entry() <= 2.0 * bound);
    }
}

#[test]
fn backward_run_ledger_and_ordering() {
    let f = builtin_field::<f64>("linear_diag:2,-1").unwrap();
    let q0 = random_orthonormal_frame(2, 2, 4).unwrap();
    let run = evolve_frame(f.as_ref(), &[0.0, 0.0], &q0, -20.0, &cfg(), &FrameOptions::default()).unwrap();
    // backward growth: first direction picks the most contracting forward rate
    let rates: Vec<f64> = run.final_state.log_zeta.iter().map(|v| v / -20.0).collect();
    assert!((rates[0] + 1.0).abs() < 0.05 && (rates[1] - 2.0).abs() < 0.05, "{rates:?}");
    assert!(run.tape.times().windows(2).all(|w| w[1] > w[0]));
    assert_eq!(run.tape.times()[0], -20.0);
}

#[test]
fn kept_frames_are_orthonormal() {
    let f = builtin_field::<f64>("vanderpol:1").unwrap();
    let q0 = random_orthonormal_frame(2, 1, 8).unwrap();
    let opts = FrameOptions { keep_frames: true, ..FrameOptions::default() };
    let run = evolve_frame(f.as_ref(), &[2.0, 0.0], &q0, 1.0, &SolverConfig::fixed(1e-3).with_stride(0.1), &opts).unwrap();
    assert_eq!(run.tape.len(), 11);
    for i in 0..run.tape.len() {
        let s = run.state(i).unwrap();
        assert!(s.q.orthonormality_deviation() < 1e-9);
    }
    assert_eq!(run.state(0).unwrap().log_zeta, vec![0.0]);
}
