use lyapunov_frames::dynamics::{builtin_field, default_initial_point, eval_jacobian, integrate_flow, integrate_variational, SolverConfig, BUILTIN_NAMES};
use lyapunov_frames::frame::{gram_schmidt, Frame};
use lyapunov_frames::linalg::Matrix;
use lyapunov_frames::standard::{solve_triangular, ReducedSystemTape};
use proptest::prelude::*;

fn start(name: &str) -> Vec<f64> {
    let x: Vec<f64> = default_initial_point(name).unwrap();
    if name.starts_with("linear") {
        x.iter().enumerate().map(|(i, _)| 0.3 - 0.2 * i as f64).collect()
    } else {
        x
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flow_semigroup(field in 0..BUILTIN_NAMES.len(), a in 0.05f64..1.0, b in 0.05f64..1.0) {
        let name = BUILTIN_NAMES[field];
        let f = builtin_field::<f64>(name).unwrap();
        let tol = 1e-9;
        let cfg = SolverConfig::adaptive(tol);
        let (s, t) = (a.min(b), a.max(b) + 0.05);
        let x0 = start(name);
        let mid = integrate_flow(f.as_ref(), &x0, (0.0, s), &cfg).unwrap().last_point().to_vec();
        let two = integrate_flow(f.as_ref(), &mid, (s, t), &cfg).unwrap().last_point().to_vec();
        let one = integrate_flow(f.as_ref(), &x0, (0.0, t), &cfg).unwrap().last_point().to_vec();
        let d: Vec<f64> = two.iter().zip(&one).map(|(p, q)| p - q).collect();
        prop_assert!(norm(&d) <= 10.0 * tol * norm(&one).max(1.0), "{name}: {:e}", norm(&d));
    }

    #[test]
    fn variational_error_is_quadratic(field in 0..BUILTIN_NAMES.len(), seed in 0u64..1000) {
        let name = BUILTIN_NAMES[field];
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let cfg = SolverConfig::fixed(1e-3);
        let x0 = start(name);
        let mut v: Vec<f64> = (0..n).map(|i| ((seed as f64 + 1.0) * (i as f64 + 1.7)).sin()).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|c| *c /= nv);
        let run = integrate_variational(f.as_ref(), &x0, &Matrix::identity(n), (0.0, 1.0), &cfg).unwrap();
        let phi = run.matrices.last().unwrap().mat_vec(&v);
        let base = run.tape.last_point().to_vec();
        let err = |eps: f64| {
            let xp: Vec<f64> = x0.iter().zip(&v).map(|(x, d)| x + eps * d).collect();
            let y = integrate_flow(f.as_ref(), &xp, (0.0, 1.0), &cfg).unwrap().last_point().to_vec();
            let r: Vec<f64> = (0..n).map(|k| y[k] - base[k] - eps * phi[k]).collect();
            norm(&r)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        if e1 > 1e-11 {
            prop_assert!(e1 / e2 >= 3.5, "{name}: {e1:e} / {e2:e}");
        }
    }

    #[test]
    fn gram_schmidt_reconstructs(n in 2usize..6, l_off in 0usize..4, entries in prop::collection::vec(-1.0f64..1.0, 36)) {
        let l = n - l_off.min(n - 1);
        let a = Matrix::from_fn(n, l, |i, j| entries[i * 6 + j] + if i == j { 2.0 } else { 0.0 });
        let gs = gram_schmidt(&Frame::new(a.clone()).unwrap()).unwrap();
        prop_assert!(gs.q.orthonormality_deviation() < 1e-10);
        let lhs = a.matmul(&gs.gamma);
        let rhs = gs.q.matmul(&Matrix::from_diagonal(&gs.zeta));
        prop_assert!(lhs.sub(&rhs).max_abs() < 1e-9 * a.max_abs().max(1.0));
        for k in 0..l {
            prop_assert!(gs.zeta[k] > 0.0);
            prop_assert!((gs.gamma[(k, k)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_solution_is_linear(c in prop::collection::vec(-1.0f64..1.0, 6), v in prop::collection::vec(-2.0f64..2.0, 3), w in prop::collection::vec(-2.0f64..2.0, 3), alpha in -3.0f64..3.0) {
        let a = Matrix::from_rows(&[vec![c[0], 0.0, 0.0], vec![c[1], c[2], 0.0], vec![c[3], c[4], c[5]]]);
        let sys = ReducedSystemTape::constant(&a, 3.0, 0.01).unwrap();
        let comb: Vec<f64> = v.iter().zip(&w).map(|(p, q)| alpha * p + q).collect();
        let yv = solve_triangular(&sys, &v, 3.0).unwrap();
        let yw = solve_triangular(&sys, &w, 3.0).unwrap();
        let yc = solve_triangular(&sys, &comb, 3.0).unwrap();
        let last = yv.len() - 1;
        let (a1, b1, c1) = (yv.y_at(last), yw.y_at(last), yc.y_at(last));
        let scale = norm(&a1).max(norm(&b1)).max(1.0) * (1.0 + alpha.abs());
        for k in 0..3 {
            prop_assert!((c1[k] - alpha * a1[k] - b1[k]).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn determinant_law_on_builtins() {
    let cfg = SolverConfig::fixed(1e-3);
    for &name in BUILTIN_NAMES {
        let f = builtin_field::<f64>(name).unwrap();
        let n = f.dim();
        let t = if name == "lorenz" { 1.0 } else { 2.0 };
        let run = integrate_variational(f.as_ref(), &start(name), &Matrix::identity(n), (0.0, t), &cfg).unwrap();
        let traces: Vec<f64> = (0..run.tape.len()).map(|i| eval_jacobian(f.as_ref(), run.tape.point(i)).unwrap().trace()).collect();
        let mut integral = 0.0;
        for i in 1..traces.len() {
            integral += 0.5 * (run.tape.time(i) - run.tape.time(i - 1)) * (traces[i] + traces[i - 1]);
        }
        let logdet = run.matrices.last().unwrap().det().ln();
        assert!((logdet - integral).abs() <= 1e-4 * integral.abs().max(1.0), "{name}: {logdet} vs {integral}");
    }
}
