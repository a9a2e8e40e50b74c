use std::sync::Arc;

use gtdd::bench::cases::{manufactured_source_test1, sine_cell_average, test1_problem, test2_problem};
use gtdd::interface::{DdOptions, DdProblem, JacobiOptions, Method, WindowIteration};
use gtdd::propagate::{solve_monodomain, RobinParameters, SpaceTimeSolution, Store};
use gtdd::timegrid::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METHODS: [Method; 3] = [Method::Schur, Method::SchurNn, Method::Robin];

fn with_robin(mut dd: DdProblem, alpha: f64) -> DdProblem {
    dd.robin = Some(RobinParameters::uniform(&dd.dec, alpha).unwrap());
    dd
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn flat(phi: &[[f64; 4]]) -> Vec<f64> {
    phi.iter().flatten().copied().collect()
}

/// Dense matrix of a linear map by unit vectors.
fn dense(dd: &DdProblem, method: Method) -> Vec<Vec<f64>> {
    let n = dd.interface_weights(method).len();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            dd.interface_apply(method, &e).unwrap()
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on the column-major `cols`.
fn dense_solve(cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cols[j][i]).chain([b[i]]).collect()).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..=n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][n] - s) / a[i][i];
    }
    x
}

#[test]
fn operators_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dd = with_robin(test1_problem(6, [3, 2], 0.1).unwrap(), 2.0);
    for m in METHODS {
        let n = dd.interface_weights(m).len();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let comb: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let lhs = dd.interface_apply(m, &comb).unwrap();
        let ax = dd.interface_apply(m, &x).unwrap();
        let ay = dd.interface_apply(m, &y).unwrap();
        for i in 0..n {
            let rhs = a * ax[i] + b * ay[i];
            assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{m:?} {i}");
        }
    }
}

#[test]
fn gmres_matches_dense_oracle() {
    for steps in [[2, 2], [2, 3]] {
        let dd = with_robin(test1_problem(4, steps, 0.1).unwrap(), 1.5);
        for m in [Method::Schur, Method::Robin] {
            let cols = dense(&dd, m);
            let b = dd.interface_rhs(m).unwrap();
            let x_ref = dense_solve(&cols, &b);
            let opts = DdOptions {
                tol: 1e-12,
                ..Default::default()
            };
            let sol = dd.solve_gmres(m, &opts, None).unwrap();
            assert!(sol.report.converged);
            assert!(sol.report.iterations <= b.len(), "{m:?}: {} > {}", sol.report.iterations, b.len());
            assert!(rel_l2(&sol.interface, &x_ref) < 1e-9, "{m:?} {steps:?}");
        }
    }
}

fn monodomain_of_test1(n: usize, steps: usize, horizon: f64) -> SpaceTimeSolution {
    let dd = test1_problem(n, [steps, steps], horizon).unwrap();
    let c0: Vec<f64> = dd
        .mesh
        .elements
        .iter()
        .map(|e| {
            let (x0, x1) = e.x_range();
            let (y0, y1) = e.y_range();
            sine_cell_average(x0, x1, y0, y1)
        })
        .collect();
    solve_monodomain(
        dd.mesh.clone(),
        dd.coeffs.clone(),
        Some(Arc::new(manufactured_source_test1)),
        &c0,
        TimeGrid::uniform(horizon, steps).unwrap(),
        Store::Final,
    )
    .unwrap()
}

#[test]
fn conforming_methods_reproduce_monodomain() {
    let mono = monodomain_of_test1(10, 5, 0.1);
    let st = mono.final_state();
    let dd = with_robin(test1_problem(10, [5, 5], 0.1).unwrap(), 3.0);
    let opts = DdOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let mut fields = Vec::new();
    for m in METHODS {
        let sol = dd.solve_gmres(m, &opts, None).unwrap();
        assert!(sol.report.converged, "{m:?}");
        let (c, phi) = dd.global_fields(&sol.subdomains);
        assert!(rel_l2(&c, &st.c) < 1e-8, "{m:?} c {}", rel_l2(&c, &st.c));
        assert!(rel_l2(&flat(&phi), &flat(&st.phi)) < 1e-8, "{m:?} phi");
        fields.push(c);
    }
    assert!(rel_l2(&fields[0], &fields[2]) < 1e-8);

    let jac = dd
        .oswr_jacobi(
            &dd.robin_zero(),
            None,
            &JacobiOptions {
                tol: 1e-10,
                max_iter: 400,
                ..Default::default()
            },
        )
        .unwrap();
    assert!(jac.report.converged);
    let (c, _) = dd.global_fields(&jac.subdomains);
    assert!(rel_l2(&c, &st.c) < 1e-8);
}

#[test]
fn schur_flux_jump_vanishes_at_convergence() {
    let dd = test1_problem(8, [4, 4], 0.1).unwrap();
    let sol = dd
        .solve_gmres(
            Method::SchurNn,
            &DdOptions {
                tol: 1e-10,
                ..Default::default()
            },
            None,
        )
        .unwrap();
    let (_, phi) = dd.global_fields(&sol.subdomains);
    let scale = phi.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for f in &dd.dec.interfaces {
        for (&e, &(a, b)) in f.edges.iter().zip(&f.elements) {
            let sa = dd.mesh.elements[a].edges.iter().position(|&g| g == e).unwrap();
            let sb = dd.mesh.elements[b].edges.iter().position(|&g| g == e).unwrap();
            assert!((phi[a][sa] + phi[b][sb]).abs() <= 1e-8 * scale);
        }
    }
}

#[test]
fn nonconforming_methods_differ_but_both_converge() {
    let dd = with_robin(test1_problem(8, [6, 4], 0.1).unwrap(), 3.0);
    let opts = DdOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let a = dd.solve_gmres(Method::SchurNn, &opts, None).unwrap();
    let b = dd.solve_gmres(Method::Robin, &opts, None).unwrap();
    assert!(a.report.converged && b.report.converged);
    let (ca, _) = dd.global_fields(&a.subdomains);
    let (cb, _) = dd.global_fields(&b.subdomains);
    let d = rel_l2(&ca, &cb);
    assert!(d > 1e-10 && d < 0.05, "{d}");
}

#[test]
fn windows_agree_with_a_single_window() {
    let horizon = 0.1;
    let mono = monodomain_of_test1(8, 8, horizon);
    let mut dd = test1_problem(8, [8, 8], horizon).unwrap();
    let opts = DdOptions {
        tol: 1e-11,
        ..Default::default()
    };
    let rep = dd.run_time_windows(2, WindowIteration::Gmres(Method::SchurNn, opts), &[0]).unwrap();
    assert!(rep.converged());
    assert_eq!(rep.windows.len(), 2);
    assert_eq!(rep.mass.len(), 3);
    assert_eq!(rep.snapshots.len(), 1);
    assert!((rep.snapshots[0].0 - 0.05).abs() < 1e-15);
    assert!(rel_l2(&rep.final_c, &mono.final_state().c) < 1e-8);
    // Grids and offsets are restored.
    assert!((dd.horizon() - horizon).abs() < 1e-15);
    assert_eq!(dd.subs[0].grid.len(), 8);
}

#[test]
fn windows_must_fall_on_grid_points() {
    let mut dd = test1_problem(4, [3, 2], 0.1).unwrap();
    let err = dd
        .run_time_windows(2, WindowIteration::Gmres(Method::Schur, DdOptions::default()), &[])
        .unwrap_err();
    assert!(matches!(err, gtdd::Error::GridMismatch(_)), "{err}");
}

#[test]
fn jacobi_fixed_iterations_and_monotone_b() {
    let mut dd = test2_problem('a', 8, [4, 3], 1.0).unwrap();
    dd.robin = Some(RobinParameters::uniform(&dd.dec, 1.0).unwrap());
    let z0 = dd.robin_from_vec(&dd.random_guess(Method::Robin, 7));
    let opts = JacobiOptions {
        tol: 1e-30,
        max_iter: 12,
        fixed_iterations: true,
        ..Default::default()
    };
    let r = dd.oswr_jacobi(&z0, None, &opts).unwrap();
    assert_eq!(r.report.iterations, 12);
    for w in r.b_history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
    }
}

#[test]
fn random_guess_is_reproducible() {
    let dd = test2_problem('c', 4, [2, 2], 1.0).unwrap();
    assert_eq!(dd.random_guess(Method::Schur, 5), dd.random_guess(Method::Schur, 5));
    assert_ne!(dd.random_guess(Method::Schur, 5), dd.random_guess(Method::Schur, 6));
    assert!(dd.random_guess(Method::Robin, 1).iter().all(|v| (-1.0..=1.0).contains(v)));
}
