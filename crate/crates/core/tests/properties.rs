use gtdd::bench::cases::{test1_problem, test2_problem};
use gtdd::geometry::{BoundarySpec, Decomposition, Mesh, Rect};
use gtdd::interface::Method;
use gtdd::linsolve::{gmres, gmres_plain, GmresOptions};
use gtdd::mhfe::{local_mass_matrix, upwind_value, UpwindMode};
use gtdd::optim::{convergence_factor, optimize_parameters, InterfaceModel, SideModel};
use gtdd::propagate::{solve_dirichlet, solve_robin, InterfaceTrace, RobinParameters, Store, TraceKind};
use gtdd::timegrid::{TimeGrid, TimeSeries};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = TimeGrid> {
    prop::collection::vec(0.05f64..1.0, 1..12).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let mut pts = vec![0.0];
        let mut t = 0.0;
        for v in &w {
            t += v / total;
            pts.push(t);
        }
        *pts.last_mut().unwrap() = 1.0;
        TimeGrid::new(pts).unwrap()
    })
}

fn series(grid: TimeGrid, seed: &[f64]) -> TimeSeries {
    let n = grid.len();
    let v = (0..n).map(|m| seed[m % seed.len()] * (1.0 + m as f64).sin()).collect();
    TimeSeries::scalar(grid, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_preserves_integral_and_contracts(
        src in grid_strategy(),
        dst in grid_strategy(),
        seed in prop::collection::vec(-5.0f64..5.0, 1..6),
    ) {
        let s = series(src, &seed);
        let p = s.project(&dst).unwrap();
        let (i0, i1) = (s.integral()[0], p.integral()[0]);
        let scale = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        prop_assert!((i0 - i1).abs() <= 1e-12 * scale);
        prop_assert!(p.l2_norm() <= s.l2_norm() * (1.0 + 1e-12));
        let same = s.project(&s.grid.clone()).unwrap();
        prop_assert_eq!(same.values, s.values.clone());
    }

    #[test]
    fn projection_is_linear(
        src in grid_strategy(),
        dst in grid_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let x = series(src.clone(), &[1.0, -2.0, 0.5]);
        let y = series(src, &[0.3, 4.0]);
        let mut comb = x.clone();
        comb.scale(a);
        comb.axpy(b, &y);
        let lhs = comb.project(&dst).unwrap();
        let px = x.project(&dst).unwrap();
        let py = y.project(&dst).unwrap();
        for (k, v) in lhs.values.iter().enumerate() {
            let r = a * px.values[k] + b * py.values[k];
            prop_assert!((v - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn decomposition_counts(
        nx in 2usize..9,
        ny in 2usize..9,
        sx in 1usize..8,
        sy in 1usize..8,
    ) {
        let sx = 1 + sx % (nx - 1);
        let sy = 1 + sy % (ny - 1);
        let mesh = Mesh::uniform((0.0, 1.0), (0.0, 2.0), nx, ny, BoundarySpec::default()).unwrap();
        let xm = sx as f64 / nx as f64;
        let ym = 2.0 * sy as f64 / ny as f64;
        let boxes = [
            Rect::new(0.0, xm, 0.0, ym),
            Rect::new(xm, 1.0, 0.0, ym),
            Rect::new(0.0, 1.0, ym, 2.0),
        ];
        let dec = Decomposition::new(&mesh, &boxes).unwrap();
        let total: usize = dec.subdomains.iter().map(|s| s.elements.len()).sum();
        prop_assert_eq!(total, mesh.n_elements());
        for f in &dec.interfaces {
            prop_assert!(f.pair.0 < f.pair.1);
            for &(a, b) in &f.elements {
                prop_assert_eq!(dec.owner[a], f.pair.0);
                prop_assert_eq!(dec.owner[b], f.pair.1);
            }
        }
        let n_if: usize = dec.interfaces.iter().map(|f| f.edges.len()).sum();
        prop_assert_eq!(n_if, nx + sy);
    }

    #[test]
    fn local_mass_matrix_is_spd(dx in 1e-3f64..10.0, dy in 1e-3f64..10.0, d in 1e-6f64..1e4) {
        let a = local_mass_matrix(dx, dy, d).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((a[i][j] - a[j][i]).abs() <= 1e-14 * a[i][i].abs());
            }
        }
        // Cholesky succeeds.
        let mut l = [[0.0f64; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let v = a[i][i] - s;
                    prop_assert!(v > 0.0);
                    l[i][i] = v.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
    }

    #[test]
    fn upwind_value_bound(c in -10.0f64..10.0, th in -10.0f64..10.0, u in -5.0f64..5.0) {
        let full = upwind_value(c, th, u, UpwindMode::FullUpwind);
        let centered = upwind_value(c, th, u, UpwindMode::CenteredTheta);
        prop_assert!((full - c).abs() <= 2.0 * (th - c).abs() + 1e-12);
        prop_assert!((centered - c).abs() <= (th - c).abs() + 1e-12);
    }

    #[test]
    fn gmres_small_dense_within_n(n in 1usize..8, seed in prop::collection::vec(-1.0f64..1.0, 64)) {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| seed[(i * 8 + j) % 64] + if i == j { 3.0 } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = (0..n).map(|i| seed[(i * 7 + 3) % 64] + 0.5).collect();
        let apply = |x: &[f64]| -> gtdd::Result<Vec<f64>> {
            Ok(a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect())
        };
        let opts = GmresOptions { tol: 1e-10, max_iter: 50, restart: None };
        let (_, rep) = gmres_plain(apply, &b, &vec![0.0; n], &opts).unwrap();
        prop_assert!(rep.converged);
        prop_assert!(rep.iterations <= n);
    }

    #[test]
    fn gmres_exact_preconditioner_one_step(d in prop::collection::vec(0.1f64..10.0, 1..10)) {
        let n = d.len();
        let apply = |x: &[f64]| -> gtdd::Result<Vec<f64>> { Ok(x.iter().zip(&d).map(|(x, d)| x * d).collect()) };
        let prec = |x: &[f64]| -> gtdd::Result<Vec<f64>> { Ok(x.iter().zip(&d).map(|(x, d)| x / d).collect()) };
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let opts = GmresOptions { tol: 1e-12, max_iter: 20, restart: None };
        let (_, rep) = gmres(apply, &b, &vec![0.0; n], &opts, Some(prec)).unwrap();
        prop_assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn convergence_factor_symmetry(
        d1 in 0.01f64..2.0, d2 in 0.01f64..2.0,
        a1 in -1.0f64..1.0, a2 in -1.0f64..1.0,
        p in 0.01f64..20.0, q in 0.01f64..20.0,
        xi in 1.0f64..1000.0,
    ) {
        let side = |d, a| SideModel { d, omega: 1.0, a_normal: a, a_tangential: 0.0 };
        let m = InterfaceModel::new([side(d1, a1), side(d2, a2)], 1.0, 0.001).unwrap();
        let r = convergence_factor(&m, p, q, xi).unwrap();
        let s = convergence_factor(&m.swapped(), q, p, xi).unwrap();
        prop_assert!((r - s).abs() <= 1e-12 * (1.0 + r));
        if a1 == 0.0 && a2 == 0.0 && d1 == d2 {
            prop_assert!(convergence_factor(&m, p, p, xi).unwrap() < 1.0);
        }
    }

    #[test]
    fn symmetric_diffusion_equal_parameters_contract(d in 0.01f64..5.0, p in 0.01f64..50.0, xi in 0.1f64..1e4) {
        let side = SideModel { d, omega: 1.0, a_normal: 0.0, a_tangential: 0.0 };
        let m = InterfaceModel::new([side, side], 1.0, 1e-4).unwrap();
        prop_assert!(convergence_factor(&m, p, p, xi).unwrap() < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn optimizer_is_deterministic_and_relabel_invariant(
        d1 in 0.05f64..2.0, d2 in 0.05f64..2.0, a in -1.0f64..1.0,
    ) {
        let s1 = SideModel { d: d1, omega: 1.0, a_normal: a, a_tangential: 0.0 };
        let s2 = SideModel { d: d2, omega: 1.0, a_normal: -a, a_tangential: 0.0 };
        let m = InterfaceModel::new([s1, s2], 1.0, 0.01).unwrap();
        let p = optimize_parameters(&m);
        prop_assert_eq!(p, optimize_parameters(&m));
        let q = optimize_parameters(&m.swapped());
        prop_assert!((p.factor - q.factor).abs() <= 1e-6);
    }

    #[test]
    fn subdomain_solves_are_affine(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dd = test1_problem(6, [3, 2], 0.1).unwrap();
        let sub = &dd.subs[1];
        let w = sub.n_slots();
        let grid = sub.grid.clone();
        let mut draw = |kind| InterfaceTrace {
            kind,
            series: TimeSeries::from_values(grid.clone(), w, (0..grid.len() * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        };
        let (x, y) = (draw(TraceKind::Dirichlet), draw(TraceKind::Dirichlet));
        let mut sum = x.clone();
        sum.series.axpy(1.0, &y.series);
        let zero = InterfaceTrace::zeros(TraceKind::Dirichlet, grid.clone(), w);
        let out = |t: &InterfaceTrace| solve_dirichlet(sub, t, true, Store::Final).unwrap().1.series.values;
        let (fx, fy, fs, f0) = (out(&x), out(&y), out(&sum), out(&zero));
        for k in 0..fs.len() {
            let r = fx[k] + fy[k] - f0[k];
            prop_assert!((fs[k] - r).abs() <= 1e-10 * (1.0 + r.abs()));
        }

        let params = RobinParameters::uniform(&dd.dec, 2.5).unwrap();
        let (x, y) = (draw(TraceKind::Robin), draw(TraceKind::Robin));
        let mut sum = x.clone();
        sum.series.axpy(1.0, &y.series);
        let zero = InterfaceTrace::zeros(TraceKind::Robin, grid.clone(), w);
        let out = |t: &InterfaceTrace| solve_robin(sub, t, &params, true, Store::Final).unwrap().1;
        let (rx, ry, rs, r0) = (out(&x), out(&y), out(&sum), out(&zero));
        prop_assert!(rs.series.grid.conforms_to(&grid));
        for k in 0..rs.series.values.len() {
            let r = rx.series.values[k] + ry.series.values[k] - r0.series.values[k];
            prop_assert!((rs.series.values[k] - r).abs() <= 1e-10 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn every_solve_conserves_mass(regime in prop::sample::select(vec!['a', 'b', 'c']), seed in 0u64..100) {
        let mut dd = test2_problem(regime, 8, [4, 3], 1.0).unwrap();
        dd.robin = Some(RobinParameters::uniform(&dd.dec, 1.0).unwrap());
        let x = dd.random_guess(Method::Robin, seed);
        let sols = dd.reconstruct(Method::Robin, &x, Store::All).unwrap();
        for s in &sols {
            prop_assert!(s.max_mass_defect <= 1e-10, "{}", s.max_mass_defect);
            prop_assert!(s.max_flux_jump <= 1e-10, "{}", s.max_flux_jump);
        }
    }
}
