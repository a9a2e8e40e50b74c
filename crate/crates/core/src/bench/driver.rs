//! Pipeline behind the command line: solve a configuration, measure it and
//! write the artifacts.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::cases::{exact_c_test1, exact_phi_test1};
use super::config::{CaseKind, MethodName, RunConfig, Setup};
use super::norms::{convergence_rate, error_norms, ErrorReport, Reference};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::interface::{DdOptions, DdProblem, JacobiOptions, WindowIteration};
use crate::linsolve::KrylovReport;
use crate::optim::{log_space, parameter_sweep, write_sweep_csv, SweepPoint};
use crate::propagate::{solve_monodomain, Store};
use crate::timegrid::TimeGrid;

/// Robin parameter used by subdomain `from` on its interface with `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobinEntry {
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub method: MethodName,
    pub converged: bool,
    pub windows: usize,
    pub iterations: usize,
    pub subdomain_solves: usize,
    /// Worst final relative residual over the windows.
    pub final_residual: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub robin: Vec<RobinEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorReport>,
    /// Reference used for `errors`: `exact` or `monodomain`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_reference: Option<String>,
    pub max_mass_defect: f64,
    pub max_flux_jump: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub darcy_max_divergence: Option<f64>,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub elapsed_seconds: f64,
}

/// Everything a run produces, also kept in memory for callers.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub final_c: Vec<f64>,
    pub final_phi: Vec<[f64; 4]>,
    /// One report per window; empty for the monodomain method.
    pub reports: Vec<KrylovReport>,
    /// `(time, total mass)` at `t = 0` and at every window end.
    pub mass: Vec<(f64, f64)>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

struct Solved {
    setup: Setup,
    final_c: Vec<f64>,
    final_phi: Vec<[f64; 4]>,
    reports: Vec<KrylovReport>,
    mass: Vec<(f64, f64)>,
    snapshots: Vec<(f64, Vec<f64>)>,
    robin: Vec<RobinEntry>,
    max_mass_defect: f64,
    max_flux_jump: f64,
}

fn total_mass(mesh: &Mesh, omega: &[f64], c: &[f64]) -> f64 {
    mesh.elements
        .iter()
        .zip(omega.iter().zip(c))
        .map(|(e, (w, c))| e.area * w * c)
        .sum()
}

/// Largest `|sum_E |E| u_KE|` over the elements.
pub fn max_divergence(mesh: &Mesh, u_edge: &[[f64; 4]]) -> f64 {
    mesh.elements
        .iter()
        .zip(u_edge)
        .map(|(el, u)| (0..4).map(|s| u[s] * mesh.edges[el.edges[s]].length).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

fn window_ends(cfg: &RunConfig) -> Vec<f64> {
    (1..=cfg.time.windows)
        .map(|w| cfg.time.horizon * w as f64 / cfg.time.windows as f64)
        .collect()
}

fn solve(cfg: &RunConfig) -> Result<Solved> {
    let setup = cfg.setup()?;
    let horizon = cfg.time.horizon;
    let ends = window_ends(cfg);
    let snap_tol = 1e-9 * horizon;
    let omega = setup.coeffs.omega.clone();
    let initial_mass = total_mass(&setup.mesh, &omega, &setup.c0);

    let Some(method) = cfg.solver.method.interface_method() else {
        let steps = cfg.steps_per_subdomain().into_iter().max().unwrap_or(1) * cfg.time.windows;
        let grid = TimeGrid::uniform(horizon, steps)?;
        let want_all = cfg.time.windows > 1 || !cfg.output.snapshots.is_empty();
        let store = if want_all { Store::All } else { Store::Final };
        let sol = solve_monodomain(
            setup.mesh.clone(),
            setup.coeffs.clone(),
            setup.source.clone(),
            &setup.c0,
            grid.clone(),
            store,
        )?;
        let at = |t: f64| -> Option<&[f64]> {
            let m = grid.points().iter().position(|&s| (s - t).abs() <= snap_tol)?;
            if m == 0 {
                return Some(&sol.initial);
            }
            sol.state(m - 1).map(|s| s.c.as_slice())
        };
        let mut mass = vec![(0.0, initial_mass)];
        for &t in &ends {
            if let Some(c) = at(t) {
                mass.push((t, total_mass(&setup.mesh, &omega, c)));
            }
        }
        let mut snapshots = Vec::new();
        for (i, &t) in cfg.output.snapshots.iter().enumerate() {
            let c = at(t).ok_or_else(|| {
                Error::config(format!("output.snapshots[{i}]"), format!("{t} is not a time point of the grid"))
            })?;
            snapshots.push((t, c.to_vec()));
        }
        let last = sol.final_state();
        return Ok(Solved {
            final_c: last.c.clone(),
            final_phi: last.phi.clone(),
            reports: Vec::new(),
            mass,
            snapshots,
            robin: Vec::new(),
            max_mass_defect: sol.max_mass_defect,
            max_flux_jump: sol.max_flux_jump,
            setup,
        });
    };

    let mut dd = cfg.dd_problem(&setup)?;
    let mut robin: Vec<RobinEntry> = dd
        .robin
        .as_ref()
        .map(|p| p.iter().map(|((from, to), alpha)| RobinEntry { from, to, alpha }).collect())
        .unwrap_or_default();
    robin.sort_by_key(|e| (e.from, e.to));

    let win = horizon / cfg.time.windows as f64;
    let keep: Vec<usize> = cfg
        .output
        .snapshots
        .iter()
        .map(|t| (t / win).round() as usize - 1)
        .collect();
    let jacobi = JacobiOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        ..Default::default()
    };
    let gmres = DdOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        restart: cfg.solver.restart,
        ..Default::default()
    };

    if cfg.solver.random_guess {
        let x0 = dd.random_guess(method, cfg.seed);
        let (report, sols) = if cfg.solver.method == MethodName::OswrJacobi {
            let r = dd.oswr_jacobi(&dd.robin_from_vec(&x0), None, &jacobi)?;
            (r.report, r.subdomains)
        } else {
            let s = dd.solve_gmres(method, &gmres, Some(&x0))?;
            (s.report, s.subdomains)
        };
        let (c, phi) = dd.global_fields(&sols);
        let snapshots = cfg.output.snapshots.iter().map(|&t| (t, c.clone())).collect();
        return Ok(Solved {
            mass: vec![(0.0, initial_mass), (horizon, total_mass(&setup.mesh, &omega, &c))],
            max_mass_defect: sols.iter().map(|s| s.max_mass_defect).fold(0.0, f64::max),
            max_flux_jump: sols.iter().map(|s| s.max_flux_jump).fold(0.0, f64::max),
            final_c: c,
            final_phi: phi,
            reports: vec![report],
            snapshots,
            robin,
            setup,
        });
    }

    let iteration = if cfg.solver.method == MethodName::OswrJacobi {
        WindowIteration::Jacobi(jacobi)
    } else {
        WindowIteration::Gmres(method, gmres)
    };
    let rep = dd.run_time_windows(cfg.time.windows, iteration, &keep)?;
    let mass = std::iter::once(0.0)
        .chain(ends.iter().copied())
        .zip(rep.mass.iter().copied())
        .collect();
    let mut snapshots = Vec::new();
    for &t in &cfg.output.snapshots {
        if let Some((_, c)) = rep.snapshots.iter().find(|(s, _)| (s - t).abs() <= snap_tol) {
            snapshots.push((t, c.clone()));
        }
    }
    Ok(Solved {
        final_c: rep.final_c,
        final_phi: rep.final_phi,
        reports: rep.windows,
        mass,
        snapshots,
        robin,
        max_mass_defect: rep.max_mass_defect,
        max_flux_jump: rep.max_flux_jump,
        setup,
    })
}

/// Errors at the final time: against the exact solution when the case has
/// one, otherwise against a monodomain solve on the finest time step.
fn final_errors(cfg: &RunConfig, solved: &Solved) -> Result<Option<(ErrorReport, &'static str)>> {
    let mesh = &solved.setup.mesh;
    let t = cfg.time.horizon;
    if cfg.case == CaseKind::Test1 {
        let c = move |x: f64, y: f64| exact_c_test1(x, y, t);
        let phi = move |x: f64, y: f64| exact_phi_test1(x, y, t);
        let r = error_norms(mesh, &solved.final_c, &solved.final_phi, &Reference::Exact { c: &c, phi: &phi });
        return Ok(Some((r, "exact")));
    }
    if cfg.solver.method == MethodName::Monodomain {
        return Ok(None);
    }
    let (c, phi) = monodomain_reference(cfg, &solved.setup, 1)?;
    let r = error_norms(mesh, &solved.final_c, &solved.final_phi, &Reference::Discrete { c: &c, phi: &phi });
    Ok(Some((r, "monodomain")))
}

/// Monodomain final state with `factor` times the finest subdomain step count.
fn monodomain_reference(cfg: &RunConfig, setup: &Setup, factor: usize) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let steps = cfg.steps_per_subdomain().into_iter().max().unwrap_or(1) * cfg.time.windows * factor;
    let sol = solve_monodomain(
        setup.mesh.clone(),
        setup.coeffs.clone(),
        setup.source.clone(),
        &setup.c0,
        TimeGrid::uniform(cfg.time.horizon, steps)?,
        Store::Final,
    )?;
    let s = sol.final_state();
    Ok((s.c.clone(), s.phi.clone()))
}

fn summarize(cfg: &RunConfig, solved: &Solved, errors: Option<(ErrorReport, &'static str)>, started: Instant) -> RunSummary {
    let reports = &solved.reports;
    RunSummary {
        name: cfg.name.clone(),
        method: cfg.solver.method,
        converged: reports.iter().all(|r| r.converged),
        windows: cfg.time.windows,
        iterations: reports.iter().map(|r| r.iterations).sum(),
        subdomain_solves: reports.iter().map(|r| r.subdomain_solve_count).sum(),
        final_residual: reports.iter().map(|r| r.final_residual()).fold(0.0, f64::max),
        robin: solved.robin.clone(),
        errors: errors.map(|e| e.0),
        error_reference: errors.map(|e| e.1.to_string()),
        max_mass_defect: solved.max_mass_defect,
        max_flux_jump: solved.max_flux_jump,
        darcy_max_divergence: solved
            .setup
            .darcy
            .as_ref()
            .map(|d| max_divergence(&solved.setup.mesh, &d.u_edge)),
        initial_mass: solved.mass.first().map_or(0.0, |m| m.1),
        final_mass: total_mass(&solved.setup.mesh, &solved.setup.coeffs.omega, &solved.final_c),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Cell-centered field as `x_center,y_center,value`.
pub fn write_field_csv(path: &Path, mesh: &Mesh, values: &[f64]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "x_center,y_center,value")?;
    for (e, v) in mesh.elements.iter().zip(values) {
        writeln!(f, "{},{},{:e}", e.center[0], e.center[1], v)?;
    }
    f.flush()?;
    Ok(())
}

fn time_label(t: f64) -> String {
    let s = format!("{t}");
    s.replace('.', "p")
}

fn write_run_outputs(cfg: &RunConfig, solved: &Solved, summary: &RunSummary, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved.toml"), cfg.to_toml())?;
    std::fs::write(
        out.join("summary.toml"),
        toml::to_string(summary).map_err(|e| Error::config("summary", e.to_string()))?,
    )?;

    let mut f = create(&out.join("residuals.csv"))?;
    if solved.reports.len() <= 1 {
        writeln!(f, "iteration,relative_residual,cumulative_subdomain_solves")?;
    } else {
        writeln!(f, "window,iteration,relative_residual,cumulative_subdomain_solves")?;
    }
    let mut done = 0;
    for (w, r) in solved.reports.iter().enumerate() {
        let n = r.residual_history.len().max(1);
        let cost = r.subdomain_solve_count as f64 / (n - 1).max(1) as f64;
        for (k, res) in r.residual_history.iter().enumerate() {
            let solves = done + (k as f64 * cost).round() as usize;
            if solved.reports.len() <= 1 {
                writeln!(f, "{k},{res:e},{solves}")?;
            } else {
                writeln!(f, "{w},{k},{res:e},{solves}")?;
            }
        }
        done += r.subdomain_solve_count;
    }
    f.flush()?;

    let mut f = create(&out.join("errors.csv"))?;
    writeln!(f, "reference,c_error,phi_error")?;
    if let (Some(e), Some(r)) = (&summary.errors, &summary.error_reference) {
        writeln!(f, "{r},{:e},{:e}", e.c, e.phi)?;
    }
    f.flush()?;

    let mut f = create(&out.join("mass.csv"))?;
    writeln!(f, "time,mass")?;
    for (t, m) in &solved.mass {
        writeln!(f, "{t},{m:e}")?;
    }
    f.flush()?;

    if cfg.output.fields {
        let mesh = &solved.setup.mesh;
        write_field_csv(&out.join("c_final.csv"), mesh, &solved.final_c)?;
        for (t, c) in &solved.snapshots {
            write_field_csv(&out.join(format!("c_t{}.csv", time_label(*t))), mesh, c)?;
        }
        if let Some(d) = &solved.setup.darcy {
            write_field_csv(&out.join("head.csv"), mesh, &d.head)?;
        }
    }
    Ok(())
}

/// Solve `cfg` and, with `out`, write its artifacts there.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let started = Instant::now();
    let solved = solve(cfg)?;
    let errors = final_errors(cfg, &solved)?;
    let summary = summarize(cfg, &solved, errors, started);
    if let Some(out) = out {
        write_run_outputs(cfg, &solved, &summary, out)?;
    }
    Ok(RunOutcome {
        summary,
        final_c: solved.final_c,
        final_phi: solved.final_phi,
        reports: solved.reports,
        mass: solved.mass,
        snapshots: solved.snapshots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Space,
    Time,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "space" => Ok(Axis::Space),
            "time" => Ok(Axis::Time),
            _ => Err(format!("unknown axis `{s}`, expected `space` or `time`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub label: String,
    /// Largest cell side.
    pub h: f64,
    pub steps: Vec<usize>,
    pub c_error: f64,
    pub phi_error: f64,
    /// Observed order against the previous row; absent for the first row,
    /// for grid-pair studies and when the errors coincide.
    pub c_rate: Option<f64>,
    pub phi_rate: Option<f64>,
    pub iterations: usize,
    pub subdomain_solves: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

/// Errors of a sequence of runs: uniform refinement by 2 in space or time,
/// or the four coarse/fine combinations of two subdomain time grids.
pub fn convergence_study(cfg: &RunConfig, axis: Axis, out: Option<&Path>) -> Result<StudyReport> {
    let mut variants: Vec<(String, RunConfig)> = Vec::new();
    let levels = cfg.study.levels;
    match axis {
        Axis::Space => {
            if cfg.mesh.x_coords.is_some() || cfg.mesh.y_coords.is_some() {
                return Err(Error::config("mesh.x_coords", "space refinement needs `nx` and `ny`"));
            }
            for l in 0..levels {
                let mut c = cfg.clone();
                c.mesh.nx <<= l;
                c.mesh.ny <<= l;
                variants.push((format!("level{l}"), c));
            }
        }
        Axis::Time if cfg.study.grid_pairs => {
            let base = cfg.steps_per_subdomain();
            if base.len() != 2 {
                return Err(Error::config("study.grid_pairs", "needs exactly two subdomains"));
            }
            for (label, f) in [
                ("coarse-coarse", [1, 1]),
                ("coarse-fine", [1, 2]),
                ("fine-coarse", [2, 1]),
                ("fine-fine", [2, 2]),
            ] {
                let mut c = cfg.clone();
                c.time.steps = vec![base[0] * f[0], base[1] * f[1]];
                variants.push((label.to_string(), c));
            }
        }
        Axis::Time => {
            for l in 0..levels {
                let mut c = cfg.clone();
                c.time.steps = c.steps_per_subdomain().iter().map(|m| m << l).collect();
                variants.push((format!("level{l}"), c));
            }
        }
    }

    // Shared fine-in-time reference for time studies without an exact solution.
    let shared_reference = if axis == Axis::Time && cfg.case != CaseKind::Test1 {
        let finest = variants.last().map(|v| v.1.clone()).unwrap_or_else(|| cfg.clone());
        let setup = finest.setup()?;
        Some(monodomain_reference(&finest, &setup, 4)?)
    } else {
        None
    };

    let mut rows: Vec<StudyRow> = Vec::new();
    for (label, c) in variants {
        c.validate()?;
        let solved = solve(&c)?;
        let err = match &shared_reference {
            Some((rc, rp)) => error_norms(
                &solved.setup.mesh,
                &solved.final_c,
                &solved.final_phi,
                &Reference::Discrete { c: rc, phi: rp },
            ),
            None => match final_errors(&c, &solved)? {
                Some((e, _)) => e,
                None => {
                    let setup = c.setup()?;
                    let (rc, rp) = monodomain_reference(&c, &setup, 4)?;
                    error_norms(&setup.mesh, &solved.final_c, &solved.final_phi, &Reference::Discrete { c: &rc, phi: &rp })
                }
            },
        };
        let (c_rate, phi_rate) = match rows.last() {
            Some(prev) if !cfg.study.grid_pairs || axis == Axis::Space => (
                convergence_rate(prev.c_error, err.c),
                convergence_rate(prev.phi_error, err.phi),
            ),
            _ => (None, None),
        };
        rows.push(StudyRow {
            label,
            h: solved.setup.mesh.elements.iter().map(|e| e.dx.max(e.dy)).fold(0.0, f64::max),
            steps: c.steps_per_subdomain(),
            c_error: err.c,
            phi_error: err.phi,
            c_rate,
            phi_rate,
            iterations: solved.reports.iter().map(|r| r.iterations).sum(),
            subdomain_solves: solved.reports.iter().map(|r| r.subdomain_solve_count).sum(),
            converged: solved.reports.iter().all(|r| r.converged),
        });
    }
    let report = StudyReport { rows };

    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("resolved.toml"), cfg.to_toml())?;
        let mut f = create(&out.join("study.csv"))?;
        writeln!(f, "label,h,steps,c_error,phi_error,c_rate,phi_rate,iterations,subdomain_solves,converged")?;
        let opt = |r: Option<f64>| r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        for r in &report.rows {
            let steps: Vec<String> = r.steps.iter().map(|s| s.to_string()).collect();
            writeln!(
                f,
                "{},{},{},{:e},{:e},{},{},{},{},{}",
                r.label,
                r.h,
                steps.join(";"),
                r.c_error,
                r.phi_error,
                opt(r.c_rate),
                opt(r.phi_rate),
                r.iterations,
                r.subdomain_solves,
                r.converged
            )?;
        }
        f.flush()?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Residual at the parameters the solver configuration selects.
    pub configured: SweepPoint,
    pub best: SweepPoint,
}

/// Jacobi residual after a fixed number of iterations over a log grid of
/// Robin parameters on one interface.
pub fn sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepReport> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "the sweep command needs a [sweep] section"))?;
    if cfg.time.windows != 1 {
        return Err(Error::config("time.windows", "the sweep runs a single window"));
    }
    let setup = cfg.setup()?;
    let dd: DdProblem = cfg.dd_problem(&setup)?;
    let Some(face) = dd.dec.interfaces.get(sw.interface) else {
        return Err(Error::config("sweep.interface", format!("only {} interfaces", dd.dec.interfaces.len())));
    };
    let base = cfg.robin_parameters(&dd)?;
    let zeta0 = if cfg.solver.random_guess {
        dd.robin_from_vec(&dd.random_guess(crate::interface::Method::Robin, cfg.seed))
    } else {
        dd.robin_zero()
    };
    let a12 = log_space(sw.alpha12[0], sw.alpha12[1], sw.points);
    let a21 = log_space(sw.alpha21[0], sw.alpha21[1], sw.points);
    let points = parameter_sweep(&dd, sw.interface, &base, &a12, &a21, &zeta0, sw.iterations)?;
    let (i, j) = face.pair;
    let configured = parameter_sweep(&dd, sw.interface, &base, &[base.get(i, j)?], &[base.get(j, i)?], &zeta0, sw.iterations)?[0];
    let best = *points
        .iter()
        .min_by(|a, b| a.relative_residual.total_cmp(&b.relative_residual))
        .expect("at least one point");
    let report = SweepReport { points, configured, best };
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("resolved.toml"), cfg.to_toml())?;
        write_sweep_csv(&out.join("sweep.csv"), &report.points)?;
        #[derive(Serialize)]
        struct Brief {
            configured: SweepPoint,
            best: SweepPoint,
        }
        std::fs::write(
            out.join("summary.toml"),
            toml::to_string(&Brief { configured, best }).map_err(|e| Error::config("summary", e.to_string()))?,
        )?;
    }
    Ok(report)
}
