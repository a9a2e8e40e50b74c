//! Optimized Robin parameters from the continuous convergence factor of the
//! Schwarz waveform relaxation, and parameter sweeps of the Jacobi iteration.
//!
//! The model is the one-dimensional reduction normal to the interface:
//! side `i` has diffusion `d_i`, porosity `omega_i` and normal advection
//! `a_i = u . n_i` (outward). For a time frequency `xi` the decaying mode on
//! side `i` has Robin symbol
//! `z_i = (sqrt(a_i^2 + 4 d_i omega_i i xi) - a_i) / 2`, and one double
//! sweep of the iteration contracts that mode by
//! `rho = |(a12 - z2)(a21 - z1) / ((a12 + z1)(a21 + z2))|`.

use std::io::Write;
use std::path::Path;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interface::{DdProblem, JacobiOptions, RobinState};
use crate::propagate::RobinParameters;

/// One side of the interface model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideModel {
    pub d: f64,
    pub omega: f64,
    /// `u . n` with `n` the side's outward normal.
    pub a_normal: f64,
    /// Tangential velocity; not used by the one-dimensional symbol.
    pub a_tangential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceModel {
    pub sides: [SideModel; 2],
    /// Frequency band `[pi / T, pi / dt_min]`.
    pub band: (f64, f64),
}

const BAND_SAMPLES: usize = 401;

impl InterfaceModel {
    pub fn new(sides: [SideModel; 2], horizon: f64, dt_min: f64) -> Result<InterfaceModel> {
        for s in &sides {
            if !(s.d > 0.0) || !(s.omega > 0.0) {
                return Err(Error::config(
                    "interface_model",
                    format!("d and omega must be positive, got d={} omega={}", s.d, s.omega),
                ));
            }
        }
        let band = (std::f64::consts::PI / horizon, std::f64::consts::PI / dt_min);
        if !(band.0 < band.1) {
            return Err(Error::config(
                "interface_model",
                format!("empty frequency band [{}, {}]", band.0, band.1),
            ));
        }
        Ok(InterfaceModel { sides, band })
    }

    /// Model of interface `p` of a decomposed problem: coefficients averaged
    /// over the elements touching the interface on each side, band from the
    /// horizon and the smaller time step of the two subdomains.
    pub fn from_problem(dd: &DdProblem, p: usize) -> Result<InterfaceModel> {
        let f = dd
            .dec
            .interfaces
            .get(p)
            .ok_or_else(|| Error::IndexError(format!("no interface {p}")))?;
        let n = f.edges.len() as f64;
        let mut sides = [SideModel {
            d: 0.0,
            omega: 0.0,
            a_normal: 0.0,
            a_tangential: 0.0,
        }; 2];
        for ((&e, &(lo, hi)), nrm) in f.edges.iter().zip(&f.elements).zip(&f.normals) {
            for (s, k) in [(0, lo), (1, hi)] {
                let el = &dd.mesh.elements[k];
                let side = el
                    .edges
                    .iter()
                    .position(|&g| g == e)
                    .expect("interface edge belongs to its elements");
                let u = dd.coeffs.u_edge[k];
                let vel = [0.5 * (u[1] - u[0]), 0.5 * (u[3] - u[2])];
                let tangent = [-nrm[1], nrm[0]];
                sides[s].d += dd.coeffs.d[k] / n;
                sides[s].omega += dd.coeffs.omega[k] / n;
                sides[s].a_normal += u[side] / n;
                sides[s].a_tangential += (vel[0] * tangent[0] + vel[1] * tangent[1]) / n;
            }
        }
        let (i, j) = f.pair;
        let dt_min = dd.subs[i].grid.min_dt().min(dd.subs[j].grid.min_dt());
        InterfaceModel::new(sides, dd.horizon(), dt_min)
    }

    /// The model seen from the other side.
    pub fn swapped(&self) -> InterfaceModel {
        InterfaceModel {
            sides: [self.sides[1], self.sides[0]],
            band: self.band,
        }
    }

    pub fn symbol(&self, side: usize, xi: f64) -> Complex64 {
        let s = &self.sides[side];
        let root = Complex64::new(s.a_normal * s.a_normal, 4.0 * s.d * s.omega * xi).sqrt();
        (root - s.a_normal) / 2.0
    }

    /// Log-spaced sample of the frequency band, endpoints included.
    pub fn band_samples(&self, n: usize) -> Vec<f64> {
        log_space(self.band.0, self.band.1, n)
    }
}

pub fn convergence_factor(model: &InterfaceModel, a12: f64, a21: f64, xi: f64) -> Result<f64> {
    for a in [a12, a21] {
        if !(a > 0.0) {
            return Err(Error::InvalidRobinParameter(a));
        }
    }
    Ok(rho(model, a12, a21, xi))
}

fn rho(model: &InterfaceModel, a12: f64, a21: f64, xi: f64) -> f64 {
    let z1 = model.symbol(0, xi);
    let z2 = model.symbol(1, xi);
    ((a12 - z2) * (a21 - z1)).norm() / ((a12 + z1) * (a21 + z2)).norm()
}

/// `max rho` over the sampled band.
pub fn max_factor(model: &InterfaceModel, a12: f64, a21: f64) -> Result<f64> {
    convergence_factor(model, a12, a21, model.band.0)?;
    Ok(max_rho(model, &model.band_samples(BAND_SAMPLES), a12, a21))
}

fn max_rho(model: &InterfaceModel, xis: &[f64], a12: f64, a21: f64) -> f64 {
    xis.iter().map(|&xi| rho(model, a12, a21, xi)).fold(0.0, f64::max)
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizedPair {
    pub alpha12: f64,
    pub alpha21: f64,
    /// Achieved `max rho` over the band.
    pub factor: f64,
}

struct MinMax<'a> {
    model: &'a InterfaceModel,
    xis: &'a [f64],
}

impl CostFunction for MinMax<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(max_rho(self.model, self.xis, p[0].exp(), p[1].exp()))
    }
}

/// Minimize `max rho` over `(alpha12, alpha21)`: log-grid search, then
/// Nelder-Mead in log coordinates from the best grid point.
pub fn optimize_parameters(model: &InterfaceModel) -> OptimizedPair {
    let xis = model.band_samples(BAND_SAMPLES);
    let mags: Vec<f64> = [0, 1]
        .iter()
        .flat_map(|&s| [model.symbol(s, model.band.0).norm(), model.symbol(s, model.band.1).norm()])
        .chain(model.sides.iter().map(|s| s.a_normal.abs()))
        .filter(|m| *m > 0.0)
        .collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min) * 0.1;
    let hi = mags.iter().copied().fold(0.0, f64::max) * 10.0;
    let grid = log_space(lo, hi, 48);

    let mut best = (f64::INFINITY, grid[0], grid[0]);
    for &a in &grid {
        for &b in &grid {
            let v = max_rho(model, &xis, a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }

    let x0 = vec![best.1.ln(), best.2.ln()];
    let simplex = vec![x0.clone(), vec![x0[0] + 0.1, x0[1]], vec![x0[0], x0[1] + 0.1]];
    let refined = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .ok()
        .and_then(|solver| {
            Executor::new(MinMax { model, xis: &xis }, solver)
                .configure(|s| s.max_iters(2000))
                .run()
                .ok()
        })
        .and_then(|r| r.state().get_best_param().cloned());
    let (a12, a21) = match refined {
        Some(p) if max_rho(model, &xis, p[0].exp(), p[1].exp()) <= best.0 => (p[0].exp(), p[1].exp()),
        _ => (best.1, best.2),
    };
    OptimizedPair {
        alpha12: a12,
        alpha21: a21,
        factor: max_rho(model, &xis, a12, a21),
    }
}

/// Largest outward normal velocity on interface `p`, seen from each side
/// of the pair (zero when the side only has inflow).
pub fn outflow_bound(dd: &DdProblem, p: usize) -> Result<[f64; 2]> {
    let f = dd
        .dec
        .interfaces
        .get(p)
        .ok_or_else(|| Error::IndexError(format!("no interface {p}")))?;
    let mut out = [0.0f64; 2];
    for (&e, &(lo, hi)) in f.edges.iter().zip(&f.elements) {
        for (s, k) in [(0, lo), (1, hi)] {
            let el = &dd.mesh.elements[k];
            let side = el.edges.iter().position(|&g| g == e).expect("interface edge belongs to its elements");
            out[s] = out[s].max(dd.coeffs.u_edge[k][side]);
        }
    }
    Ok(out)
}

/// Optimized parameters for every interface of the problem. The averaged
/// model can return a parameter below the local outflow speed, where the
/// Robin subdomain problem loses coercivity; such values are raised to
/// [`outflow_bound`].
pub fn optimized_parameters(dd: &DdProblem) -> Result<RobinParameters> {
    let mut params = RobinParameters::uniform(&dd.dec, 1.0)?;
    for (p, f) in dd.dec.interfaces.iter().enumerate() {
        let opt = optimize_parameters(&InterfaceModel::from_problem(dd, p)?);
        let floor = outflow_bound(dd, p)?;
        params.set(f.pair.0, f.pair.1, opt.alpha12.max(floor[0]))?;
        params.set(f.pair.1, f.pair.0, opt.alpha21.max(floor[1]))?;
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha12: f64,
    pub alpha21: f64,
    pub relative_residual: f64,
}

/// Relative Jacobi residual after exactly `iterations` sweeps for every
/// `(alpha12, alpha21)` on interface `p`; other interfaces keep `base`.
/// Points are ordered with `alpha21` varying fastest.
pub fn parameter_sweep(
    dd: &DdProblem,
    p: usize,
    base: &RobinParameters,
    alphas12: &[f64],
    alphas21: &[f64],
    zeta0: &RobinState,
    iterations: usize,
) -> Result<Vec<SweepPoint>> {
    let (i, j) = dd
        .dec
        .interfaces
        .get(p)
        .ok_or_else(|| Error::IndexError(format!("no interface {p}")))?
        .pair;
    let pairs: Vec<(f64, f64)> = alphas12
        .iter()
        .flat_map(|&a| alphas21.iter().map(move |&b| (a, b)))
        .collect();
    let opts = JacobiOptions {
        tol: 0.0,
        max_iter: iterations,
        fixed_iterations: true,
        ..JacobiOptions::default()
    };
    let out = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut params = base.clone();
            params.set(i, j, a)?;
            params.set(j, i, b)?;
            let r = dd.oswr_jacobi_with(&params, zeta0, None, &opts)?;
            Ok(SweepPoint {
                alpha12: a,
                alpha21: b,
                relative_residual: r.report.final_residual(),
            })
        })
        .collect::<Result<Vec<_>>>();
    for s in &dd.subs {
        s.clear_cache();
    }
    out
}

/// Write `alpha12,alpha21,relative_residual`.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "alpha12,alpha21,relative_residual")?;
    for p in points {
        writeln!(f, "{},{},{:e}", p.alpha12, p.alpha21, p.relative_residual)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn side(d: f64, a: f64) -> SideModel {
        SideModel {
            d,
            omega: 1.0,
            a_normal: a,
            a_tangential: 0.0,
        }
    }

    fn naive_rho(m: &InterfaceModel, a12: f64, a21: f64, xi: f64) -> f64 {
        // Same factor through explicit real arithmetic on the square roots.
        let z = |s: &SideModel| {
            let (re, im) = (s.a_normal * s.a_normal, 4.0 * s.d * s.omega * xi);
            let r = re.hypot(im);
            let sr = ((r + re) / 2.0).sqrt();
            let si = ((r - re) / 2.0).sqrt() * im.signum();
            ((sr - s.a_normal) / 2.0, si / 2.0)
        };
        let (z1, z2) = (z(&m.sides[0]), z(&m.sides[1]));
        let abs = |x: f64, y: f64| x.hypot(y);
        abs(a12 - z2.0, -z2.1) * abs(a21 - z1.0, -z1.1) / (abs(a12 + z1.0, z1.1) * abs(a21 + z2.0, z2.1))
    }

    #[test]
    fn factor_matches_real_arithmetic() {
        let m = InterfaceModel::new([side(0.02, 0.5), side(0.002, -0.5)], 1.0, 0.01).unwrap();
        for xi in m.band_samples(64) {
            let a = convergence_factor(&m, 0.3, 0.7, xi).unwrap();
            let b = naive_rho(&m, 0.3, 0.7, xi);
            assert!((a - b).abs() < 1e-12 * b.max(1.0), "{a} {b}");
        }
        assert!(matches!(
            convergence_factor(&m, 0.0, 1.0, 1.0),
            Err(Error::InvalidRobinParameter(_))
        ));
    }

    #[test]
    fn symmetric_diffusion_contracts() {
        let m = InterfaceModel::new([side(1.0, 0.0), side(1.0, 0.0)], 1.0, 0.01).unwrap();
        for a in [0.01, 1.0, 100.0] {
            for xi in m.band_samples(50) {
                assert!(rho(&m, a, a, xi) < 1.0);
            }
        }
    }

    #[test]
    fn swapping_sides_swaps_parameters() {
        let m = InterfaceModel::new([side(1.0, -0.5), side(0.1, 0.05)], 1.0, 0.02).unwrap();
        let s = m.swapped();
        for xi in m.band_samples(20) {
            assert!((rho(&m, 0.4, 2.0, xi) - rho(&s, 2.0, 0.4, xi)).abs() < 1e-14);
        }
        let a = optimize_parameters(&m);
        let b = optimize_parameters(&s);
        assert!((a.factor - b.factor).abs() < 1e-6);
        assert!((a.alpha12 / b.alpha21 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn optimum_beats_grid_and_equal_pairs() {
        let m = InterfaceModel::new([side(1.0, 0.0), side(1.0, 0.0)], 1.0, 1.0 / 80.0).unwrap();
        let opt = optimize_parameters(&m);
        let best_equal = log_space(1e-2, 1e2, 400)
            .into_iter()
            .map(|a| max_factor(&m, a, a).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(opt.factor <= best_equal + 1e-9);
        // The two-sided optimum of the symmetric problem is not on the
        // diagonal: the mirrored pair is equally good.
        let mirrored = max_factor(&m, opt.alpha21, opt.alpha12).unwrap();
        assert!((mirrored - opt.factor).abs() < 1e-9);
    }

    #[test]
    fn narrower_band_does_not_increase_factor() {
        let wide = InterfaceModel::new([side(0.01, -0.5), side(0.1, 0.05)], 1.0, 0.01).unwrap();
        let narrow = InterfaceModel::new(wide.sides, 1.0, 0.1).unwrap();
        assert!(optimize_parameters(&narrow).factor <= optimize_parameters(&wide).factor + 1e-9);
    }
}
