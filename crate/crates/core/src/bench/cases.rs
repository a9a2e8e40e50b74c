//! Analytic data of the benchmark problems.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{BoundarySpec, Decomposition, Mesh, Rect};
use crate::interface::DdProblem;
use crate::mhfe::{project_velocity, Coefficients, UpwindMode};
use crate::timegrid::TimeGrid;

/// Exact concentration of the first benchmark, `exp(-4t) sin(pi x) sin(pi y)`.
pub fn exact_c_test1(x: f64, y: f64, t: f64) -> f64 {
    (-4.0 * t).exp() * (PI * x).sin() * (PI * y).sin()
}

/// Exact total flux `-grad c + u c` with `u = (1, 1)`, `d = 1`.
pub fn exact_phi_test1(x: f64, y: f64, t: f64) -> [f64; 2] {
    let e = (-4.0 * t).exp();
    let (sx, cx) = (PI * x).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    [e * (-PI * cx * sy + sx * sy), e * (-PI * sx * cy + sx * sy)]
}

/// Source term matching [`exact_c_test1`] with `omega = 1`, `d = 1`,
/// `u = (1, 1)`.
pub fn manufactured_source_test1(x: f64, y: f64, t: f64) -> f64 {
    let e = (-4.0 * t).exp();
    let (sx, cx) = (PI * x).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    (-4.0 + 2.0 * PI * PI) * e * sx * sy + PI * e * (cx * sy + sx * cy)
}

/// Cell average of `sin(pi x) sin(pi y)` over `[x0,x1] x [y0,y1]`.
pub fn sine_cell_average(x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let ax = ((PI * x0).cos() - (PI * x1).cos()) / (PI * (x1 - x0));
    let ay = ((PI * y0).cos() - (PI * y1).cos()) / (PI * (y1 - y0));
    ax * ay
}

/// Gaussian pulse centered at `(0.2, 0.2)` used by the time-grid study.
pub fn pulse(x: f64, y: f64) -> f64 {
    (-100.0 * ((x - 0.2).powi(2) + (y - 0.2).powi(2))).exp()
}

pub fn pulse_initial(x: f64, y: f64) -> f64 {
    x * y * (1.0 - x) * (1.0 - y) * pulse(x, y)
}

/// Coefficients of one side of the two-subdomain discontinuous problems:
/// `(d, u)`.
pub type Side = (f64, [f64; 2]);

/// The three regimes of the discontinuous benchmark, `[left, right]`.
pub fn test2_data(problem: char) -> Option<[Side; 2]> {
    match problem {
        'a' => Some([(1.0, [-0.02, -0.5]), (0.1, [-0.02, -0.05])]),
        'b' => Some([(0.01, [-0.02, -0.5]), (0.1, [-0.02, -0.05])]),
        'c' => Some([(0.02, [0.5, 1.0]), (0.002, [0.5, 0.1])]),
        _ => None,
    }
}

/// Global Peclet number `H |u| / d`.
pub fn peclet(h: f64, u: [f64; 2], d: f64) -> f64 {
    h * u[0].hypot(u[1]) / d
}

/// Unit square split at `x = 1/2`.
fn halves(n: usize) -> Result<(Arc<Mesh>, Arc<Decomposition>)> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::config("mesh.n", format!("need an even number of cells, got {n}")));
    }
    let mesh = Arc::new(Mesh::uniform((0.0, 1.0), (0.0, 1.0), n, n, BoundarySpec::default())?);
    let dec = Arc::new(Decomposition::new(
        &mesh,
        &[Rect::new(0.0, 0.5, 0.0, 1.0), Rect::new(0.5, 1.0, 0.0, 1.0)],
    )?);
    Ok((mesh, dec))
}

/// First benchmark on an `n x n` mesh with `steps[i]` uniform steps on
/// subdomain `i` over `(0, horizon)`: manufactured source and cell averages
/// of the exact initial state.
pub fn test1_problem(n: usize, steps: [usize; 2], horizon: f64) -> Result<DdProblem> {
    let (mesh, dec) = halves(n)?;
    let coeffs = Arc::new(Coefficients::uniform(&mesh, 1.0, 1.0, |_, _| [1.0, 1.0])?);
    let grids = steps
        .iter()
        .map(|&m| TimeGrid::uniform(horizon, m))
        .collect::<Result<Vec<_>>>()?;
    let mut dd = DdProblem::new(mesh.clone(), dec, coeffs, grids)?;
    dd.set_source(Some(Arc::new(manufactured_source_test1)));
    let c0: Vec<f64> = mesh
        .elements
        .iter()
        .map(|e| {
            let (x0, x1) = e.x_range();
            let (y0, y1) = e.y_range();
            sine_cell_average(x0, x1, y0, y1)
        })
        .collect();
    dd.set_initial_global(&c0);
    Ok(dd)
}

/// Coefficients of the discontinuous benchmark: `sides[0]` on `x < 1/2`.
pub fn two_zone_coefficients(mesh: &Mesh, sides: [Side; 2]) -> Result<Coefficients> {
    let zone = |x: f64| usize::from(x > 0.5);
    let n = mesh.n_elements();
    let d = mesh.elements.iter().map(|e| sides[zone(e.center[0])].0).collect();
    // Every element sees its own zone's velocity on all four edges.
    let per_zone: Vec<Vec<[f64; 4]>> = sides
        .iter()
        .map(|s| project_velocity(mesh, |_, _| s.1))
        .collect();
    let u_edge = mesh
        .elements
        .iter()
        .enumerate()
        .map(|(k, e)| per_zone[zone(e.center[0])][k])
        .collect();
    Coefficients::new(mesh, vec![1.0; n], d, u_edge, UpwindMode::default())
}

/// Error equation of the discontinuous benchmark (zero source, initial
/// state and boundary data): `problem` is `'a'`, `'b'` or `'c'`.
pub fn test2_problem(problem: char, n: usize, steps: [usize; 2], horizon: f64) -> Result<DdProblem> {
    let sides = test2_data(problem)
        .ok_or_else(|| Error::config("problem", format!("unknown discontinuous case `{problem}`")))?;
    let (mesh, dec) = halves(n)?;
    let coeffs = Arc::new(two_zone_coefficients(&mesh, sides)?);
    let grids = steps
        .iter()
        .map(|&m| TimeGrid::uniform(horizon, m))
        .collect::<Result<Vec<_>>>()?;
    DdProblem::new(mesh, dec, coeffs, grids)
}

/// One material zone of the storage benchmark: conductivity `k` (m/year),
/// porosity and molecular diffusion `d_m` (m^2/year).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageZone {
    pub name: &'static str,
    pub k: f64,
    pub omega: f64,
    pub d_m: f64,
    /// `[x0, x1, y0, y1]` in meters; later zones paint over earlier ones.
    pub boxes: &'static [[f64; 4]],
    pub c0: f64,
}

/// Storage domain `[0, 72] x [0, 66]` m. The zone boxes are a nested
/// rectangle layout, not surveyed coordinates.
pub const STORAGE_DOMAIN: [f64; 4] = [0.0, 72.0, 0.0, 66.0];

pub const STORAGE_ZONES: &[StorageZone] = &[
    StorageZone { name: "terrain", k: 94608.0, omega: 0.30, d_m: 1.0, boxes: &[STORAGE_DOMAIN], c0: 0.0 },
    StorageZone { name: "forme", k: 3.1536e-3, omega: 0.20, d_m: 1.58e-3, boxes: &[[8.0, 56.0, 28.0, 30.0]], c0: 0.0 },
    StorageZone { name: "drain", k: 94608.0, omega: 0.30, d_m: 1.0, boxes: &[[6.0, 8.0, 26.0, 52.0], [56.0, 58.0, 26.0, 52.0]], c0: 0.0 },
    StorageZone { name: "radier", k: 3.1536e-4, omega: 0.15, d_m: 6.31e-5, boxes: &[[10.0, 54.0, 30.0, 32.0]], c0: 0.0 },
    StorageZone { name: "voile", k: 3.1536e-3, omega: 0.20, d_m: 1.58e-3, boxes: &[[10.0, 12.0, 32.0, 46.0], [52.0, 54.0, 32.0, 46.0]], c0: 0.0 },
    StorageZone { name: "remplissage", k: 5045.76, omega: 0.30, d_m: 5.36e-2, boxes: &[[12.0, 52.0, 32.0, 44.0]], c0: 0.0 },
    StorageZone { name: "conteneur1", k: 3.1536e-4, omega: 0.12, d_m: 4.47e-4, boxes: &[[16.0, 30.0, 34.0, 42.0]], c0: 0.0 },
    StorageZone { name: "conteneur2", k: 3.1536e-4, omega: 0.12, d_m: 4.47e-4, boxes: &[[34.0, 48.0, 34.0, 42.0]], c0: 0.0 },
    StorageZone { name: "dechet1", k: 3.1536e-4, omega: 0.30, d_m: 1.37e-3, boxes: &[[18.0, 28.0, 36.0, 40.0]], c0: 1.0 },
    StorageZone { name: "dechet2", k: 3.1536e-4, omega: 0.30, d_m: 1.37e-3, boxes: &[[36.0, 46.0, 36.0, 40.0]], c0: 1.0 },
    StorageZone { name: "dalleobtur", k: 3.1536e-3, omega: 0.20, d_m: 1.58e-3, boxes: &[[12.0, 52.0, 44.0, 46.0]], c0: 0.0 },
    StorageZone { name: "dalleprotec", k: 3.1536e-3, omega: 0.20, d_m: 1.58e-3, boxes: &[[10.0, 54.0, 46.0, 48.0]], c0: 0.0 },
    StorageZone { name: "drainant", k: 94608.0, omega: 0.30, d_m: 5.36e-2, boxes: &[[6.0, 58.0, 48.0, 52.0]], c0: 0.0 },
];

/// Six boxes: terrain below and above the structure split left/right,
/// and the structure band split at `x = 32`. The left middle box holds the
/// low-permeability slabs, walls and the left drain.
pub const STORAGE_SUBDOMAINS: [[f64; 4]; 6] = [
    [0.0, 32.0, 0.0, 26.0],
    [32.0, 72.0, 0.0, 26.0],
    [0.0, 32.0, 26.0, 52.0],
    [32.0, 72.0, 26.0, 52.0],
    [0.0, 32.0, 52.0, 66.0],
    [32.0, 72.0, 52.0, 66.0],
];

/// Hydraulic head on top and bottom (m).
pub const STORAGE_HEADS: (f64, f64) = (10.0, 9.998);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_at_center() {
        let f = manufactured_source_test1(0.5, 0.5, 0.0);
        assert!((f - (-4.0 + 2.0 * PI * PI)).abs() < 1e-12);
        assert!((f - 15.739).abs() < 1e-3);
        assert!(manufactured_source_test1(0.3, 0.7, 50.0).abs() < 1e-80);
        assert_eq!(exact_c_test1(0.0, 0.4, 0.3), 0.0);
    }

    #[test]
    fn source_matches_finite_differences() {
        let (x, y, t, h) = (0.31, 0.67, 0.05, 1e-4);
        let c = exact_c_test1;
        let dt = (c(x, y, t + h) - c(x, y, t - h)) / (2.0 * h);
        let lap = (c(x + h, y, t) + c(x - h, y, t) + c(x, y + h, t) + c(x, y - h, t) - 4.0 * c(x, y, t)) / (h * h);
        let div_uc = (c(x + h, y, t) - c(x - h, y, t) + c(x, y + h, t) - c(x, y - h, t)) / (2.0 * h);
        let f = dt - lap + div_uc;
        assert!((f - manufactured_source_test1(x, y, t)).abs() < 1e-5);
        let p = exact_phi_test1(x, y, t);
        let gx = (c(x + h, y, t) - c(x - h, y, t)) / (2.0 * h);
        assert!((p[0] - (-gx + c(x, y, t))).abs() < 1e-7);
    }

    #[test]
    fn peclet_numbers() {
        let [l, r] = test2_data('c').unwrap();
        assert!((peclet(1.0, l.1, l.0) - 55.9).abs() < 0.1);
        assert!((peclet(1.0, r.1, r.0) - 255.0).abs() < 0.1);
        assert!(test2_data('z').is_none());
    }
}
