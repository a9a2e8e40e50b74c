//! Relative L2 errors of the concentration and of the total flux.
//!
//! Discrete fields are compared with a reference by Gauss quadrature on every
//! element: `c_h` is constant per element and `phi_h` is the lowest-order
//! Raviart-Thomas field rebuilt from the edge fluxes.

use serde::Serialize;

use crate::geometry::Mesh;

const G3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.774_596_669_241_483_4, 5.0 / 18.0),
];

/// Reference fields for an error computation.
pub enum Reference<'a> {
    Exact {
        c: &'a dyn Fn(f64, f64) -> f64,
        phi: &'a dyn Fn(f64, f64) -> [f64; 2],
    },
    /// Discrete fields on the same mesh (e.g. a fine-in-time reference).
    Discrete { c: &'a [f64], phi: &'a [[f64; 4]] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub c: f64,
    pub phi: f64,
}

/// Point value of the flux field rebuilt from outward edge fluxes, with
/// `(s, t)` the position in the element scaled to `[0, 1]^2`.
pub fn rt0_value(dx: f64, dy: f64, flux: &[f64; 4], s: f64, t: f64) -> [f64; 2] {
    let left = -flux[0] / dy;
    let right = flux[1] / dy;
    let bottom = -flux[2] / dx;
    let top = flux[3] / dx;
    [left + s * (right - left), bottom + t * (top - bottom)]
}

fn quad(mesh: &Mesh, mut f: impl FnMut(usize, f64, f64, f64, f64) -> (f64, f64)) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, el) in mesh.elements.iter().enumerate() {
        let (x0, _) = el.x_range();
        let (y0, _) = el.y_range();
        for &(a, wa) in &G3 {
            for &(b, wb) in &G3 {
                let s = 0.5 * (1.0 + a);
                let t = 0.5 * (1.0 + b);
                let w = wa * wb * el.area;
                let (e2, r2) = f(k, x0 + s * el.dx, y0 + t * el.dy, s, t);
                num += w * e2;
                den += w * r2;
            }
        }
    }
    (num, den)
}

fn ratio((num, den): (f64, f64)) -> f64 {
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

pub fn error_norms(mesh: &Mesh, c: &[f64], phi: &[[f64; 4]], reference: &Reference) -> ErrorReport {
    let ce = match reference {
        Reference::Exact { c: exact, .. } => quad(mesh, |k, x, y, _, _| {
            let r = exact(x, y);
            ((c[k] - r).powi(2), r * r)
        }),
        Reference::Discrete { c: r, .. } => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, el) in mesh.elements.iter().enumerate() {
                num += el.area * (c[k] - r[k]).powi(2);
                den += el.area * r[k] * r[k];
            }
            (num, den)
        }
    };
    let pe = quad(mesh, |k, x, y, s, t| {
        let el = &mesh.elements[k];
        let v = rt0_value(el.dx, el.dy, &phi[k], s, t);
        let r = match reference {
            Reference::Exact { phi: exact, .. } => exact(x, y),
            Reference::Discrete { phi: rp, .. } => rt0_value(el.dx, el.dy, &rp[k], s, t),
        };
        (
            (v[0] - r[0]).powi(2) + (v[1] - r[1]).powi(2),
            r[0] * r[0] + r[1] * r[1],
        )
    });
    ErrorReport {
        c: ratio(ce),
        phi: ratio(pe),
    }
}

/// Observed order `log2(e_coarse / e_fine)` for one halving of the step;
/// `None` when the two errors coincide or are not positive.
pub fn convergence_rate(coarse: f64, fine: f64) -> Option<f64> {
    if coarse > 0.0 && fine > 0.0 && coarse != fine {
        Some((coarse / fine).log2())
    } else {
        None
    }
}
