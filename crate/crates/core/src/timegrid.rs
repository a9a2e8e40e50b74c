//! Partitions of `(0, T)` and piecewise-constant-in-time data on them.
//!
//! Data exchanged between subdomains with different time steps goes through
//! [`TimeSeries::project`], the `L2(0, T)` projection onto piecewise
//! constants: each target interval receives the average of the source over
//! that interval.

use crate::error::{Error, Result};

/// Relative tolerance (w.r.t. the horizon) under which two breakpoints are
/// treated as the same instant.
pub const BREAKPOINT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<TimeGrid> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("time grid needs at least one interval".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "time grid must start at 0, starts at {}",
                points[0]
            )));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("time points must increase strictly".into()));
        }
        Ok(TimeGrid { points })
    }

    /// `steps` equal intervals on `(0, horizon)`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<TimeGrid> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs positive horizon and steps, got T={horizon}, M={steps}"
            )));
        }
        let mut points: Vec<f64> = (0..=steps)
            .map(|m| horizon * m as f64 / steps as f64)
            .collect();
        points[steps] = horizon;
        TimeGrid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of intervals `M`.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Length of interval `m` (0-based), i.e. `t_{m+1} - t_m`.
    pub fn dt(&self, m: usize) -> f64 {
        self.points[m + 1] - self.points[m]
    }

    /// Right endpoint of interval `m` (0-based).
    pub fn t_end(&self, m: usize) -> f64 {
        self.points[m + 1]
    }

    pub fn dts(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }

    pub fn min_dt(&self) -> f64 {
        self.dts().fold(f64::INFINITY, f64::min)
    }

    /// Same grid rescaled to a new horizon.
    pub fn rescaled(&self, horizon: f64) -> TimeGrid {
        let s = horizon / self.horizon();
        let mut points: Vec<f64> = self.points.iter().map(|t| t * s).collect();
        *points.last_mut().unwrap() = horizon;
        TimeGrid { points }
    }

    fn tol(&self) -> f64 {
        BREAKPOINT_TOL * self.horizon()
    }

    /// Whether both grids have the same breakpoints up to the coincidence
    /// tolerance.
    pub fn conforms_to(&self, other: &TimeGrid) -> bool {
        let tol = self.tol();
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    fn check_horizon(&self, other: &TimeGrid) -> Result<()> {
        if (self.horizon() - other.horizon()).abs() > self.tol() {
            return Err(Error::GridMismatch(format!(
                "horizons differ: {} vs {}",
                self.horizon(),
                other.horizon()
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant function of time with values in `R^width`, stored
/// interval-major (`values[m * width + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub grid: TimeGrid,
    pub width: usize,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn zeros(grid: TimeGrid, width: usize) -> TimeSeries {
        let n = grid.len() * width;
        TimeSeries {
            grid,
            width,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: TimeGrid, width: usize, values: Vec<f64>) -> Result<TimeSeries> {
        if values.len() != grid.len() * width {
            return Err(Error::IndexError(format!(
                "time series expects {} values ({} intervals x {width}), got {}",
                grid.len() * width,
                grid.len(),
                values.len()
            )));
        }
        Ok(TimeSeries {
            grid,
            width,
            values,
        })
    }

    /// Scalar series.
    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<TimeSeries> {
        TimeSeries::from_values(grid, 1, values)
    }

    pub fn interval(&self, m: usize) -> &[f64] {
        &self.values[m * self.width..(m + 1) * self.width]
    }

    pub fn interval_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.width..(m + 1) * self.width]
    }

    /// `int_0^T psi dt`, per component.
    pub fn integral(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for (m, dt) in self.grid.dts().enumerate() {
            for (o, v) in out.iter_mut().zip(self.interval(m)) {
                *o += dt * v;
            }
        }
        out
    }

    /// `||psi||_{L2(0,T)}` summed over components.
    pub fn l2_norm(&self) -> f64 {
        self.grid
            .dts()
            .enumerate()
            .map(|(m, dt)| dt * self.interval(m).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `L2` projection onto piecewise constants on `dst`.
    ///
    /// One merged sweep over the union of breakpoints; breakpoints closer
    /// than `1e-13 T` are merged. A target interval that lies inside a single
    /// source interval copies that value exactly.
    pub fn project(&self, dst: &TimeGrid) -> Result<TimeSeries> {
        self.grid.check_horizon(dst)?;
        if self.grid.conforms_to(dst) {
            return Ok(TimeSeries {
                grid: dst.clone(),
                width: self.width,
                values: self.values.clone(),
            });
        }
        let w = self.width;
        let src = self.grid.points();
        let tgt = dst.points();
        let tol = self.grid.tol();
        let (mi, mj) = (self.grid.len(), dst.len());
        let mut out = vec![0.0; mj * w];
        let (mut i, mut j) = (0usize, 0usize);
        let mut t = 0.0;
        // Number of source pieces seen for the current target interval.
        let mut pieces = 0usize;
        while i < mi && j < mj {
            let (ei, ej) = (src[i + 1], tgt[j + 1]);
            let (next, adv_i, adv_j) = if (ei - ej).abs() <= tol {
                (ej, true, true)
            } else if ei < ej {
                (ei, true, false)
            } else {
                (ej, false, true)
            };
            let len = next - t;
            let acc = &mut out[j * w..(j + 1) * w];
            for (a, v) in acc.iter_mut().zip(&self.values[i * w..(i + 1) * w]) {
                *a += len * v;
            }
            pieces += 1;
            t = next;
            if adv_j {
                let acc = &mut out[j * w..(j + 1) * w];
                if pieces == 1 {
                    acc.copy_from_slice(&self.values[i * w..(i + 1) * w]);
                } else {
                    let inv = 1.0 / dst.dt(j);
                    acc.iter_mut().for_each(|a| *a *= inv);
                }
                pieces = 0;
                j += 1;
            }
            if adv_i {
                i += 1;
            }
        }
        Ok(TimeSeries {
            grid: dst.clone(),
            width: w,
            values: out,
        })
    }

    /// Components `range` as a narrower series on the same grid.
    pub fn columns(&self, range: std::ops::Range<usize>) -> TimeSeries {
        let w = range.len();
        let mut values = Vec::with_capacity(self.grid.len() * w);
        for m in 0..self.grid.len() {
            values.extend_from_slice(&self.interval(m)[range.clone()]);
        }
        TimeSeries {
            grid: self.grid.clone(),
            width: w,
            values,
        }
    }

    /// Add `src` into components `start..start + src.width`.
    pub fn add_columns(&mut self, start: usize, src: &TimeSeries) {
        debug_assert_eq!(self.grid.len(), src.grid.len());
        for m in 0..self.grid.len() {
            let dst = &mut self.interval_mut(m)[start..start + src.width];
            for (d, s) in dst.iter_mut().zip(src.interval(m)) {
                *d += s;
            }
        }
    }

    /// `sum_m dt_m sum_k w_k v_mk^2` with per-component weights.
    pub fn weighted_norm_sq(&self, weights: &[f64]) -> f64 {
        self.grid
            .dts()
            .enumerate()
            .map(|(m, dt)| {
                dt * self
                    .interval(m)
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| w * v * v)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn axpy(&mut self, a: f64, x: &TimeSeries) {
        debug_assert_eq!(self.values.len(), x.values.len());
        for (y, v) in self.values.iter_mut().zip(&x.values) {
            *y += a * v;
        }
    }
}

/// Defects of projecting `series` onto `dst`: `(||P psi|| - ||psi||,
/// int P psi - int psi)`, with the integral defect summed over components.
/// The first is never positive; the second vanishes up to rounding.
pub fn projection_defects(series: &TimeSeries, dst: &TimeGrid) -> Result<(f64, f64)> {
    let p = series.project(dst)?;
    let norm = p.l2_norm() - series.l2_norm();
    let int: f64 = p
        .integral()
        .iter()
        .zip(series.integral())
        .map(|(a, b)| a - b)
        .sum();
    Ok((norm, int))
}
