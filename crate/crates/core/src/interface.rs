//! Space-time interface problems and their iterative solution.
//!
//! Schur method: the unknown is the Dirichlet trace `lambda` on every
//! interface, piecewise constant on a master grid (one of the two adjacent
//! subdomains' grids). The operator maps `lambda` to the sum over both sides
//! of `-phi_i . n_i`, each projected onto the master grid. The
//! Neumann-Neumann preconditioner sums weighted Neumann solves.
//!
//! Robin method: the unknowns are the Robin data `zeta_i` of every
//! subdomain on its own grid. The operator is `zeta - Pi g(zeta)` with `g`
//! the outgoing Robin traces of the neighbors. Jacobi iteration on this
//! system is optimized Schwarz waveform relaxation.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Decomposition, Mesh};
use crate::linsolve::{gmres, GmresOptions, KrylovReport};
use crate::mhfe::Coefficients;
use crate::propagate::{
    solve_dirichlet, solve_neumann, solve_robin, InterfaceTrace, RobinParameters, SourceFn,
    SpaceTimeSolution, Store, SubdomainProblem, TraceKind,
};
use crate::timegrid::{TimeGrid, TimeSeries};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Schur,
    SchurNn,
    Robin,
}

impl Method {
    /// Subdomain solves per iteration, counted in parallel sweeps.
    pub fn cost_per_iteration(self) -> usize {
        match self {
            Method::Schur | Method::Robin => 1,
            Method::SchurNn => 2,
        }
    }
}

/// Dirichlet data per interface, on the interface's master grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurState {
    pub lambda: Vec<TimeSeries>,
}

/// Robin data per subdomain, on the subdomain's grid, columns in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct RobinState {
    pub zeta: Vec<TimeSeries>,
}

fn flatten(series: &[TimeSeries]) -> Vec<f64> {
    series.iter().flat_map(|s| s.values.iter().copied()).collect()
}

fn unflatten(template: &[TimeSeries], x: &[f64]) -> Vec<TimeSeries> {
    let mut off = 0;
    template
        .iter()
        .map(|t| {
            let n = t.values.len();
            let s = TimeSeries {
                grid: t.grid.clone(),
                width: t.width,
                values: x[off..off + n].to_vec(),
            };
            off += n;
            s
        })
        .collect()
}

impl SchurState {
    pub fn to_vec(&self) -> Vec<f64> {
        flatten(&self.lambda)
    }

    pub fn axpy(&mut self, a: f64, x: &SchurState) {
        for (s, t) in self.lambda.iter_mut().zip(&x.lambda) {
            s.axpy(a, t);
        }
    }
}

impl RobinState {
    pub fn to_vec(&self) -> Vec<f64> {
        flatten(&self.zeta)
    }

    pub fn axpy(&mut self, a: f64, x: &RobinState) {
        for (s, t) in self.zeta.iter_mut().zip(&x.zeta) {
            s.axpy(a, t);
        }
    }
}

/// Neumann-Neumann weights per interface edge: `(sigma_lo, sigma_hi)` with
/// `sigma_ij = (d_i / (d_i + d_j))^2`, optionally normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub per_edge: Vec<Vec<(f64, f64)>>,
}

impl Weights {
    pub fn new(dec: &Decomposition, coeffs: &Coefficients, normalize: bool) -> Weights {
        let per_edge = dec
            .interfaces
            .iter()
            .map(|f| {
                f.elements
                    .iter()
                    .map(|&(a, b)| {
                        let (da, db) = (coeffs.d[a], coeffs.d[b]);
                        let sa = (da / (da + db)).powi(2);
                        let sb = (db / (da + db)).powi(2);
                        if normalize {
                            (sa / (sa + sb), sb / (sa + sb))
                        } else {
                            (sa, sb)
                        }
                    })
                    .collect()
            })
            .collect();
        Weights { per_edge }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DdOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: Option<usize>,
    /// States kept by the final reconstruction sweep.
    pub store: Store,
}

impl Default for DdOptions {
    fn default() -> Self {
        DdOptions {
            tol: 1e-6,
            max_iter: 200,
            restart: None,
            store: Store::Final,
        }
    }
}

/// Converged (or best) interface data, iteration record and the subdomain
/// solutions rebuilt from it.
#[derive(Debug, Clone)]
pub struct DdSolution {
    pub method: Method,
    /// Flattened interface unknowns (per interface for Schur, per subdomain
    /// for Robin).
    pub interface: Vec<f64>,
    pub report: KrylovReport,
    pub subdomains: Vec<SpaceTimeSolution>,
}

#[derive(Debug, Clone, Copy)]
pub struct JacobiOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Run exactly `max_iter` iterations regardless of `tol`.
    pub fixed_iterations: bool,
    pub store: Store,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        JacobiOptions {
            tol: 1e-6,
            max_iter: 200,
            fixed_iterations: false,
            store: Store::Final,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JacobiResult {
    pub zeta: RobinState,
    /// Relative size of successive updates (equal to the relative residual
    /// of the Robin interface system).
    pub report: KrylovReport,
    /// `B^k`: weighted squared norm of all outgoing Robin traces, measured
    /// against the reference iterate when one is given.
    pub b_history: Vec<f64>,
    pub subdomains: Vec<SpaceTimeSolution>,
}

/// A decomposed problem: one [`SubdomainProblem`] per subdomain plus the
/// interface bookkeeping.
pub struct DdProblem {
    pub mesh: Arc<Mesh>,
    pub dec: Arc<Decomposition>,
    pub coeffs: Arc<Coefficients>,
    pub subs: Vec<SubdomainProblem>,
    /// Subdomain whose grid carries `lambda`, per interface.
    pub masters: Vec<usize>,
    pub robin: Option<RobinParameters>,
    pub weights: Weights,
}

impl std::fmt::Debug for DdProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DdProblem")
            .field("subdomains", &self.subs)
            .field("masters", &self.masters)
            .finish()
    }
}

impl DdProblem {
    pub fn new(
        mesh: Arc<Mesh>,
        dec: Arc<Decomposition>,
        coeffs: Arc<Coefficients>,
        grids: Vec<TimeGrid>,
    ) -> Result<DdProblem> {
        if grids.len() != dec.len() {
            return Err(Error::GridMismatch(format!(
                "{} time grids for {} subdomains",
                grids.len(),
                dec.len()
            )));
        }
        let horizon = grids[0].horizon();
        for g in &grids {
            if (g.horizon() - horizon).abs() > 1e-13 * horizon {
                return Err(Error::GridMismatch(format!(
                    "subdomain horizons differ: {} vs {horizon}",
                    g.horizon()
                )));
            }
        }
        let subs = grids
            .into_iter()
            .enumerate()
            .map(|(i, g)| SubdomainProblem::new(mesh.clone(), coeffs.clone(), &dec, i, g))
            .collect::<Result<Vec<_>>>()?;
        let masters = dec.interfaces.iter().map(|f| f.pair.0).collect();
        let weights = Weights::new(&dec, &coeffs, false);
        Ok(DdProblem {
            mesh,
            dec,
            coeffs,
            subs,
            masters,
            robin: None,
            weights,
        })
    }

    pub fn set_source(&mut self, f: Option<SourceFn>) {
        for s in &mut self.subs {
            s.set_source(f.clone());
        }
    }

    pub fn set_initial_global(&mut self, c0: &[f64]) {
        for s in &mut self.subs {
            s.set_initial_global(c0);
        }
    }

    pub fn set_dirichlet(&mut self, g: impl Fn(f64, f64) -> f64) {
        for s in &mut self.subs {
            s.set_dirichlet(&g);
        }
    }

    pub fn set_time_offset(&mut self, t: f64) {
        for s in &mut self.subs {
            s.set_time_offset(t);
        }
    }

    pub fn set_normalized_weights(&mut self, normalize: bool) {
        self.weights = Weights::new(&self.dec, &self.coeffs, normalize);
    }

    /// Put `lambda` of interface `p` on subdomain `owner`'s grid.
    pub fn set_master(&mut self, p: usize, owner: usize) -> Result<()> {
        let f = self
            .dec
            .interfaces
            .get(p)
            .ok_or_else(|| Error::IndexError(format!("no interface {p}")))?;
        if owner != f.pair.0 && owner != f.pair.1 {
            return Err(Error::IndexError(format!(
                "subdomain {owner} is not adjacent to interface {p}"
            )));
        }
        self.masters[p] = owner;
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.subs[0].grid.horizon()
    }

    fn robin_params(&self) -> Result<&RobinParameters> {
        self.robin
            .as_ref()
            .ok_or_else(|| Error::config("robin", "Robin parameters are not set"))
    }

    fn master_grid(&self, p: usize) -> &TimeGrid {
        &self.subs[self.masters[p]].grid
    }

    /// Slot range of subdomain `i` on interface `p`.
    fn range(&self, p: usize, i: usize) -> std::ops::Range<usize> {
        let (a, b) = self.dec.interfaces[p].pair;
        let other = if i == a { b } else { a };
        self.subs[i]
            .layout
            .slot_range(other)
            .expect("interface slots present on both sides")
    }

    fn interface_index(&self, i: usize, j: usize) -> usize {
        let pair = (i.min(j), i.max(j));
        self.dec
            .interfaces
            .iter()
            .position(|f| f.pair == pair)
            .expect("neighbors share an interface")
    }

    fn edge_lengths(&self, p: usize) -> Vec<f64> {
        self.dec.interfaces[p]
            .edges
            .iter()
            .map(|&e| self.mesh.edges[e].length)
            .collect()
    }

    fn slot_lengths(&self, i: usize) -> Vec<f64> {
        self.subs[i].layout.slots.iter().map(|s| s.length).collect()
    }

    /// Inner-product weights `|E| dt` of a flattened Schur vector.
    pub fn schur_weights(&self) -> Vec<f64> {
        let mut w = Vec::new();
        for p in 0..self.dec.interfaces.len() {
            let lens = self.edge_lengths(p);
            for dt in self.master_grid(p).dts() {
                w.extend(lens.iter().map(|l| l * dt));
            }
        }
        w
    }

    /// Inner-product weights `|E| dt` of a flattened Robin vector.
    pub fn robin_weights(&self) -> Vec<f64> {
        let mut w = Vec::new();
        for (i, s) in self.subs.iter().enumerate() {
            let lens = self.slot_lengths(i);
            for dt in s.grid.dts() {
                w.extend(lens.iter().map(|l| l * dt));
            }
        }
        w
    }

    pub fn schur_zero(&self) -> SchurState {
        SchurState {
            lambda: (0..self.dec.interfaces.len())
                .map(|p| TimeSeries::zeros(self.master_grid(p).clone(), self.dec.interfaces[p].edges.len()))
                .collect(),
        }
    }

    pub fn robin_zero(&self) -> RobinState {
        RobinState {
            zeta: self
                .subs
                .iter()
                .map(|s| TimeSeries::zeros(s.grid.clone(), s.n_slots()))
                .collect(),
        }
    }

    pub fn schur_from_vec(&self, x: &[f64]) -> SchurState {
        SchurState {
            lambda: unflatten(&self.schur_zero().lambda, x),
        }
    }

    pub fn robin_from_vec(&self, x: &[f64]) -> RobinState {
        RobinState {
            zeta: unflatten(&self.robin_zero().zeta, x),
        }
    }

    /// Master-grid data of every adjacent interface, projected onto
    /// subdomain `i`'s grid, with per-slot scaling.
    fn scatter_to(&self, x: &[TimeSeries], i: usize, scale: Option<&dyn Fn(usize, usize) -> f64>) -> Result<TimeSeries> {
        let sub = &self.subs[i];
        let mut out = TimeSeries::zeros(sub.grid.clone(), sub.n_slots());
        for (nb, r) in &sub.layout.slot_groups {
            let p = self.interface_index(i, *nb);
            let mut proj = x[p].project(&sub.grid)?;
            if let Some(f) = scale {
                for m in 0..proj.grid.len() {
                    for (e, v) in proj.interval_mut(m).iter_mut().enumerate() {
                        *v *= f(p, e);
                    }
                }
            }
            out.add_columns(r.start, &proj);
        }
        Ok(out)
    }

    /// Sum both sides' traces of every interface on its master grid.
    fn gather(&self, traces: &[TimeSeries], scale: Option<&dyn Fn(usize, usize) -> f64>) -> Result<Vec<TimeSeries>> {
        let mut out = self.schur_zero().lambda;
        for (p, f) in self.dec.interfaces.iter().enumerate() {
            for i in [f.pair.0, f.pair.1] {
                let mut part = traces[i].columns(self.range(p, i)).project(self.master_grid(p))?;
                if let Some(s) = scale {
                    for m in 0..part.grid.len() {
                        for (e, v) in part.interval_mut(m).iter_mut().enumerate() {
                            *v *= s(p, e);
                        }
                    }
                }
                out[p].axpy(1.0, &part);
            }
        }
        Ok(out)
    }

    /// Projected neighbor traces: `Pi_{ji} g_j` placed in subdomain `i`'s slots.
    fn exchange(&self, g: &[TimeSeries]) -> Result<Vec<TimeSeries>> {
        self.subs
            .iter()
            .enumerate()
            .map(|(i, sub)| {
                let mut out = TimeSeries::zeros(sub.grid.clone(), sub.n_slots());
                for (j, r) in &sub.layout.slot_groups {
                    let rj = self.subs[*j].layout.slot_range(i).expect("symmetric neighbors");
                    let part = g[*j].columns(rj).project(&sub.grid)?;
                    out.add_columns(r.start, &part);
                }
                Ok(out)
            })
            .collect()
    }

    fn dirichlet_sweep(
        &self,
        lambda: &SchurState,
        with_sources: bool,
        store: Store,
    ) -> Result<Vec<(SpaceTimeSolution, TimeSeries)>> {
        let data = (0..self.subs.len())
            .map(|i| self.scatter_to(&lambda.lambda, i, None))
            .collect::<Result<Vec<_>>>()?;
        self.subs
            .par_iter()
            .zip(data)
            .map(|(sub, d)| {
                let lam = InterfaceTrace {
                    kind: TraceKind::Dirichlet,
                    series: d,
                };
                let (sol, tr) = solve_dirichlet(sub, &lam, with_sources, store)?;
                Ok((sol, tr.series))
            })
            .collect()
    }

    /// `S lambda`: sum of `-phi_i . n_i` over both sides, on master grids.
    pub fn schur_apply(&self, lambda: &SchurState) -> Result<SchurState> {
        let traces: Vec<TimeSeries> = self
            .dirichlet_sweep(lambda, false, Store::Final)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        Ok(SchurState {
            lambda: self.gather(&traces, None)?,
        })
    }

    /// `chi`: minus the flux jump produced by the sources with `lambda = 0`.
    pub fn schur_rhs(&self) -> Result<SchurState> {
        let traces: Vec<TimeSeries> = self
            .dirichlet_sweep(&self.schur_zero(), true, Store::Final)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let mut chi = self.gather(&traces, None)?;
        chi.iter_mut().for_each(|s| s.scale(-1.0));
        Ok(SchurState { lambda: chi })
    }

    /// Weighted sum of Neumann solves `sum_i D_i N_i D_i r` with
    /// `D_i = sqrt(sigma_i)` per edge.
    pub fn nn_precondition(&self, r: &SchurState) -> Result<SchurState> {
        let sqrt_sigma = |p: usize, e: usize, lo: bool| -> f64 {
            let (a, b) = self.weights.per_edge[p][e];
            if lo {
                a.sqrt()
            } else {
                b.sqrt()
            }
        };
        let data = (0..self.subs.len())
            .map(|i| {
                let f = |p: usize, e: usize| sqrt_sigma(p, e, self.dec.interfaces[p].pair.0 == i);
                self.scatter_to(&r.lambda, i, Some(&f))
            })
            .collect::<Result<Vec<_>>>()?;
        let thetas: Vec<TimeSeries> = self
            .subs
            .par_iter()
            .zip(data)
            .map(|(sub, d)| {
                let psi = InterfaceTrace {
                    kind: TraceKind::Flux,
                    series: d,
                };
                Ok(solve_neumann(sub, &psi, Store::Final)?.1.series)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut out = self.schur_zero().lambda;
        for (p, f) in self.dec.interfaces.iter().enumerate() {
            for (i, lo) in [(f.pair.0, true), (f.pair.1, false)] {
                let mut part = thetas[i].columns(self.range(p, i)).project(self.master_grid(p))?;
                for m in 0..part.grid.len() {
                    for (e, v) in part.interval_mut(m).iter_mut().enumerate() {
                        *v *= sqrt_sigma(p, e, lo);
                    }
                }
                out[p].axpy(1.0, &part);
            }
        }
        Ok(SchurState { lambda: out })
    }

    /// Outgoing Robin traces of every subdomain for data `zeta`.
    fn robin_sweep(
        &self,
        zeta: &RobinState,
        with_sources: bool,
        store: Store,
    ) -> Result<Vec<(SpaceTimeSolution, TimeSeries)>> {
        self.robin_sweep_with(self.robin_params()?, zeta, with_sources, store)
    }

    fn robin_sweep_with(
        &self,
        params: &RobinParameters,
        zeta: &RobinState,
        with_sources: bool,
        store: Store,
    ) -> Result<Vec<(SpaceTimeSolution, TimeSeries)>> {
        self.subs
            .par_iter()
            .zip(&zeta.zeta)
            .map(|(sub, z)| {
                let zt = InterfaceTrace {
                    kind: TraceKind::Robin,
                    series: z.clone(),
                };
                let (sol, g) = solve_robin(sub, &zt, params, with_sources, store)?;
                Ok((sol, g.series))
            })
            .collect()
    }

    /// `zeta_i - sum_j Pi_{ji} g_j(zeta_j, 0, 0)`.
    pub fn robin_apply(&self, zeta: &RobinState) -> Result<RobinState> {
        let g: Vec<TimeSeries> = self
            .robin_sweep(zeta, false, Store::Final)?
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        let mut out = zeta.clone();
        for (o, e) in out.zeta.iter_mut().zip(self.exchange(&g)?) {
            o.axpy(-1.0, &e);
        }
        Ok(out)
    }

    /// `sum_j Pi_{ji} g_j(0, f, c0)`.
    pub fn robin_rhs(&self) -> Result<RobinState> {
        let g: Vec<TimeSeries> = self
            .robin_sweep(&self.robin_zero(), true, Store::Final)?
            .into_iter()
            .map(|(_, g)| g)
            .collect();
        Ok(RobinState {
            zeta: self.exchange(&g)?,
        })
    }


    /// Jacobi iteration on the Robin system from `zeta0`:
    /// `zeta^{k+1} = Pi g(zeta^k, f, c0)`.
    ///
    /// The update `zeta^{k+1} - zeta^k` equals minus the interface residual
    /// of `zeta^k`; it is reported relative to the first update.
    pub fn oswr_jacobi(
        &self,
        zeta0: &RobinState,
        reference: Option<&RobinState>,
        opts: &JacobiOptions,
    ) -> Result<JacobiResult> {
        self.oswr_jacobi_with(self.robin_params()?, zeta0, reference, opts)
    }

    /// [`DdProblem::oswr_jacobi`] with explicit Robin parameters.
    pub fn oswr_jacobi_with(
        &self,
        params: &RobinParameters,
        zeta0: &RobinState,
        reference: Option<&RobinState>,
        opts: &JacobiOptions,
    ) -> Result<JacobiResult> {
        let w = self.robin_weights();
        let slot_w: Vec<Vec<f64>> = (0..self.subs.len()).map(|i| self.slot_lengths(i)).collect();
        let g_ref: Option<Vec<TimeSeries>> = match reference {
            Some(r) => Some(self.robin_sweep_with(params, r, true, Store::Final)?.into_iter().map(|(_, g)| g).collect()),
            None => None,
        };
        let wnorm = |x: &[f64]| -> f64 { x.iter().zip(&w).map(|(v, w)| w * v * v).sum::<f64>().sqrt() };

        let mut zeta = zeta0.clone();
        let mut report = KrylovReport::default();
        let mut b_history = Vec::new();
        let mut base = 1.0;
        let subdomains = loop {
            let (sols, g): (Vec<_>, Vec<_>) = self.robin_sweep_with(params, &zeta, true, opts.store)?.into_iter().unzip();
            if let Some(gr) = &g_ref {
                let b: f64 = g
                    .iter()
                    .zip(gr)
                    .zip(&slot_w)
                    .map(|((a, r), lw)| {
                        let mut d = a.clone();
                        d.axpy(-1.0, r);
                        d.weighted_norm_sq(lw)
                    })
                    .sum();
                b_history.push(b);
            }
            let next = RobinState {
                zeta: self.exchange(&g)?,
            };
            let mut upd = next.clone();
            upd.axpy(-1.0, &zeta);
            let un = wnorm(&upd.to_vec());
            if report.residual_history.is_empty() && un > 0.0 {
                base = un;
            }
            let rel = un / base;
            report.residual_history.push(rel);
            if un == 0.0 || (!opts.fixed_iterations && rel <= opts.tol) {
                report.converged = true;
                break sols;
            }
            if report.iterations >= opts.max_iter {
                report.converged = rel <= opts.tol;
                break sols;
            }
            zeta = next;
            report.iterations += 1;
            report.subdomain_solve_count += Method::Robin.cost_per_iteration();
        };
        Ok(JacobiResult {
            zeta,
            report,
            b_history,
            subdomains,
        })
    }

    /// Right-hand side of the interface system for `method`, flattened.
    pub fn interface_rhs(&self, method: Method) -> Result<Vec<f64>> {
        Ok(match method {
            Method::Schur | Method::SchurNn => self.schur_rhs()?.to_vec(),
            Method::Robin => self.robin_rhs()?.to_vec(),
        })
    }

    /// Interface operator of `method` applied to a flattened vector.
    pub fn interface_apply(&self, method: Method, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match method {
            Method::Schur | Method::SchurNn => self.schur_apply(&self.schur_from_vec(x))?.to_vec(),
            Method::Robin => self.robin_apply(&self.robin_from_vec(x))?.to_vec(),
        })
    }

    pub fn interface_weights(&self, method: Method) -> Vec<f64> {
        match method {
            Method::Schur | Method::SchurNn => self.schur_weights(),
            Method::Robin => self.robin_weights(),
        }
    }

    /// Uniform random interface vector in `[-1, 1]` (error-equation runs).
    pub fn random_guess(&self, method: Method, seed: u64) -> Vec<f64> {
        let n = self.interface_weights(method).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    /// Subdomain solutions for given interface unknowns, with sources.
    pub fn reconstruct(&self, method: Method, x: &[f64], store: Store) -> Result<Vec<SpaceTimeSolution>> {
        let sols = match method {
            Method::Schur | Method::SchurNn => self.dirichlet_sweep(&self.schur_from_vec(x), true, store)?,
            Method::Robin => self.robin_sweep(&self.robin_from_vec(x), true, store)?,
        };
        Ok(sols.into_iter().map(|(s, _)| s).collect())
    }

    /// GMRES on the interface system in the `|E| dt`-weighted inner product.
    pub fn solve_gmres(&self, method: Method, opts: &DdOptions, x0: Option<&[f64]>) -> Result<DdSolution> {
        let sw: Vec<f64> = self.interface_weights(method).iter().map(|w| w.sqrt()).collect();
        let n = sw.len();
        let scale = |x: &[f64]| -> Vec<f64> { x.iter().zip(&sw).map(|(v, s)| v * s).collect() };
        let unscale = |y: &[f64]| -> Vec<f64> { y.iter().zip(&sw).map(|(v, s)| v / s).collect() };

        let b = scale(&self.interface_rhs(method)?);
        let y0 = match x0 {
            Some(x) => {
                if x.len() != n {
                    return Err(Error::IndexError(format!(
                        "initial guess has {} entries, interface has {n}",
                        x.len()
                    )));
                }
                scale(x)
            }
            None => vec![0.0; n],
        };
        let gopts = GmresOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
            restart: opts.restart,
        };
        let apply = |y: &[f64]| -> Result<Vec<f64>> { Ok(scale(&self.interface_apply(method, &unscale(y))?)) };
        let (y, mut report) = if method == Method::SchurNn {
            let pre = |y: &[f64]| -> Result<Vec<f64>> {
                let r = self.schur_from_vec(&unscale(y));
                Ok(scale(&self.nn_precondition(&r)?.to_vec()))
            };
            gmres(apply, &b, &y0, &gopts, Some(pre))?
        } else {
            gmres(apply, &b, &y0, &gopts, None::<fn(&[f64]) -> Result<Vec<f64>>>)?
        };
        report.subdomain_solve_count = report.iterations * method.cost_per_iteration();
        let x = unscale(&y);
        let subdomains = self.reconstruct(method, &x, opts.store)?;
        Ok(DdSolution {
            method,
            interface: x,
            report,
            subdomains,
        })
    }

    /// Final concentration and edge fluxes on the whole mesh.
    pub fn global_fields(&self, sols: &[SpaceTimeSolution]) -> (Vec<f64>, Vec<[f64; 4]>) {
        let ne = self.mesh.elements.len();
        let mut c = vec![0.0; ne];
        let mut phi = vec![[0.0; 4]; ne];
        for (sub, sol) in self.subs.iter().zip(sols) {
            let st = sol.final_state();
            for (l, &k) in sub.layout.elements.iter().enumerate() {
                c[k] = st.c[l];
                phi[k] = st.phi[l];
            }
        }
        (c, phi)
    }

    /// `sum_K |K| omega_K c_K` of a global field.
    pub fn total_mass(&self, c: &[f64]) -> f64 {
        self.mesh
            .elements
            .iter()
            .zip(c.iter().zip(&self.coeffs.omega))
            .map(|(e, (v, w))| e.area * w * v)
            .sum()
    }

    /// Solve `(0, T)` in `count` consecutive windows. Every window
    /// boundary must be a time point of every subdomain grid. The final
    /// concentration of a window is the initial state of the next, and the
    /// interface solution of a window seeds the next one when the sizes
    /// agree.
    /// Global concentrations at the end of the windows listed in `keep` are
    /// returned in [`WindowReport::snapshots`].
    pub fn run_time_windows(
        &mut self,
        count: usize,
        iteration: WindowIteration,
        keep: &[usize],
    ) -> Result<WindowReport> {
        if count == 0 {
            return Err(Error::config("windows", "need at least one time window"));
        }
        let horizon = self.horizon();
        let full: Vec<TimeGrid> = self.subs.iter().map(|s| s.grid.clone()).collect();
        let c0: Vec<f64> = {
            let mut g = vec![0.0; self.mesh.elements.len()];
            for s in &self.subs {
                s.scatter(&s.c0, &mut g);
            }
            g
        };
        let bounds: Vec<f64> = (0..=count).map(|w| horizon * w as f64 / count as f64).collect();
        let mut pieces: Vec<Vec<TimeGrid>> = Vec::with_capacity(count);
        for w in 0..count {
            pieces.push(
                full.iter()
                    .map(|g| window_grid(g, bounds[w], bounds[w + 1]))
                    .collect::<Result<Vec<_>>>()?,
            );
        }

        let mut report = WindowReport {
            windows: Vec::with_capacity(count),
            mass: vec![self.total_mass(&c0)],
            final_c: c0.clone(),
            final_phi: vec![[0.0; 4]; c0.len()],
            subdomains: Vec::new(),
            snapshots: Vec::new(),
            max_mass_defect: 0.0,
            max_flux_jump: 0.0,
        };
        let mut current = c0;
        let mut guess: Option<Vec<f64>> = None;
        let result = (|| -> Result<()> {
            for (w, grids) in pieces.into_iter().enumerate() {
                for (s, g) in self.subs.iter_mut().zip(grids) {
                    s.set_grid(g);
                    s.set_time_offset(bounds[w]);
                    s.set_initial_global(&current);
                }
                let run = || -> Result<(Vec<f64>, KrylovReport, Vec<SpaceTimeSolution>)> {
                    match iteration {
                        WindowIteration::Gmres(method, opts) => {
                            let x0 = guess
                                .as_deref()
                                .filter(|g| g.len() == self.interface_weights(method).len());
                            let s = self.solve_gmres(method, &opts, x0)?;
                            Ok((s.interface, s.report, s.subdomains))
                        }
                        WindowIteration::Jacobi(opts) => {
                            let zero = self.robin_zero();
                            let z0 = match guess.as_deref() {
                                Some(g) if g.len() == zero.to_vec().len() => self.robin_from_vec(g),
                                _ => zero,
                            };
                            let r = self.oswr_jacobi(&z0, None, &opts)?;
                            Ok((r.zeta.to_vec(), r.report, r.subdomains))
                        }
                    }
                };
                let (x, rep, sols) = run().map_err(|e| Error::Window {
                    window: w,
                    source: Box::new(e),
                })?;
                let (c, phi) = self.global_fields(&sols);
                report.mass.push(self.total_mass(&c));
                report.windows.push(rep);
                for s in &sols {
                    report.max_mass_defect = report.max_mass_defect.max(s.max_mass_defect);
                    report.max_flux_jump = report.max_flux_jump.max(s.max_flux_jump);
                }
                if keep.contains(&w) {
                    report.snapshots.push((bounds[w + 1], c.clone()));
                }
                current = c;
                report.final_phi = phi;
                report.subdomains = sols;
                guess = Some(x);
            }
            Ok(())
        })();
        for (s, g) in self.subs.iter_mut().zip(full) {
            s.set_grid(g);
            s.set_time_offset(0.0);
        }
        result?;
        report.final_c = current;
        Ok(report)
    }
}

/// Iteration used inside every time window.
#[derive(Debug, Clone, Copy)]
pub enum WindowIteration {
    Gmres(Method, DdOptions),
    Jacobi(JacobiOptions),
}

#[derive(Debug, Clone)]
pub struct WindowReport {
    pub windows: Vec<KrylovReport>,
    /// Total mass at `t = 0` and at the end of every window.
    pub mass: Vec<f64>,
    pub final_c: Vec<f64>,
    pub final_phi: Vec<[f64; 4]>,
    /// Subdomain solutions of the last window.
    pub subdomains: Vec<SpaceTimeSolution>,
    /// `(time, global concentration)` at the requested window ends.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Worst local conservation defects over all windows and subdomains.
    pub max_mass_defect: f64,
    pub max_flux_jump: f64,
}

impl WindowReport {
    pub fn converged(&self) -> bool {
        self.windows.iter().all(|r| r.converged)
    }

    pub fn subdomain_solves(&self) -> usize {
        self.windows.iter().map(|r| r.subdomain_solve_count).sum()
    }
}

/// Points of `g` in `[a, b]`, shifted to start at 0.
fn window_grid(g: &TimeGrid, a: f64, b: f64) -> Result<TimeGrid> {
    let tol = crate::timegrid::BREAKPOINT_TOL * g.horizon();
    let p = g.points();
    let find = |t: f64| p.iter().position(|&s| (s - t).abs() <= tol);
    match (find(a), find(b)) {
        (Some(i), Some(j)) if j > i => {
            let mut pts: Vec<f64> = p[i..=j].iter().map(|t| t - p[i]).collect();
            pts[0] = 0.0;
            TimeGrid::new(pts)
        }
        _ => Err(Error::GridMismatch(format!(
            "window [{a}, {b}] does not fall on grid points"
        ))),
    }
}

/// Write `iteration,relative_residual,cumulative_subdomain_solves`.
pub fn write_residual_csv(path: &Path, report: &KrylovReport, cost: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,relative_residual,cumulative_subdomain_solves")?;
    for (k, r) in report.residual_history.iter().enumerate() {
        writeln!(f, "{k},{r:e},{}", k * cost)?;
    }
    f.flush()?;
    Ok(())
}

