//! Global-in-time subdomain solvers. Each solver marches backward Euler over
//! the subdomain's own time grid with interface data given piecewise
//! constant on that grid, and returns the requested interface trace.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Decomposition, Mesh};
use crate::mhfe::{
    flux_jump, Coefficients, FieldState, InterfaceCondition, LocalLayout, SolveStrategy, StepData,
    StepSystem, UpwindMode,
};
use crate::timegrid::{TimeGrid, TimeSeries};

pub type SourceFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    /// Dirichlet data `lambda`.
    Dirichlet,
    /// `-phi . n_i`.
    Flux,
    /// Robin data or outgoing Robin trace.
    Robin,
    /// Multiplier `theta` on the interface.
    Multiplier,
}

/// Piecewise constant in time data on the interface edges of one subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTrace {
    pub kind: TraceKind,
    pub series: TimeSeries,
}

impl InterfaceTrace {
    pub fn zeros(kind: TraceKind, grid: TimeGrid, width: usize) -> Self {
        InterfaceTrace {
            kind,
            series: TimeSeries::zeros(grid, width),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.series.grid
    }
}

/// Which states a march keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Store {
    Final,
    All,
}

#[derive(Debug, Clone)]
pub struct SpaceTimeSolution {
    pub grid: TimeGrid,
    /// Concentration before the first step.
    pub initial: Vec<f64>,
    /// One state per interval, or only the last one with [`Store::Final`].
    pub states: Vec<FieldState>,
    pub all_steps: bool,
    /// Worst per-element mass balance defect over all steps (relative).
    pub max_mass_defect: f64,
    /// Worst interior flux antisymmetry defect over all steps (relative).
    pub max_flux_jump: f64,
}

impl SpaceTimeSolution {
    pub fn final_state(&self) -> &FieldState {
        self.states.last().expect("at least one interval")
    }

    pub fn state(&self, m: usize) -> Option<&FieldState> {
        if self.all_steps {
            self.states.get(m)
        } else if m + 1 == self.grid.len() {
            self.states.last()
        } else {
            None
        }
    }
}

/// Robin parameters `alpha_{i,j}` per ordered subdomain pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobinParameters {
    values: BTreeMap<(usize, usize), f64>,
}

impl RobinParameters {
    /// Same `alpha` on both sides of every interface.
    pub fn uniform(dec: &Decomposition, alpha: f64) -> Result<Self> {
        let mut p = RobinParameters::default();
        for f in &dec.interfaces {
            p.set(f.pair.0, f.pair.1, alpha)?;
            p.set(f.pair.1, f.pair.0, alpha)?;
        }
        Ok(p)
    }

    pub fn set(&mut self, i: usize, j: usize, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidRobinParameter(alpha));
        }
        self.values.insert((i, j), alpha);
        Ok(())
    }

    /// `alpha_{i,j}`: parameter of the condition imposed on subdomain `i`
    /// at its interface with `j`.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        self.values
            .get(&(i, j))
            .copied()
            .ok_or_else(|| Error::IndexError(format!("no Robin parameter for pair ({i}, {j})")))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum CondKey {
    Dirichlet,
    Neumann,
    Robin(Vec<u64>),
}

impl From<&InterfaceCondition> for CondKey {
    fn from(c: &InterfaceCondition) -> Self {
        match c {
            InterfaceCondition::Dirichlet => CondKey::Dirichlet,
            InterfaceCondition::Neumann => CondKey::Neumann,
            InterfaceCondition::Robin(a) => CondKey::Robin(a.iter().map(|v| v.to_bits()).collect()),
        }
    }
}

/// One subdomain with its data, time grid and cached factorizations.
pub struct SubdomainProblem {
    pub mesh: Arc<Mesh>,
    pub coeffs: Arc<Coefficients>,
    pub layout: Arc<LocalLayout>,
    pub source: Option<SourceFn>,
    /// Exterior Dirichlet values per local edge.
    pub dirichlet: Vec<f64>,
    pub c0: Vec<f64>,
    pub grid: TimeGrid,
    /// Absolute time of the grid's origin (time windows).
    pub time_offset: f64,
    pub strategy: SolveStrategy,
    /// Factorizations keyed by step size (matched up to round-off) and
    /// interface condition.
    systems: Mutex<Vec<(Option<f64>, CondKey, Arc<StepSystem>)>>,
    sources: Mutex<Option<Arc<Vec<Vec<f64>>>>>,
}

impl std::fmt::Debug for SubdomainProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubdomainProblem")
            .field("index", &self.layout.index)
            .field("elements", &self.layout.n_elements())
            .field("slots", &self.layout.n_slots())
            .field("steps", &self.grid.len())
            .finish()
    }
}

impl SubdomainProblem {
    pub fn new(
        mesh: Arc<Mesh>,
        coeffs: Arc<Coefficients>,
        dec: &Decomposition,
        index: usize,
        grid: TimeGrid,
    ) -> Result<SubdomainProblem> {
        let layout = Arc::new(LocalLayout::new(&mesh, dec, index)?);
        let ne = layout.n_elements();
        let nd = layout.n_edges();
        Ok(SubdomainProblem {
            mesh,
            coeffs,
            layout,
            source: None,
            dirichlet: vec![0.0; nd],
            c0: vec![0.0; ne],
            grid,
            time_offset: 0.0,
            strategy: SolveStrategy::default(),
            systems: Mutex::new(Vec::new()),
            sources: Mutex::new(None),
        })
    }

    pub fn index(&self) -> usize {
        self.layout.index
    }

    pub fn n_slots(&self) -> usize {
        self.layout.n_slots()
    }

    pub fn set_source(&mut self, f: Option<SourceFn>) {
        self.source = f;
        *self.sources.get_mut().unwrap() = None;
    }

    /// Initial concentration from per-global-element values.
    pub fn set_initial_global(&mut self, c0: &[f64]) {
        self.c0 = self.layout.elements.iter().map(|&k| c0[k]).collect();
    }

    pub fn set_initial(&mut self, c0: Vec<f64>) -> Result<()> {
        if c0.len() != self.layout.n_elements() {
            return Err(Error::IndexError(format!(
                "initial state has {} entries, subdomain has {} elements",
                c0.len(),
                self.layout.n_elements()
            )));
        }
        self.c0 = c0;
        Ok(())
    }

    /// Exterior Dirichlet data from a function of the edge midpoint.
    pub fn set_dirichlet(&mut self, g: impl Fn(f64, f64) -> f64) {
        self.dirichlet = self
            .layout
            .edges
            .iter()
            .map(|&e| {
                let [x, y] = self.mesh.edges[e].midpoint;
                g(x, y)
            })
            .collect();
    }

    pub fn set_time_offset(&mut self, t: f64) {
        if t != self.time_offset {
            self.time_offset = t;
            *self.sources.get_mut().unwrap() = None;
        }
    }

    /// Replace the grid; factorizations for other step sizes stay cached.
    pub fn set_grid(&mut self, grid: TimeGrid) {
        self.grid = grid;
        *self.sources.get_mut().unwrap() = None;
    }

    /// Number of distinct factorizations built so far.
    pub fn cached_systems(&self) -> usize {
        self.systems.lock().unwrap().len()
    }

    /// Drop all cached factorizations.
    pub fn clear_cache(&self) {
        self.systems.lock().unwrap().clear();
    }

    pub fn system(&self, dt: Option<f64>, cond: &InterfaceCondition) -> Result<Arc<StepSystem>> {
        let key = CondKey::from(cond);
        let same_dt = |a: Option<f64>| match (a, dt) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-10 * b,
            _ => false,
        };
        if let Some((_, _, s)) = self
            .systems
            .lock()
            .unwrap()
            .iter()
            .find(|(d, k, _)| same_dt(*d) && *k == key)
        {
            return Ok(s.clone());
        }
        let s = Arc::new(StepSystem::assemble(
            &self.mesh,
            &self.coeffs,
            self.layout.clone(),
            dt,
            cond.clone(),
            self.strategy,
        )?);
        self.systems.lock().unwrap().push((dt, key, s.clone()));
        Ok(s)
    }

    /// `integral of f over K` at the end of every interval (midpoint rule in
    /// space, right endpoint in time).
    fn source_table(&self) -> Option<Arc<Vec<Vec<f64>>>> {
        let f = self.source.as_ref()?;
        let mut guard = self.sources.lock().unwrap();
        if let Some(t) = guard.as_ref() {
            return Some(t.clone());
        }
        let table: Vec<Vec<f64>> = (0..self.grid.len())
            .map(|m| {
                let t = self.time_offset + self.grid.t_end(m);
                self.layout
                    .elements
                    .iter()
                    .map(|&k| {
                        let el = &self.mesh.elements[k];
                        el.area * f(el.center[0], el.center[1], t)
                    })
                    .collect()
            })
            .collect();
        let table = Arc::new(table);
        *guard = Some(table.clone());
        Some(table)
    }

    fn check_data(&self, data: Option<&TimeSeries>) -> Result<()> {
        if let Some(d) = data {
            if !d.grid.conforms_to(&self.grid) {
                return Err(Error::GridMismatch(format!(
                    "subdomain {}: interface data is not on the subdomain grid",
                    self.index()
                )));
            }
            if d.width != self.n_slots() {
                return Err(Error::IndexError(format!(
                    "subdomain {}: interface data has width {}, expected {}",
                    self.index(),
                    d.width,
                    self.n_slots()
                )));
            }
        }
        Ok(())
    }

    /// Backward Euler march. Returns the solution and the per-slot outward
    /// flux density `phi_KE / |E|` and trace `theta_E` for every interval.
    pub fn march(
        &self,
        cond: &InterfaceCondition,
        data: Option<&TimeSeries>,
        with_sources: bool,
        store: Store,
    ) -> Result<(SpaceTimeSolution, TimeSeries, TimeSeries)> {
        self.check_data(data)?;
        let lay = &*self.layout;
        let ns = lay.n_slots();
        let nm = self.grid.len();
        let table = if with_sources { self.source_table() } else { None };
        let initial = if with_sources {
            self.c0.clone()
        } else {
            vec![0.0; lay.n_elements()]
        };
        let mut flux = TimeSeries::zeros(self.grid.clone(), ns);
        let mut theta = TimeSeries::zeros(self.grid.clone(), ns);
        let mut states: Vec<FieldState> = Vec::with_capacity(if store == Store::All { nm } else { 1 });
        let mut prev = initial.clone();
        let mut max_mass: f64 = 0.0;
        let mut max_jump: f64 = 0.0;

        for m in 0..nm {
            let sys = self.system(Some(self.grid.dt(m)), cond)?;
            let src = table.as_ref().map(|t| t[m].as_slice());
            let step = StepData {
                source: src,
                c_prev: Some(&prev),
                dirichlet: with_sources.then_some(self.dirichlet.as_slice()),
                interface: data.map(|d| d.interval(m)),
            };
            let st = sys.solve(&step)?;
            max_mass = max_mass.max(sys.mass_defect(&st, src, Some(&prev)));
            max_jump = max_jump.max(flux_jump(lay, &st));
            let fl = flux.interval_mut(m);
            for (i, s) in lay.slots.iter().enumerate() {
                fl[i] = st.phi[s.local_element][s.side] / s.length;
            }
            let tv = theta.interval_mut(m);
            for (i, s) in lay.slots.iter().enumerate() {
                tv[i] = st.theta[s.local_edge];
            }
            prev.clone_from(&st.c);
            if store == Store::All || m + 1 == nm {
                states.push(st);
            }
        }
        Ok((
            SpaceTimeSolution {
                grid: self.grid.clone(),
                initial,
                states,
                all_steps: store == Store::All,
                max_mass_defect: max_mass,
                max_flux_jump: max_jump,
            },
            flux,
            theta,
        ))
    }

    /// Per-slot Robin parameters `alpha_{i,j}` of this subdomain.
    pub fn robin_condition(&self, params: &RobinParameters) -> Result<InterfaceCondition> {
        let i = self.index();
        let alpha = self
            .layout
            .slots
            .iter()
            .map(|s| params.get(i, s.neighbor))
            .collect::<Result<Vec<_>>>()?;
        Ok(InterfaceCondition::Robin(alpha))
    }

    /// Scatter local element values into a global vector.
    pub fn scatter(&self, local: &[f64], global: &mut [f64]) {
        for (l, &k) in self.layout.elements.iter().enumerate() {
            global[k] = local[l];
        }
    }
}

fn check_kind(t: &InterfaceTrace, kind: TraceKind) -> Result<()> {
    if t.kind != kind {
        return Err(Error::IndexError(format!(
            "expected {kind:?} interface data, got {:?}",
            t.kind
        )));
    }
    Ok(())
}

/// Dirichlet interface data `lambda`; returns `-phi . n_i` on the interface.
pub fn solve_dirichlet(
    sub: &SubdomainProblem,
    lambda: &InterfaceTrace,
    with_sources: bool,
    store: Store,
) -> Result<(SpaceTimeSolution, InterfaceTrace)> {
    check_kind(lambda, TraceKind::Dirichlet)?;
    let (sol, mut flux, _) = sub.march(&InterfaceCondition::Dirichlet, Some(&lambda.series), with_sources, store)?;
    flux.scale(-1.0);
    Ok((
        sol,
        InterfaceTrace {
            kind: TraceKind::Flux,
            series: flux,
        },
    ))
}

/// Neumann interface data `psi = -phi . n_i` with zero sources and initial
/// state; returns the interface multiplier.
pub fn solve_neumann(
    sub: &SubdomainProblem,
    psi: &InterfaceTrace,
    store: Store,
) -> Result<(SpaceTimeSolution, InterfaceTrace)> {
    check_kind(psi, TraceKind::Flux)?;
    let (sol, _, theta) = sub.march(&InterfaceCondition::Neumann, Some(&psi.series), false, store)?;
    Ok((
        sol,
        InterfaceTrace {
            kind: TraceKind::Multiplier,
            series: theta,
        },
    ))
}

/// Robin interface data `zeta`; returns the outgoing Robin trace
/// `-phi_i . n_j + alpha_{j,i} theta_i` toward each neighbor.
pub fn solve_robin(
    sub: &SubdomainProblem,
    zeta: &InterfaceTrace,
    params: &RobinParameters,
    with_sources: bool,
    store: Store,
) -> Result<(SpaceTimeSolution, InterfaceTrace)> {
    check_kind(zeta, TraceKind::Robin)?;
    let cond = sub.robin_condition(params)?;
    let (sol, flux, theta) = sub.march(&cond, Some(&zeta.series), with_sources, store)?;
    let i = sub.index();
    let alpha_out = sub
        .layout
        .slots
        .iter()
        .map(|s| params.get(s.neighbor, i))
        .collect::<Result<Vec<_>>>()?;
    let mut out = flux;
    for m in 0..out.grid.len() {
        let th = theta.interval(m);
        for (i, v) in out.interval_mut(m).iter_mut().enumerate() {
            *v += alpha_out[i] * th[i];
        }
    }
    Ok((
        sol,
        InterfaceTrace {
            kind: TraceKind::Robin,
            series: out,
        },
    ))
}

/// Whole-domain backward Euler reference solve with homogeneous exterior
/// Dirichlet data.
pub fn solve_monodomain(
    mesh: Arc<Mesh>,
    coeffs: Arc<Coefficients>,
    source: Option<SourceFn>,
    c0: &[f64],
    grid: TimeGrid,
    store: Store,
) -> Result<SpaceTimeSolution> {
    let dec = Decomposition::whole(&mesh);
    let mut sub = SubdomainProblem::new(mesh, coeffs, &dec, 0, grid)?;
    sub.set_source(source);
    sub.set_initial_global(c0);
    let (sol, _, _) = sub.march(&InterfaceCondition::Dirichlet, None, true, store)?;
    Ok(sol)
}

/// Steady Darcy flow: head per element and mean normal velocity per element
/// edge. `head` gives the values on exterior Dirichlet edges.
#[derive(Debug, Clone)]
pub struct DarcyField {
    pub head: Vec<f64>,
    pub u_edge: Vec<[f64; 4]>,
}

pub fn solve_darcy(
    mesh: Arc<Mesh>,
    conductivity: &[f64],
    head: impl Fn(f64, f64) -> f64,
) -> Result<DarcyField> {
    if let Some(k) = conductivity.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::config(
            "conductivity",
            format!("element {k}: conductivity must be positive"),
        ));
    }
    let n = mesh.n_elements();
    let coeffs = Arc::new(Coefficients::new(
        &mesh,
        vec![1.0; n],
        conductivity.to_vec(),
        vec![[0.0; 4]; n],
        UpwindMode::CenteredTheta,
    )?);
    let dec = Decomposition::whole(&mesh);
    let mut sub = SubdomainProblem::new(mesh.clone(), coeffs, &dec, 0, TimeGrid::uniform(1.0, 1)?)?;
    sub.set_dirichlet(head);
    // Heads are large next to their differences; solve for the offset.
    let shift = if sub.dirichlet.is_empty() {
        0.0
    } else {
        sub.dirichlet.iter().sum::<f64>() / sub.dirichlet.len() as f64
    };
    sub.dirichlet.iter_mut().for_each(|v| *v -= shift);
    let sys = sub.system(None, &InterfaceCondition::Dirichlet)?;
    let st = sys.solve(&StepData {
        dirichlet: Some(&sub.dirichlet),
        ..Default::default()
    })?;

    // Local numbering equals global numbering for the whole-domain layout.
    let mut flux = st.phi.clone();
    for (g, e) in mesh.edges.iter().enumerate() {
        if let [Some(a), Some(b)] = e.elements {
            let sa = mesh.elements[a].edges.iter().position(|&x| x == g).unwrap();
            let sb = mesh.elements[b].edges.iter().position(|&x| x == g).unwrap();
            let v = 0.5 * (st.phi[a][sa] - st.phi[b][sb]);
            flux[a][sa] = v;
            flux[b][sb] = -v;
        }
    }
    let u_edge = flux
        .iter()
        .zip(&mesh.elements)
        .map(|(f, el)| std::array::from_fn(|s| f[s] / mesh.edges[el.edges[s]].length))
        .collect();
    Ok(DarcyField {
        head: st.c.iter().map(|c| c + shift).collect(),
        u_edge,
    })
}
