//! Upwind mixed hybrid finite elements (lowest-order Raviart-Thomas on
//! rectangles) for one backward Euler step of
//! `omega dc/dt + div(phi) = f`, `phi = -d grad c + u c`.
//!
//! Unknowns per subdomain: `c_K` per element, the outward total flux
//! `phi_KE` per (element, local edge) and the trace `theta_E` per edge that
//! is not an exterior Dirichlet edge. Rows are ordered the same way: one mass
//! balance per element, one flux equation per (element, edge), then one edge
//! equation per trace unknown (flux continuity, exterior Neumann or the
//! interface condition).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryKind, Decomposition, Mesh, BOTTOM, LEFT, LOCAL_SIGN, RIGHT, TOP};
use crate::linsolve::{LuFactorization, SparseMatrix, TripletBuilder};

/// How the advective value on an edge is built from `c_K` and `theta_E`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpwindMode {
    /// Always the edge multiplier.
    #[default]
    CenteredTheta,
    /// `c_K` on outflow edges, `2 theta_E - c_K` on inflow edges.
    FullUpwind,
}

/// How a step system is factorized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStrategy {
    /// Sparse LU of the whole `(c, phi, theta)` system.
    Full,
    /// Eliminate `c` and `phi` element by element and factorize the
    /// system for the traces only.
    #[default]
    Condensed,
}

/// Piecewise constant coefficients on the global mesh.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub omega: Vec<f64>,
    pub d: Vec<f64>,
    /// Mean outward normal velocity per element and local edge.
    pub u_edge: Vec<[f64; 4]>,
    pub upwind_mode: UpwindMode,
}

impl Coefficients {
    pub fn new(
        mesh: &Mesh,
        omega: Vec<f64>,
        d: Vec<f64>,
        u_edge: Vec<[f64; 4]>,
        upwind_mode: UpwindMode,
    ) -> Result<Coefficients> {
        let n = mesh.n_elements();
        if omega.len() != n || d.len() != n || u_edge.len() != n {
            return Err(Error::IndexError(format!(
                "coefficient arrays must have {n} entries"
            )));
        }
        if let Some(k) = omega.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config("omega", format!("element {k}: porosity must be positive")));
        }
        if let Some(k) = d.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config("d", format!("element {k}: diffusion must be positive")));
        }
        Ok(Coefficients {
            omega,
            d,
            u_edge,
            upwind_mode,
        })
    }

    /// Constant coefficients with the velocity field `u` projected on edges.
    pub fn uniform(mesh: &Mesh, omega: f64, d: f64, u: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self> {
        let n = mesh.n_elements();
        Coefficients::new(
            mesh,
            vec![omega; n],
            vec![d; n],
            project_velocity(mesh, u),
            UpwindMode::default(),
        )
    }

    pub fn with_upwind(mut self, mode: UpwindMode) -> Self {
        self.upwind_mode = mode;
        self
    }
}

/// `A_K` for an axis-aligned `dx x dy` rectangle with diffusion `d`, in the
/// local edge order left, right, bottom, top.
pub fn local_mass_matrix(dx: f64, dy: f64, d: f64) -> Result<[[f64; 4]; 4]> {
    if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
        return Err(Error::DegenerateElement(format!("size {dx} x {dy}")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::DegenerateElement(format!("diffusion {d}")));
    }
    let xd = dx / (3.0 * dy * d);
    let xo = -dx / (6.0 * dy * d);
    let yd = dy / (3.0 * dx * d);
    let yo = -dy / (6.0 * dx * d);
    let mut a = [[0.0; 4]; 4];
    a[LEFT][LEFT] = xd;
    a[RIGHT][RIGHT] = xd;
    a[LEFT][RIGHT] = xo;
    a[RIGHT][LEFT] = xo;
    a[BOTTOM][BOTTOM] = yd;
    a[TOP][TOP] = yd;
    a[BOTTOM][TOP] = yo;
    a[TOP][BOTTOM] = yo;
    Ok(a)
}

/// Mean of `u . n_K` over every edge of every element (3-point Gauss rule).
pub fn project_velocity(mesh: &Mesh, u: impl Fn(f64, f64) -> [f64; 2]) -> Vec<[f64; 4]> {
    const GP: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 5.0 / 18.0),
        (0.0, 8.0 / 18.0),
        (0.774_596_669_241_483_4, 5.0 / 18.0),
    ];
    let edge_mean: Vec<f64> = mesh
        .edges
        .iter()
        .map(|e| {
            let (p, q) = e.endpoints();
            GP.iter()
                .map(|&(s, w)| {
                    let t = 0.5 * (1.0 + s);
                    let x = p[0] + t * (q[0] - p[0]);
                    let y = p[1] + t * (q[1] - p[1]);
                    let v = u(x, y);
                    w * (v[0] * e.normal[0] + v[1] * e.normal[1])
                })
                .sum()
        })
        .collect();
    mesh.elements
        .iter()
        .map(|el| std::array::from_fn(|s| LOCAL_SIGN[s] * edge_mean[el.edges[s]]))
        .collect()
}

/// Upwind value `U_KE(c_K, theta_E)`.
pub fn upwind_value(c: f64, theta: f64, u: f64, mode: UpwindMode) -> f64 {
    let (a, b) = upwind_weights(u, mode);
    a * c + b * theta
}

/// `U = a c + b theta`.
fn upwind_weights(u: f64, mode: UpwindMode) -> (f64, f64) {
    match mode {
        UpwindMode::CenteredTheta => (0.0, 1.0),
        UpwindMode::FullUpwind if u >= 0.0 => (1.0, 0.0),
        UpwindMode::FullUpwind => (-1.0, 2.0),
    }
}

/// Role of an edge seen from one subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    Interior,
    Dirichlet,
    Neumann,
    /// Interface edge with its slot index.
    Interface(usize),
}

/// Interface edge of a subdomain, as one entry of its trace vectors.
#[derive(Debug, Clone, Copy)]
pub struct Slot {
    pub neighbor: usize,
    pub edge: usize,
    pub local_edge: usize,
    pub local_element: usize,
    /// Local edge position (left, right, bottom, top) in the element.
    pub side: usize,
    pub length: f64,
}

/// Local numbering of a subdomain's elements, edges and interface slots.
#[derive(Debug, Clone)]
pub struct LocalLayout {
    pub index: usize,
    /// Global element ids.
    pub elements: Vec<usize>,
    /// Global edge ids, ascending.
    pub edges: Vec<usize>,
    pub elem_edges: Vec<[usize; 4]>,
    pub roles: Vec<EdgeRole>,
    /// Adjacent `(local element, side)` pairs per local edge.
    pub edge_owners: Vec<Vec<(usize, usize)>>,
    pub theta_index: Vec<Option<usize>>,
    pub n_theta: usize,
    /// Interface slots grouped by neighbor (ascending), then by edge id.
    pub slots: Vec<Slot>,
    /// Neighbor ids with the slot range of each.
    pub slot_groups: Vec<(usize, std::ops::Range<usize>)>,
}

impl LocalLayout {
    pub fn new(mesh: &Mesh, dec: &Decomposition, index: usize) -> Result<LocalLayout> {
        let sub = dec
            .subdomains
            .get(index)
            .ok_or_else(|| Error::IndexError(format!("no subdomain {index}")))?;
        let elements = sub.elements.clone();
        let mut edges: Vec<usize> = elements
            .iter()
            .flat_map(|&k| mesh.elements[k].edges)
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let local_of = |g: usize| edges.binary_search(&g).expect("edge of own element");
        let elem_edges: Vec<[usize; 4]> = elements
            .iter()
            .map(|&k| mesh.elements[k].edges.map(local_of))
            .collect();
        let mut edge_owners = vec![Vec::with_capacity(2); edges.len()];
        for (l, ee) in elem_edges.iter().enumerate() {
            for (s, &le) in ee.iter().enumerate() {
                edge_owners[le].push((l, s));
            }
        }

        let mut slots = Vec::new();
        let mut roles = Vec::with_capacity(edges.len());
        for (le, &g) in edges.iter().enumerate() {
            let edge = &mesh.edges[g];
            let role = match edge.boundary {
                Some((_, BoundaryKind::Dirichlet)) => EdgeRole::Dirichlet,
                Some((_, BoundaryKind::Neumann)) => EdgeRole::Neumann,
                None => {
                    let other = edge
                        .adjacent()
                        .map(|k| dec.owner[k])
                        .find(|&o| o != index);
                    match other {
                        None => EdgeRole::Interior,
                        Some(nb) => {
                            let (l, s) = edge_owners[le][0];
                            slots.push(Slot {
                                neighbor: nb,
                                edge: g,
                                local_edge: le,
                                local_element: l,
                                side: s,
                                length: edge.length,
                            });
                            EdgeRole::Interface(usize::MAX)
                        }
                    }
                }
            };
            roles.push(role);
        }
        slots.sort_by_key(|s| (s.neighbor, s.edge));
        for (i, s) in slots.iter().enumerate() {
            roles[s.local_edge] = EdgeRole::Interface(i);
        }
        let mut slot_groups: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for (i, s) in slots.iter().enumerate() {
            match slot_groups.last_mut() {
                Some((nb, r)) if *nb == s.neighbor => r.end = i + 1,
                _ => slot_groups.push((s.neighbor, i..i + 1)),
            }
        }

        let mut n_theta = 0;
        let theta_index = roles
            .iter()
            .map(|r| {
                (*r != EdgeRole::Dirichlet).then(|| {
                    n_theta += 1;
                    n_theta - 1
                })
            })
            .collect();

        Ok(LocalLayout {
            index,
            elements,
            edges,
            elem_edges,
            roles,
            edge_owners,
            theta_index,
            n_theta,
            slots,
            slot_groups,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_unknowns(&self) -> usize {
        5 * self.elements.len() + self.n_theta
    }

    pub fn slot_range(&self, neighbor: usize) -> Option<std::ops::Range<usize>> {
        self.slot_groups
            .iter()
            .find(|(nb, _)| *nb == neighbor)
            .map(|(_, r)| r.clone())
    }

    fn phi_row(&self, l: usize, s: usize) -> usize {
        self.elements.len() + 4 * l + s
    }

    fn theta_row(&self, t: usize) -> usize {
        5 * self.elements.len() + t
    }
}

/// Condition imposed on the interface edges of a subdomain.
#[derive(Debug, Clone, PartialEq)]
pub enum InterfaceCondition {
    /// `theta_E = lambda_E`.
    Dirichlet,
    /// `-phi_KE / |E| = psi_E`.
    Neumann,
    /// `-phi_KE / |E| + alpha theta_E = zeta_E`, one `alpha` per slot.
    Robin(Vec<f64>),
}

/// Solution of one step in local numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub c: Vec<f64>,
    /// Outward total flux through each local edge of each element.
    pub phi: Vec<[f64; 4]>,
    /// Trace per local edge; exterior Dirichlet edges carry their data.
    pub theta: Vec<f64>,
}

impl FieldState {
    pub fn zeros(layout: &LocalLayout) -> FieldState {
        FieldState {
            c: vec![0.0; layout.n_elements()],
            phi: vec![[0.0; 4]; layout.n_elements()],
            theta: vec![0.0; layout.n_edges()],
        }
    }
}

/// Right-hand side data of one step. Missing entries are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepData<'a> {
    /// `integral of f over K`, per local element.
    pub source: Option<&'a [f64]>,
    pub c_prev: Option<&'a [f64]>,
    /// Exterior Dirichlet values per local edge.
    pub dirichlet: Option<&'a [f64]>,
    /// Interface data per slot (`lambda`, `psi` or `zeta`).
    pub interface: Option<&'a [f64]>,
}

enum Factor {
    Full(LuFactorization),
    Condensed(Box<Condensed>),
}

/// Element-local elimination: with `A phi = c v + B theta + r` and the mass
/// balance `tau c + sum(phi) = s`,
/// `c = (s - w.theta - sum(A^-1 r)) / den`, `phi = c A^-1 v + A^-1 B theta + A^-1 r`.
struct Condensed {
    lu: LuFactorization,
    a_inv: Vec<[[f64; 4]; 4]>,
    av: Vec<[f64; 4]>,
    /// `A^-1 B`, columns of exterior Dirichlet edges set to zero.
    ab: Vec<[[f64; 4]; 4]>,
    w: Vec<[f64; 4]>,
    den: Vec<f64>,
}

fn inverse4(a: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut m = *a;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for k in 0..4 {
        let p = (k..4).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, p);
        inv.swap(k, p);
        let d = m[k][k];
        for j in 0..4 {
            m[k][j] /= d;
            inv[k][j] /= d;
        }
        for i in 0..4 {
            if i != k {
                let f = m[i][k];
                if f != 0.0 {
                    for j in 0..4 {
                        m[i][j] -= f * m[k][j];
                        inv[i][j] -= f * inv[k][j];
                    }
                }
            }
        }
    }
    inv
}

fn matvec4(a: &[[f64; 4]; 4], x: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| (0..4).map(|j| a[i][j] * x[j]).sum())
}

/// Assembled and factorized matrix of one step.
pub struct StepSystem {
    pub layout: Arc<LocalLayout>,
    pub matrix: SparseMatrix,
    pub condition: InterfaceCondition,
    pub dt: Option<f64>,
    pub strategy: SolveStrategy,
    factor: Factor,
    /// `|K| omega_K / dt`, zero for steady problems.
    time_coeff: Vec<f64>,
    /// `(row, local edge, coefficient)`: rhs += coefficient * g_E.
    dirichlet_terms: Vec<(usize, usize, f64)>,
}

impl std::fmt::Debug for StepSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepSystem")
            .field("unknowns", &self.layout.n_unknowns())
            .field("condition", &self.condition)
            .field("dt", &self.dt)
            .finish()
    }
}

impl StepSystem {
    /// Assemble and factorize. `dt = None` drops the time derivative.
    pub fn assemble(
        mesh: &Mesh,
        coeffs: &Coefficients,
        layout: Arc<LocalLayout>,
        dt: Option<f64>,
        condition: InterfaceCondition,
        strategy: SolveStrategy,
    ) -> Result<StepSystem> {
        if let Some(dt) = dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::GridMismatch(format!("time step must be positive, got {dt}")));
            }
        }
        if let InterfaceCondition::Robin(alpha) = &condition {
            if alpha.len() != layout.n_slots() {
                return Err(Error::IndexError(format!(
                    "{} Robin parameters for {} interface edges",
                    alpha.len(),
                    layout.n_slots()
                )));
            }
            if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                return Err(Error::InvalidRobinParameter(*a));
            }
        }

        let lay = &*layout;
        let ne = lay.n_elements();
        let n = lay.n_unknowns();
        let mut tb = TripletBuilder::with_capacity(n, n, 30 * ne + 3 * lay.n_theta);
        let mut time_coeff = vec![0.0; ne];
        let mut dirichlet_terms = Vec::new();
        // Per element: A, v and B of `A phi = c v + B theta + r`.
        let mut local: Vec<([[f64; 4]; 4], [f64; 4], [[f64; 4]; 4])> = Vec::with_capacity(ne);

        for (l, &k) in lay.elements.iter().enumerate() {
            let el = &mesh.elements[k];
            let a = local_mass_matrix(el.dx, el.dy, coeffs.d[k])?;
            let lens = el.edges.map(|g| mesh.edges[g].length);
            let q: [f64; 4] = std::array::from_fn(|s| coeffs.u_edge[k][s] * lens[s]);
            let w: [(f64, f64); 4] =
                std::array::from_fn(|s| upwind_weights(coeffs.u_edge[k][s], coeffs.upwind_mode));

            if let Some(dt) = dt {
                time_coeff[l] = el.area * coeffs.omega[k] / dt;
                tb.push(l, l, time_coeff[l]);
            }
            for s in 0..4 {
                tb.push(l, lay.phi_row(l, s), 1.0);
            }

            let mut v = [0.0; 4];
            let mut bmat = [[0.0; 4]; 4];
            for s in 0..4 {
                let row = lay.phi_row(l, s);
                let mut c_coef = -1.0;
                for t in 0..4 {
                    if a[s][t] == 0.0 {
                        continue;
                    }
                    tb.push(row, lay.phi_row(l, t), a[s][t]);
                    let aq = a[s][t] * q[t];
                    c_coef -= aq * w[t].0;
                    if w[t].1 != 0.0 && aq != 0.0 {
                        let le = lay.elem_edges[l][t];
                        match lay.theta_index[le] {
                            Some(ti) => {
                                tb.push(row, lay.theta_row(ti), -aq * w[t].1);
                                bmat[s][t] += aq * w[t].1;
                            }
                            None => dirichlet_terms.push((row, le, aq * w[t].1)),
                        }
                    }
                }
                tb.push(row, l, c_coef);
                v[s] = -c_coef;
                let le = lay.elem_edges[l][s];
                match lay.theta_index[le] {
                    Some(ti) => {
                        tb.push(row, lay.theta_row(ti), 1.0);
                        bmat[s][s] -= 1.0;
                    }
                    None => dirichlet_terms.push((row, le, -1.0)),
                }
            }
            local.push((a, v, bmat));
        }

        for (le, role) in lay.roles.iter().enumerate() {
            let Some(ti) = lay.theta_index[le] else {
                continue;
            };
            let row = lay.theta_row(ti);
            let owners = &lay.edge_owners[le];
            match *role {
                EdgeRole::Dirichlet => unreachable!("Dirichlet edges carry no unknown"),
                EdgeRole::Interior => {
                    for &(l, s) in owners {
                        tb.push(row, lay.phi_row(l, s), 1.0);
                    }
                }
                EdgeRole::Neumann => {
                    let (l, s) = owners[0];
                    tb.push(row, lay.phi_row(l, s), 1.0);
                }
                EdgeRole::Interface(slot) => {
                    let (l, s) = owners[0];
                    match &condition {
                        InterfaceCondition::Dirichlet => tb.push(row, row, 1.0),
                        InterfaceCondition::Neumann => tb.push(row, lay.phi_row(l, s), 1.0),
                        InterfaceCondition::Robin(alpha) => {
                            tb.push(row, lay.phi_row(l, s), -1.0);
                            tb.push(row, row, alpha[slot] * lay.slots[slot].length);
                        }
                    }
                }
            }
        }

        let matrix = tb.build();
        let factor = match strategy {
            SolveStrategy::Full => Factor::Full(LuFactorization::new(&matrix)?),
            SolveStrategy::Condensed => {
                Factor::Condensed(Box::new(condense(lay, &matrix, &local, &time_coeff)?))
            }
        };
        Ok(StepSystem {
            layout,
            matrix,
            condition,
            dt,
            strategy,
            factor,
            time_coeff,
            dirichlet_terms,
        })
    }

    pub fn rhs(&self, data: &StepData) -> Vec<f64> {
        let lay = &*self.layout;
        let ne = lay.n_elements();
        let mut b = vec![0.0; lay.n_unknowns()];
        if let Some(src) = data.source {
            b[..ne].copy_from_slice(src);
        }
        if let Some(cp) = data.c_prev {
            for l in 0..ne {
                b[l] += self.time_coeff[l] * cp[l];
            }
        }
        if let Some(g) = data.dirichlet {
            for &(row, le, coef) in &self.dirichlet_terms {
                b[row] += coef * g[le];
            }
        }
        if let Some(x) = data.interface {
            for (i, slot) in lay.slots.iter().enumerate() {
                let row = lay.theta_row(lay.theta_index[slot.local_edge].unwrap());
                b[row] = match self.condition {
                    InterfaceCondition::Dirichlet => x[i],
                    InterfaceCondition::Neumann => -x[i] * slot.length,
                    InterfaceCondition::Robin(_) => x[i] * slot.length,
                };
            }
        }
        b
    }

    pub fn solve_vector(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            Factor::Full(lu) => lu.solve(rhs),
            Factor::Condensed(cd) => self.solve_condensed(cd, rhs),
        }
    }

    fn solve_condensed(&self, cd: &Condensed, b: &[f64]) -> Result<Vec<f64>> {
        let lay = &*self.layout;
        let ne = lay.n_elements();
        let rho: Vec<[f64; 4]> = (0..ne)
            .map(|l| {
                let r: [f64; 4] = std::array::from_fn(|s| b[lay.phi_row(l, s)]);
                matvec4(&cd.a_inv[l], &r)
            })
            .collect();
        // Element-local part of each phi once theta is known.
        let phi0: Vec<[f64; 4]> = (0..ne)
            .map(|l| {
                let c0 = (b[l] - rho[l].iter().sum::<f64>()) / cd.den[l];
                std::array::from_fn(|s| c0 * cd.av[l][s] + rho[l][s])
            })
            .collect();
        let mut rt: Vec<f64> = b[5 * ne..].to_vec();
        for (t, r) in rt.iter_mut().enumerate() {
            for (col, coef) in self.matrix.row(lay.theta_row(t)) {
                if col >= ne && col < 5 * ne {
                    let (l, s) = ((col - ne) / 4, (col - ne) % 4);
                    *r -= coef * phi0[l][s];
                }
            }
        }
        cd.lu.solve_in_place(&mut rt)?;

        let mut x = vec![0.0; lay.n_unknowns()];
        for l in 0..ne {
            let th: [f64; 4] = std::array::from_fn(|s| {
                lay.theta_index[lay.elem_edges[l][s]].map_or(0.0, |t| rt[t])
            });
            let wt: f64 = (0..4).map(|s| cd.w[l][s] * th[s]).sum();
            let c = (b[l] - rho[l].iter().sum::<f64>() - wt) / cd.den[l];
            let bt = matvec4(&cd.ab[l], &th);
            x[l] = c;
            for s in 0..4 {
                x[lay.phi_row(l, s)] = c * cd.av[l][s] + bt[s] + rho[l][s];
            }
        }
        x[5 * ne..].copy_from_slice(&rt);
        Ok(x)
    }

    /// Unpack a solution vector; `dirichlet` fills the eliminated traces.
    pub fn unpack(&self, x: &[f64], dirichlet: Option<&[f64]>) -> FieldState {
        let lay = &*self.layout;
        let ne = lay.n_elements();
        let c = x[..ne].to_vec();
        let phi = (0..ne)
            .map(|l| std::array::from_fn(|s| x[lay.phi_row(l, s)]))
            .collect();
        let theta = (0..lay.n_edges())
            .map(|le| match lay.theta_index[le] {
                Some(t) => x[lay.theta_row(t)],
                None => dirichlet.map_or(0.0, |g| g[le]),
            })
            .collect();
        FieldState { c, phi, theta }
    }

    pub fn solve(&self, data: &StepData) -> Result<FieldState> {
        let x = self.solve_vector(&self.rhs(data))?;
        Ok(self.unpack(&x, data.dirichlet))
    }

    /// Pack a state back into the unknown vector.
    pub fn pack(&self, state: &FieldState) -> Vec<f64> {
        let lay = &*self.layout;
        let mut x = vec![0.0; lay.n_unknowns()];
        x[..lay.n_elements()].copy_from_slice(&state.c);
        for (l, p) in state.phi.iter().enumerate() {
            for s in 0..4 {
                x[lay.phi_row(l, s)] = p[s];
            }
        }
        for (le, t) in lay.theta_index.iter().enumerate() {
            if let Some(t) = t {
                x[lay.theta_row(*t)] = state.theta[le];
            }
        }
        x
    }

    /// Max-norm of `A x - b` relative to `max(|b|, |A| |x|)`.
    pub fn relative_residual(&self, state: &FieldState, data: &StepData) -> f64 {
        let x = self.pack(state);
        let b = self.rhs(data);
        let ax = self.matrix.matvec(&x);
        let mut scale: f64 = b.iter().fold(0.0, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let row_scale: f64 = self.matrix.row(i).map(|(c, v)| (v * x[c]).abs()).sum();
            scale = scale.max(row_scale);
        }
        let res = ax.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        if scale == 0.0 {
            res
        } else {
            res / scale
        }
    }

    /// Largest per-element mass balance defect, relative to the dominant
    /// term of that element's balance.
    pub fn mass_defect(&self, state: &FieldState, source: Option<&[f64]>, c_prev: Option<&[f64]>) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..self.layout.n_elements() {
            let dc = state.c[l] - c_prev.map_or(0.0, |p| p[l]);
            let time = self.time_coeff[l] * dc;
            let div: f64 = state.phi[l].iter().sum();
            let f = source.map_or(0.0, |s| s[l]);
            let scale = time
                .abs()
                .max(state.phi[l].iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .max(f.abs())
                .max(self.time_coeff[l] * state.c[l].abs());
            if scale > 0.0 {
                worst = worst.max((time + div - f).abs() / scale);
            }
        }
        worst
    }
}

fn condense(
    lay: &LocalLayout,
    matrix: &SparseMatrix,
    local: &[([[f64; 4]; 4], [f64; 4], [[f64; 4]; 4])],
    time_coeff: &[f64],
) -> Result<Condensed> {
    let ne = lay.n_elements();
    let mut a_inv = Vec::with_capacity(ne);
    let mut av = Vec::with_capacity(ne);
    let mut ab = Vec::with_capacity(ne);
    let mut w = Vec::with_capacity(ne);
    let mut den = Vec::with_capacity(ne);
    // phi_KE = sum_t g[l][s][t] theta_t + (element-local terms).
    let mut g = Vec::with_capacity(ne);
    for (l, (a, v, b)) in local.iter().enumerate() {
        let ai = inverse4(a);
        let avl = matvec4(&ai, v);
        let mut abl = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                abl[i][j] = (0..4).map(|k| ai[i][k] * b[k][j]).sum();
            }
        }
        let wl: [f64; 4] = std::array::from_fn(|j| (0..4).map(|i| abl[i][j]).sum());
        let d = time_coeff[l] + avl.iter().sum::<f64>();
        if !(d.abs() > 0.0 && d.is_finite()) {
            return Err(Error::SingularMatrix(format!("element {l} cannot be eliminated")));
        }
        let gl: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| abl[i][j] - avl[i] * wl[j] / d));
        a_inv.push(ai);
        av.push(avl);
        ab.push(abl);
        w.push(wl);
        den.push(d);
        g.push(gl);
    }

    let nt = lay.n_theta;
    let mut tb = TripletBuilder::with_capacity(nt, nt, 8 * nt);
    for t in 0..nt {
        for (col, coef) in matrix.row(lay.theta_row(t)) {
            if col >= 5 * ne {
                tb.push(t, col - 5 * ne, coef);
            } else if col >= ne {
                let (l, s) = ((col - ne) / 4, (col - ne) % 4);
                for u in 0..4 {
                    if let Some(tu) = lay.theta_index[lay.elem_edges[l][u]] {
                        if g[l][s][u] != 0.0 {
                            tb.push(t, tu, coef * g[l][s][u]);
                        }
                    }
                }
            }
        }
    }
    let lu = LuFactorization::new(&tb.build())?;
    Ok(Condensed {
        lu,
        a_inv,
        av,
        ab,
        w,
        den,
    })
}

/// Largest `|phi_KE + phi_K'E|` over interior edges relative to the largest
/// flux magnitude.
pub fn flux_jump(layout: &LocalLayout, state: &FieldState) -> f64 {
    let scale = state
        .phi
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for (le, role) in layout.roles.iter().enumerate() {
        if *role == EdgeRole::Interior {
            let s: f64 = layout.edge_owners[le]
                .iter()
                .map(|&(l, s)| state.phi[l][s])
                .sum();
            worst = worst.max(s.abs());
        }
    }
    worst / scale
}
