//! TOML run configuration and the problem it describes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cases::{
    self, manufactured_source_test1, sine_cell_average, STORAGE_DOMAIN, STORAGE_HEADS,
    STORAGE_SUBDOMAINS, STORAGE_ZONES,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryKind, BoundarySpec, Decomposition, Mesh, Rect, Side};
use crate::interface::{DdProblem, Method};
use crate::mhfe::{project_velocity, Coefficients, SolveStrategy, UpwindMode};
use crate::propagate::{solve_darcy, DarcyField, RobinParameters, SourceFn};
use crate::timegrid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    /// Manufactured solution on the unit square.
    Test1,
    /// Discontinuous coefficients, error equation.
    Test2,
    /// Surface storage with Darcy velocity.
    Test3,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Monodomain,
    GtpSchur,
    GtpSchurNn,
    GtoSchwarzGmres,
    OswrJacobi,
}

impl MethodName {
    pub fn interface_method(self) -> Option<Method> {
        match self {
            MethodName::Monodomain => None,
            MethodName::GtpSchur => Some(Method::Schur),
            MethodName::GtpSchurNn => Some(Method::SchurNn),
            MethodName::GtoSchwarzGmres | MethodName::OswrJacobi => Some(Method::Robin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default)]
    pub nx: usize,
    #[serde(default)]
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    /// Explicit grid lines; override `nx`, `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    pub name: String,
    /// `[x0, x1, y0, y1]`; later zones paint over earlier ones.
    pub boxes: Vec<[f64; 4]>,
    #[serde(default = "one")]
    pub omega: f64,
    /// Diffusion coefficient used as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Molecular diffusion; the effective value is `omega * d_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<[f64; 2]>,
    /// Hydraulic conductivity for the flow pre-solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default)]
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub head_top: f64,
    pub head_bottom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    /// Steps per window for every subdomain; a single value applies to all.
    pub steps: Vec<usize>,
    #[serde(default = "one_usize")]
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobinChoice {
    Named(String),
    Pair([f64; 2]),
    Single(f64),
}

impl Default for RobinChoice {
    fn default() -> Self {
        RobinChoice::Named("optimized".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: MethodName,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<usize>,
    #[serde(default)]
    pub robin: RobinChoice,
    #[serde(default)]
    pub normalize_weights: bool,
    /// Random interface initial guess instead of zero.
    #[serde(default)]
    pub random_guess: bool,
    #[serde(default)]
    pub upwind: UpwindMode,
    #[serde(default)]
    pub strategy: SolveStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: MethodName::GtpSchurNn,
            tol: default_tol(),
            max_iter: default_max_iter(),
            restart: None,
            robin: RobinChoice::default(),
            normalize_weights: false,
            random_guess: false,
            upwind: UpwindMode::default(),
            strategy: SolveStrategy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub fields: bool,
    /// Concentration snapshot times; with several windows they must be
    /// window end times.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            fields: true,
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "three")]
    pub levels: usize,
    /// Time axis: run coarse/fine combinations of two subdomain grids
    /// instead of uniform refinement.
    #[serde(default)]
    pub grid_pairs: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            levels: 3,
            grid_pairs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub interface: usize,
    /// Log-spaced range `[lo, hi]` of each parameter.
    pub alpha12: [f64; 2],
    pub alpha21: [f64; 2],
    #[serde(default = "ten")]
    pub points: usize,
    #[serde(default = "twenty_five")]
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub case: CaseKind,
    /// `a`, `b` or `c` for the discontinuous case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<char>,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub subdomains: Vec<[f64; 4]>,
    #[serde(default)]
    pub zones: Vec<ZoneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn ten() -> usize {
    10
}
fn twenty_five() -> usize {
    25
}
fn yes() -> bool {
    true
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    200
}
fn default_name() -> String {
    "run".into()
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn check_box(path: &str, b: &[f64; 4]) -> Result<()> {
    if b.iter().all(|v| v.is_finite()) && b[0] < b[1] && b[2] < b[3] {
        Ok(())
    } else {
        Err(Error::config(path, format!("box must satisfy x0 < x1 and y0 < y1, got {b:?}")))
    }
}

/// Everything needed to run one configuration.
pub struct Setup {
    pub mesh: Arc<Mesh>,
    pub dec: Arc<Decomposition>,
    pub coeffs: Arc<Coefficients>,
    pub c0: Vec<f64>,
    pub source: Option<SourceFn>,
    pub darcy: Option<DarcyField>,
    /// Zone index per element when zones are used.
    pub zone_of: Option<Vec<usize>>,
}

impl std::fmt::Debug for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Setup")
            .field("elements", &self.mesh.n_elements())
            .field("subdomains", &self.dec.len())
            .finish()
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| {
            let msg = e.message().to_string();
            let path = e
                .span()
                .map(|sp| {
                    // Name of the key on the offending line, if any.
                    let line_start = s[..sp.start].rfind('\n').map_or(0, |i| i + 1);
                    let line = &s[line_start..];
                    line.split(['=', '\n']).next().unwrap_or("").trim().to_string()
                })
                .filter(|p| !p.is_empty())
                .unwrap_or_else(|| "<root>".into());
            Error::config(path, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn domain(&self) -> ([f64; 2], [f64; 2]) {
        let (dx, dy) = match self.case {
            CaseKind::Test3 => (
                [STORAGE_DOMAIN[0], STORAGE_DOMAIN[1]],
                [STORAGE_DOMAIN[2], STORAGE_DOMAIN[3]],
            ),
            _ => ([0.0, 1.0], [0.0, 1.0]),
        };
        let x = match &self.mesh.x_coords {
            Some(c) if c.len() >= 2 => [c[0], c[c.len() - 1]],
            _ => self.mesh.x.unwrap_or(dx),
        };
        let y = match &self.mesh.y_coords {
            Some(c) if c.len() >= 2 => [c[0], c[c.len() - 1]],
            _ => self.mesh.y.unwrap_or(dy),
        };
        (x, y)
    }

    pub fn boundary(&self) -> BoundarySpec {
        self.mesh.boundary.unwrap_or(match self.case {
            CaseKind::Test3 => BoundarySpec {
                left: BoundaryKind::Neumann,
                right: BoundaryKind::Neumann,
                bottom: BoundaryKind::Dirichlet,
                top: BoundaryKind::Dirichlet,
            },
            _ => BoundarySpec::default(),
        })
    }

    pub fn subdomain_boxes(&self) -> Vec<[f64; 4]> {
        if !self.subdomains.is_empty() {
            return self.subdomains.clone();
        }
        let (x, y) = self.domain();
        match self.case {
            CaseKind::Test1 | CaseKind::Test2 => {
                let xm = 0.5 * (x[0] + x[1]);
                vec![[x[0], xm, y[0], y[1]], [xm, x[1], y[0], y[1]]]
            }
            CaseKind::Test3 => STORAGE_SUBDOMAINS.to_vec(),
            CaseKind::Custom => vec![[x[0], x[1], y[0], y[1]]],
        }
    }

    /// Zones in effect: the configured ones or the case defaults.
    pub fn effective_zones(&self) -> Vec<ZoneConfig> {
        if !self.zones.is_empty() || self.case != CaseKind::Test3 {
            return self.zones.clone();
        }
        STORAGE_ZONES
            .iter()
            .map(|z| ZoneConfig {
                name: z.name.into(),
                boxes: z.boxes.to_vec(),
                omega: z.omega,
                d: None,
                d_m: Some(z.d_m),
                u: None,
                k: Some(z.k),
                c0: z.c0,
            })
            .collect()
    }

    pub fn effective_flow(&self) -> Option<FlowConfig> {
        match (&self.flow, self.case) {
            (Some(f), _) => Some(f.clone()),
            (None, CaseKind::Test3) => Some(FlowConfig {
                head_top: STORAGE_HEADS.0,
                head_bottom: STORAGE_HEADS.1,
            }),
            _ => None,
        }
    }

    /// Steps per window of every subdomain.
    pub fn steps_per_subdomain(&self) -> Vec<usize> {
        let n = self.subdomain_boxes().len();
        if self.time.steps.len() == 1 {
            vec![self.time.steps[0]; n]
        } else {
            self.time.steps.clone()
        }
    }

    /// Full-horizon grids of every subdomain.
    pub fn grids(&self) -> Result<Vec<TimeGrid>> {
        self.steps_per_subdomain()
            .iter()
            .map(|&m| TimeGrid::uniform(self.time.horizon, m * self.time.windows))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.x_coords.is_none() && self.mesh.nx == 0 {
            return Err(Error::config("mesh.nx", "must be at least 1"));
        }
        if self.mesh.y_coords.is_none() && self.mesh.ny == 0 {
            return Err(Error::config("mesh.ny", "must be at least 1"));
        }
        let (x, y) = self.domain();
        check_box("mesh", &[x[0], x[1], y[0], y[1]])?;
        match (self.case, self.regime) {
            (CaseKind::Test2, Some(r)) if cases::test2_data(r).is_some() => {}
            (CaseKind::Test2, r) => {
                return Err(Error::config("regime", format!("expected `a`, `b` or `c`, got {r:?}")));
            }
            (_, Some(_)) => return Err(Error::config("regime", "only used by case `test2`")),
            _ => {}
        }
        for (i, b) in self.subdomains.iter().enumerate() {
            check_box(&format!("subdomains[{i}]"), b)?;
        }
        positive("time.horizon", self.time.horizon)?;
        if self.time.windows == 0 {
            return Err(Error::config("time.windows", "must be at least 1"));
        }
        let nsub = self.subdomain_boxes().len();
        if self.time.steps.len() != 1 && self.time.steps.len() != nsub {
            return Err(Error::config(
                "time.steps",
                format!("need 1 or {nsub} entries, got {}", self.time.steps.len()),
            ));
        }
        if let Some(i) = self.time.steps.iter().position(|&m| m == 0) {
            return Err(Error::config(format!("time.steps[{i}]"), "must be at least 1"));
        }
        positive("solver.tol", self.solver.tol)?;
        if self.solver.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be at least 1"));
        }
        if self.solver.restart == Some(0) {
            return Err(Error::config("solver.restart", "must be at least 1"));
        }
        match &self.solver.robin {
            RobinChoice::Named(s) if s == "optimized" => {}
            RobinChoice::Named(s) => {
                return Err(Error::config("solver.robin", format!("expected \"optimized\" or numbers, got \"{s}\"")));
            }
            RobinChoice::Pair(p) => {
                positive("solver.robin[0]", p[0])?;
                positive("solver.robin[1]", p[1])?;
            }
            RobinChoice::Single(a) => positive("solver.robin", *a)?,
        }
        let uses_zones = matches!(self.case, CaseKind::Custom | CaseKind::Test3);
        if !self.zones.is_empty() && !uses_zones {
            return Err(Error::config("zones", "zones are only read for cases `test3` and `custom`"));
        }
        if self.case == CaseKind::Custom && self.zones.is_empty() {
            return Err(Error::config("zones", "case `custom` needs at least one zone"));
        }
        let flow = self.effective_flow();
        for (i, z) in self.effective_zones().iter().enumerate() {
            let p = format!("zones[{i}]");
            if z.boxes.is_empty() {
                return Err(Error::config(format!("{p}.boxes"), "need at least one box"));
            }
            for (j, b) in z.boxes.iter().enumerate() {
                check_box(&format!("{p}.boxes[{j}]"), b)?;
            }
            positive(&format!("{p}.omega"), z.omega)?;
            match (z.d, z.d_m) {
                (Some(d), None) => positive(&format!("{p}.d"), d)?,
                (None, Some(d)) => positive(&format!("{p}.d_m"), d)?,
                _ => return Err(Error::config(format!("{p}.d"), "give exactly one of `d` and `d_m`")),
            }
            if flow.is_some() {
                match z.k {
                    Some(k) => positive(&format!("{p}.k"), k)?,
                    None => return Err(Error::config(format!("{p}.k"), "conductivity required by the flow solve")),
                }
                if z.u.is_some() {
                    return Err(Error::config(format!("{p}.u"), "velocity comes from the flow solve"));
                }
            }
            if !z.c0.is_finite() {
                return Err(Error::config(format!("{p}.c0"), "must be finite"));
            }
        }
        let win = self.time.horizon / self.time.windows as f64;
        for (i, &t) in self.output.snapshots.iter().enumerate() {
            let p = format!("output.snapshots[{i}]");
            if !(t > 0.0 && t <= self.time.horizon * (1.0 + 1e-12)) {
                return Err(Error::config(p, format!("must lie in (0, {}]", self.time.horizon)));
            }
            let k = t / win;
            if self.solver.method != MethodName::Monodomain && (k - k.round()).abs() > 1e-9 {
                return Err(Error::config(p, format!("must be a multiple of the window length {win}")));
            }
        }
        if let Some(s) = &self.sweep {
            for (name, r) in [("alpha12", s.alpha12), ("alpha21", s.alpha21)] {
                positive(&format!("sweep.{name}[0]"), r[0])?;
                positive(&format!("sweep.{name}[1]"), r[1])?;
                if r[0] > r[1] {
                    return Err(Error::config(format!("sweep.{name}"), "range must be increasing"));
                }
            }
            if s.points == 0 {
                return Err(Error::config("sweep.points", "must be at least 1"));
            }
            if s.iterations == 0 {
                return Err(Error::config("sweep.iterations", "must be at least 1"));
            }
        }
        if self.solver.random_guess && self.time.windows != 1 {
            return Err(Error::config("solver.random_guess", "only available with a single time window"));
        }
        if self.solver.random_guess && self.solver.method == MethodName::Monodomain {
            return Err(Error::config("solver.random_guess", "needs an interface method"));
        }
        if self.study.levels == 0 {
            return Err(Error::config("study.levels", "must be at least 1"));
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<Arc<Mesh>> {
        let (x, y) = self.domain();
        let lines = |c: &Option<Vec<f64>>, r: [f64; 2], n: usize| -> Vec<f64> {
            match c {
                Some(c) => c.clone(),
                None => (0..=n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / n as f64).collect(),
            }
        };
        let xs = lines(&self.mesh.x_coords, x, self.mesh.nx);
        let ys = lines(&self.mesh.y_coords, y, self.mesh.ny);
        Mesh::new(xs, ys, self.boundary())
            .map(Arc::new)
            .map_err(|e| Error::config("mesh", e.to_string()))
    }

    /// Mesh, decomposition, coefficients and data (with the flow solve when
    /// the case asks for one).
    pub fn setup(&self) -> Result<Setup> {
        let mesh = self.build_mesh()?;
        let boxes: Vec<Rect> = self
            .subdomain_boxes()
            .iter()
            .map(|b| Rect::new(b[0], b[1], b[2], b[3]))
            .collect();
        let dec = Arc::new(Decomposition::new(&mesh, &boxes).map_err(|e| Error::config("subdomains", e.to_string()))?);
        let n = mesh.n_elements();
        let upwind = self.solver.upwind;

        match self.case {
            CaseKind::Test1 => {
                let coeffs = Coefficients::uniform(&mesh, 1.0, 1.0, |_, _| [1.0, 1.0])?.with_upwind(upwind);
                let c0 = mesh
                    .elements
                    .iter()
                    .map(|e| {
                        let (x0, x1) = e.x_range();
                        let (y0, y1) = e.y_range();
                        sine_cell_average(x0, x1, y0, y1)
                    })
                    .collect();
                Ok(Setup {
                    mesh,
                    dec,
                    coeffs: Arc::new(coeffs),
                    c0,
                    source: Some(Arc::new(manufactured_source_test1)),
                    darcy: None,
                    zone_of: None,
                })
            }
            CaseKind::Test2 => {
                let sides = cases::test2_data(self.regime.unwrap_or('a')).expect("validated regime");
                let coeffs = cases::two_zone_coefficients(&mesh, sides)?.with_upwind(upwind);
                Ok(Setup {
                    mesh,
                    dec,
                    coeffs: Arc::new(coeffs),
                    c0: vec![0.0; n],
                    source: None,
                    darcy: None,
                    zone_of: None,
                })
            }
            CaseKind::Test3 | CaseKind::Custom => {
                let zones = self.effective_zones();
                let mut zone_of = vec![usize::MAX; n];
                for (zi, z) in zones.iter().enumerate() {
                    for b in &z.boxes {
                        for (k, e) in mesh.elements.iter().enumerate() {
                            let [cx, cy] = e.center;
                            if cx > b[0] && cx < b[1] && cy > b[2] && cy < b[3] {
                                zone_of[k] = zi;
                            }
                        }
                    }
                }
                if let Some(k) = zone_of.iter().position(|&z| z == usize::MAX) {
                    let [cx, cy] = mesh.elements[k].center;
                    return Err(Error::config("zones", format!("element at ({cx}, {cy}) is not covered by any zone")));
                }
                let omega: Vec<f64> = zone_of.iter().map(|&z| zones[z].omega).collect();
                let d: Vec<f64> = zone_of
                    .iter()
                    .map(|&z| {
                        let zc = &zones[z];
                        zc.d.unwrap_or_else(|| zc.omega * zc.d_m.unwrap_or(0.0))
                    })
                    .collect();
                let c0: Vec<f64> = zone_of.iter().map(|&z| zones[z].c0).collect();
                let (u_edge, darcy) = match self.effective_flow() {
                    Some(f) => {
                        let k: Vec<f64> = zone_of.iter().map(|&z| zones[z].k.unwrap_or(0.0)).collect();
                        let (y0, y1) = (mesh.y_coords[0], mesh.y_coords[mesh.y_coords.len() - 1]);
                        let head = |_: f64, y: f64| f.head_bottom + (f.head_top - f.head_bottom) * (y - y0) / (y1 - y0);
                        let field = solve_darcy(mesh.clone(), &k, head)?;
                        (field.u_edge.clone(), Some(field))
                    }
                    None => {
                        let per_zone: Vec<Vec<[f64; 4]>> = zones
                            .iter()
                            .map(|z| {
                                let u = z.u.unwrap_or([0.0, 0.0]);
                                project_velocity(&mesh, |_, _| u)
                            })
                            .collect();
                        (zone_of.iter().enumerate().map(|(k, &z)| per_zone[z][k]).collect(), None)
                    }
                };
                let coeffs = Coefficients::new(&mesh, omega, d, u_edge, upwind)?;
                Ok(Setup {
                    mesh,
                    dec,
                    coeffs: Arc::new(coeffs),
                    c0,
                    source: None,
                    darcy,
                    zone_of: Some(zone_of),
                })
            }
        }
    }

    /// Decomposed problem with data, weights and Robin parameters applied.
    pub fn dd_problem(&self, setup: &Setup) -> Result<DdProblem> {
        let mut dd = DdProblem::new(setup.mesh.clone(), setup.dec.clone(), setup.coeffs.clone(), self.grids()?)?;
        dd.set_source(setup.source.clone());
        dd.set_initial_global(&setup.c0);
        for s in &mut dd.subs {
            s.strategy = self.solver.strategy;
        }
        dd.set_normalized_weights(self.solver.normalize_weights);
        if !dd.dec.interfaces.is_empty() && self.solver.method.interface_method() == Some(Method::Robin) {
            dd.robin = Some(self.robin_parameters(&dd)?);
        }
        Ok(dd)
    }

    /// Robin parameters on every interface. The optimization uses the
    /// grids of one window.
    pub fn robin_parameters(&self, dd: &DdProblem) -> Result<RobinParameters> {
        match &self.solver.robin {
            RobinChoice::Single(a) => RobinParameters::uniform(&dd.dec, *a),
            RobinChoice::Pair([a, b]) => {
                let mut p = RobinParameters::default();
                for f in &dd.dec.interfaces {
                    p.set(f.pair.0, f.pair.1, *a)?;
                    p.set(f.pair.1, f.pair.0, *b)?;
                }
                Ok(p)
            }
            RobinChoice::Named(_) => {
                if self.time.windows == 1 {
                    return crate::optim::optimized_parameters(dd);
                }
                let win = self.time.horizon / self.time.windows as f64;
                let grids = self
                    .steps_per_subdomain()
                    .iter()
                    .map(|&m| TimeGrid::uniform(win, m))
                    .collect::<Result<Vec<_>>>()?;
                let one = DdProblem::new(dd.mesh.clone(), dd.dec.clone(), dd.coeffs.clone(), grids)?;
                crate::optim::optimized_parameters(&one)
            }
        }
    }
}

/// Side of an exterior boundary a point lies on, if any.
pub fn boundary_side(mesh: &Mesh, x: f64, y: f64) -> Option<Side> {
    let tol = 1e-12 * (1.0 + x.abs().max(y.abs()));
    let (x0, x1) = (mesh.x_coords[0], mesh.x_coords[mesh.x_coords.len() - 1]);
    let (y0, y1) = (mesh.y_coords[0], mesh.y_coords[mesh.y_coords.len() - 1]);
    if (x - x0).abs() < tol {
        Some(Side::Left)
    } else if (x - x1).abs() < tol {
        Some(Side::Right)
    } else if (y - y0).abs() < tol {
        Some(Side::Bottom)
    } else if (y - y1).abs() < tol {
        Some(Side::Top)
    } else {
        None
    }
}
