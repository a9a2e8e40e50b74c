//! Axis-aligned rectangular meshes and their partition into rectangular
//! subdomains.
//!
//! Elements are numbered row by row (`k = j * nx + i`, `i` along x). Each
//! element lists its four edges in the local order left, right, bottom, top.
//! Edges are numbered lexicographically by midpoint `(x, y)` so that every
//! vector indexed by edges has one canonical layout.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local edge slots of a rectangle.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const BOTTOM: usize = 2;
pub const TOP: usize = 3;

/// Sign of `n_K . n_E` for the four local edges: the edge normal always points
/// in `+x` or `+y`.
pub const LOCAL_SIGN: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Boundary condition type on each side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: BoundaryKind,
    pub right: BoundaryKind,
    pub bottom: BoundaryKind,
    pub top: BoundaryKind,
}

impl BoundarySpec {
    pub fn all(kind: BoundaryKind) -> Self {
        BoundarySpec {
            left: kind,
            right: kind,
            bottom: kind,
            top: kind,
        }
    }

    pub fn kind(&self, side: Side) -> BoundaryKind {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::all(BoundaryKind::Dirichlet)
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub center: [f64; 2],
    pub dx: f64,
    pub dy: f64,
    pub area: f64,
    /// Global edge ids in local order left, right, bottom, top.
    pub edges: [usize; 4],
}

impl Element {
    pub fn x_range(&self) -> (f64, f64) {
        (self.center[0] - 0.5 * self.dx, self.center[0] + 0.5 * self.dx)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.center[1] - 0.5 * self.dy, self.center[1] + 0.5 * self.dy)
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub midpoint: [f64; 2],
    pub length: f64,
    /// Unit normal, `+x` for vertical edges and `+y` for horizontal ones.
    pub normal: [f64; 2],
    /// `[element the normal leaves, element the normal enters]`.
    pub elements: [Option<usize>; 2],
    pub boundary: Option<(Side, BoundaryKind)>,
}

impl Edge {
    pub fn is_vertical(&self) -> bool {
        self.normal[0] != 0.0
    }

    pub fn adjacent(&self) -> impl Iterator<Item = usize> + '_ {
        self.elements.iter().flatten().copied()
    }

    /// Endpoints of the edge.
    pub fn endpoints(&self) -> ([f64; 2], [f64; 2]) {
        let h = 0.5 * self.length;
        let [mx, my] = self.midpoint;
        if self.is_vertical() {
            ([mx, my - h], [mx, my + h])
        } else {
            ([mx - h, my], [mx + h, my])
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub x_coords: Vec<f64>,
    pub y_coords: Vec<f64>,
    pub elements: Vec<Element>,
    pub edges: Vec<Edge>,
    pub boundary: BoundarySpec,
}

fn check_coords(name: &str, c: &[f64]) -> Result<()> {
    if c.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "{name} needs at least 2 entries, got {}",
            c.len()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} contains non-finite values")));
    }
    if let Some(w) = c.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "{name} not strictly increasing at index {}",
            w + 1
        )));
    }
    Ok(())
}

impl Mesh {
    pub fn new(x_coords: Vec<f64>, y_coords: Vec<f64>, boundary: BoundarySpec) -> Result<Mesh> {
        check_coords("x_coords", &x_coords)?;
        check_coords("y_coords", &y_coords)?;
        let nx = x_coords.len() - 1;
        let ny = y_coords.len() - 1;

        // Unsorted edges tagged with a provisional key.
        enum Proto {
            Vertical { i: usize, j: usize },
            Horizontal { i: usize, j: usize },
        }
        let mut protos: Vec<([f64; 2], Proto)> = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
        for j in 0..ny {
            for i in 0..=nx {
                let mid = [x_coords[i], 0.5 * (y_coords[j] + y_coords[j + 1])];
                protos.push((mid, Proto::Vertical { i, j }));
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let mid = [0.5 * (x_coords[i] + x_coords[i + 1]), y_coords[j]];
                protos.push((mid, Proto::Horizontal { i, j }));
            }
        }
        protos.sort_by(|a, b| match a.0[0].total_cmp(&b.0[0]) {
            Ordering::Equal => a.0[1].total_cmp(&b.0[1]),
            o => o,
        });

        let elem = |i: usize, j: usize| j * nx + i;
        let mut elements: Vec<Element> = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| {
                let dx = x_coords[i + 1] - x_coords[i];
                let dy = y_coords[j + 1] - y_coords[j];
                Element {
                    center: [
                        0.5 * (x_coords[i] + x_coords[i + 1]),
                        0.5 * (y_coords[j] + y_coords[j + 1]),
                    ],
                    dx,
                    dy,
                    area: dx * dy,
                    edges: [usize::MAX; 4],
                }
            })
            .collect();

        let mut edges = Vec::with_capacity(protos.len());
        for (id, (mid, proto)) in protos.into_iter().enumerate() {
            let edge = match proto {
                Proto::Vertical { i, j } => {
                    let minus = (i > 0).then(|| elem(i - 1, j));
                    let plus = (i < nx).then(|| elem(i, j));
                    if let Some(k) = minus {
                        elements[k].edges[RIGHT] = id;
                    }
                    if let Some(k) = plus {
                        elements[k].edges[LEFT] = id;
                    }
                    let side = if i == 0 {
                        Some(Side::Left)
                    } else if i == nx {
                        Some(Side::Right)
                    } else {
                        None
                    };
                    Edge {
                        midpoint: mid,
                        length: y_coords[j + 1] - y_coords[j],
                        normal: [1.0, 0.0],
                        elements: [minus, plus],
                        boundary: side.map(|s| (s, boundary.kind(s))),
                    }
                }
                Proto::Horizontal { i, j } => {
                    let minus = (j > 0).then(|| elem(i, j - 1));
                    let plus = (j < ny).then(|| elem(i, j));
                    if let Some(k) = minus {
                        elements[k].edges[TOP] = id;
                    }
                    if let Some(k) = plus {
                        elements[k].edges[BOTTOM] = id;
                    }
                    let side = if j == 0 {
                        Some(Side::Bottom)
                    } else if j == ny {
                        Some(Side::Top)
                    } else {
                        None
                    };
                    Edge {
                        midpoint: mid,
                        length: x_coords[i + 1] - x_coords[i],
                        normal: [0.0, 1.0],
                        elements: [minus, plus],
                        boundary: side.map(|s| (s, boundary.kind(s))),
                    }
                }
            };
            edges.push(edge);
        }

        Ok(Mesh {
            nx,
            ny,
            x_coords,
            y_coords,
            elements,
            edges,
            boundary,
        })
    }

    /// Uniform `nx x ny` mesh of the box `[x0, x1] x [y0, y1]`.
    pub fn uniform(
        (x0, x1): (f64, f64),
        (y0, y1): (f64, f64),
        nx: usize,
        ny: usize,
        boundary: BoundarySpec,
    ) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid("cell counts must be positive".into()));
        }
        let xs = (0..=nx).map(|i| x0 + (x1 - x0) * i as f64 / nx as f64).collect();
        let ys = (0..=ny).map(|j| y0 + (y1 - y0) * j as f64 / ny as f64).collect();
        Mesh::new(xs, ys, boundary)
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.x_coords[0], *self.x_coords.last().unwrap()],
            [self.y_coords[0], *self.y_coords.last().unwrap()],
        )
    }

    pub fn area(&self) -> f64 {
        let ([x0, x1], [y0, y1]) = self.bounds();
        (x1 - x0) * (y1 - y0)
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| e.dx.hypot(e.dy))
            .fold(0.0, f64::max)
    }

    /// Element containing the point, with points on grid lines assigned to
    /// the upper/right cell.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let find = |c: &[f64], v: f64| -> Option<usize> {
            if v < c[0] || v > *c.last().unwrap() {
                return None;
            }
            let i = c.partition_point(|&g| g <= v);
            Some(i.saturating_sub(1).min(c.len() - 2))
        };
        Some(find(&self.y_coords, y)? * self.nx + find(&self.x_coords, x)?)
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Rect {
        Rect { x0, x1, y0, y1 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone)]
pub struct Subdomain {
    pub region: Rect,
    /// Global element ids, ascending.
    pub elements: Vec<usize>,
}

/// Interface between subdomains `pair.0 < pair.1`. Edge normals are
/// reported from the lower-index to the higher-index subdomain.
#[derive(Debug, Clone)]
pub struct Interface {
    pub pair: (usize, usize),
    /// Global edge ids, ascending.
    pub edges: Vec<usize>,
    /// Per edge, `(element in pair.0, element in pair.1)`.
    pub elements: Vec<(usize, usize)>,
    /// Per edge, unit normal pointing from `pair.0` into `pair.1`.
    pub normals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub subdomains: Vec<Subdomain>,
    /// Owning subdomain of every element.
    pub owner: Vec<usize>,
    pub interfaces: Vec<Interface>,
    /// Neighbor subdomain ids, ascending.
    pub neighbors: Vec<Vec<usize>>,
}

fn on_grid_line(c: &[f64], v: f64) -> bool {
    let scale = (c[c.len() - 1] - c[0]).abs();
    c.iter().any(|&g| (g - v).abs() <= 1e-9 * scale)
}

impl Decomposition {
    /// Partition the mesh into the given boxes (which must tile the domain
    /// along grid lines).
    pub fn new(mesh: &Mesh, boxes: &[Rect]) -> Result<Decomposition> {
        if boxes.is_empty() {
            return Err(Error::InvalidPartition("no subdomain boxes".into()));
        }
        for (b, r) in boxes.iter().enumerate() {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(Error::InvalidPartition(format!("box {b} is empty")));
            }
            for v in [r.x0, r.x1] {
                if !on_grid_line(&mesh.x_coords, v) {
                    return Err(Error::MisalignedPartition(format!(
                        "box {b}: x = {v} is not a grid line"
                    )));
                }
            }
            for v in [r.y0, r.y1] {
                if !on_grid_line(&mesh.y_coords, v) {
                    return Err(Error::MisalignedPartition(format!(
                        "box {b}: y = {v} is not a grid line"
                    )));
                }
            }
        }

        let mut owner = vec![usize::MAX; mesh.n_elements()];
        let mut subdomains: Vec<Subdomain> = boxes
            .iter()
            .map(|r| Subdomain {
                region: *r,
                elements: Vec::new(),
            })
            .collect();
        for (k, e) in mesh.elements.iter().enumerate() {
            let mut hits = boxes
                .iter()
                .enumerate()
                .filter(|(_, r)| r.contains(e.center))
                .map(|(b, _)| b);
            match (hits.next(), hits.next()) {
                (Some(b), None) => {
                    owner[k] = b;
                    subdomains[b].elements.push(k);
                }
                (None, _) => {
                    return Err(Error::InvalidPartition(format!(
                        "element {k} at {:?} is not covered by any box",
                        e.center
                    )))
                }
                (Some(a), Some(b)) => {
                    return Err(Error::InvalidPartition(format!(
                        "boxes {a} and {b} overlap at element {k}"
                    )))
                }
            }
        }
        if let Some(b) = subdomains.iter().position(|s| s.elements.is_empty()) {
            return Err(Error::InvalidPartition(format!("box {b} contains no element")));
        }
        let box_area: f64 = boxes.iter().map(Rect::area).sum();
        if (box_area - mesh.area()).abs() > 1e-9 * mesh.area() {
            return Err(Error::InvalidPartition(format!(
                "boxes cover area {box_area}, domain area is {}",
                mesh.area()
            )));
        }

        let n = boxes.len();
        let mut interfaces: Vec<Interface> = Vec::new();
        let mut pair_index = std::collections::BTreeMap::new();
        for (id, edge) in mesh.edges.iter().enumerate() {
            if let [Some(a), Some(b)] = edge.elements {
                let (sa, sb) = (owner[a], owner[b]);
                if sa == sb {
                    continue;
                }
                let pair = (sa.min(sb), sa.max(sb));
                let p = *pair_index.entry(pair).or_insert_with(|| {
                    interfaces.push(Interface {
                        pair,
                        edges: Vec::new(),
                        elements: Vec::new(),
                        normals: Vec::new(),
                    });
                    interfaces.len() - 1
                });
                let iface = &mut interfaces[p];
                iface.edges.push(id);
                // `a` is the element the edge normal leaves.
                if sa == pair.0 {
                    iface.elements.push((a, b));
                    iface.normals.push(edge.normal);
                } else {
                    iface.elements.push((b, a));
                    iface.normals.push([-edge.normal[0], -edge.normal[1]]);
                }
            }
        }
        interfaces.sort_by_key(|i| i.pair);

        let mut neighbors = vec![Vec::new(); n];
        for iface in &interfaces {
            neighbors[iface.pair.0].push(iface.pair.1);
            neighbors[iface.pair.1].push(iface.pair.0);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }

        Ok(Decomposition {
            subdomains,
            owner,
            interfaces,
            neighbors,
        })
    }

    /// Single subdomain covering the whole mesh.
    pub fn whole(mesh: &Mesh) -> Decomposition {
        let ([x0, x1], [y0, y1]) = mesh.bounds();
        Decomposition::new(mesh, &[Rect::new(x0, x1, y0, y1)])
            .expect("whole-domain box always tiles the mesh")
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn interface(&self, i: usize, j: usize) -> Option<&Interface> {
        let pair = (i.min(j), i.max(j));
        self.interfaces.iter().find(|f| f.pair == pair)
    }

    pub fn n_interface_edges(&self) -> usize {
        self.interfaces.iter().map(|i| i.edges.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Mesh {
        Mesh::uniform((0.0, 1.0), (0.0, 1.0), n, n, BoundarySpec::default()).unwrap()
    }

    #[test]
    fn two_by_two_counts() {
        let m = unit(2);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.n_edges(), 12);
        assert_eq!(m.edges.iter().filter(|e| e.boundary.is_some()).count(), 8);
    }

    #[test]
    fn single_cell() {
        let m = unit(1);
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.n_edges(), 4);
        assert!(m.edges.iter().all(|e| e.boundary.is_some()));
        let e = &m.elements[0];
        let mut ids = e.edges.to_vec();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn test3_size() {
        let xs: Vec<f64> = (0..=171).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = (0..=158).map(|i| i as f64 * 0.3).collect();
        let m = Mesh::new(xs, ys, BoundarySpec::default()).unwrap();
        assert_eq!(m.n_elements(), 27018);
    }

    #[test]
    fn rejects_non_monotone() {
        let r = Mesh::new(vec![0.0, 0.5, 0.4, 1.0], vec![0.0, 1.0], BoundarySpec::default());
        assert!(matches!(r, Err(Error::InvalidGrid(_))));
        let r = Mesh::new(vec![0.0], vec![0.0, 1.0], BoundarySpec::default());
        assert!(matches!(r, Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn mesh_invariants_nonuniform() {
        let m = Mesh::new(
            vec![0.0, 0.1, 0.35, 0.9, 1.3],
            vec![-1.0, 0.0, 0.2, 2.0],
            BoundarySpec::default(),
        )
        .unwrap();
        let total: f64 = m.elements.iter().map(|e| e.area).sum();
        assert!((total - m.area()).abs() <= 1e-12 * m.area());
        for e in &m.edges {
            let n = e.adjacent().count();
            assert_eq!(n, if e.boundary.is_some() { 1 } else { 2 });
        }
        for (k, el) in m.elements.iter().enumerate() {
            for (l, &id) in el.edges.iter().enumerate() {
                let edge = &m.edges[id];
                let slot = if LOCAL_SIGN[l] > 0.0 { 0 } else { 1 };
                assert_eq!(edge.elements[slot], Some(k));
            }
        }
        // lexicographic order by midpoint
        for w in m.edges.windows(2) {
            let (a, b) = (w[0].midpoint, w[1].midpoint);
            assert!(a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]));
        }
    }

    #[test]
    fn split_in_half() {
        let m = unit(20);
        let d = Decomposition::new(
            &m,
            &[Rect::new(0.0, 0.5, 0.0, 1.0), Rect::new(0.5, 1.0, 0.0, 1.0)],
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.interfaces.len(), 1);
        let f = &d.interfaces[0];
        assert_eq!(f.edges.len(), 20);
        assert!(f.normals.iter().all(|n| *n == [1.0, 0.0]));
        for (&id, &(a, b)) in f.edges.iter().zip(&f.elements) {
            assert_eq!(d.owner[a], 0);
            assert_eq!(d.owner[b], 1);
            assert!((m.edges[id].midpoint[0] - 0.5).abs() < 1e-14);
        }
        assert_eq!(d.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn whole_domain() {
        let m = unit(4);
        let d = Decomposition::whole(&m);
        assert_eq!(d.len(), 1);
        assert!(d.interfaces.is_empty());
        assert_eq!(d.subdomains[0].elements.len(), 16);
    }

    #[test]
    fn partition_errors() {
        let m = unit(4);
        let r = Decomposition::new(
            &m,
            &[Rect::new(0.0, 0.3, 0.0, 1.0), Rect::new(0.3, 1.0, 0.0, 1.0)],
        );
        assert!(matches!(r, Err(Error::MisalignedPartition(_))));
        let r = Decomposition::new(&m, &[Rect::new(0.0, 0.5, 0.0, 1.0)]);
        assert!(matches!(r, Err(Error::InvalidPartition(_))));
        let r = Decomposition::new(
            &m,
            &[Rect::new(0.0, 0.75, 0.0, 1.0), Rect::new(0.5, 1.0, 0.0, 1.0)],
        );
        assert!(matches!(r, Err(Error::InvalidPartition(_))));
    }

    #[test]
    fn six_boxes() {
        let m = Mesh::uniform((0.0, 3.0), (0.0, 2.0), 6, 4, BoundarySpec::default()).unwrap();
        let mut boxes = Vec::new();
        for j in 0..2 {
            for i in 0..3 {
                boxes.push(Rect::new(i as f64, i as f64 + 1.0, j as f64, j as f64 + 1.0));
            }
        }
        let d = Decomposition::new(&m, &boxes).unwrap();
        assert_eq!(d.len(), 6);
        // 3 horizontal neighbours per row pair + 2 per row * 2 rows
        assert_eq!(d.interfaces.len(), 7);
        let total: usize = d.subdomains.iter().map(|s| s.elements.len()).sum();
        assert_eq!(total, m.n_elements());
        let mut seen = std::collections::HashSet::new();
        for f in &d.interfaces {
            for &e in &f.edges {
                assert!(seen.insert(e));
            }
        }
    }
}
