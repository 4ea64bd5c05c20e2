//! Admissible finite-volume meshes.
//!
//! A mesh is a partition of the domain into cells `K`, each carrying a cell
//! point `x_K`, together with the edges between them. Two-point fluxes are
//! only consistent when the segment `x_K x_L` is orthogonal to the shared edge
//! `K|L`; every builder here enforces that and rejects meshes that violate it.
//!
//! Three families are provided: uniform intervals, structured rectangles and
//! imported triangulations (cell points at circumcenters). All of them are
//! immutable once built.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// A point in the plane. One-dimensional meshes keep `y = 0`.
pub type Point = [f64; 2];

/// Largest accepted deviation from a right angle between `x_K x_L` and `K|L`.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid interval: lower bound {lo} must be smaller than upper bound {hi}")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("need at least 2 cells per direction, got {0}")]
    TooFewCells(usize),
    #[error("triangle {0} has collinear vertices")]
    Degenerate(usize),
    #[error("non-conforming triangulation: {0}")]
    NonConforming(String),
    #[error("edge {edge} is not admissible: {reason}")]
    NotAdmissible { edge: usize, reason: String },
    #[error("mesh invariant violated: {0}")]
    Invariant(String),
    #[error("malformed mesh file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Connectivity of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// `σ = K|L`; fluxes are written from `K` towards `L`.
    Interior { k: usize, l: usize },
    /// `σ ⊂ ∂Ω`, adjacent to `K` only.
    Boundary { k: usize },
}

impl EdgeKind {
    pub fn first(&self) -> usize {
        match *self {
            EdgeKind::Interior { k, .. } | EdgeKind::Boundary { k } => k,
        }
    }

    pub fn neighbor(&self) -> Option<usize> {
        match *self {
            EdgeKind::Interior { l, .. } => Some(l),
            EdgeKind::Boundary { .. } => None,
        }
    }

    pub fn is_interior(&self) -> bool {
        matches!(self, EdgeKind::Interior { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub id: usize,
    /// Cell point `x_K`.
    pub center: Point,
    /// `m(K)`: length in 1D, area in 2D.
    pub measure: f64,
    pub edge_ids: Vec<usize>,
    /// Polygon vertices, counter-clockwise (2D) or the two end nodes (1D).
    pub vertices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: usize,
    pub kind: EdgeKind,
    /// `m(σ)`; 1 in one dimension.
    pub measure: f64,
    /// `d_σ`: `d(x_K, x_L)` for interior edges, `d(x_K, σ)` on the boundary.
    pub distance: f64,
    /// `τ_σ = m(σ) / d_σ`.
    pub transmissibility: f64,
    /// Unit normal `ν_{K,σ}` pointing out of the first cell.
    pub normal: Point,
    /// `m(T_{K,σ})` of the diamond (interior) or half-diamond (boundary).
    pub dual_measure: f64,
    /// `d(x_K, σ)` and `d(x_L, σ)` (second entry is 0 on the boundary).
    pub center_distance: [f64; 2],
    /// End vertices (both equal to the node in 1D).
    pub vertices: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dimension: usize,
    vertices: Vec<Point>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    interior: Vec<usize>,
    zeta: f64,
    domain_measure: f64,
    chain: bool,
}

impl Mesh {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Ids of the interior edges, in edge order.
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior
    }

    /// Regularity constant `ζ`, computed when the mesh was built.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain_measure
    }

    /// True for 1D meshes whose interior edge `e` joins cells `e-1` and `e`
    /// in order, which makes the Jacobian block tridiagonal.
    pub fn is_chain(&self) -> bool {
        self.chain
    }

    pub fn measures(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.measure).collect()
    }

    /// Largest cell diameter.
    pub fn size(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let mut d: f64 = 0.0;
                for (a, &va) in c.vertices.iter().enumerate() {
                    for &vb in &c.vertices[a + 1..] {
                        d = d.max(dist(self.vertices[va], self.vertices[vb]));
                    }
                }
                d
            })
            .fold(0.0, f64::max)
    }

    /// Validates the geometric invariants and fills in `ζ`.
    fn finish(
        dimension: usize,
        vertices: Vec<Point>,
        cells: Vec<Cell>,
        edges: Vec<Edge>,
        domain_measure: f64,
        chain: bool,
    ) -> Result<Mesh, MeshError> {
        for c in &cells {
            if !(c.measure > 0.0) {
                return Err(MeshError::Invariant(format!(
                    "cell {} has nonpositive measure {}",
                    c.id, c.measure
                )));
            }
            for &e in &c.edge_ids {
                let kind = edges[e].kind;
                if kind.first() != c.id && kind.neighbor() != Some(c.id) {
                    return Err(MeshError::Invariant(format!(
                        "cell {} lists edge {} which does not list it",
                        c.id, e
                    )));
                }
            }
        }
        let total: f64 = cells.iter().map(|c| c.measure).sum();
        if (total - domain_measure).abs() > 1e-12 * domain_measure.max(1.0) {
            return Err(MeshError::Invariant(format!(
                "cell measures sum to {total}, domain measure is {domain_measure}"
            )));
        }
        for e in &edges {
            if !(e.distance > 0.0) {
                return Err(MeshError::NotAdmissible {
                    edge: e.id,
                    reason: format!("distance d_σ = {} is not positive", e.distance),
                });
            }
            if e.center_distance[0] <= 0.0
                || (e.kind.is_interior() && e.center_distance[1] <= 0.0)
            {
                return Err(MeshError::NotAdmissible {
                    edge: e.id,
                    reason: "cell point not strictly inside its cell relative to the edge"
                        .into(),
                });
            }
            if dimension == 2 {
                if let EdgeKind::Interior { k, l } = e.kind {
                    let res = orthogonality_residual(
                        cells[k].center,
                        cells[l].center,
                        vertices[e.vertices[0]],
                        vertices[e.vertices[1]],
                    );
                    if res > ORTHOGONALITY_TOL {
                        return Err(MeshError::NotAdmissible {
                            edge: e.id,
                            reason: format!("center segment deviates from orthogonality by {res:e} rad"),
                        });
                    }
                }
            }
        }
        let interior = edges
            .iter()
            .filter(|e| e.kind.is_interior())
            .map(|e| e.id)
            .collect();
        let mut mesh = Mesh {
            dimension,
            vertices,
            cells,
            edges,
            interior,
            zeta: 0.0,
            domain_measure,
            chain,
        };
        mesh.zeta = regularity_zeta(&mesh);
        Ok(mesh)
    }

    /// Quadrature nodes and weights on cell `k`; weights sum to `m(K)`.
    ///
    /// Midpoint rule on segments and rectangles, the three-point barycentric
    /// rule on triangles, each applied on a uniform `refine`-fold subdivision.
    pub fn cell_quadrature(&self, k: usize, refine: usize) -> Vec<(Point, f64)> {
        let refine = refine.max(1);
        let cell = &self.cells[k];
        let v: Vec<Point> = cell.vertices.iter().map(|&i| self.vertices[i]).collect();
        let mut out = Vec::new();
        match (self.dimension, v.len()) {
            (1, _) => {
                let (a, b) = (v[0][0], v[1][0]);
                let h = (b - a) / refine as f64;
                for s in 0..refine {
                    out.push(([a + (s as f64 + 0.5) * h, 0.0], h));
                }
            }
            (2, 4) => {
                let (x0, y0) = (v[0][0], v[0][1]);
                let hx = (v[2][0] - x0) / refine as f64;
                let hy = (v[2][1] - y0) / refine as f64;
                for sy in 0..refine {
                    for sx in 0..refine {
                        out.push((
                            [x0 + (sx as f64 + 0.5) * hx, y0 + (sy as f64 + 0.5) * hy],
                            hx * hy,
                        ));
                    }
                }
            }
            _ => {
                let (a, b, c) = (v[0], v[1], v[2]);
                let n = refine as f64;
                let lerp = |i: f64, j: f64| -> Point {
                    // barycentric grid point a + i/n (b-a) + j/n (c-a)
                    [
                        a[0] + (i * (b[0] - a[0]) + j * (c[0] - a[0])) / n,
                        a[1] + (i * (b[1] - a[1]) + j * (c[1] - a[1])) / n,
                    ]
                };
                let mut push_tri = |p: Point, q: Point, r: Point| {
                    let area = triangle_area(p, q, r).abs();
                    for (wp, wq, wr) in [
                        (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0),
                        (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0),
                        (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0),
                    ] {
                        out.push((
                            [
                                wp * p[0] + wq * q[0] + wr * r[0],
                                wp * p[1] + wq * q[1] + wr * r[1],
                            ],
                            area / 3.0,
                        ));
                    }
                };
                for i in 0..refine {
                    for j in 0..refine - i {
                        let (fi, fj) = (i as f64, j as f64);
                        push_tri(lerp(fi, fj), lerp(fi + 1.0, fj), lerp(fi, fj + 1.0));
                        if i + j + 1 < refine {
                            push_tri(
                                lerp(fi + 1.0, fj),
                                lerp(fi + 1.0, fj + 1.0),
                                lerp(fi, fj + 1.0),
                            );
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns a copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Mesh {
        let s = |p: Point| [p[0] * factor, p[1] * factor];
        let d = self.dimension as i32;
        let mut m = self.clone();
        m.vertices = self.vertices.iter().map(|&p| s(p)).collect();
        for c in &mut m.cells {
            c.center = s(c.center);
            c.measure *= factor.powi(d);
        }
        for e in &mut m.edges {
            if d == 2 {
                e.measure *= factor;
            }
            e.distance *= factor;
            e.transmissibility = e.measure / e.distance;
            e.center_distance = [e.center_distance[0] * factor, e.center_distance[1] * factor];
            e.dual_measure *= factor.powi(d);
        }
        m.domain_measure *= factor.powi(d);
        m.zeta = regularity_zeta(&m);
        m
    }

    /// Writes the per-cell and per-edge summary tables.
    pub fn write_summary(&self, cells_path: &Path, edges_path: &Path) -> Result<(), MeshError> {
        #[derive(Serialize)]
        struct CellRow {
            id: usize,
            x: f64,
            y: f64,
            measure: f64,
        }
        #[derive(Serialize)]
        struct EdgeRow {
            id: usize,
            kind: &'static str,
            k: usize,
            l: Option<usize>,
            measure: f64,
            distance: f64,
            transmissibility: f64,
        }
        let mut w = csv::Writer::from_path(cells_path)?;
        for c in &self.cells {
            w.serialize(CellRow {
                id: c.id,
                x: c.center[0],
                y: c.center[1],
                measure: c.measure,
            })?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(edges_path)?;
        for e in &self.edges {
            w.serialize(EdgeRow {
                id: e.id,
                kind: if e.kind.is_interior() { "interior" } else { "boundary" },
                k: e.kind.first(),
                l: e.kind.neighbor(),
                measure: e.measure,
                distance: e.distance,
                transmissibility: e.transmissibility,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `min_{K, σ ∈ E_K} d(x_K, σ) / d_σ`.
pub fn regularity_zeta(mesh: &Mesh) -> f64 {
    let mut zeta = f64::INFINITY;
    for e in &mesh.edges {
        zeta = zeta.min(e.center_distance[0] / e.distance);
        if e.kind.is_interior() {
            zeta = zeta.min(e.center_distance[1] / e.distance);
        }
    }
    zeta.min(1.0)
}

/// Uniform mesh of `(a, b)` with `n_cells` cells.
pub fn build_interval_mesh(a: f64, b: f64, n_cells: usize) -> Result<Mesh, MeshError> {
    if !(a < b) {
        return Err(MeshError::InvalidInterval { lo: a, hi: b });
    }
    if n_cells < 2 {
        return Err(MeshError::TooFewCells(n_cells));
    }
    let h = (b - a) / n_cells as f64;
    let node = |i: usize| if i == n_cells { b } else { a + i as f64 * h };
    let vertices: Vec<Point> = (0..=n_cells).map(|i| [node(i), 0.0]).collect();
    let cells: Vec<Cell> = (0..n_cells)
        .map(|k| {
            let (lo, hi) = (node(k), node(k + 1));
            Cell {
                id: k,
                center: [0.5 * (lo + hi), 0.0],
                measure: hi - lo,
                edge_ids: vec![k, k + 1],
                vertices: vec![k, k + 1],
            }
        })
        .collect();
    // edge i sits on node i
    let edges = (0..=n_cells)
        .map(|i| {
            if i == 0 || i == n_cells {
                let k = if i == 0 { 0 } else { n_cells - 1 };
                let d = (cells[k].center[0] - node(i)).abs();
                Edge {
                    id: i,
                    kind: EdgeKind::Boundary { k },
                    measure: 1.0,
                    distance: d,
                    transmissibility: 1.0 / d,
                    normal: [if i == 0 { -1.0 } else { 1.0 }, 0.0],
                    dual_measure: d,
                    center_distance: [d, 0.0],
                    vertices: [i, i],
                }
            } else {
                let (k, l) = (i - 1, i);
                let d = cells[l].center[0] - cells[k].center[0];
                Edge {
                    id: i,
                    kind: EdgeKind::Interior { k, l },
                    measure: 1.0,
                    distance: d,
                    transmissibility: 1.0 / d,
                    normal: [1.0, 0.0],
                    dual_measure: d,
                    center_distance: [
                        node(i) - cells[k].center[0],
                        cells[l].center[0] - node(i),
                    ],
                    vertices: [i, i],
                }
            }
        })
        .collect();
    Mesh::finish(1, vertices, cells, edges, b - a, true)
}

/// Structured `nx × ny` rectangle mesh with cell points at the centroids.
pub fn build_rectangle_mesh(
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<Mesh, MeshError> {
    for &(lo, hi) in &[x_range, y_range] {
        if !(lo < hi) {
            return Err(MeshError::InvalidInterval { lo, hi });
        }
    }
    if nx < 2 || ny < 2 {
        return Err(MeshError::TooFewCells(nx.min(ny)));
    }
    let xs: Vec<f64> = (0..=nx)
        .map(|i| if i == nx { x_range.1 } else { x_range.0 + (x_range.1 - x_range.0) * i as f64 / nx as f64 })
        .collect();
    let ys: Vec<f64> = (0..=ny)
        .map(|j| if j == ny { y_range.1 } else { y_range.0 + (y_range.1 - y_range.0) * j as f64 / ny as f64 })
        .collect();
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let cid = |i: usize, j: usize| j * nx + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for &y in &ys {
        for &x in &xs {
            vertices.push([x, y]);
        }
    }
    let mut cells: Vec<Cell> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(Cell {
                id: cid(i, j),
                center: [0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])],
                measure: (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]),
                edge_ids: Vec::with_capacity(4),
                vertices: vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)],
            });
        }
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut push = |cells: &mut Vec<Cell>, kind: EdgeKind, v: [usize; 2], normal: Point| {
        let id = edges.len();
        let (p, q) = (vertices[v[0]], vertices[v[1]]);
        let xk = cells[kind.first()].center;
        let dk = line_distance(xk, p, q);
        let (distance, dl, dual) = match kind {
            EdgeKind::Interior { l, .. } => {
                let xl = cells[l].center;
                (
                    dist(xk, xl),
                    line_distance(xl, p, q),
                    triangle_area(xk, p, q).abs() + triangle_area(xl, p, q).abs(),
                )
            }
            EdgeKind::Boundary { .. } => (dk, 0.0, triangle_area(xk, p, q).abs()),
        };
        let measure = dist(p, q);
        edges.push(Edge {
            id,
            kind,
            measure,
            distance,
            transmissibility: measure / distance,
            normal,
            dual_measure: dual,
            center_distance: [dk, dl],
            vertices: v,
        });
        cells[kind.first()].edge_ids.push(id);
        if let Some(l) = kind.neighbor() {
            cells[l].edge_ids.push(id);
        }
    };
    // vertical edges x = xs[i]
    for j in 0..ny {
        for i in 0..=nx {
            let v = [vid(i, j), vid(i, j + 1)];
            if i == 0 {
                push(&mut cells, EdgeKind::Boundary { k: cid(0, j) }, v, [-1.0, 0.0]);
            } else if i == nx {
                push(&mut cells, EdgeKind::Boundary { k: cid(nx - 1, j) }, v, [1.0, 0.0]);
            } else {
                push(&mut cells, EdgeKind::Interior { k: cid(i - 1, j), l: cid(i, j) }, v, [1.0, 0.0]);
            }
        }
    }
    // horizontal edges y = ys[j]
    for j in 0..=ny {
        for i in 0..nx {
            let v = [vid(i, j), vid(i + 1, j)];
            if j == 0 {
                push(&mut cells, EdgeKind::Boundary { k: cid(i, 0) }, v, [0.0, -1.0]);
            } else if j == ny {
                push(&mut cells, EdgeKind::Boundary { k: cid(i, ny - 1) }, v, [0.0, 1.0]);
            } else {
                push(&mut cells, EdgeKind::Interior { k: cid(i, j - 1), l: cid(i, j) }, v, [0.0, 1.0]);
            }
        }
    }
    let area = (x_range.1 - x_range.0) * (y_range.1 - y_range.0);
    Mesh::finish(2, vertices, cells, edges, area, false)
}

/// Builds an admissible mesh from a conforming triangulation, using the
/// circumcenters as cell points.
///
/// Every triangle must contain its circumcenter strictly (acute triangles);
/// otherwise some `d(x_K, σ)` vanishes or changes sign and the mesh is
/// rejected rather than repaired.
pub fn import_triangulation(vertices: &[Point], triangles: &[[usize; 3]]) -> Result<Mesh, MeshError> {
    let nv = vertices.len();
    let mut tris: Vec<[usize; 3]> = Vec::with_capacity(triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        if tri.iter().any(|&v| v >= nv) {
            return Err(MeshError::NonConforming(format!(
                "triangle {t} references a vertex outside 0..{nv}"
            )));
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(MeshError::Degenerate(t));
        }
        let (a, b, c) = (vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        let area = triangle_area(a, b, c);
        let scale = dist(a, b).max(dist(b, c)).max(dist(a, c));
        if area.abs() <= 1e-14 * scale * scale {
            return Err(MeshError::Degenerate(t));
        }
        tris.push(if area > 0.0 { *tri } else { [tri[0], tri[2], tri[1]] });
    }

    // edge (min, max) -> incident (triangle, opposite vertex)
    let mut edge_map: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut edge_order: Vec<(usize, usize)> = Vec::new();
    for (t, tri) in tris.iter().enumerate() {
        for s in 0..3 {
            let (p, q, opp) = (tri[s], tri[(s + 1) % 3], tri[(s + 2) % 3]);
            let key = (p.min(q), p.max(q));
            let entry = edge_map.entry(key).or_insert_with(|| {
                edge_order.push(key);
                Vec::new()
            });
            entry.push((t, opp));
            if entry.len() > 2 {
                return Err(MeshError::NonConforming(format!(
                    "edge ({}, {}) is shared by more than two triangles",
                    key.0, key.1
                )));
            }
        }
    }

    let centers: Vec<Point> = tris
        .iter()
        .map(|t| circumcenter(vertices[t[0]], vertices[t[1]], vertices[t[2]]))
        .collect();
    let mut cells: Vec<Cell> = tris
        .iter()
        .enumerate()
        .map(|(t, tri)| Cell {
            id: t,
            center: centers[t],
            measure: triangle_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]),
            edge_ids: Vec::with_capacity(3),
            vertices: tri.to_vec(),
        })
        .collect();

    let mut edges = Vec::with_capacity(edge_order.len());
    let mut boundary_area = 0.0;
    let mut boundary_edges = Vec::new();
    for key in edge_order {
        let inc = &edge_map[&key];
        let id = edges.len();
        let (p, q) = (vertices[key.0], vertices[key.1]);
        let measure = dist(p, q);
        let (k, opp_k) = inc[0];
        // outward normal of k: away from its opposite vertex
        let mut normal = [q[1] - p[1], p[0] - q[0]];
        let nn = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
        normal = [normal[0] / nn, normal[1] / nn];
        let o = vertices[opp_k];
        if (o[0] - p[0]) * normal[0] + (o[1] - p[1]) * normal[1] > 0.0 {
            normal = [-normal[0], -normal[1]];
        }
        let signed = |x: Point| (p[0] - x[0]) * normal[0] + (p[1] - x[1]) * normal[1];
        let dk = signed(centers[k]);
        let edge = if inc.len() == 2 {
            let (l, opp_l) = inc[1];
            let ol = vertices[opp_l];
            if (ol[0] - p[0]) * normal[0] + (ol[1] - p[1]) * normal[1] <= 0.0 {
                return Err(MeshError::NonConforming(format!(
                    "triangles {k} and {l} overlap across edge ({}, {})",
                    key.0, key.1
                )));
            }
            let dkl = dist(centers[k], centers[l]);
            if dkl <= 1e-12 * measure {
                return Err(MeshError::NotAdmissible {
                    edge: id,
                    reason: format!("circumcenters of triangles {k} and {l} coincide (d_σ = 0)"),
                });
            }
            let along = (centers[l][0] - centers[k][0]) * normal[0]
                + (centers[l][1] - centers[k][1]) * normal[1];
            if along <= 0.0 {
                return Err(MeshError::NotAdmissible {
                    edge: id,
                    reason: format!("non-Delaunay adjacency between triangles {k} and {l}"),
                });
            }
            let dl = -signed(centers[l]);
            Edge {
                id,
                kind: EdgeKind::Interior { k, l },
                measure,
                distance: dkl,
                transmissibility: measure / dkl,
                normal,
                dual_measure: triangle_area(centers[k], p, q).abs()
                    + triangle_area(centers[l], p, q).abs(),
                center_distance: [dk, dl],
                vertices: [key.0, key.1],
            }
        } else {
            boundary_edges.push(key);
            // boundary traversed counter-clockwise: orient p -> q with domain on the left
            let (a, b) = if normal[0] * (q[1] - p[1]) - normal[1] * (q[0] - p[0]) > 0.0 {
                (p, q)
            } else {
                (q, p)
            };
            boundary_area += 0.5 * (a[0] * b[1] - b[0] * a[1]);
            Edge {
                id,
                kind: EdgeKind::Boundary { k },
                measure,
                distance: dk,
                transmissibility: measure / dk,
                normal,
                dual_measure: triangle_area(centers[k], p, q).abs(),
                center_distance: [dk, 0.0],
                vertices: [key.0, key.1],
            }
        };
        cells[k].edge_ids.push(id);
        if let Some(l) = edge.kind.neighbor() {
            cells[l].edge_ids.push(id);
        }
        edges.push(edge);
    }

    // hanging nodes: a vertex strictly inside a boundary edge
    let mut on_boundary: Vec<usize> = boundary_edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    on_boundary.sort_unstable();
    on_boundary.dedup();
    for &(a, b) in &boundary_edges {
        let (p, q) = (vertices[a], vertices[b]);
        let len = dist(p, q);
        for &v in &on_boundary {
            if v == a || v == b {
                continue;
            }
            let x = vertices[v];
            let t = ((x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1])) / (len * len);
            if t > 0.0 && t < 1.0 && line_distance(x, p, q) <= 1e-12 * len {
                return Err(MeshError::NonConforming(format!(
                    "vertex {v} hangs on boundary edge ({a}, {b})"
                )));
            }
        }
    }

    Mesh::finish(2, vertices.to_vec(), cells, edges, boundary_area, false)
}

/// Acute triangulation of a rectangle with `2 · nx · ny` triangles.
///
/// Rows of nodes alternate between `nx + 1` nodes on the lattice and `nx`
/// staggered nodes; the staggered nodes next to the vertical sides are pulled
/// inwards to `0.9 hx` so that the boundary triangles stay acute. Requires an
/// even `ny` and `hx / 2 < hy < 0.9 hx`.
pub fn structured_acute_triangulation(
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<(Vec<Point>, Vec<[usize; 3]>), MeshError> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::TooFewCells(nx.min(ny)));
    }
    if ny % 2 != 0 {
        return Err(MeshError::Invariant(format!("number of node rows {ny} must be even")));
    }
    let hx = (x_range.1 - x_range.0) / nx as f64;
    let hy = (y_range.1 - y_range.0) / ny as f64;
    let inset = 0.9 * hx;
    let mut vertices = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(ny + 1);
    for r in 0..=ny {
        let y = if r == ny { y_range.1 } else { y_range.0 + r as f64 * hy };
        let xs: Vec<f64> = if r % 2 == 0 {
            (0..=nx)
                .map(|i| if i == nx { x_range.1 } else { x_range.0 + i as f64 * hx })
                .collect()
        } else {
            let mut xs = vec![x_range.0 + inset];
            xs.extend((1..nx - 1).map(|k| x_range.0 + (k as f64 + 0.5) * hx));
            xs.push(x_range.1 - inset);
            xs
        };
        rows.push(
            xs.into_iter()
                .map(|x| {
                    vertices.push([x, y]);
                    vertices.len() - 1
                })
                .collect(),
        );
    }
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for r in 0..ny {
        let (even, odd) = if r % 2 == 0 { (&rows[r], &rows[r + 1]) } else { (&rows[r + 1], &rows[r]) };
        tris.push([even[0], even[1], odd[0]]);
        for k in 0..nx - 1 {
            tris.push([odd[k], even[k + 1], odd[k + 1]]);
            tris.push([even[k + 1], even[k + 2], odd[k + 1]]);
        }
    }
    for r in (1..ny).step_by(2) {
        tris.push([rows[r - 1][0], rows[r][0], rows[r + 1][0]]);
        tris.push([rows[r - 1][nx], rows[r + 1][nx], rows[r][nx - 1]]);
    }
    Ok((vertices, tris))
}

/// Parses the plain-text triangulation format: a header `nv nt`, then `nv`
/// lines `x y`, then `nt` lines `i j k` with 0-based vertex indices.
pub fn parse_triangulation(text: &str) -> Result<(Vec<Point>, Vec<[usize; 3]>), MeshError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| MeshError::Parse("empty file".into()))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad header `{header}`"))))
        .collect::<Result<_, _>>()?;
    if h.len() != 2 {
        return Err(MeshError::Parse(format!("header must be `nv nt`, got `{header}`")));
    }
    let (nv, nt) = (h[0], h[1]);
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let l = lines
            .next()
            .ok_or_else(|| MeshError::Parse(format!("missing vertex line {i}")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad vertex line `{l}`"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 2 {
            return Err(MeshError::Parse(format!("vertex line must hold `x y`, got `{l}`")));
        }
        vertices.push([v[0], v[1]]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for i in 0..nt {
        let l = lines
            .next()
            .ok_or_else(|| MeshError::Parse(format!("missing triangle line {i}")))?;
        let t: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad triangle line `{l}`"))))
            .collect::<Result<_, _>>()?;
        if t.len() != 3 {
            return Err(MeshError::Parse(format!("triangle line must hold `i j k`, got `{l}`")));
        }
        triangles.push([t[0], t[1], t[2]]);
    }
    if let Some(extra) = lines.next() {
        return Err(MeshError::Parse(format!("trailing content `{extra}`")));
    }
    Ok((vertices, triangles))
}

pub fn read_triangulation(path: &Path) -> Result<Mesh, MeshError> {
    let text = fs::read_to_string(path)?;
    let (v, t) = parse_triangulation(&text)?;
    import_triangulation(&v, &t)
}

pub fn format_triangulation(vertices: &[Point], triangles: &[[usize; 3]]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", vertices.len(), triangles.len());
    for v in vertices {
        let _ = writeln!(s, "{} {}", v[0], v[1]);
    }
    for t in triangles {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Signed area, positive for counter-clockwise `a, b, c`.
pub(crate) fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn line_distance(x: Point, p: Point, q: Point) -> f64 {
    (2.0 * triangle_area(p, q, x)).abs() / dist(p, q)
}

fn circumcenter(a: Point, b: Point, c: Point) -> Point {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d]
}

/// Angle (rad) between `x_K x_L` and the normal direction of edge `p q`.
pub fn orthogonality_residual(xk: Point, xl: Point, p: Point, q: Point) -> f64 {
    let s = [xl[0] - xk[0], xl[1] - xk[1]];
    let t = [q[0] - p[0], q[1] - p[1]];
    let cos = (s[0] * t[0] + s[1] * t[1]) / (dist(xk, xl) * dist(p, q));
    cos.abs().min(1.0).asin()
}
