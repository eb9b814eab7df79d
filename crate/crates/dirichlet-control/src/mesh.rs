//! Polygonal domains and hierarchical graded triangulations.
//!
//! Domains are rectilinear polygons with integer corners. Level 0 splits
//! every unit cell into two right isosceles triangles; level j is obtained
//! from level j-1 by newest-vertex bisection, where an element is bisected
//! along its refinement edge until its diameter falls below a corner-graded
//! threshold. Bisecting a triangle whose neighbour across the refinement
//! edge is incompatible first bisects the neighbour, so every mesh in the
//! hierarchy is conforming and the node arrays are nested: level j's
//! coordinates are a prefix of level j+1's.

use std::collections::HashMap;
use std::io::Write;

use crate::{Error, Result};

/// Planar point.
pub type Point = [f64; 2];

/// Tolerance for classifying nodes and edges against the polygon boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Relative slack on the refinement threshold so that elements sitting
/// exactly on the target diameter are not bisected by rounding noise.
const THRESHOLD_SLACK: f64 = 1e-12;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Distance from `p` to the segment `[a, b]`.
fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Simple counterclockwise polygon together with a grading exponent per corner.
///
/// A corner with exponent `mu < 1` attracts refinement: elements at distance
/// `r` from it are resolved down to diameter `h * r^(1-mu)`, with a floor of
/// `h^(1/mu)` directly at the corner.
#[derive(Debug, Clone)]
pub struct PolygonSpec {
    /// Corner coordinates in counterclockwise order.
    pub vertices: Vec<Point>,
    /// Grading exponent in (0, 1] for each corner.
    pub grading: Vec<f64>,
    /// Interior angle at each corner, derived from the vertices.
    pub angles: Vec<f64>,
}

impl PolygonSpec {
    /// Builds a polygon from counterclockwise corners and per-corner grading
    /// exponents, deriving the interior angles.
    pub fn new(vertices: Vec<Point>, grading: Vec<f64>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::UnsupportedGeometry(format!(
                "polygon needs at least 3 vertices, got {n}"
            )));
        }
        if grading.len() != n {
            return Err(Error::InvalidParameter(format!(
                "got {} grading exponents for {} corners",
                grading.len(),
                n
            )));
        }
        for (k, &mu) in grading.iter().enumerate() {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "grading exponent at corner {k} must lie in (0, 1], got {mu}"
                )));
            }
        }
        let mut signed_area = 0.0;
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            signed_area += 0.5 * cross(a, b);
        }
        if signed_area <= 0.0 {
            return Err(Error::UnsupportedGeometry(
                "polygon vertices must be listed counterclockwise".into(),
            ));
        }
        let mut angles = Vec::with_capacity(n);
        for k in 0..n {
            let prev = vertices[(k + n - 1) % n];
            let here = vertices[k];
            let next = vertices[(k + 1) % n];
            let u = sub(here, prev);
            let w = sub(next, here);
            if norm(u) == 0.0 || norm(w) == 0.0 {
                return Err(Error::UnsupportedGeometry(format!(
                    "repeated vertex at corner {k}"
                )));
            }
            let turn = cross(u, w).atan2(dot(u, w));
            angles.push(std::f64::consts::PI - turn);
        }
        Ok(Self {
            vertices,
            grading,
            angles,
        })
    }

    /// Number of corners.
    pub fn num_corners(&self) -> usize {
        self.vertices.len()
    }

    /// Boundary segment `k` as its endpoint pair, counterclockwise.
    pub fn segment(&self, k: usize) -> (Point, Point) {
        let n = self.vertices.len();
        (self.vertices[k], self.vertices[(k + 1) % n])
    }

    /// Index of the boundary segment containing `p`, if any.
    ///
    /// A point at a corner belongs to two segments; the lower index wins.
    pub fn segment_of(&self, p: Point) -> Option<usize> {
        (0..self.vertices.len()).find(|&k| {
            let (a, b) = self.segment(k);
            dist_to_segment(p, a, b) <= BOUNDARY_TOL
        })
    }

    /// Whether `p` lies inside the polygon (boundary points excluded).
    ///
    /// Crossing count along the ray `{(x, p_y) : x > p_x}`; callers pass
    /// points well away from edges, such as cell centers.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for k in 0..n {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x_cross > p[0] {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Corners with a grading exponent below one, as `(corner, mu)` pairs.
    pub fn graded_corners(&self) -> Vec<(Point, f64)> {
        self.vertices
            .iter()
            .zip(&self.grading)
            .filter(|(_, &mu)| mu < 1.0)
            .map(|(&v, &mu)| (v, mu))
            .collect()
    }

    /// Polygon area by the shoelace formula.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut a = 0.0;
        for k in 0..n {
            a += 0.5 * cross(self.vertices[k], self.vertices[(k + 1) % n]);
        }
        a
    }
}

/// The L-shaped domain `(-1,1)^2` minus the quadrant `[0,1] x [-1,0]`,
/// graded with exponent `mu` toward the reentrant corner at the origin.
pub fn make_lshape(mu: f64) -> Result<PolygonSpec> {
    let vertices = vec![
        [-1.0, -1.0],
        [0.0, -1.0],
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [-1.0, 1.0],
    ];
    let mut grading = vec![1.0; 6];
    grading[2] = mu;
    PolygonSpec::new(vertices, grading)
}

/// Classification of a mesh node against the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// Node in the open interior.
    Interior,
    /// Node on boundary segment `segment` (lowest index at corners).
    Boundary {
        /// Index of the polygon segment the node lies on.
        segment: usize,
    },
}

/// Oriented boundary edge of a triangulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    /// Endpoint node indices, ascending.
    pub nodes: [usize; 2],
    /// Polygon segment the edge lies on.
    pub segment: usize,
}

/// Record of the nodes a refinement step created, enabling exact nodal
/// prolongation from the parent mesh.
#[derive(Debug, Clone)]
pub struct Provenance {
    /// Node count of the parent mesh; parent coordinates are the prefix
    /// `coords[..parent_nodes]` of the child mesh.
    pub parent_nodes: usize,
    /// For each created node, in creation order, the two parent-edge
    /// endpoints it is the midpoint of.
    pub midpoints: Vec<[usize; 2]>,
}

/// Conforming triangulation in a nested refinement hierarchy.
///
/// Triangles are stored counterclockwise with the refinement edge between
/// the first two vertices; the third vertex is the newest one.
#[derive(Debug, Clone)]
pub struct TriMesh {
    /// Refinement level, with 0 the initial cell split.
    pub level: u32,
    /// Target mesh size `2^-level * sqrt(2)` away from graded corners.
    pub h: f64,
    /// Node coordinates; nodes of coarser levels come first.
    pub coords: Vec<Point>,
    /// Triangles as node index triples, counterclockwise, refinement edge first.
    pub tris: Vec<[usize; 3]>,
    /// Edges lying on the domain boundary, sorted by node indices.
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Per-node interior/boundary classification.
    pub node_class: Vec<NodeClass>,
    /// Interior node indices, ascending.
    pub interior: Vec<usize>,
    /// Boundary node indices, ascending.
    pub boundary: Vec<usize>,
    /// Link to the parent level, absent for the initial mesh.
    pub parent: Option<Provenance>,
}

impl TriMesh {
    /// Number of nodes.
    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Number of triangles.
    pub fn num_tris(&self) -> usize {
        self.tris.len()
    }

    /// Corner coordinates of triangle `t`.
    pub fn tri_coords(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.tris[t];
        [self.coords[a], self.coords[b], self.coords[c]]
    }

    /// Signed area of triangle `t`; positive for counterclockwise storage.
    pub fn tri_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.tri_coords(t);
        0.5 * cross(sub(q, p), sub(r, p))
    }

    /// Longest edge length of triangle `t`.
    pub fn tri_diameter(&self, t: usize) -> f64 {
        let [p, q, r] = self.tri_coords(t);
        dist(p, q).max(dist(q, r)).max(dist(r, p))
    }

    /// Sum of all element areas.
    pub fn total_area(&self) -> f64 {
        (0..self.tris.len()).map(|t| self.tri_area(t)).sum()
    }

    /// Smallest interior angle over all elements, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.tris.len() {
            let c = self.tri_coords(t);
            for i in 0..3 {
                let u = sub(c[(i + 1) % 3], c[i]);
                let w = sub(c[(i + 2) % 3], c[i]);
                let angle = cross(u, w).abs().atan2(dot(u, w));
                min = min.min(angle);
            }
        }
        min.to_degrees()
    }

    /// Checks conformity: every edge belongs to one or two triangles, and
    /// single-triangle edges lie on the polygon boundary.
    pub fn validate_conforming(&self, spec: &PolygonSpec) -> Result<()> {
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &self.tris {
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &edge_count {
            if n > 2 {
                return Err(Error::UnsupportedGeometry(format!(
                    "edge ({a}, {b}) belongs to {n} triangles"
                )));
            }
            if n == 1 {
                let m = midpoint(self.coords[a], self.coords[b]);
                if spec.segment_of(self.coords[a]).is_none()
                    || spec.segment_of(self.coords[b]).is_none()
                    || spec.segment_of(m).is_none()
                {
                    return Err(Error::UnsupportedGeometry(format!(
                        "interior edge ({a}, {b}) has a single triangle"
                    )));
                }
            }
        }
        for t in 0..self.tris.len() {
            if self.tri_area(t) <= 0.0 {
                return Err(Error::UnsupportedGeometry(format!(
                    "triangle {t} is not counterclockwise"
                )));
            }
        }
        Ok(())
    }

    /// Writes the mesh in the plain-text exchange format: a header line
    /// `nodes N tris M level j`, one `x y flag` line per node with flag
    /// `I` or `B:k`, then one `i j k` line per triangle.
    pub fn export<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "nodes {} tris {} level {}",
            self.coords.len(),
            self.tris.len(),
            self.level
        )?;
        for (p, class) in self.coords.iter().zip(&self.node_class) {
            match class {
                NodeClass::Interior => writeln!(out, "{:.16e} {:.16e} I", p[0], p[1])?,
                NodeClass::Boundary { segment } => {
                    writeln!(out, "{:.16e} {:.16e} B:{}", p[0], p[1], segment)?
                }
            }
        }
        for tri in &self.tris {
            writeln!(out, "{} {} {}", tri[0], tri[1], tri[2])?;
        }
        Ok(())
    }
}

fn classify_nodes(coords: &[Point], spec: &PolygonSpec) -> (Vec<NodeClass>, Vec<usize>, Vec<usize>) {
    let mut class = Vec::with_capacity(coords.len());
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for (i, &p) in coords.iter().enumerate() {
        match spec.segment_of(p) {
            Some(segment) => {
                class.push(NodeClass::Boundary { segment });
                boundary.push(i);
            }
            None => {
                class.push(NodeClass::Interior);
                interior.push(i);
            }
        }
    }
    (class, interior, boundary)
}

fn collect_boundary_edges(
    tris: &[[usize; 3]],
    coords: &[Point],
    spec: &PolygonSpec,
) -> Result<Vec<BoundaryEdge>> {
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
    for tri in tris {
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut edges: Vec<(usize, usize)> = edge_count
        .iter()
        .filter(|&(_, &n)| n == 1)
        .map(|(&e, _)| e)
        .collect();
    edges.sort_unstable();
    edges
        .into_iter()
        .map(|(a, b)| {
            let m = midpoint(coords[a], coords[b]);
            let segment = spec.segment_of(m).ok_or_else(|| {
                Error::UnsupportedGeometry(format!(
                    "boundary edge ({a}, {b}) does not lie on a polygon segment"
                ))
            })?;
            Ok(BoundaryEdge {
                nodes: [a, b],
                segment,
            })
        })
        .collect()
}

/// Builds the level-0 mesh: every unit cell of the polygon is split along
/// a diagonal into two right isosceles triangles, choosing the diagonal
/// that points toward the nearest graded corner so the initial refinement
/// edges radiate from it.
pub fn initial_mesh(spec: &PolygonSpec) -> Result<TriMesh> {
    for (k, v) in spec.vertices.iter().enumerate() {
        if v[0].fract() != 0.0 || v[1].fract() != 0.0 {
            return Err(Error::UnsupportedGeometry(format!(
                "corner {k} at ({}, {}) is not on the integer grid",
                v[0], v[1]
            )));
        }
    }
    let n = spec.vertices.len();
    for k in 0..n {
        let (a, b) = spec.segment(k);
        if a[0] != b[0] && a[1] != b[1] {
            return Err(Error::UnsupportedGeometry(format!(
                "segment {k} is not axis aligned"
            )));
        }
    }

    let xs: Vec<f64> = spec.vertices.iter().map(|v| v[0]).collect();
    let ys: Vec<f64> = spec.vertices.iter().map(|v| v[1]).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min) as i64,
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as i64,
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min) as i64,
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as i64,
    );

    let graded = spec.graded_corners();
    let corner_dist = |p: Point| -> f64 {
        graded
            .iter()
            .map(|&(c, _)| dist(p, c))
            .fold(f64::INFINITY, f64::min)
    };

    let mut coords: Vec<Point> = Vec::new();
    let mut node_of: HashMap<(i64, i64), usize> = HashMap::new();
    let mut tris: Vec<[usize; 3]> = Vec::new();

    for iy in y0..y1 {
        for ix in x0..x1 {
            let center = [ix as f64 + 0.5, iy as f64 + 0.5];
            if !spec.contains(center) {
                continue;
            }
            let corners = [(ix, iy), (ix + 1, iy), (ix + 1, iy + 1), (ix, iy + 1)];
            let ids: Vec<usize> = corners
                .iter()
                .map(|&(gx, gy)| {
                    *node_of.entry((gx, gy)).or_insert_with(|| {
                        coords.push([gx as f64, gy as f64]);
                        coords.len() - 1
                    })
                })
                .collect();
            let (bl, br, tr, tl) = (ids[0], ids[1], ids[2], ids[3]);
            let (main_dist, anti_dist) = if graded.is_empty() {
                (0.0, f64::INFINITY)
            } else {
                (
                    corner_dist(coords[bl]).min(corner_dist(coords[tr])),
                    corner_dist(coords[br]).min(corner_dist(coords[tl])),
                )
            };
            if main_dist <= anti_dist {
                tris.push([tr, bl, br]);
                tris.push([bl, tr, tl]);
            } else {
                tris.push([br, tl, bl]);
                tris.push([tl, br, tr]);
            }
        }
    }

    if tris.is_empty() {
        return Err(Error::UnsupportedGeometry(
            "polygon contains no unit cells".into(),
        ));
    }

    let (node_class, interior, boundary) = classify_nodes(&coords, spec);
    let boundary_edges = collect_boundary_edges(&tris, &coords, spec)?;
    Ok(TriMesh {
        level: 0,
        h: std::f64::consts::SQRT_2,
        coords,
        tris,
        boundary_edges,
        node_class,
        interior,
        boundary,
        parent: None,
    })
}

#[derive(Clone, Copy)]
struct RefTri {
    v: [usize; 3],
    alive: bool,
}

#[derive(Clone, Copy, Default)]
struct EdgeSlot {
    tris: [usize; 2],
    len: u8,
}

impl EdgeSlot {
    fn push(&mut self, t: usize) {
        self.tris[self.len as usize] = t;
        self.len += 1;
    }

    fn remove(&mut self, t: usize) {
        if self.len == 2 && self.tris[0] == t {
            self.tris[0] = self.tris[1];
        }
        self.len -= 1;
    }

    fn other(&self, t: usize) -> Option<usize> {
        (0..self.len as usize)
            .map(|i| self.tris[i])
            .find(|&s| s != t)
    }
}

struct Refiner {
    coords: Vec<Point>,
    tris: Vec<RefTri>,
    edges: HashMap<(usize, usize), EdgeSlot>,
    midpoints: Vec<[usize; 2]>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Refiner {
    fn new(mesh: &TriMesh) -> Self {
        let mut r = Refiner {
            coords: mesh.coords.clone(),
            tris: Vec::with_capacity(2 * mesh.tris.len()),
            edges: HashMap::with_capacity(3 * mesh.tris.len()),
            midpoints: Vec::new(),
        };
        for &v in &mesh.tris {
            r.insert_tri(v);
        }
        r
    }

    fn insert_tri(&mut self, v: [usize; 3]) -> usize {
        let id = self.tris.len();
        self.tris.push(RefTri { v, alive: true });
        for i in 0..3 {
            self.edges
                .entry(edge_key(v[i], v[(i + 1) % 3]))
                .or_default()
                .push(id);
        }
        id
    }

    fn kill_tri(&mut self, t: usize) {
        let v = self.tris[t].v;
        self.tris[t].alive = false;
        for i in 0..3 {
            self.edges
                .get_mut(&edge_key(v[i], v[(i + 1) % 3]))
                .expect("edge of a live triangle")
                .remove(t);
        }
    }

    fn refinement_edge(&self, t: usize) -> (usize, usize) {
        let v = self.tris[t].v;
        edge_key(v[0], v[1])
    }

    /// Splits `t` along its refinement edge with the already-created
    /// midpoint node `m`. The children keep the parent's other edges as
    /// their refinement edges and stay counterclockwise.
    fn split(&mut self, t: usize, m: usize) {
        let [v0, v1, v2] = self.tris[t].v;
        self.kill_tri(t);
        self.insert_tri([v2, v0, m]);
        self.insert_tri([v1, v2, m]);
    }

    /// Bisects `t`, first bisecting the neighbour across the refinement
    /// edge whenever that neighbour's own refinement edge differs. A
    /// neighbour created by such a bisection always has the shared edge as
    /// its refinement edge, so the loop resolves in one recursion step.
    fn bisect(&mut self, t: usize) {
        if !self.tris[t].alive {
            return;
        }
        loop {
            let e = self.refinement_edge(t);
            match self.edges[&e].other(t) {
                None => {
                    self.bisect_edge(e, t, None);
                    return;
                }
                Some(n) if self.refinement_edge(n) == e => {
                    self.bisect_edge(e, t, Some(n));
                    return;
                }
                Some(n) => self.bisect(n),
            }
        }
    }

    fn bisect_edge(&mut self, e: (usize, usize), t: usize, other: Option<usize>) {
        let m = self.coords.len();
        self.coords.push(midpoint(self.coords[e.0], self.coords[e.1]));
        self.midpoints.push([e.0, e.1]);
        self.split(t, m);
        if let Some(n) = other {
            self.split(n, m);
        }
    }

    fn alive_in_order(&self) -> Vec<[usize; 3]> {
        self.tris
            .iter()
            .filter(|t| t.alive)
            .map(|t| t.v)
            .collect()
    }
}

/// Radius at which the graded zone hands over to the uniform far field.
/// Elements whose barycenter sits farther than this from every graded
/// corner keep the uniform size `h`.
const GRADING_RADIUS: f64 = 0.45;

/// Target diameter for an element with vertices `pts` on the level with
/// mesh size `h`: the smallest of `h * (r_c / 0.45)^(1-mu)` over the
/// graded corners, capped at `h`, where `r_c` is the barycenter distance
/// to the corner. With `mu = 1` this is `h` everywhere and the refinement
/// is uniform. Near a corner the target shrinks slower than the elements
/// do, so corner elements stop at diameter about `h^(1/mu)` on their own.
fn size_target(pts: &[Point; 3], graded: &[(Point, f64)], h: f64) -> f64 {
    let bc = [
        (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
        (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
    ];
    let mut factor: f64 = 1.0;
    for &(c, mu) in graded {
        factor = factor.min((dist(bc, c) / GRADING_RADIUS).powf(1.0 - mu));
    }
    h * factor
}

/// Advances `mesh` to `level` by repeated graded newest-vertex bisection.
///
/// Each level step bisects every element whose diameter exceeds its graded
/// threshold, restoring conformity as it goes, until no element is left
/// over the threshold. Passing `level` equal to `mesh.level` returns the
/// mesh unchanged; the result's provenance always describes the final step
/// only, so callers that prolong data keep the intermediate meshes.
pub fn refine_graded(mesh: &TriMesh, spec: &PolygonSpec, level: u32) -> Result<TriMesh> {
    if level < mesh.level {
        return Err(Error::InvalidParameter(format!(
            "cannot coarsen from level {} to level {}",
            mesh.level, level
        )));
    }
    let mut current = mesh.clone();
    for j in (mesh.level + 1)..=level {
        current = refine_step(&current, spec, j)?;
    }
    Ok(current)
}

fn refine_step(mesh: &TriMesh, spec: &PolygonSpec, level: u32) -> Result<TriMesh> {
    let h = std::f64::consts::SQRT_2 * 0.5f64.powi(level as i32);
    let graded = spec.graded_corners();
    let parent_nodes = mesh.coords.len();
    let mut refiner = Refiner::new(mesh);

    loop {
        let marked: Vec<usize> = refiner
            .tris
            .iter()
            .enumerate()
            .filter(|(_, t)| t.alive)
            .filter(|(_, t)| {
                let pts = [
                    refiner.coords[t.v[0]],
                    refiner.coords[t.v[1]],
                    refiner.coords[t.v[2]],
                ];
                let diam = dist(pts[0], pts[1])
                    .max(dist(pts[1], pts[2]))
                    .max(dist(pts[2], pts[0]));
                diam > size_target(&pts, &graded, h) * (1.0 + THRESHOLD_SLACK)
            })
            .map(|(id, _)| id)
            .collect();
        if marked.is_empty() {
            break;
        }
        for t in marked {
            refiner.bisect(t);
        }
    }

    let coords = refiner.coords.clone();
    let tris = refiner.alive_in_order();
    let (node_class, interior, boundary) = classify_nodes(&coords, spec);
    let boundary_edges = collect_boundary_edges(&tris, &coords, spec)?;
    Ok(TriMesh {
        level,
        h,
        coords,
        tris,
        boundary_edges,
        node_class,
        interior,
        boundary,
        parent: Some(Provenance {
            parent_nodes,
            midpoints: refiner.midpoints,
        }),
    })
}

/// Prolongs nodal values from a mesh to its direct refinement: parent
/// nodes keep their values and each created node takes the average of its
/// two parent-edge endpoints, which is exact for piecewise linear fields.
pub fn prolong_nodal(coarse: &TriMesh, fine: &TriMesh, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != coarse.coords.len() {
        return Err(Error::InvalidParameter(format!(
            "got {} values for {} nodes",
            values.len(),
            coarse.coords.len()
        )));
    }
    let prov = fine.parent.as_ref().ok_or_else(|| {
        Error::NotNested("fine mesh has no parent provenance".into())
    })?;
    if prov.parent_nodes != coarse.coords.len()
        || fine.level != coarse.level + 1
        || fine.coords[..prov.parent_nodes] != coarse.coords[..]
    {
        return Err(Error::NotNested(format!(
            "mesh at level {} is not the direct refinement of the mesh at level {}",
            fine.level, coarse.level
        )));
    }
    let mut out = Vec::with_capacity(fine.coords.len());
    out.extend_from_slice(values);
    for &[a, b] in &prov.midpoints {
        let v = 0.5 * (out[a] + out[b]);
        out.push(v);
    }
    Ok(out)
}
