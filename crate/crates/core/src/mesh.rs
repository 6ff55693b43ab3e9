//! Quad control meshes: topology, adjacency, boundary detection, element
//! patch extraction and OBJ file I/O.
//!
//! A [`ControlMesh`] is immutable after construction; [`ControlMesh::new`]
//! validates manifoldness, consistent orientation and valence bounds. Each
//! face can be turned into an [`ElementPatch`] carrying the ring of control
//! vertices needed to evaluate its piece of the limit surface.

use nalgebra::Point3;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {face} is not a quad")]
    NonQuadFace { face: usize },
    #[error("face {face} has an out-of-range or repeated vertex index")]
    BadFaceIndices { face: usize },
    #[error("edge ({a}, {b}) is shared by more than two faces")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("inconsistent face orientation at edge ({a}, {b})")]
    InconsistentOrientation { a: usize, b: usize },
    #[error("vertex {vertex} is not referenced by any face")]
    UnreferencedVertex { vertex: usize },
    #[error("faces around vertex {vertex} do not form a single fan")]
    NonManifoldVertex { vertex: usize },
    #[error("interior vertex {vertex} has valence {valence} < 3")]
    LowValence { vertex: usize, valence: usize },
    #[error("face {face} has {count} extraordinary vertices; requires one mesh refinement")]
    MultipleExtraordinary { face: usize, count: usize },
    #[error("face {face}: unsupported configuration ({reason})")]
    UnsupportedConfiguration { face: usize, reason: String },
    #[error("OBJ parse error at line {line}: {message}")]
    ObjParse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One undirected edge with its (at most two) adjacent faces.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub faces: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.faces[1].is_none()
    }

    pub fn other_face(&self, f: usize) -> Option<usize> {
        match self.faces {
            [Some(a), Some(b)] if a == f => Some(b),
            [Some(a), Some(b)] if b == f => Some(a),
            _ => None,
        }
    }
}

/// A quad control mesh with derived adjacency.
///
/// Faces are stored counter-clockwise; validation guarantees that every
/// interior edge is traversed once in each direction, that each vertex has a
/// single face fan and that interior vertices have valence at least 3.
#[derive(Debug, Clone)]
pub struct ControlMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 4]>,
    edges: Vec<Edge>,
    edge_lookup: HashMap<(usize, usize), usize>,
    /// Per vertex: incident faces in counter-clockwise fan order. For a
    /// boundary vertex the fan starts at the face on the boundary side.
    vertex_fans: Vec<Vec<usize>>,
    boundary_vertex: Vec<bool>,
}

impl ControlMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let n_v = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            let mut seen = *f;
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) || f.iter().any(|&v| v >= n_v) {
                return Err(MeshError::BadFaceIndices { face: fi });
            }
        }

        // Undirected edge table first, so a third face on an edge reports as
        // non-manifold rather than as an orientation clash.
        let mut edge_lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            for c in 0..4 {
                let a = f[c];
                let b = f[(c + 1) % 4];
                let key = (a.min(b), a.max(b));
                let ei = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        faces: [None, None],
                    });
                    edges.len() - 1
                });
                let e = &mut edges[ei];
                if e.faces[0].is_none() {
                    e.faces[0] = Some(fi);
                } else if e.faces[1].is_none() {
                    e.faces[1] = Some(fi);
                } else {
                    return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 });
                }
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for c in 0..4 {
                let a = f[c];
                let b = f[(c + 1) % 4];
                if directed.insert((a, b), fi).is_some() {
                    return Err(MeshError::InconsistentOrientation { a, b });
                }
            }
        }

        let mut boundary_vertex = vec![false; n_v];
        for e in &edges {
            if e.is_boundary() {
                boundary_vertex[e.vertices[0]] = true;
                boundary_vertex[e.vertices[1]] = true;
            }
        }

        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n_v];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                incident[v].push(fi);
            }
        }
        for (v, inc) in incident.iter().enumerate() {
            if inc.is_empty() {
                return Err(MeshError::UnreferencedVertex { vertex: v });
            }
        }

        let mesh = ControlMesh {
            vertices,
            faces,
            edges,
            edge_lookup,
            vertex_fans: Vec::new(),
            boundary_vertex,
        };
        let mut fans = Vec::with_capacity(n_v);
        for (v, inc) in incident.iter().enumerate() {
            fans.push(mesh.build_fan(v, inc)?);
        }
        let mesh = ControlMesh {
            vertex_fans: fans,
            ..mesh
        };

        for v in 0..n_v {
            if !mesh.boundary_vertex[v] && mesh.valence(v) < 3 {
                return Err(MeshError::LowValence {
                    vertex: v,
                    valence: mesh.valence(v),
                });
            }
        }
        Ok(mesh)
    }

    /// Orders the faces around `v` counter-clockwise, verifying that they
    /// form a single fan. The next face after `f` shares the edge from `v`
    /// to the vertex preceding `v` in `f`'s cycle.
    fn build_fan(&self, v: usize, incident: &[usize]) -> Result<Vec<usize>, MeshError> {
        let start = if self.boundary_vertex[v] {
            // Fan starts at the face whose outgoing edge at v is a boundary edge.
            let mut found = None;
            for &f in incident {
                let b = self.next_in_face(f, v);
                if self.edge(v, b).unwrap().is_boundary() {
                    if found.is_some() {
                        return Err(MeshError::NonManifoldVertex { vertex: v });
                    }
                    found = Some(f);
                }
            }
            found.ok_or(MeshError::NonManifoldVertex { vertex: v })?
        } else {
            *incident.iter().min().unwrap()
        };
        let mut fan = vec![start];
        let mut current = start;
        loop {
            let a = self.prev_in_face(current, v);
            let e = self.edge(v, a).unwrap();
            match e.other_face(current) {
                Some(next) if next == start => break,
                Some(next) => {
                    fan.push(next);
                    current = next;
                    if fan.len() > incident.len() {
                        return Err(MeshError::NonManifoldVertex { vertex: v });
                    }
                }
                None => break,
            }
        }
        if fan.len() != incident.len() {
            return Err(MeshError::NonManifoldVertex { vertex: v });
        }
        Ok(fan)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 4]] {
        &self.faces
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex(&self, v: usize) -> Point3<f64> {
        self.vertices[v]
    }

    pub fn face(&self, f: usize) -> [usize; 4] {
        self.faces[f]
    }

    /// Number of faces incident to `v`.
    pub fn valence(&self, v: usize) -> usize {
        self.vertex_fans[v].len()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Interior vertex with valence different from 4.
    pub fn is_extraordinary(&self, v: usize) -> bool {
        !self.boundary_vertex[v] && self.valence(v) != 4
    }

    pub fn extraordinary_vertices(&self) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&v| self.is_extraordinary(v))
            .collect()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&Edge> {
        self.edge_index(a, b).map(|ei| &self.edges[ei])
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.edge(a, b).map(|e| e.is_boundary()).unwrap_or(false)
    }

    /// Faces incident to `v` in counter-clockwise order.
    pub fn fan(&self, v: usize) -> &[usize] {
        &self.vertex_fans[v]
    }

    fn position_in_face(&self, f: usize, v: usize) -> usize {
        self.faces[f].iter().position(|&x| x == v).unwrap()
    }

    /// Vertex following `v` in the counter-clockwise cycle of face `f`.
    pub fn next_in_face(&self, f: usize, v: usize) -> usize {
        let p = self.position_in_face(f, v);
        self.faces[f][(p + 1) % 4]
    }

    /// Vertex preceding `v` in the counter-clockwise cycle of face `f`.
    pub fn prev_in_face(&self, f: usize, v: usize) -> usize {
        let p = self.position_in_face(f, v);
        self.faces[f][(p + 3) % 4]
    }

    /// Vertex diagonally opposite `v` in face `f`.
    pub fn diagonal_in_face(&self, f: usize, v: usize) -> usize {
        let p = self.position_in_face(f, v);
        self.faces[f][(p + 2) % 4]
    }

    /// The two neighbours of a boundary vertex along the boundary polygon.
    /// Ordered so that walking `prev -> v -> next` keeps the surface on the
    /// left (the same sense as the face cycles).
    pub fn boundary_neighbors(&self, v: usize) -> Option<(usize, usize)> {
        if !self.boundary_vertex[v] {
            return None;
        }
        let fan = self.fan(v);
        // Fan starts at the boundary on the outgoing side and ends at the
        // boundary on the incoming side.
        let next = self.next_in_face(*fan.first().unwrap(), v);
        let prev = self.prev_in_face(*fan.last().unwrap(), v);
        Some((prev, next))
    }

    /// Boundary edges as directed pairs `(a, b)` following the face cycles.
    pub fn boundary_edges_directed(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for e in &self.edges {
            if let (true, Some(f)) = (e.is_boundary(), e.faces[0]) {
                let [a, b] = e.vertices;
                if self.next_in_face(f, a) == b {
                    out.push((a, b));
                } else {
                    out.push((b, a));
                }
            }
        }
        out
    }

    /// Total face-edge incidences: interior edges count twice, boundary once.
    pub fn face_edge_incidences(&self) -> usize {
        self.edges
            .iter()
            .map(|e| e.faces.iter().flatten().count())
            .sum()
    }
}

/// How an element is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchClass {
    /// 16 control vertices, tensor-product basis.
    RegularInterior,
    /// 12 control vertices, boundary-modified basis across the boundary.
    BoundaryEdge,
    /// 9 control vertices, boundary-modified basis in both directions.
    BoundaryCorner,
    /// `2κ+8` control vertices around one extraordinary vertex.
    Irregular,
}

/// One element together with the ring of control vertices needed to evaluate
/// its piece of the limit surface.
///
/// Canonical control orderings (frozen):
///
/// - `RegularInterior`: row-major 4×4 grid, `ξ` along columns, `η` along
///   rows; the element corners sit at grid positions (1,1), (2,1), (2,2),
///   (1,2) and the corner at grid (1,1) maps to `ξ = (0,0)`.
/// - `BoundaryEdge`: row-major 3×4 grid with row 0 on the boundary; `ξ` runs
///   along the boundary, `η` away from it.
/// - `BoundaryCorner`: row-major 3×3 grid with the corner control vertex
///   first; both parametric axes leave the corner, which maps to `ξ = (0,0)`.
/// - `Irregular`: the extraordinary vertex first, then its one-ring fanned
///   counter-clockwise starting from the element edge along `ξ`
///   (edge-neighbour, face-diagonal, edge-neighbour, ...), then the seven
///   outer vertices swept counter-clockwise from the corner beyond the first
///   edge-neighbour. The extraordinary vertex maps to `ξ = (0,0)`.
#[derive(Debug, Clone)]
pub struct ElementPatch {
    pub face: usize,
    pub class: PatchClass,
    /// Global control-vertex indices in canonical order.
    pub control: Vec<usize>,
    /// Valence of the extraordinary vertex; 4 for the other classes.
    pub valence: usize,
    /// Which corner of the stored face cycle maps to `ξ = (0,0)`.
    pub rotation: usize,
}

impl ElementPatch {
    /// The element's corner vertices in parametric order:
    /// `ξ=(0,0), (1,0), (1,1), (0,1)`.
    pub fn corners(&self, mesh: &ControlMesh) -> [usize; 4] {
        let f = mesh.face(self.face);
        [
            f[self.rotation],
            f[(self.rotation + 1) % 4],
            f[(self.rotation + 2) % 4],
            f[(self.rotation + 3) % 4],
        ]
    }
}

/// Classifies every face of the mesh and extracts its control ring.
///
/// Fails on faces with more than one extraordinary vertex (one global
/// refinement separates them) and on irregular faces touching the boundary.
pub fn classify_elements(mesh: &ControlMesh) -> Result<Vec<ElementPatch>, MeshError> {
    (0..mesh.face_count())
        .map(|f| classify_face(mesh, f))
        .collect()
}

fn classify_face(mesh: &ControlMesh, face: usize) -> Result<ElementPatch, MeshError> {
    let f = mesh.face(face);
    let evs: Vec<usize> = (0..4).filter(|&c| mesh.is_extraordinary(f[c])).collect();
    let boundary_edges: Vec<usize> = (0..4)
        .filter(|&c| mesh.is_boundary_edge(f[c], f[(c + 1) % 4]))
        .collect();

    if evs.len() > 1 {
        return Err(MeshError::MultipleExtraordinary {
            face,
            count: evs.len(),
        });
    }
    if let Some(&c) = evs.first() {
        if !boundary_edges.is_empty() {
            return Err(MeshError::UnsupportedConfiguration {
                face,
                reason: "irregular element touching the boundary".into(),
            });
        }
        return extract_irregular(mesh, face, c);
    }
    match boundary_edges.as_slice() {
        [] => {
            if f.iter().any(|&v| mesh.is_boundary_vertex(v)) {
                return Err(MeshError::UnsupportedConfiguration {
                    face,
                    reason: "interior element touching the boundary at a vertex only".into(),
                });
            }
            extract_regular(mesh, face)
        }
        [c] => extract_boundary_edge(mesh, face, *c),
        [c0, c1] if (c1 - c0) % 2 == 1 => {
            // Two adjacent boundary edges share one corner vertex.
            let rot = if (c0 + 1) % 4 == *c1 { *c1 } else { *c0 };
            extract_boundary_corner(mesh, face, rot)
        }
        _ => Err(MeshError::UnsupportedConfiguration {
            face,
            reason: "element with opposite or more than two boundary edges".into(),
        }),
    }
}

fn unsupported(face: usize, reason: &str) -> MeshError {
    MeshError::UnsupportedConfiguration {
        face,
        reason: reason.into(),
    }
}

/// Walks the fan of interior valence-4 vertex `v` starting from the face
/// wedge `(v -> towards)` inside `start`, returning the faces in
/// counter-clockwise order beginning with `start`.
fn fan_from(
    mesh: &ControlMesh,
    face: usize,
    v: usize,
    start: usize,
) -> Result<[usize; 4], MeshError> {
    let mut faces = [start, 0, 0, 0];
    let mut current = start;
    for slot in faces.iter_mut().skip(1) {
        let a = mesh.prev_in_face(current, v);
        let e = mesh.edge(v, a).unwrap();
        current = e
            .other_face(current)
            .ok_or_else(|| unsupported(face, "expected interior vertex fan"))?;
        *slot = current;
    }
    Ok(faces)
}

fn check_no_duplicates(face: usize, control: &[usize]) -> Result<(), MeshError> {
    let mut seen = control.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(unsupported(
            face,
            "control ring has repeated vertices (mesh too coarse)",
        ));
    }
    Ok(())
}

fn extract_regular(mesh: &ControlMesh, face: usize) -> Result<ElementPatch, MeshError> {
    let f = mesh.face(face);
    for &v in &f {
        if mesh.valence(v) != 4 {
            return Err(unsupported(face, "regular element with non-4 valence"));
        }
    }
    let [v0, v1, v2, v3] = f;
    let mut grid = [[usize::MAX; 4]; 4];
    grid[1][1] = v0;
    grid[1][2] = v1;
    grid[2][2] = v2;
    grid[2][1] = v3;

    // Around v0: faces [element, W, SW, S]; around v1: [element, S, SE, E];
    // around v2: [element, E, NE, N]; around v3: [element, N, NW, W].
    let at_v0 = fan_from(mesh, face, v0, face)?;
    let at_v1 = fan_from(mesh, face, v1, face)?;
    let at_v2 = fan_from(mesh, face, v2, face)?;
    let at_v3 = fan_from(mesh, face, v3, face)?;

    // Edge neighbours.
    grid[1][0] = mesh.prev_in_face(at_v0[1], v0); // left of v0 (in W)
    grid[0][1] = mesh.prev_in_face(at_v0[2], v0); // below v0 (in SW wedge start = S side)
    grid[0][2] = mesh.prev_in_face(at_v1[1], v1); // below v1 (in S)
    grid[1][3] = mesh.prev_in_face(at_v1[2], v1); // right of v1
    grid[2][3] = mesh.prev_in_face(at_v2[1], v2); // right of v2 (in E)
    grid[3][2] = mesh.prev_in_face(at_v2[2], v2); // above v2
    grid[3][1] = mesh.prev_in_face(at_v3[1], v3); // above v3 (in N)
    grid[2][0] = mesh.prev_in_face(at_v3[2], v3); // left of v3

    // Diagonal corners.
    grid[0][0] = mesh.diagonal_in_face(at_v0[2], v0);
    grid[0][3] = mesh.diagonal_in_face(at_v1[2], v1);
    grid[3][3] = mesh.diagonal_in_face(at_v2[2], v2);
    grid[3][0] = mesh.diagonal_in_face(at_v3[2], v3);

    let control: Vec<usize> = grid.iter().flatten().copied().collect();
    if control.contains(&usize::MAX) {
        return Err(unsupported(face, "incomplete regular ring"));
    }
    check_no_duplicates(face, &control)?;
    Ok(ElementPatch {
        face,
        class: PatchClass::RegularInterior,
        control,
        valence: 4,
        rotation: 0,
    })
}

fn extract_irregular(mesh: &ControlMesh, face: usize, rot: usize) -> Result<ElementPatch, MeshError> {
    let f = mesh.face(face);
    let ev = f[rot];
    let kappa = mesh.valence(ev);
    // One-ring fan around the extraordinary vertex starting at this element.
    let mut fan_faces = Vec::with_capacity(kappa);
    let mut current = face;
    for _ in 0..kappa {
        fan_faces.push(current);
        let a = mesh.prev_in_face(current, ev);
        let e = mesh.edge(ev, a).unwrap();
        current = e
            .other_face(current)
            .ok_or_else(|| unsupported(face, "extraordinary vertex on the boundary"))?;
    }
    let edge_ring: Vec<usize> = fan_faces
        .iter()
        .map(|&g| mesh.next_in_face(g, ev))
        .collect();
    let diag_ring: Vec<usize> = fan_faces
        .iter()
        .map(|&g| mesh.diagonal_in_face(g, ev))
        .collect();

    let mut control = Vec::with_capacity(2 * kappa + 8);
    control.push(ev);
    for j in 0..kappa {
        control.push(edge_ring[j]);
        control.push(diag_ring[j]);
    }

    let a0 = edge_ring[0];
    let b0 = diag_ring[0];
    let a1 = edge_ring[1 % kappa];
    for &corner in &[a0, b0, a1] {
        if mesh.is_boundary_vertex(corner) || mesh.valence(corner) != 4 {
            return Err(unsupported(face, "irregular element next to another irregularity"));
        }
    }

    // Around a0 (CCW from the element): [element, f_{κ-1}, below-right, right].
    let at_a0 = fan_from(mesh, face, a0, face)?;
    let below_right = at_a0[2];
    let right = at_a0[3];
    // Around b0: [element, right, corner, top].
    let at_b0 = fan_from(mesh, face, b0, face)?;
    let corner_face = at_b0[2];
    let top = at_b0[3];
    // Around a1: the element is the *last* wedge counter-clockwise, so fan
    // from the element gives [element, top, top-left, f_1].
    let at_a1 = fan_from(mesh, face, a1, face)?;
    let top_left = at_a1[2];

    let o0 = mesh.diagonal_in_face(below_right, a0);
    let o1 = mesh.prev_in_face(below_right, a0);
    let o2 = mesh.diagonal_in_face(right, a0);
    let o3 = mesh.diagonal_in_face(corner_face, b0);
    let o4 = mesh.prev_in_face(corner_face, b0);
    let o5 = mesh.prev_in_face(top, a1);
    let o6 = mesh.diagonal_in_face(top_left, a1);
    control.extend_from_slice(&[o0, o1, o2, o3, o4, o5, o6]);

    check_no_duplicates(face, &control)?;
    Ok(ElementPatch {
        face,
        class: PatchClass::Irregular,
        control,
        valence: kappa,
        rotation: rot,
    })
}

fn extract_boundary_edge(
    mesh: &ControlMesh,
    face: usize,
    rot: usize,
) -> Result<ElementPatch, MeshError> {
    let f = mesh.face(face);
    let v0 = f[rot];
    let v1 = f[(rot + 1) % 4];
    let v2 = f[(rot + 2) % 4];
    let v3 = f[(rot + 3) % 4];
    for &v in &[v2, v3] {
        if mesh.is_boundary_vertex(v) || mesh.valence(v) != 4 {
            return Err(unsupported(face, "boundary element with irregular far corners"));
        }
    }
    let (p, _) = mesh.boundary_neighbors(v0).ok_or_else(|| {
        unsupported(face, "boundary edge without boundary vertex")
    })?;
    let (_, x) = mesh
        .boundary_neighbors(v1)
        .ok_or_else(|| unsupported(face, "boundary edge without boundary vertex"))?;
    if p == v3 || x == v2 {
        return Err(unsupported(face, "boundary strip only one element wide"));
    }

    // Around v3 (interior): fan from the element is [element, N, NW, W];
    // around v2: [element, E, NE, N].
    let at_v3 = fan_from(mesh, face, v3, face)?;
    let at_v2 = fan_from(mesh, face, v2, face)?;
    let w = at_v3[3];
    let n = at_v3[1];
    let nw = at_v3[2];
    let e = at_v2[1];
    let ne = at_v2[2];

    let l = mesh.next_in_face(w, v3);
    let r = mesh.prev_in_face(e, v2);
    let t3 = mesh.prev_in_face(n, v3);
    let t2 = mesh.prev_in_face(ne, v2);
    let ll = mesh.diagonal_in_face(nw, v3);
    let rr = mesh.diagonal_in_face(ne, v2);

    // Consistency with the boundary polygon: the W face must close onto the
    // boundary neighbour of v0, and E onto the neighbour of v1.
    if mesh.prev_in_face(w, v0) != p {
        return Err(unsupported(face, "boundary vertex with interior fan mismatch"));
    }
    if mesh.next_in_face(e, v1) != x {
        return Err(unsupported(face, "boundary vertex with interior fan mismatch"));
    }

    let control = vec![p, v0, v1, x, l, v3, v2, r, ll, t3, t2, rr];
    check_no_duplicates(face, &control)?;
    Ok(ElementPatch {
        face,
        class: PatchClass::BoundaryEdge,
        control,
        valence: 4,
        rotation: rot,
    })
}

fn extract_boundary_corner(
    mesh: &ControlMesh,
    face: usize,
    rot: usize,
) -> Result<ElementPatch, MeshError> {
    let f = mesh.face(face);
    let v0 = f[rot];
    let v1 = f[(rot + 1) % 4];
    let v2 = f[(rot + 2) % 4];
    let v3 = f[(rot + 3) % 4];
    if mesh.is_boundary_vertex(v2) || mesh.valence(v2) != 4 {
        return Err(unsupported(face, "corner element with irregular far corner"));
    }
    let (_, x) = mesh
        .boundary_neighbors(v1)
        .ok_or_else(|| unsupported(face, "corner without boundary vertex"))?;
    let (xp, _) = mesh
        .boundary_neighbors(v3)
        .ok_or_else(|| unsupported(face, "corner without boundary vertex"))?;
    if x == v2 || xp == v2 {
        return Err(unsupported(face, "corner strip only one element wide"));
    }

    // Around v2 (interior): [element, E, NE, N].
    let at_v2 = fan_from(mesh, face, v2, face)?;
    let e = at_v2[1];
    let ne = at_v2[2];
    let n = at_v2[3];
    let y = mesh.prev_in_face(e, v2);
    let w2 = mesh.next_in_face(n, v2);
    let d = mesh.diagonal_in_face(ne, v2);
    if mesh.next_in_face(e, v1) != x || mesh.prev_in_face(n, v3) != xp {
        return Err(unsupported(face, "corner fan mismatch"));
    }

    let control = vec![v0, v1, x, v3, v2, y, xp, w2, d];
    check_no_duplicates(face, &control)?;
    Ok(ElementPatch {
        face,
        class: PatchClass::BoundaryCorner,
        control,
        valence: 4,
        rotation: rot,
    })
}

/// Loads a quad mesh from an ASCII OBJ file (`v` and `f` records only).
pub fn load_obj(path: impl AsRef<Path>) -> Result<ControlMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

/// Parses OBJ text; `f` entries may carry `/vt/vn` suffixes, which are ignored.
pub fn parse_obj(text: &str) -> Result<ControlMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| MeshError::ObjParse {
                            line: ln + 1,
                            message: format!("bad vertex coordinate '{t}'"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(MeshError::ObjParse {
                        line: ln + 1,
                        message: "vertex record needs three coordinates".into(),
                    });
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        head.parse::<i64>()
                            .ok()
                            .filter(|&i| i > 0)
                            .map(|i| (i - 1) as usize)
                            .ok_or(MeshError::ObjParse {
                                line: ln + 1,
                                message: format!("bad face index '{t}'"),
                            })
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 4 {
                    return Err(MeshError::NonQuadFace { face: faces.len() });
                }
                faces.push([idx[0], idx[1], idx[2], idx[3]]);
            }
            Some(_) => {
                eprintln!("warning: ignoring OBJ record at line {}", ln + 1);
            }
            None => {}
        }
    }
    ControlMesh::new(vertices, faces)
}

/// Writes the mesh as ASCII OBJ with 17 significant digits, so that loading
/// the file reproduces the vertex coordinates bit for bit.
pub fn save_obj(mesh: &ControlMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut out = String::new();
    for p in mesh.vertices() {
        writeln!(out, "v {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Builds an `n x n`-element flat grid on `[0, size]²` in the `x1 x2` plane.
pub fn unit_grid(n: usize, size: f64) -> ControlMesh {
    let h = size / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
        }
    }
    let mut faces = Vec::with_capacity(n * n);
    let id = |i: usize, j: usize| j * (n + 1) + i;
    for j in 0..n {
        for i in 0..n {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    ControlMesh::new(vertices, faces).expect("grid meshes are always valid")
}
