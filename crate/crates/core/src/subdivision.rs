//! Lane-Riesenfeld curve refinement, Catmull-Clark mesh refinement and the
//! extended subdivision operators used to evaluate irregular patches.
//!
//! The operator layout is tied to the canonical irregular-patch ordering
//! documented on [`ElementPatch`](crate::mesh::ElementPatch): vertex 0 is the
//! extraordinary vertex, `1 + 2j` / `2 + 2j` are the edge neighbour and face
//! diagonal of fan face `j`, and the last seven entries are the outer ring.
//! Subdividing such a patch once yields `2κ+17` points: the first `2κ+8`
//! form the new irregular patch in the same ordering (rows of `Ā`), and nine
//! more complete the rings of the three regular sub-elements (rows of `A`).

use crate::mesh::{ControlMesh, MeshError};
use nalgebra::{DMatrix, Point3, SVector, Vector3};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Operator powers are cached up to this many implicit subdivisions; deeper
/// evaluation requests are clamped (quadrature never reaches this depth).
pub const MAX_SUBDIVISION_DEPTH: usize = 20;

#[derive(Debug, Error)]
pub enum SubdivisionError {
    #[error("curve subdivision needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("valence must be at least 3, got {0}")]
    BadValence(usize),
}

/// One Lane-Riesenfeld refinement step of an open polygon.
///
/// Edge points are midpoints, interior vertex points carry weights
/// `(1/8, 3/4, 1/8)` and the end points are kept, which matches refining the
/// polygon extended by mirrored ghost points. Output length is `2n - 1`.
pub fn subdivide_curve<const D: usize>(
    points: &[SVector<f64, D>],
) -> Result<Vec<SVector<f64, D>>, SubdivisionError> {
    let n = points.len();
    if n < 3 {
        return Err(SubdivisionError::TooFewPoints(n));
    }
    let mut out = Vec::with_capacity(2 * n - 1);
    out.push(points[0]);
    for i in 0..n - 1 {
        out.push(0.5 * (points[i] + points[i + 1]));
        if i + 2 < n {
            out.push(0.125 * points[i] + 0.75 * points[i + 1] + 0.125 * points[i + 2]);
        }
    }
    out.push(points[n - 1]);
    Ok(out)
}

/// Weights of the Catmull-Clark vertex point for an interior vertex of
/// valence `κ`: `(center, each edge neighbour, each face diagonal)`.
///
/// Reduces to the regular `1/64 {1,6,1,6,36,6,1,6,1}` stencil at `κ = 4`.
pub fn vertex_point_weights(valence: usize) -> (f64, f64, f64) {
    let k = valence as f64;
    let center = 1.0 - 3.0 / (2.0 * k) - 1.0 / (4.0 * k);
    (center, 3.0 / (2.0 * k * k), 1.0 / (4.0 * k * k))
}

/// One Catmull-Clark refinement of the control mesh.
///
/// Interior vertices use the valence-aware vertex rule, interior edges the
/// edge-point rule, and the boundary polygon is refined with the curve rules
/// so the limit boundary stays the end-interpolating B-spline of the
/// boundary polygon. Every quad splits into four; the number and valences of
/// extraordinary vertices are unchanged.
pub fn subdivide_mesh(mesh: &ControlMesh) -> Result<ControlMesh, MeshError> {
    let n_v = mesh.vertex_count();
    let n_e = mesh.edges().len();
    let n_f = mesh.face_count();

    let face_point = |f: usize| -> Vector3<f64> {
        let q = mesh.face(f);
        (mesh.vertex(q[0]).coords
            + mesh.vertex(q[1]).coords
            + mesh.vertex(q[2]).coords
            + mesh.vertex(q[3]).coords)
            / 4.0
    };

    let mut pts: Vec<Point3<f64>> = Vec::with_capacity(n_v + n_e + n_f);
    for v in 0..n_v {
        if mesh.is_boundary_vertex(v) {
            if mesh.valence(v) == 1 {
                // Corner of the boundary polygon: interpolated end point.
                pts.push(mesh.vertex(v));
            } else {
                let (prev, next) = mesh.boundary_neighbors(v).unwrap();
                pts.push(Point3::from(
                    0.125 * mesh.vertex(prev).coords
                        + 0.75 * mesh.vertex(v).coords
                        + 0.125 * mesh.vertex(next).coords,
                ));
            }
        } else {
            let fan = mesh.fan(v);
            let kappa = fan.len();
            let (wc, we, wd) = vertex_point_weights(kappa);
            let mut p = wc * mesh.vertex(v).coords;
            for &f in fan {
                p += we * mesh.vertex(mesh.next_in_face(f, v)).coords;
                p += wd * mesh.vertex(mesh.diagonal_in_face(f, v)).coords;
            }
            pts.push(Point3::from(p));
        }
    }
    for e in mesh.edges() {
        let [a, b] = e.vertices;
        let mid = 0.5 * (mesh.vertex(a).coords + mesh.vertex(b).coords);
        if e.is_boundary() {
            pts.push(Point3::from(mid));
        } else {
            let fa = face_point(e.faces[0].unwrap());
            let fb = face_point(e.faces[1].unwrap());
            pts.push(Point3::from(0.5 * mid + 0.25 * (fa + fb)));
        }
    }
    for f in 0..n_f {
        pts.push(Point3::from(face_point(f)));
    }

    let edge_id = |a: usize, b: usize| -> usize { mesh.edge_index(a, b).expect("face edge exists") };
    let mut faces = Vec::with_capacity(4 * n_f);
    for f in 0..n_f {
        let q = mesh.face(f);
        let fp = n_v + n_e + f;
        for c in 0..4 {
            let a = q[c];
            let b = q[(c + 1) % 4];
            let d = q[(c + 3) % 4];
            faces.push([a, n_v + edge_id(a, b), fp, n_v + edge_id(d, a)]);
        }
    }
    ControlMesh::new(pts, faces)
}

/// Subdivision operators for an irregular patch of one valence.
///
/// `extend` maps the `2κ+8` patch points to the `2κ+17` refined points;
/// `restrict` (its top block) maps patch to patch and is the matrix whose
/// powers drive deep evaluation. `picks` select the 16-point tensor-product
/// rings of the three regular sub-elements in row-major order.
#[derive(Debug)]
pub struct SubdivisionOperators {
    valence: usize,
    extend: DMatrix<f64>,
    restrict: DMatrix<f64>,
    picks: [[usize; 16]; 3],
    /// `projections[n-1][k-1] = D_k A Ā^(n-1)`, size 16 × (2κ+8).
    projections: Vec<[DMatrix<f64>; 3]>,
}

/// Index helpers and face table for the canonical irregular-patch layout.
pub(crate) mod patch_layout {
    /// Edge neighbour of fan face `j`.
    pub fn ring_edge(valence: usize, j: usize) -> usize {
        1 + 2 * (j % valence)
    }

    /// Face diagonal of fan face `j`.
    pub fn ring_diag(valence: usize, j: usize) -> usize {
        2 + 2 * (j % valence)
    }

    /// Outer-ring vertex `m` (0..7).
    pub fn outer(valence: usize, m: usize) -> usize {
        2 * valence + 1 + m
    }

    /// All faces of the patch as index quads in counter-clockwise order:
    /// the `κ` fan faces followed by the five outer faces
    /// (below-right, right, corner, top, top-left).
    pub fn faces(valence: usize) -> Vec<[usize; 4]> {
        let k = valence;
        let a = |j: usize| ring_edge(k, j);
        let b = |j: usize| ring_diag(k, j);
        let o = |m: usize| outer(k, m);
        let mut faces: Vec<[usize; 4]> = (0..k).map(|j| [0, a(j), b(j), a(j + 1)]).collect();
        faces.push([b(k - 1), o(0), o(1), a(0)]);
        faces.push([a(0), o(1), o(2), b(0)]);
        faces.push([b(0), o(2), o(3), o(4)]);
        faces.push([a(1), b(0), o(4), o(5)]);
        faces.push([b(1), a(1), o(5), o(6)]);
        faces
    }
}

impl SubdivisionOperators {
    pub fn new(valence: usize) -> Result<Self, SubdivisionError> {
        if valence < 3 {
            return Err(SubdivisionError::BadValence(valence));
        }
        let k = valence;
        let cols = 2 * k + 8;
        let rows = 2 * k + 17;
        let a = |j: usize| patch_layout::ring_edge(k, j);
        let b = |j: usize| patch_layout::ring_diag(k, j);
        let o = |m: usize| patch_layout::outer(k, m);
        let faces = patch_layout::faces(k);
        let fan = |j: usize| faces[j % k];
        let below_right = faces[k];
        let right = faces[k + 1];
        let corner = faces[k + 2];
        let top = faces[k + 3];
        let top_left = faces[k + 4];

        let mut m = DMatrix::<f64>::zeros(rows, cols);
        let face_pt = |m: &mut DMatrix<f64>, row: usize, f: [usize; 4]| {
            for v in f {
                m[(row, v)] += 0.25;
            }
        };
        let edge_pt =
            |m: &mut DMatrix<f64>, row: usize, v1: usize, v2: usize, fl: [usize; 4], fr: [usize; 4]| {
                m[(row, v1)] += 0.25;
                m[(row, v2)] += 0.25;
                for v in fl {
                    m[(row, v)] += 0.0625;
                }
                for v in fr {
                    m[(row, v)] += 0.0625;
                }
            };
        let vertex_pt =
            |m: &mut DMatrix<f64>, row: usize, center: usize, edges: [usize; 4], diags: [usize; 4]| {
                m[(row, center)] += 36.0 / 64.0;
                for v in edges {
                    m[(row, v)] += 6.0 / 64.0;
                }
                for v in diags {
                    m[(row, v)] += 1.0 / 64.0;
                }
            };

        // Row 0: the new extraordinary vertex.
        let (wc, we, wd) = vertex_point_weights(k);
        m[(0, 0)] = wc;
        for j in 0..k {
            m[(0, a(j))] += we;
            m[(0, b(j))] += wd;
        }
        // Fan edge and face points.
        for j in 0..k {
            edge_pt(&mut m, a(j), 0, a(j), fan(j + k - 1), fan(j));
            face_pt(&mut m, b(j), fan(j));
        }
        // Outer ring of the new patch.
        edge_pt(&mut m, o(0), a(0), b(k - 1), fan(k - 1), below_right);
        vertex_pt(&mut m, o(1), a(0), [0, b(k - 1), o(1), b(0)], [a(k - 1), o(0), o(2), a(1)]);
        edge_pt(&mut m, o(2), a(0), b(0), fan(0), right);
        vertex_pt(&mut m, o(3), b(0), [a(0), o(2), o(4), a(1)], [0, o(1), o(3), o(5)]);
        edge_pt(&mut m, o(4), b(0), a(1), fan(0), top);
        vertex_pt(&mut m, o(5), a(1), [0, b(0), o(5), b(1)], [a(0), o(4), o(6), a(2)]);
        edge_pt(&mut m, o(6), a(1), b(1), fan(1), top_left);
        // Nine extra points completing the regular sub-element rings.
        face_pt(&mut m, 2 * k + 8, below_right);
        edge_pt(&mut m, 2 * k + 9, a(0), o(1), below_right, right);
        face_pt(&mut m, 2 * k + 10, right);
        edge_pt(&mut m, 2 * k + 11, b(0), o(2), right, corner);
        face_pt(&mut m, 2 * k + 12, corner);
        edge_pt(&mut m, 2 * k + 13, b(0), o(4), corner, top);
        face_pt(&mut m, 2 * k + 14, top);
        edge_pt(&mut m, 2 * k + 15, a(1), o(5), top, top_left);
        face_pt(&mut m, 2 * k + 16, top_left);

        let restrict = m.rows(0, cols).into_owned();

        let e = 2 * k; // shorthand for pick tables
        #[rustfmt::skip]
        let picks: [[usize; 16]; 3] = [
            [
                e - 1, e, e + 1, e + 8,
                0, 1, e + 2, e + 9,
                3, 2, e + 3, e + 10,
                e + 6, e + 5, e + 4, e + 11,
            ],
            [
                0, 1, e + 2, e + 9,
                3, 2, e + 3, e + 10,
                e + 6, e + 5, e + 4, e + 11,
                e + 15, e + 14, e + 13, e + 12,
            ],
            [
                5, 0, 1, e + 2,
                4, 3, 2, e + 3,
                e + 7, e + 6, e + 5, e + 4,
                e + 16, e + 15, e + 14, e + 13,
            ],
        ];

        // D_k A, then right-multiply by cached powers of Ā.
        let pick_a: Vec<DMatrix<f64>> = picks
            .iter()
            .map(|rows16| DMatrix::from_fn(16, cols, |r, c| m[(rows16[r], c)]))
            .collect();
        let mut projections = Vec::with_capacity(MAX_SUBDIVISION_DEPTH);
        let mut power = DMatrix::<f64>::identity(cols, cols);
        for n in 0..MAX_SUBDIVISION_DEPTH {
            if n > 0 {
                power = &power * &restrict;
            }
            projections.push([&pick_a[0] * &power, &pick_a[1] * &power, &pick_a[2] * &power]);
        }

        Ok(SubdivisionOperators {
            valence,
            extend: m,
            restrict,
            picks,
            projections,
        })
    }

    pub fn valence(&self) -> usize {
        self.valence
    }

    /// The `(2κ+17) × (2κ+8)` operator producing the enlarged refined set.
    pub fn extend_operator(&self) -> &DMatrix<f64> {
        &self.extend
    }

    /// The square `(2κ+8) × (2κ+8)` patch-to-patch operator.
    pub fn square_operator(&self) -> &DMatrix<f64> {
        &self.restrict
    }

    /// Row selection of sub-element `k ∈ {1,2,3}` into the enlarged set.
    pub fn pick(&self, k: usize) -> &[usize; 16] {
        &self.picks[k - 1]
    }

    /// The selection operator `D_k` as an explicit 16 × (2κ+17) matrix.
    pub fn selection_matrix(&self, k: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(16, 2 * self.valence + 17);
        for (r, &c) in self.picks[k - 1].iter().enumerate() {
            d[(r, c)] = 1.0;
        }
        d
    }

    /// `D_k A Ā^(n-1)` for `1 <= n <= MAX_SUBDIVISION_DEPTH`.
    pub fn projection(&self, n: usize, k: usize) -> &DMatrix<f64> {
        &self.projections[n - 1][k - 1]
    }
}

/// Returns the operators for a valence, building them once per process.
pub fn operators_for(valence: usize) -> Result<Arc<SubdivisionOperators>, SubdivisionError> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SubdivisionOperators>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    if let Some(ops) = map.get(&valence) {
        return Ok(ops.clone());
    }
    let ops = Arc::new(SubdivisionOperators::new(valence)?);
    map.insert(valence, ops.clone());
    Ok(ops)
}
