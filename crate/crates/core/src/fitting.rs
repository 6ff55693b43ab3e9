//! Least-squares geometry fitting and the built-in control-mesh generators
//! used by the experiment harness.
//!
//! Fitting works on the evaluation operator `L` that maps control points to
//! limit-surface samples. With as many samples as control vertices `L` is
//! square and inverted directly; with more samples the normal equations give
//! the least-squares control points. The cylinder and hemisphere generators
//! fit their control meshes against the analytic target surface by repeated
//! projection of the current limit samples.

use crate::basis::{eval_basis, BasisError};
use crate::mesh::{classify_elements, ControlMesh, ElementPatch, MeshError, PatchClass};
use crate::quadrature::gauss_1d;
use crate::sparse::{CooBuilder, SolveError};
use crate::subdivision::subdivide_mesh;
use nalgebra::{DMatrix, DVector, Point3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FittingError {
    #[error("sample {0} has an inadmissible parametric point")]
    InadmissibleSample(usize),
    #[error("evaluation operator must be square for interpolation ({rows} x {cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("evaluation operator is singular")]
    Singular,
    #[error("least-squares normal matrix is rank deficient")]
    RankDeficient,
    #[error("curve fitting needs at least 3 control points, got {0}")]
    TooFewControlPoints(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Assembles the evaluation operator: row `i` holds the basis values of
/// sample `i` scattered to global control-vertex columns.
pub fn build_evaluation_operator(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    samples: &[(usize, [f64; 2])],
) -> Result<DMatrix<f64>, FittingError> {
    let mut l = DMatrix::zeros(samples.len(), mesh.vertex_count());
    for (row, &(pi, xi)) in samples.iter().enumerate() {
        let basis =
            eval_basis(&patches[pi], xi).map_err(|_| FittingError::InadmissibleSample(row))?;
        for (&v, &w) in patches[pi].control.iter().zip(&basis.values) {
            l[(row, v)] = w;
        }
    }
    Ok(l)
}

/// Solves the square interpolation system `L P = S`.
pub fn fit_interpolate(l: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, FittingError> {
    if l.nrows() != l.ncols() {
        return Err(FittingError::NotSquare {
            rows: l.nrows(),
            cols: l.ncols(),
        });
    }
    let p = l.clone().lu().solve(s).ok_or(FittingError::Singular)?;
    let residual = (l * &p - s).amax();
    if residual > 1e-10 * s.amax().max(f64::MIN_POSITIVE) {
        return Err(FittingError::Singular);
    }
    Ok(p)
}

/// Least-squares control points from an overdetermined sample set, via the
/// normal equations `LᵀL P = LᵀS`.
pub fn fit_least_squares(l: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, FittingError> {
    let ltl = l.transpose() * l;
    let lts = l.transpose() * s;
    let chol = ltl.clone().cholesky().ok_or(FittingError::RankDeficient)?;
    let p = chol.solve(&lts);
    let residual = (&ltl * &p - &lts).amax();
    if residual > 1e-8 * lts.amax().max(f64::MIN_POSITIVE) {
        return Err(FittingError::RankDeficient);
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Curve fitting (end-interpolating uniform cubic B-spline).
// ---------------------------------------------------------------------------

/// Basis row of an open subdivision curve with `n_ctrl` control points at
/// curve parameter `t ∈ [0, n_ctrl - 1]` (one unit per element).
fn curve_basis_row(n_ctrl: usize, t: f64) -> Vec<(usize, f64)> {
    let n_elem = n_ctrl - 1;
    let e = (t.floor() as usize).min(n_elem - 1);
    let xi = t - e as f64;
    if e == 0 {
        let (v, _) = crate::basis::curve_basis_boundary(xi).expect("xi in range");
        vec![(0, v[0]), (1, v[1]), (2, v[2])]
    } else if e == n_elem - 1 {
        let (v, _) = crate::basis::curve_basis_boundary(1.0 - xi).expect("xi in range");
        vec![(n_ctrl - 1, v[0]), (n_ctrl - 2, v[1]), (n_ctrl - 3, v[2])]
    } else {
        let (v, _) = crate::basis::curve_basis(xi).expect("xi in range");
        (0..4).map(|a| (e - 1 + a, v[a])).collect()
    }
}

/// Evaluation operator of the open subdivision curve at the given parameters.
pub fn curve_evaluation_operator(
    n_ctrl: usize,
    params: &[f64],
) -> Result<DMatrix<f64>, FittingError> {
    if n_ctrl < 3 {
        return Err(FittingError::TooFewControlPoints(n_ctrl));
    }
    let mut l = DMatrix::zeros(params.len(), n_ctrl);
    for (row, &t) in params.iter().enumerate() {
        for (c, w) in curve_basis_row(n_ctrl, t) {
            l[(row, c)] = w;
        }
    }
    Ok(l)
}

// ---------------------------------------------------------------------------
// Surface fitting against an analytic target.
// ---------------------------------------------------------------------------

/// Default fitting sample set: every admissible element corner plus the
/// interior 2×2 Gauss abscissae of each element.
pub fn default_fit_samples(patches: &[ElementPatch]) -> Vec<(usize, [f64; 2])> {
    let (g, _) = gauss_1d(2).expect("two-point rule");
    let mut samples = Vec::new();
    for (pi, patch) in patches.iter().enumerate() {
        for corner in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            if patch.class == PatchClass::Irregular && corner == [0.0, 0.0] {
                continue;
            }
            samples.push((pi, corner));
        }
        for &gy in &g {
            for &gx in &g {
                samples.push((pi, [gx, gy]));
            }
        }
    }
    samples
}

/// Fits the control points so the limit surface approximates the surface
/// defined by `project` (a closest-point map onto the target).
///
/// Each round re-targets the fixed parametric samples at the projection of
/// their current limit positions and solves the sparse normal equations.
pub fn fit_to_projection(
    mesh: &ControlMesh,
    project: &dyn Fn(Point3<f64>) -> Point3<f64>,
    rounds: usize,
) -> Result<ControlMesh, FittingError> {
    let patches = classify_elements(mesh)?;
    let samples = default_fit_samples(&patches);
    let n_c = mesh.vertex_count();

    // Sparse rows of L, fixed across rounds.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(samples.len());
    for (i, &(pi, xi)) in samples.iter().enumerate() {
        let basis =
            eval_basis(&patches[pi], xi).map_err(|_| FittingError::InadmissibleSample(i))?;
        rows.push(
            patches[pi]
                .control
                .iter()
                .zip(&basis.values)
                .map(|(&v, &w)| (v, w))
                .collect(),
        );
    }
    let mut coo = CooBuilder::new(n_c, n_c);
    for row in &rows {
        for &(c1, w1) in row {
            for &(c2, w2) in row {
                coo.add(c1, c2, w1 * w2);
            }
        }
    }
    let normal = coo.build();

    let mut points: Vec<Point3<f64>> = mesh.vertices().to_vec();
    for _ in 0..rounds {
        let mut rhs = [
            DVector::zeros(n_c),
            DVector::zeros(n_c),
            DVector::zeros(n_c),
        ];
        for row in &rows {
            let mut x = Point3::origin();
            for &(c, w) in row {
                x.coords += w * points[c].coords;
            }
            let t = project(x);
            for &(c, w) in row {
                rhs[0][c] += w * t.x;
                rhs[1][c] += w * t.y;
                rhs[2][c] += w * t.z;
            }
        }
        let solved: Vec<DVector<f64>> = rhs
            .iter()
            .map(|b| crate::sparse::solve_spd(&normal, b, 1e-13, 200 * n_c))
            .collect::<Result<_, _>>()?;
        for i in 0..n_c {
            points[i] = Point3::new(solved[0][i], solved[1][i], solved[2][i]);
        }
    }
    Ok(ControlMesh::new(points, mesh.faces().to_vec())?)
}

/// Largest distance between the limit surface and the target over a dense
/// parametric scan (the extraordinary corner is skipped).
pub fn max_projection_deviation(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    project: &dyn Fn(Point3<f64>) -> Point3<f64>,
    per_side: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for patch in patches {
        for i in 0..per_side {
            for j in 0..per_side {
                let xi = [
                    i as f64 / (per_side - 1) as f64,
                    j as f64 / (per_side - 1) as f64,
                ];
                if patch.class == PatchClass::Irregular && xi == [0.0, 0.0] {
                    continue;
                }
                let x = crate::basis::limit_position(mesh, patch, xi).expect("admissible");
                worst = worst.max((x - project(x)).norm());
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Built-in geometries.
// ---------------------------------------------------------------------------

/// Plate meshes on `[0,2]²`: the regular grid (Mesh 1) and the variant with
/// interior extraordinary vertices (Mesh 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateVariant {
    Regular,
    Extraordinary,
}

/// Cylinder control meshes of radius ½ around the `x₂` axis with
/// `x₂ ∈ [-½, ½]`, so the manufactured solution and its second derivative
/// across the rims vanish there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CylinderVariant {
    /// Wrapped regular grid, no extraordinary vertices.
    Regular,
    /// Two valence-3 and two valence-5 vertices.
    FourEv,
    /// One valence-6, two valence-5 and four valence-3 vertices.
    SevenEv,
}

pub const CYLINDER_RADIUS: f64 = 1.0;
pub const CYLINDER_SPAN: [f64; 2] = [-0.5, 1.5];

/// Flat plate control mesh; level 0 has 4×4 elements (Mesh 1) or the
/// once-subdivided extraordinary layout with 64 elements (Mesh 2).
pub fn generate_plate(variant: PlateVariant, level: usize) -> Result<ControlMesh, FittingError> {
    match variant {
        PlateVariant::Regular => Ok(crate::mesh::unit_grid(4 << level, 2.0)),
        PlateVariant::Extraordinary => {
            let base = crate::mesh::unit_grid(4, 2.0);
            let id = |i: usize, j: usize| j * 5 + i;
            let mut faces = base.faces().to_vec();
            flip_pair(
                &mut faces,
                [5, 6],
                [id(1, 1), id(2, 1), id(3, 1), id(3, 2), id(2, 2), id(1, 2)],
            );
            let mesh = ControlMesh::new(base.vertices().to_vec(), faces)?;
            // The flip leaves collinear corners at the valence-3 vertices;
            // smoothing restores well-shaped quads before refining.
            let mut mesh = smooth_interior(&mesh, 10)?;
            for _ in 0..=level {
                mesh = subdivide_mesh(&mesh)?;
            }
            Ok(mesh)
        }
    }
}

/// Replaces two adjacent grid quads by the same hexagon split along the
/// other admissible diagonal; the four hexagon corners change valence to
/// 5, 3, 5, 3.
fn flip_pair(faces: &mut [[usize; 4]], pair: [usize; 2], hex: [usize; 6]) {
    faces[pair[0]] = [hex[0], hex[1], hex[2], hex[3]];
    faces[pair[1]] = [hex[3], hex[4], hex[5], hex[0]];
}

/// Laplacian smoothing of the interior vertices (boundary fixed).
fn smooth_interior(mesh: &ControlMesh, rounds: usize) -> Result<ControlMesh, FittingError> {
    let mut points: Vec<Point3<f64>> = mesh.vertices().to_vec();
    for _ in 0..rounds {
        let mut next = points.clone();
        for v in 0..mesh.vertex_count() {
            if mesh.is_boundary_vertex(v) {
                continue;
            }
            let mut avg = nalgebra::Vector3::zeros();
            let fan = mesh.fan(v);
            for &f in fan {
                avg += points[mesh.next_in_face(f, v)].coords;
            }
            next[v] = Point3::from(avg / fan.len() as f64);
        }
        points = next;
    }
    Ok(ControlMesh::new(points, mesh.faces().to_vec())?)
}

fn cylinder_grid(n_around: usize, n_along: usize) -> (Vec<Point3<f64>>, Vec<[usize; 4]>) {
    let mut vertices = Vec::with_capacity(n_around * (n_along + 1));
    for j in 0..=n_along {
        let s = CYLINDER_SPAN[0] + (CYLINDER_SPAN[1] - CYLINDER_SPAN[0]) * j as f64 / n_along as f64;
        for i in 0..n_around {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n_around as f64;
            vertices.push(Point3::new(
                CYLINDER_RADIUS * theta.cos(),
                s,
                CYLINDER_RADIUS * theta.sin(),
            ));
        }
    }
    let id = |i: usize, j: usize| j * n_around + (i % n_around);
    let mut faces = Vec::with_capacity(n_around * n_along);
    for j in 0..n_along {
        for i in 0..n_around {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (vertices, faces)
}

pub(crate) fn project_cylinder(p: Point3<f64>) -> Point3<f64> {
    let r = (p.x * p.x + p.z * p.z).sqrt().max(1e-12);
    Point3::new(CYLINDER_RADIUS * p.x / r, p.y, CYLINDER_RADIUS * p.z / r)
}

pub(crate) fn project_sphere(p: Point3<f64>) -> Point3<f64> {
    let n = p.coords.norm().max(1e-12);
    Point3::from(p.coords / n)
}

/// Cylinder control mesh at a refinement level.
///
/// The regular variant is re-fitted at every level; the extraordinary
/// variants are fitted once at level 0 (260 and 264 elements) and refined by
/// subdivision, which keeps the limit surface fixed.
pub fn generate_cylinder(
    variant: CylinderVariant,
    level: usize,
) -> Result<ControlMesh, FittingError> {
    match variant {
        CylinderVariant::Regular => {
            let (v, f) = cylinder_grid(16 << level, 5 << level);
            let mesh = ControlMesh::new(v, f)?;
            fit_to_projection(&mesh, &project_cylinder, 2)
        }
        CylinderVariant::FourEv => {
            let n_around = 13;
            let (v, mut f) = cylinder_grid(n_around, 5);
            let id = |i: usize, j: usize| j * n_around + (i % n_around);
            let fid = |i: usize, j: usize| j * n_around + i;
            flip_pair(
                &mut f,
                [fid(0, 2), fid(1, 2)],
                [id(0, 2), id(1, 2), id(2, 2), id(2, 3), id(1, 3), id(0, 3)],
            );
            let base = ControlMesh::new(v, f)?;
            let isolated = subdivide_mesh(&base)?;
            let mut mesh = fit_to_projection(&isolated, &project_cylinder, 2)?;
            for _ in 0..level {
                mesh = subdivide_mesh(&mesh)?;
            }
            Ok(mesh)
        }
        CylinderVariant::SevenEv => {
            let n_around = 11;
            let (v, mut f) = cylinder_grid(n_around, 6);
            let id = |i: usize, j: usize| j * n_around + (i % n_around);
            let fid = |i: usize, j: usize| j * n_around + i;
            flip_pair(
                &mut f,
                [fid(0, 2), fid(1, 2)],
                [id(0, 2), id(1, 2), id(2, 2), id(2, 3), id(1, 3), id(0, 3)],
            );
            flip_pair(
                &mut f,
                [fid(2, 3), fid(3, 3)],
                [id(2, 3), id(3, 3), id(4, 3), id(4, 4), id(3, 4), id(2, 4)],
            );
            let base = ControlMesh::new(v, f)?;
            let isolated = subdivide_mesh(&base)?;
            let mut mesh = fit_to_projection(&isolated, &project_cylinder, 2)?;
            for _ in 0..level {
                mesh = subdivide_mesh(&mesh)?;
            }
            Ok(mesh)
        }
    }
}

/// The five-face half-cube with its four valence-3 vertices; the initial
/// hemisphere mesh is this base subdivided twice (80 elements).
fn hemisphere_base() -> ControlMesh {
    let a = 1.0 / 3.0f64.sqrt();
    let b = 1.0 / 2.0f64.sqrt();
    let vertices = vec![
        Point3::new(a, a, a),
        Point3::new(-a, a, a),
        Point3::new(-a, -a, a),
        Point3::new(a, -a, a),
        Point3::new(b, b, 0.0),
        Point3::new(-b, b, 0.0),
        Point3::new(-b, -b, 0.0),
        Point3::new(b, -b, 0.0),
    ];
    let faces = vec![
        [0, 1, 2, 3],
        [1, 0, 4, 5],
        [2, 1, 5, 6],
        [3, 2, 6, 7],
        [0, 3, 7, 4],
    ];
    ControlMesh::new(vertices, faces).expect("half-cube is valid")
}

/// Unit hemisphere control mesh fitted at the initial resolution (level 0
/// has 80 elements) and refined by subdivision, keeping the limit surface
/// fixed.
pub fn generate_hemisphere(level: usize) -> Result<ControlMesh, FittingError> {
    let mut mesh = hemisphere_fitted_at(0)?;
    for _ in 0..level {
        mesh = subdivide_mesh(&mesh)?;
    }
    Ok(mesh)
}

/// Unit hemisphere freshly fitted at the control resolution of `level`.
pub fn hemisphere_fitted_at(level: usize) -> Result<ControlMesh, FittingError> {
    let mut mesh = hemisphere_base();
    for _ in 0..2 + level {
        mesh = subdivide_mesh(&mesh)?;
    }
    fit_to_projection(&mesh, &project_sphere, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plate_mesh1_counts() {
        let m = generate_plate(PlateVariant::Regular, 0).unwrap();
        assert_eq!(m.vertex_count(), 25);
        assert_eq!(m.face_count(), 16);
        assert!(m.extraordinary_vertices().is_empty());
    }

    #[test]
    fn plate_mesh2_has_isolated_extraordinary_vertices() {
        let m = generate_plate(PlateVariant::Extraordinary, 0).unwrap();
        assert_eq!(m.face_count(), 64);
        let evs = m.extraordinary_vertices();
        let threes = evs.iter().filter(|&&v| m.valence(v) == 3).count();
        let fives = evs.iter().filter(|&&v| m.valence(v) == 5).count();
        assert_eq!(threes, 2);
        assert_eq!(fives, 2);
        assert_eq!(evs.len(), 4);
        // Classification marks exactly the faces incident to extraordinary
        // vertices as irregular, with matching valence.
        let patches = classify_elements(&m).unwrap();
        for p in &patches {
            let f = m.face(p.face);
            let ev = f.iter().find(|&&v| m.is_extraordinary(v));
            match ev {
                Some(&v) => {
                    assert_eq!(p.class, PatchClass::Irregular);
                    assert_eq!(p.valence, m.valence(v));
                }
                None => assert_ne!(p.class, PatchClass::Irregular),
            }
        }
        // The plate stays flat and covers [0,2]².
        for v in m.vertices() {
            assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-15);
            assert!((-1e-12..=2.0 + 1e-12).contains(&v.x));
            assert!((-1e-12..=2.0 + 1e-12).contains(&v.y));
        }
    }

    #[test]
    fn cylinder_variant_valences() {
        let m4 = generate_cylinder(CylinderVariant::FourEv, 0).unwrap();
        assert_eq!(m4.face_count(), 260);
        let evs = m4.extraordinary_vertices();
        assert_eq!(evs.iter().filter(|&&v| m4.valence(v) == 3).count(), 2);
        assert_eq!(evs.iter().filter(|&&v| m4.valence(v) == 5).count(), 2);
        assert_eq!(evs.len(), 4);

        let m7 = generate_cylinder(CylinderVariant::SevenEv, 0).unwrap();
        assert_eq!(m7.face_count(), 264);
        let evs = m7.extraordinary_vertices();
        assert_eq!(evs.iter().filter(|&&v| m7.valence(v) == 3).count(), 4);
        assert_eq!(evs.iter().filter(|&&v| m7.valence(v) == 5).count(), 2);
        assert_eq!(evs.iter().filter(|&&v| m7.valence(v) == 6).count(), 1);
        assert_eq!(evs.len(), 7);
    }

    #[test]
    fn table_element_counts_across_levels() {
        let m = generate_cylinder(CylinderVariant::FourEv, 1).unwrap();
        assert_eq!(m.face_count(), 1040);
        let m = generate_cylinder(CylinderVariant::SevenEv, 1).unwrap();
        assert_eq!(m.face_count(), 1056);
    }

    #[test]
    fn hemisphere_counts_and_evs() {
        let m = generate_hemisphere(0).unwrap();
        assert_eq!(m.face_count(), 80);
        let evs = m.extraordinary_vertices();
        assert_eq!(evs.len(), 4);
        for v in evs {
            assert_eq!(m.valence(v), 3);
        }
        let m2 = generate_hemisphere(2).unwrap();
        assert_eq!(m2.face_count(), 1280);
        assert_eq!(m2.vertex_count(), 1313);
        assert_eq!(m2.extraordinary_vertices().len(), 4);
    }

    #[test]
    fn interpolation_recovers_control_points() {
        // Sample the limit position of each control vertex at its element
        // corner and interpolate the samples back.
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let mut samples = vec![None; mesh.vertex_count()];
        for (pi, patch) in patches.iter().enumerate() {
            let corners = patch.corners(&mesh);
            for (c, &v) in corners.iter().enumerate() {
                let xi = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]][c];
                if samples[v].is_none() {
                    samples[v] = Some((pi, xi));
                }
            }
        }
        let samples: Vec<(usize, [f64; 2])> = samples.into_iter().map(|s| s.unwrap()).collect();
        let l = build_evaluation_operator(&mesh, &patches, &samples).unwrap();
        assert_eq!(l.nrows(), l.ncols());
        for r in 0..l.nrows() {
            assert_abs_diff_eq!(l.row(r).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let ctrl = DMatrix::from_fn(mesh.vertex_count(), 3, |v, c| mesh.vertex(v)[c]);
        let s = &l * &ctrl;
        let p = fit_interpolate(&l, &s).unwrap();
        assert!((p - ctrl).amax() < 1e-10);
    }

    #[test]
    fn corner_sample_rows_interpolate() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let corner_patch = patches
            .iter()
            .position(|p| p.class == PatchClass::BoundaryCorner)
            .unwrap();
        let l =
            build_evaluation_operator(&mesh, &patches, &[(corner_patch, [0.0, 0.0])]).unwrap();
        let corner_vertex = patches[corner_patch].control[0];
        assert_abs_diff_eq!(l[(0, corner_vertex)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_recovers_exact_data() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let samples = default_fit_samples(&patches);
        let l = build_evaluation_operator(&mesh, &patches, &samples).unwrap();
        let p0 = DMatrix::from_fn(mesh.vertex_count(), 3, |v, c| {
            (v as f64 * 0.37 + c as f64).sin()
        });
        let s = &l * &p0;
        let p = fit_least_squares(&l, &s).unwrap();
        assert!((p - p0).amax() < 1e-8);
    }

    #[test]
    fn sine_curve_fit_improves_with_samples() {
        let target = |x: f64| (4.0 * std::f64::consts::PI * x).sin();
        let mut deviations = Vec::new();
        for n in [6usize, 11, 21] {
            let n_elem = n - 1;
            let params: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let l = curve_evaluation_operator(n, &params).unwrap();
            let s = DMatrix::from_fn(n, 2, |r, c| {
                let x = r as f64 / n_elem as f64;
                if c == 0 {
                    x
                } else {
                    target(x)
                }
            });
            let p = fit_interpolate(&l, &s).unwrap();
            // Dense off-sample deviation scan.
            let dense: Vec<f64> = (0..=400)
                .map(|i| i as f64 / 400.0 * n_elem as f64)
                .collect();
            let ld = curve_evaluation_operator(n, &dense).unwrap();
            let curve = &ld * &p;
            let dev = (0..dense.len())
                .map(|r| (curve[(r, 1)] - target(curve[(r, 0)])).abs())
                .fold(0.0f64, f64::max);
            deviations.push(dev);
        }
        assert!(
            deviations[0] > deviations[1] && deviations[1] > deviations[2],
            "deviations {:?} must decrease",
            deviations
        );
        // Six samples cannot capture two full sine periods.
        assert!(deviations[0] > 0.2);
        assert!(deviations[2] < 0.01);
    }

    #[test]
    fn densifying_samples_never_worsens_the_fit() {
        // With the control net fixed, doubling the sample density can only
        // bring the least-squares fit closer to the continuous optimum; the
        // brute-force residual per sample must not increase.
        let target = |x: f64| (4.0 * std::f64::consts::PI * x).sin();
        let n_ctrl = 9usize;
        let n_elem = n_ctrl - 1;
        let mut last = f64::INFINITY;
        for m in [24usize, 48, 96] {
            let params: Vec<f64> = (0..m)
                .map(|i| i as f64 / (m - 1) as f64 * n_elem as f64)
                .collect();
            let l = curve_evaluation_operator(n_ctrl, &params).unwrap();
            let s = DMatrix::from_fn(m, 1, |r, _| target(params[r] / n_elem as f64));
            let p = fit_least_squares(&l, &s).unwrap();
            let dense: Vec<f64> = (0..2000)
                .map(|i| i as f64 / 1999.0 * n_elem as f64)
                .collect();
            let ld = curve_evaluation_operator(n_ctrl, &dense).unwrap();
            let fit = &ld * &p;
            let rms = (dense
                .iter()
                .enumerate()
                .map(|(i, t)| (fit[(i, 0)] - target(t / n_elem as f64)).powi(2))
                .sum::<f64>()
                / dense.len() as f64)
                .sqrt();
            assert!(rms <= last * (1.0 + 1e-9), "residual rose: {last} -> {rms}");
            last = rms;
        }
    }

    #[test]
    fn cylinder_fit_deviation_small() {
        let mesh = generate_cylinder(CylinderVariant::Regular, 2).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let dev = max_projection_deviation(&mesh, &patches, &project_cylinder, 10);
        assert!(
            dev < 1e-3 * CYLINDER_RADIUS,
            "radial deviation {dev} too large"
        );
    }

    #[test]
    fn hemisphere_fit_deviation_decreases() {
        let mut last = f64::INFINITY;
        for level in 0..3 {
            let mesh = hemisphere_fitted_at(level).unwrap();
            let patches = classify_elements(&mesh).unwrap();
            let dev = max_projection_deviation(&mesh, &patches, &project_sphere, 8);
            assert!(dev < last, "deviation {dev} did not decrease from {last}");
            last = dev;
        }
    }

    #[test]
    fn refitting_fitted_data_is_idempotent() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let samples = default_fit_samples(&patches);
        let l = build_evaluation_operator(&mesh, &patches, &samples).unwrap();
        let p0 = DMatrix::from_fn(mesh.vertex_count(), 3, |v, c| (v + c) as f64 * 0.01);
        let s = &l * &p0;
        let p1 = fit_least_squares(&l, &s).unwrap();
        let s1 = &l * &p1;
        let p2 = fit_least_squares(&l, &s1).unwrap();
        assert!((p2 - p1).amax() < 1e-8);
    }
}
