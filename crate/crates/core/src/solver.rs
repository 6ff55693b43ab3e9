//! Galerkin solver for the Laplace-Beltrami equation on subdivision
//! surfaces: assembly of the stiffness matrix and load vector, penalty
//! enforcement of Dirichlet data through a boundary mass matrix, normal-field
//! projection for the curvature term of the manufactured right-hand side,
//! and error norms for convergence studies.

use crate::basis::{
    combine_jacobian, combine_position, curve_basis, curve_basis_boundary, eval_irregular,
    surface_basis, BasisError, BasisEval,
};
use crate::mesh::{ControlMesh, ElementPatch, MeshError, PatchClass};
use crate::quadrature::{adaptive_rule, gauss_1d, gauss_2d, QuadratureRule};
use crate::sparse::{solve_spd, CooBuilder, CsrMatrix, PatternAccumulator, SolveError};
use crate::subdivision::{operators_for, SubdivisionError, SubdivisionOperators};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, Point3, RowVector3, Vector3};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("element {element}: {source}")]
    Element {
        element: usize,
        source: BasisError,
    },
    #[error("no Dirichlet boundary selected for this case")]
    EmptyDirichletBoundary,
    #[error("Dirichlet chain with a single edge cannot carry a cubic boundary basis")]
    ChainTooShort,
    #[error("exact solution has zero norm; relative errors undefined")]
    ZeroExactNorm,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Which quadrature the irregular elements get; regular and boundary
/// elements always use the standard 2×2 Gauss rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureConfig {
    Standard,
    Adaptive { depth: usize },
}

impl QuadratureConfig {
    pub fn description(&self) -> String {
        match self {
            QuadratureConfig::Standard => "standard".into(),
            QuadratureConfig::Adaptive { depth } => format!("adaptive:{depth}"),
        }
    }
}

/// Where essential boundary conditions apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletRegion {
    /// The whole surface boundary (cylinder rims, hemisphere rim).
    AllBoundary,
    /// The plate sides `x₂ = 0` and `x₂ = 2`; the other two sides are
    /// natural (zero-flux) boundaries.
    PlateSides,
}

/// A manufactured problem: exact solution, its derivatives, the forcing
/// term and the Dirichlet region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManufacturedCase {
    /// Plate cases on `[0,2]²`; the number is the test index 1..=4.
    Plate(u8),
    /// `u = sin(pi x1) cos(pi x2) exp(x3)` on a curved manifold.
    SurfaceExponential,
}

impl ManufacturedCase {
    pub fn plate(test: u8) -> Self {
        assert!((1..=4).contains(&test), "plate tests are numbered 1..=4");
        ManufacturedCase::Plate(test)
    }

    pub fn surface_exponential() -> Self {
        ManufacturedCase::SurfaceExponential
    }

    /// Flat problems skip the normal-projection pass and force the total
    /// curvature to zero.
    pub fn is_flat(&self) -> bool {
        matches!(self, ManufacturedCase::Plate(_))
    }

    pub fn dirichlet_region(&self) -> DirichletRegion {
        match self {
            ManufacturedCase::Plate(_) => DirichletRegion::PlateSides,
            ManufacturedCase::SurfaceExponential => DirichletRegion::AllBoundary,
        }
    }

    pub fn exact(&self, x: Point3<f64>) -> f64 {
        use std::f64::consts::PI;
        match self {
            ManufacturedCase::Plate(1) => 2.0 * x.y,
            ManufacturedCase::Plate(2) => -0.5 * x.y * x.y + 3.0 * x.y,
            ManufacturedCase::Plate(3) => -x.y * x.y * x.y / 6.0 + 8.0 / 3.0 * x.y,
            ManufacturedCase::Plate(_) => (PI * x.y).sin() / PI + 2.0 * x.y,
            ManufacturedCase::SurfaceExponential => {
                (PI * x.x).sin() * (PI * x.y).cos() * x.z.exp()
            }
        }
    }

    pub fn exact_gradient(&self, x: Point3<f64>) -> Vector3<f64> {
        use std::f64::consts::PI;
        match self {
            ManufacturedCase::Plate(1) => Vector3::new(0.0, 2.0, 0.0),
            ManufacturedCase::Plate(2) => Vector3::new(0.0, -x.y + 3.0, 0.0),
            ManufacturedCase::Plate(3) => Vector3::new(0.0, -0.5 * x.y * x.y + 8.0 / 3.0, 0.0),
            ManufacturedCase::Plate(_) => Vector3::new(0.0, (PI * x.y).cos() + 2.0, 0.0),
            ManufacturedCase::SurfaceExponential => {
                let e = x.z.exp();
                let (s1, c1) = (PI * x.x).sin_cos();
                let (s2, c2) = (PI * x.y).sin_cos();
                Vector3::new(PI * c1 * c2 * e, -PI * s1 * s2 * e, s1 * c2 * e)
            }
        }
    }

    pub fn exact_hessian(&self, x: Point3<f64>) -> Matrix3<f64> {
        use std::f64::consts::PI;
        match self {
            ManufacturedCase::Plate(1) => Matrix3::zeros(),
            ManufacturedCase::Plate(2) => {
                Matrix3::from_diagonal(&Vector3::new(0.0, -1.0, 0.0))
            }
            ManufacturedCase::Plate(3) => {
                Matrix3::from_diagonal(&Vector3::new(0.0, -x.y, 0.0))
            }
            ManufacturedCase::Plate(_) => {
                Matrix3::from_diagonal(&Vector3::new(0.0, -PI * (PI * x.y).sin(), 0.0))
            }
            ManufacturedCase::SurfaceExponential => {
                let e = x.z.exp();
                let (s1, c1) = (PI * x.x).sin_cos();
                let (s2, c2) = (PI * x.y).sin_cos();
                let u = s1 * c2 * e;
                Matrix3::new(
                    -PI * PI * u,
                    -PI * PI * c1 * s2 * e,
                    PI * c1 * c2 * e,
                    -PI * PI * c1 * s2 * e,
                    -PI * PI * u,
                    -PI * s1 * s2 * e,
                    PI * c1 * c2 * e,
                    -PI * s1 * s2 * e,
                    u,
                )
            }
        }
    }

    /// Forcing term `f = -Δu + n·(∇²u·n) + c (n·∇u)` evaluated with the
    /// geometric normal and the projected total curvature. Plate cases use
    /// their tabulated right-hand sides directly.
    pub fn source(&self, x: Point3<f64>, normal: Vector3<f64>, curvature: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            ManufacturedCase::Plate(1) => 0.0,
            ManufacturedCase::Plate(2) => 1.0,
            ManufacturedCase::Plate(3) => x.y,
            ManufacturedCase::Plate(_) => PI * (PI * x.y).sin(),
            ManufacturedCase::SurfaceExponential => {
                let hess = self.exact_hessian(x);
                let grad = self.exact_gradient(x);
                let laplacian = hess.trace();
                -laplacian + normal.dot(&(hess * normal)) + curvature * normal.dot(&grad)
            }
        }
    }

    /// Prescribed boundary value; the manufactured exact solution.
    pub fn dirichlet_value(&self, x: Point3<f64>) -> f64 {
        self.exact(x)
    }

    fn selects_edge(&self, midpoint: Point3<f64>) -> bool {
        match self.dirichlet_region() {
            DirichletRegion::AllBoundary => true,
            DirichletRegion::PlateSides => midpoint.y.abs() < 1e-9 || (midpoint.y - 2.0).abs() < 1e-9,
        }
    }
}

/// Assembled discrete problem before the penalty combination.
#[derive(Debug)]
pub struct LinearSystem {
    pub stiffness: CsrMatrix,
    pub load: DVector<f64>,
    pub boundary_mass: CsrMatrix,
    pub boundary_load: DVector<f64>,
    pub penalty: f64,
}

impl LinearSystem {
    pub fn n_dofs(&self) -> usize {
        self.load.len()
    }

    /// `K + βM_b` as one sparse matrix.
    pub fn penalized_matrix(&self) -> CsrMatrix {
        self.stiffness.add_scaled(&self.boundary_mass, self.penalty)
    }

    pub fn penalized_rhs(&self) -> DVector<f64> {
        &self.load + self.penalty * &self.boundary_load
    }
}

struct OperatorSet {
    by_valence: HashMap<usize, Arc<SubdivisionOperators>>,
}

impl OperatorSet {
    fn for_patches(patches: &[ElementPatch]) -> Result<Self, SolverError> {
        let mut by_valence = HashMap::new();
        for p in patches {
            if p.class == PatchClass::Irregular && !by_valence.contains_key(&p.valence) {
                by_valence.insert(p.valence, operators_for(p.valence)?);
            }
        }
        Ok(OperatorSet { by_valence })
    }

    fn eval(&self, patch: &ElementPatch, xi: [f64; 2]) -> Result<BasisEval, BasisError> {
        match patch.class {
            PatchClass::Irregular => {
                eval_irregular(patch, &self.by_valence[&patch.valence], xi)
            }
            _ => surface_basis(patch, xi),
        }
    }
}

/// Geometry at one quadrature point.
struct PointData {
    basis: BasisEval,
    position: Point3<f64>,
    normal: Vector3<f64>,
    measure: f64,
    /// Surface gradients of the basis functions, one row per function.
    gradients: Vec<RowVector3<f64>>,
}

fn point_data(
    mesh: &ControlMesh,
    patch: &ElementPatch,
    ops: &OperatorSet,
    xi: [f64; 2],
) -> Result<PointData, BasisError> {
    let basis = ops.eval(patch, xi)?;
    let position = combine_position(mesh, patch, &basis);
    let j: Matrix3x2<f64> = combine_jacobian(mesh, patch, &basis);
    let cross = j.column(0).cross(&j.column(1));
    let measure = cross.norm();
    let normal = cross / measure;
    // Left pseudo-inverse (JᵀJ)⁻¹Jᵀ realizes the surface gradient.
    let jtj: Matrix2<f64> = j.transpose() * j;
    let inv = jtj.try_inverse().expect("non-degenerate surface Jacobian");
    let pinv = inv * j.transpose();
    let gradients = (0..basis.values.len())
        .map(|a| {
            let d = nalgebra::RowVector2::new(basis.d_xi[a], basis.d_eta[a]);
            d * pinv
        })
        .collect();
    Ok(PointData {
        basis,
        position,
        normal,
        measure,
        gradients,
    })
}

fn rule_for(patch: &ElementPatch, config: QuadratureConfig, standard: &QuadratureRule, adaptive: &Option<QuadratureRule>) -> QuadratureRule {
    match (patch.class, config) {
        (PatchClass::Irregular, QuadratureConfig::Adaptive { .. }) => {
            adaptive.as_ref().expect("adaptive rule built").clone()
        }
        _ => standard.clone(),
    }
}

/// Sparsity of the basis-overlap matrices, from the element connectivity.
fn overlap_pattern(n_c: usize, patches: &[ElementPatch]) -> PatternAccumulator {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_c];
    for patch in patches {
        for &a in &patch.control {
            rows[a].extend_from_slice(&patch.control);
        }
    }
    PatternAccumulator::new(n_c, n_c, rows)
}

/// L² projection of the geometric unit normal onto the basis: solves
/// `M n̂ = b` with the surface mass matrix; returns the coefficients as an
/// `n_c × 3` matrix.
pub fn project_normals(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    config: QuadratureConfig,
) -> Result<DMatrix<f64>, SolverError> {
    let ops = OperatorSet::for_patches(patches)?;
    let standard = gauss_2d(2).expect("2x2 rule");
    let adaptive = match config {
        QuadratureConfig::Adaptive { depth } => Some(adaptive_rule(depth, 2).expect("adaptive")),
        QuadratureConfig::Standard => None,
    };
    let n_c = mesh.vertex_count();

    type Local = (Vec<usize>, DMatrix<f64>, DMatrix<f64>);
    let locals: Vec<Result<Local, SolverError>> = patches
        .par_iter()
        .map(|patch| {
            let rule = rule_for(patch, config, &standard, &adaptive);
            let nb = patch.control.len();
            let mut mass = DMatrix::zeros(nb, nb);
            let mut rhs = DMatrix::zeros(nb, 3);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let data = point_data(mesh, patch, &ops, [p[0], p[1]]).map_err(|e| {
                    SolverError::Element {
                        element: patch.face,
                        source: e,
                    }
                })?;
                let scale = data.measure * w;
                for a in 0..nb {
                    let na = data.basis.values[a];
                    for b in 0..nb {
                        mass[(a, b)] += na * data.basis.values[b] * scale;
                    }
                    for d in 0..3 {
                        rhs[(a, d)] += na * data.normal[d] * scale;
                    }
                }
            }
            Ok((patch.control.clone(), mass, rhs))
        })
        .collect();

    let mut acc = overlap_pattern(n_c, patches);
    let mut rhs = DMatrix::<f64>::zeros(n_c, 3);
    for local in locals {
        let (control, mass, local_rhs) = local?;
        for (a, &ga) in control.iter().enumerate() {
            for (b, &gb) in control.iter().enumerate() {
                acc.add(ga, gb, mass[(a, b)]);
            }
            for d in 0..3 {
                rhs[(ga, d)] += local_rhs[(a, d)];
            }
        }
    }
    let mass = acc.into_csr();
    let mut coeffs = DMatrix::zeros(n_c, 3);
    for d in 0..3 {
        let b = DVector::from_fn(n_c, |i, _| rhs[(i, d)]);
        let x = solve_spd(&mass, &b, 1e-12, 50 * n_c)?;
        for i in 0..n_c {
            coeffs[(i, d)] = x[i];
        }
    }
    Ok(coeffs)
}

/// Assembles stiffness, load, boundary mass and boundary load for a case,
/// with the default 2×2 Gauss rule on regular elements.
///
/// `config` selects the quadrature applied to irregular elements. For curved
/// cases the total curvature entering the forcing term is computed from the
/// projected normal field; flat cases skip the projection entirely.
pub fn assemble(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    config: QuadratureConfig,
    beta: f64,
) -> Result<LinearSystem, SolverError> {
    assemble_with_gauss_order(mesh, patches, case, config, beta, 2)
}

/// [`assemble`] with an explicit Gauss order per direction; used to verify
/// that integration error is not the dominant error on regular meshes.
pub fn assemble_with_gauss_order(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    config: QuadratureConfig,
    beta: f64,
    q: usize,
) -> Result<LinearSystem, SolverError> {
    let normal_coeffs = if case.is_flat() {
        None
    } else {
        Some(project_normals(mesh, patches, config)?)
    };
    assemble_with_normals(mesh, patches, case, config, beta, q, normal_coeffs.as_ref())
}

/// Assembly core with precomputed normal coefficients, so timing studies can
/// measure the matrix assembly alone.
pub fn assemble_with_normals(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    config: QuadratureConfig,
    beta: f64,
    q: usize,
    normal_coeffs: Option<&DMatrix<f64>>,
) -> Result<LinearSystem, SolverError> {
    let ops = OperatorSet::for_patches(patches)?;
    let standard = gauss_2d(q).expect("gauss rule");
    let adaptive = match config {
        QuadratureConfig::Adaptive { depth } => Some(adaptive_rule(depth, q).expect("adaptive")),
        QuadratureConfig::Standard => None,
    };
    let n_c = mesh.vertex_count();

    type Local = (Vec<usize>, DMatrix<f64>, DVector<f64>);
    let locals: Vec<Result<Local, SolverError>> = patches
        .par_iter()
        .map(|patch| {
            let rule = rule_for(patch, config, &standard, &adaptive);
            let nb = patch.control.len();
            let mut k = DMatrix::zeros(nb, nb);
            let mut f = DVector::zeros(nb);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let data = point_data(mesh, patch, &ops, [p[0], p[1]]).map_err(|e| {
                    SolverError::Element {
                        element: patch.face,
                        source: e,
                    }
                })?;
                let scale = data.measure * w;
                let curvature = match normal_coeffs {
                    None => 0.0,
                    Some(coeffs) => {
                        // Surface divergence of the interpolated normal field.
                        let mut c = 0.0;
                        for (a, &ga) in patch.control.iter().enumerate() {
                            for d in 0..3 {
                                c += data.gradients[a][d] * coeffs[(ga, d)];
                            }
                        }
                        c
                    }
                };
                let fval = case.source(data.position, data.normal, curvature);
                for a in 0..nb {
                    for b in a..nb {
                        let kab = data.gradients[a].dot(&data.gradients[b]) * scale;
                        k[(a, b)] += kab;
                        if a != b {
                            k[(b, a)] += kab;
                        }
                    }
                    f[a] += fval * data.basis.values[a] * scale;
                }
            }
            Ok((patch.control.clone(), k, f))
        })
        .collect();

    let mut acc = overlap_pattern(n_c, patches);
    let mut load = DVector::zeros(n_c);
    for local in locals {
        let (control, k, f) = local?;
        for (a, &ga) in control.iter().enumerate() {
            for (b, &gb) in control.iter().enumerate() {
                acc.add(ga, gb, k[(a, b)]);
            }
            load[ga] += f[a];
        }
    }
    let stiffness = acc.into_csr();

    let (boundary_mass, boundary_load) = assemble_boundary(mesh, case)?;
    Ok(LinearSystem {
        stiffness,
        load,
        boundary_mass,
        boundary_load,
        penalty: beta,
    })
}

/// One element of the boundary curve discretisation.
struct CurveElement {
    control: Vec<usize>,
    /// End elements use the boundary-modified basis, possibly reversed.
    kind: CurveKind,
}

enum CurveKind {
    Interior,
    StartEnd,
    FinishEnd,
}

impl CurveElement {
    fn basis(&self, xi: f64) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            CurveKind::Interior => {
                let (v, d) = curve_basis(xi).expect("xi in range");
                (v.to_vec(), d.to_vec())
            }
            CurveKind::StartEnd => {
                let (v, d) = curve_basis_boundary(xi).expect("xi in range");
                (v.to_vec(), d.to_vec())
            }
            CurveKind::FinishEnd => {
                let (v, d) = curve_basis_boundary(1.0 - xi).expect("xi in range");
                // Chain rule for the reversed parameter.
                (v.to_vec(), d.iter().map(|x| -x).collect())
            }
        }
    }
}

/// Splits the selected Dirichlet boundary edges into maximal chains and
/// loops, and emits the cubic curve elements discretising them.
fn dirichlet_curve_elements(
    mesh: &ControlMesh,
    case: ManufacturedCase,
) -> Result<Vec<CurveElement>, SolverError> {
    let mut next: HashMap<usize, usize> = HashMap::new();
    for (a, b) in mesh.boundary_edges_directed() {
        let mid = Point3::from(0.5 * (mesh.vertex(a).coords + mesh.vertex(b).coords));
        if case.selects_edge(mid) {
            next.insert(a, b);
        }
    }
    if next.is_empty() {
        return Err(SolverError::EmptyDirichletBoundary);
    }

    let mut elements = Vec::new();
    let mut visited: std::collections::HashSet<usize> = std::collections::HashSet::new();

    // Open chains start at vertices with outgoing but no incoming edge.
    let has_incoming: std::collections::HashSet<usize> = next.values().copied().collect();
    let mut starts: Vec<usize> = next
        .keys()
        .filter(|v| !has_incoming.contains(v))
        .copied()
        .collect();
    starts.sort_unstable();
    for start in starts {
        let mut chain = vec![start];
        let mut v = start;
        while let Some(&w) = next.get(&v) {
            chain.push(w);
            visited.insert(v);
            v = w;
        }
        emit_open_chain(&chain, &mut elements)?;
    }
    // Remaining edges form closed loops.
    let mut loop_starts: Vec<usize> = next
        .keys()
        .filter(|v| !visited.contains(v))
        .copied()
        .collect();
    loop_starts.sort_unstable();
    for start in loop_starts {
        if visited.contains(&start) {
            continue;
        }
        let mut ring = vec![start];
        visited.insert(start);
        let mut v = next[&start];
        while v != start {
            ring.push(v);
            visited.insert(v);
            v = next[&v];
        }
        let m = ring.len();
        for i in 0..m {
            elements.push(CurveElement {
                control: vec![
                    ring[(i + m - 1) % m],
                    ring[i],
                    ring[(i + 1) % m],
                    ring[(i + 2) % m],
                ],
                kind: CurveKind::Interior,
            });
        }
    }
    Ok(elements)
}

fn emit_open_chain(chain: &[usize], elements: &mut Vec<CurveElement>) -> Result<(), SolverError> {
    let m = chain.len() - 1; // number of edges
    if m < 2 {
        return Err(SolverError::ChainTooShort);
    }
    for i in 0..m {
        let element = if i == 0 {
            CurveElement {
                control: vec![chain[0], chain[1], chain[2]],
                kind: CurveKind::StartEnd,
            }
        } else if i == m - 1 {
            CurveElement {
                control: vec![chain[m - 2], chain[m - 1], chain[m]],
                kind: CurveKind::FinishEnd,
            }
        } else {
            CurveElement {
                control: vec![chain[i - 1], chain[i], chain[i + 1], chain[i + 2]],
                kind: CurveKind::Interior,
            }
        };
        elements.push(element);
    }
    Ok(())
}

/// Boundary mass matrix and boundary load vector over the Dirichlet curve,
/// integrated with 2-point 1D Gauss per curve element.
fn assemble_boundary(
    mesh: &ControlMesh,
    case: ManufacturedCase,
) -> Result<(CsrMatrix, DVector<f64>), SolverError> {
    let n_c = mesh.vertex_count();
    let elements = dirichlet_curve_elements(mesh, case)?;
    let (nodes, weights) = gauss_1d(2).expect("1d rule");
    let mut coo = CooBuilder::new(n_c, n_c);
    let mut load = DVector::zeros(n_c);
    for element in &elements {
        // FinishEnd elements store controls in forward chain order; the
        // reversed basis indexes from the chain end inward.
        let control: Vec<usize> = match element.kind {
            CurveKind::FinishEnd => element.control.iter().rev().copied().collect(),
            _ => element.control.clone(),
        };
        for (&xi, &w) in nodes.iter().zip(&weights) {
            let (values, derivs) = element.basis(xi);
            let mut tangent = Vector3::zeros();
            let mut x = Vector3::zeros();
            for (a, &ga) in control.iter().enumerate() {
                tangent += derivs[a] * mesh.vertex(ga).coords;
                x += values[a] * mesh.vertex(ga).coords;
            }
            let measure = tangent.norm();
            let ubar = case.dirichlet_value(Point3::from(x));
            for (a, &ga) in control.iter().enumerate() {
                for (b, &gb) in control.iter().enumerate() {
                    coo.add(ga, gb, values[a] * values[b] * measure * w);
                }
                load[ga] += ubar * values[a] * measure * w;
            }
        }
    }
    Ok((coo.build(), load))
}

/// Solves `[K + βM_b] u = f + β f_b` with diagonally scaled conjugate
/// gradients to a relative residual of 1e-12.
pub fn solve_penalized(system: &LinearSystem) -> Result<DVector<f64>, SolverError> {
    let a = system.penalized_matrix();
    let b = system.penalized_rhs();
    Ok(solve_spd(&a, &b, 1e-12, 50 * system.n_dofs())?)
}

/// Relative and absolute error norms of a discrete solution.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub l2_relative: f64,
    pub h1_relative: f64,
    pub l2_absolute: f64,
    pub h1_absolute: f64,
    pub l2_exact: f64,
    pub h1_exact: f64,
}

/// Computes `e_L2 = |u - u_h| / |u|` and the analogous H¹ quantity with the
/// surface-gradient term, integrating with the assembly quadrature.
pub fn error_norms(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    config: QuadratureConfig,
    u: &DVector<f64>,
) -> Result<ErrorNorms, SolverError> {
    let ops = OperatorSet::for_patches(patches)?;
    let standard = gauss_2d(2).expect("2x2 rule");
    let adaptive = match config {
        QuadratureConfig::Adaptive { depth } => Some(adaptive_rule(depth, 2).expect("adaptive")),
        QuadratureConfig::Standard => None,
    };

    let sums: Vec<Result<[f64; 4], SolverError>> = patches
        .par_iter()
        .map(|patch| {
            let rule = rule_for(patch, config, &standard, &adaptive);
            let mut acc = [0.0f64; 4];
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let data = point_data(mesh, patch, &ops, [p[0], p[1]]).map_err(|e| {
                    SolverError::Element {
                        element: patch.face,
                        source: e,
                    }
                })?;
                let scale = data.measure * w;
                let mut uh = 0.0;
                let mut grad_uh = RowVector3::zeros();
                for (a, &ga) in patch.control.iter().enumerate() {
                    uh += data.basis.values[a] * u[ga];
                    grad_uh += data.gradients[a] * u[ga];
                }
                let exact = case.exact(data.position);
                let grad_exact = case.exact_gradient(data.position);
                let surf_exact =
                    grad_exact - data.normal * data.normal.dot(&grad_exact);
                let diff = exact - uh;
                let gdiff = surf_exact.transpose() - grad_uh;
                acc[0] += diff * diff * scale;
                acc[1] += gdiff.norm_squared() * scale;
                acc[2] += exact * exact * scale;
                acc[3] += surf_exact.norm_squared() * scale;
            }
            Ok(acc)
        })
        .collect();

    let mut total = [0.0f64; 4];
    for s in sums {
        let s = s?;
        for d in 0..4 {
            total[d] += s[d];
        }
    }
    let l2_absolute = total[0].sqrt();
    let h1_absolute = (total[0] + total[1]).sqrt();
    let l2_exact = total[2].sqrt();
    let h1_exact = (total[2] + total[3]).sqrt();
    if l2_exact == 0.0 || h1_exact == 0.0 {
        return Err(SolverError::ZeroExactNorm);
    }
    Ok(ErrorNorms {
        l2_relative: l2_absolute / l2_exact,
        h1_relative: h1_absolute / h1_exact,
        l2_absolute,
        h1_absolute,
        l2_exact,
        h1_exact,
    })
}

/// Point-wise absolute error samples on a uniform parametric grid per
/// element, skipping the extraordinary corner.
pub fn pointwise_error_field(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    u: &DVector<f64>,
    samples_per_side: usize,
) -> Result<Vec<(Point3<f64>, f64, usize)>, SolverError> {
    let ops = OperatorSet::for_patches(patches)?;
    let mut out = Vec::new();
    let s = samples_per_side.max(2);
    for patch in patches {
        for i in 0..s {
            for j in 0..s {
                let xi = [i as f64 / (s - 1) as f64, j as f64 / (s - 1) as f64];
                if patch.class == PatchClass::Irregular && xi == [0.0, 0.0] {
                    continue;
                }
                let basis = ops.eval(patch, xi).map_err(|e| SolverError::Element {
                    element: patch.face,
                    source: e,
                })?;
                let x = combine_position(mesh, patch, &basis);
                let mut uh = 0.0;
                for (a, &ga) in patch.control.iter().enumerate() {
                    uh += basis.values[a] * u[ga];
                }
                out.push((x, (case.exact(x) - uh).abs(), patch.face));
            }
        }
    }
    Ok(out)
}

/// Total curvature `c = ∇_Γ · n` interpolated from projected normal
/// coefficients at one parametric point.
pub fn interpolated_curvature(
    mesh: &ControlMesh,
    patch: &ElementPatch,
    normal_coeffs: &DMatrix<f64>,
    xi: [f64; 2],
) -> Result<f64, SolverError> {
    let ops = OperatorSet::for_patches(std::slice::from_ref(patch))?;
    let data = point_data(mesh, patch, &ops, xi).map_err(|e| SolverError::Element {
        element: patch.face,
        source: e,
    })?;
    let mut c = 0.0;
    for (a, &ga) in patch.control.iter().enumerate() {
        for d in 0..3 {
            c += data.gradients[a][d] * normal_coeffs[(ga, d)];
        }
    }
    Ok(c)
}

/// Largest deviation of the discrete solution from the prescribed Dirichlet
/// data, sampled along the boundary rows of boundary patches.
pub fn boundary_mismatch(
    mesh: &ControlMesh,
    patches: &[ElementPatch],
    case: ManufacturedCase,
    u: &DVector<f64>,
) -> Result<f64, SolverError> {
    let mut worst = 0.0f64;
    for patch in patches {
        let on_dirichlet = |xi: [f64; 2]| -> Result<f64, SolverError> {
            let x = crate::basis::limit_position(mesh, patch, xi)?;
            let uh = solution_value(patch, u, xi)?;
            Ok((uh - case.dirichlet_value(x)).abs())
        };
        match patch.class {
            PatchClass::BoundaryEdge => {
                let corners = patch.corners(mesh);
                let mid = Point3::from(
                    0.5 * (mesh.vertex(corners[0]).coords + mesh.vertex(corners[1]).coords),
                );
                if case.selects_edge(mid) {
                    for s in 0..9 {
                        worst = worst.max(on_dirichlet([s as f64 / 8.0, 0.0])?);
                    }
                }
            }
            PatchClass::BoundaryCorner => {
                for s in 0..9 {
                    let t = s as f64 / 8.0;
                    for xi in [[t, 0.0], [0.0, t]] {
                        let corners = patch.corners(mesh);
                        let (a, b) = if xi[1] == 0.0 {
                            (corners[0], corners[1])
                        } else {
                            (corners[0], corners[3])
                        };
                        let mid =
                            Point3::from(0.5 * (mesh.vertex(a).coords + mesh.vertex(b).coords));
                        if case.selects_edge(mid) {
                            worst = worst.max(on_dirichlet(xi)?);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(worst)
}

/// Evaluates the discrete solution at one parametric point.
pub fn solution_value(
    patch: &ElementPatch,
    u: &DVector<f64>,
    xi: [f64; 2],
) -> Result<f64, SolverError> {
    let basis = crate::basis::eval_basis(patch, xi)?;
    let mut uh = 0.0;
    for (a, &ga) in patch.control.iter().enumerate() {
        uh += basis.values[a] * u[ga];
    }
    Ok(uh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{generate_cylinder, generate_plate, CylinderVariant, PlateVariant};
    use crate::mesh::classify_elements;
    use approx::assert_abs_diff_eq;

    const BETA: f64 = 1e8;

    #[test]
    fn stiffness_has_constant_nullspace_and_symmetry() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let sys = assemble(
            &mesh,
            &patches,
            ManufacturedCase::plate(1),
            QuadratureConfig::Standard,
            BETA,
        )
        .unwrap();
        let ones = DVector::from_element(sys.n_dofs(), 1.0);
        let ku = sys.stiffness.matvec(&ones);
        assert!(ku.amax() < 1e-10, "row sums {}", ku.amax());
        assert!(sys.stiffness.asymmetry() < 1e-12);
        assert!(sys.boundary_mass.asymmetry() < 1e-12);
    }

    #[test]
    fn plate_test1_patch_test() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(1);
        let sys = assemble(&mesh, &patches, case, QuadratureConfig::Standard, BETA).unwrap();
        let u = solve_penalized(&sys).unwrap();
        // u = 2 x2 is in the space; sampled error is penalty-limited.
        let mut worst = 0.0f64;
        for patch in &patches {
            for i in 0..5 {
                for j in 0..5 {
                    let xi = [i as f64 / 4.0, j as f64 / 4.0];
                    let x = crate::basis::limit_position(&mesh, patch, xi).unwrap();
                    let uh = solution_value(patch, &u, xi).unwrap();
                    worst = worst.max((case.exact(x) - uh).abs());
                }
            }
        }
        assert!(worst < 1e-5, "patch test error {worst}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        // Zero RHS and zero boundary data: u = 0.
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(1);
        let mut sys =
            assemble(&mesh, &patches, case, QuadratureConfig::Standard, BETA).unwrap();
        sys.load.fill(0.0);
        sys.boundary_load.fill(0.0);
        let u = solve_penalized(&sys).unwrap();
        assert!(u.amax() < 1e-12);
    }

    #[test]
    fn flat_plate_normals_project_to_unit_z() {
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let coeffs = project_normals(&mesh, &patches, QuadratureConfig::Standard).unwrap();
        for i in 0..mesh.vertex_count() {
            assert_abs_diff_eq!(coeffs[(i, 0)], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(coeffs[(i, 1)], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(coeffs[(i, 2)], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cylinder_normals_are_radial() {
        let mesh = generate_cylinder(CylinderVariant::Regular, 2).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let coeffs = project_normals(&mesh, &patches, QuadratureConfig::Standard).unwrap();
        let ops = OperatorSet::for_patches(&patches).unwrap();
        for patch in patches.iter().step_by(7) {
            let data = point_data(&mesh, patch, &ops, [0.4, 0.6]).unwrap();
            let mut n = Vector3::zeros();
            for (a, &ga) in patch.control.iter().enumerate() {
                n += data.basis.values[a]
                    * Vector3::new(coeffs[(ga, 0)], coeffs[(ga, 1)], coeffs[(ga, 2)]);
            }
            assert!((n.norm() - 1.0).abs() < 0.1);
            // Cylinder axis is x2; radial direction drops that component.
            let radial = Vector3::new(data.position.x, 0.0, data.position.z).normalize();
            let aligned = n.normalize().dot(&radial).abs();
            assert!(aligned > 0.99, "normal not radial: {aligned}");
        }
    }

    #[test]
    fn plate_source_matches_surface_formula() {
        // On a flat surface with n = e3 and c = 0, the general forcing
        // formula reduces to -Δu; Test 4's tabulated source agrees.
        use std::f64::consts::PI;
        let case = ManufacturedCase::plate(4);
        for i in 0..10 {
            let x = Point3::new(0.3, i as f64 * 0.2, 0.0);
            let f_tab = case.source(x, Vector3::z(), 0.0);
            assert_abs_diff_eq!(f_tab, PI * (PI * x.y).sin(), epsilon = 1e-14);
        }
    }

    #[test]
    fn surface_hessian_matches_finite_differences() {
        let case = ManufacturedCase::surface_exponential();
        let x = Point3::new(0.5, 0.0, 0.0);
        let h = 1e-5;
        let hess = case.exact_hessian(x);
        for i in 0..3 {
            for j in 0..3 {
                let mut xpp = x;
                let mut xpm = x;
                let mut xmp = x;
                let mut xmm = x;
                xpp[i] += h;
                xpp[j] += h;
                xpm[i] += h;
                xpm[j] -= h;
                xmp[i] -= h;
                xmp[j] += h;
                xmm[i] -= h;
                xmm[j] -= h;
                let fd = (case.exact(xpp) - case.exact(xpm) - case.exact(xmp)
                    + case.exact(xmm))
                    / (4.0 * h * h);
                assert!(
                    (fd - hess[(i, j)]).abs() < 1e-5,
                    "H[{i}{j}] fd {fd} vs {}",
                    hess[(i, j)]
                );
            }
        }
        // Gradient check too.
        let grad = case.exact_gradient(x);
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (case.exact(xp) - case.exact(xm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_solution_on_flat_surface_has_zero_source() {
        let case = ManufacturedCase::plate(1);
        assert_eq!(case.source(Point3::new(0.5, 0.7, 0.0), Vector3::z(), 0.0), 0.0);
    }

    #[test]
    fn constant_coefficients_give_zero_l2_error() {
        // Affine data is reproduced exactly: nodal coefficients sampled from
        // u = 2 x2 give zero error against the same exact solution.
        let mesh = generate_plate(PlateVariant::Regular, 0).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(1);
        let u = DVector::from_fn(mesh.vertex_count(), |i, _| 2.0 * mesh.vertex(i).y);
        let norms =
            error_norms(&mesh, &patches, case, QuadratureConfig::Standard, &u).unwrap();
        assert!(norms.l2_relative < 1e-13, "{}", norms.l2_relative);
        assert!(norms.h1_relative < 1e-12, "{}", norms.h1_relative);
    }

    #[test]
    fn missing_dirichlet_boundary_is_an_error() {
        // A closed surface has no boundary at all.
        let cube = crate::mesh::tests::cube();
        let refined = crate::subdivision::subdivide_mesh(&cube).unwrap();
        let patches = classify_elements(&refined).unwrap();
        let err = assemble(
            &refined,
            &patches,
            ManufacturedCase::surface_exponential(),
            QuadratureConfig::Standard,
            BETA,
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::EmptyDirichletBoundary));
    }

    #[test]
    fn adaptive_rule_perturbs_regular_stiffness_mildly() {
        // With a per-cell rule exact for the regular stiffness integrand
        // (degree 6 per direction needs q = 4), the only difference between
        // the standard and adaptive assemblies is the dropped corner cell of
        // measure 4^-n_d; at depth 7 the element stiffness moves by < 1e-3.
        use crate::quadrature::{adaptive_rule, gauss_2d};
        let mesh = generate_plate(PlateVariant::Regular, 1).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let patch = patches
            .iter()
            .find(|p| p.class == PatchClass::RegularInterior)
            .unwrap();
        let ops = OperatorSet::for_patches(std::slice::from_ref(patch)).unwrap();
        let local = |rule: &crate::quadrature::QuadratureRule| {
            let nb = patch.control.len();
            let mut k = DMatrix::<f64>::zeros(nb, nb);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let data = point_data(&mesh, patch, &ops, [p[0], p[1]]).unwrap();
                for a in 0..nb {
                    for b in 0..nb {
                        k[(a, b)] +=
                            data.gradients[a].dot(&data.gradients[b]) * data.measure * w;
                    }
                }
            }
            k
        };
        let standard = local(&gauss_2d(4).unwrap());
        let adaptive = local(&adaptive_rule(7, 4).unwrap());
        let rel = (&standard - &adaptive).amax() / standard.amax();
        assert!(rel < 1e-3, "relative stiffness change {rel}");
        assert!(rel > 0.0, "adaptive rule must differ by the dropped corner");
    }

    #[test]
    fn raising_gauss_order_preserves_rates() {
        // 2-point Gauss is not exact for bicubic stiffness integrands, so
        // raising the order shifts the error constant; it must not change
        // the observed convergence rate.
        let case = ManufacturedCase::plate(4);
        let mut rates = Vec::new();
        let mut all_errors = Vec::new();
        for q in [2usize, 3] {
            let mut errors = Vec::new();
            for level in [2usize, 3] {
                let mesh = generate_plate(PlateVariant::Regular, level).unwrap();
                let patches = classify_elements(&mesh).unwrap();
                let sys = assemble_with_gauss_order(
                    &mesh,
                    &patches,
                    case,
                    QuadratureConfig::Standard,
                    BETA,
                    q,
                )
                .unwrap();
                let u = solve_penalized(&sys).unwrap();
                let norms =
                    error_norms(&mesh, &patches, case, QuadratureConfig::Standard, &u).unwrap();
                errors.push(norms.l2_relative);
            }
            rates.push((errors[0] / errors[1]).log2());
            all_errors.push(errors);
        }
        for (q, rate) in rates.iter().enumerate() {
            assert!(
                (rate - 4.0).abs() < 0.5,
                "q={} rate {rate:.2} left the optimal band",
                q + 2
            );
        }
        // The exact rule can only shrink the error.
        for (fine, coarse) in all_errors[1].iter().zip(&all_errors[0]) {
            assert!(fine <= coarse);
        }
    }

    #[test]
    fn penalty_factor_is_converged() {
        // Scaling beta by 10 changes e_L2 by < 1% on Test 4 at level 2.
        let mesh = generate_plate(PlateVariant::Regular, 2).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(4);
        let mut errors = Vec::new();
        for beta in [1e8, 1e9] {
            let sys =
                assemble(&mesh, &patches, case, QuadratureConfig::Standard, beta).unwrap();
            let u = solve_penalized(&sys).unwrap();
            let norms =
                error_norms(&mesh, &patches, case, QuadratureConfig::Standard, &u).unwrap();
            errors.push(norms.l2_relative);
        }
        let change = (errors[0] - errors[1]).abs() / errors[0];
        assert!(change < 0.01, "beta scaling changed e_L2 by {change:.4}");
    }

    #[test]
    fn boundary_mismatch_decreases_with_beta() {
        let mesh = generate_plate(PlateVariant::Regular, 1).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(1);
        let mut mismatches = Vec::new();
        for beta in [1e8, 1e10, 1e12] {
            let sys =
                assemble(&mesh, &patches, case, QuadratureConfig::Standard, beta).unwrap();
            let u = solve_penalized(&sys).unwrap();
            mismatches.push(boundary_mismatch(&mesh, &patches, case, &u).unwrap());
        }
        assert!(
            mismatches[0] > mismatches[1] && mismatches[1] > mismatches[2],
            "boundary mismatch not monotone in beta: {mismatches:?}"
        );
    }

    #[test]
    fn hemisphere_curvature_near_two() {
        // Total curvature of the unit hemisphere is 2/R = 2 away from the
        // extraordinary vertices; the surface must be fitted at this level
        // for the analytic oracle to apply (curvature is second-derivative
        // sensitive, so a coarse fit's ripple would dominate).
        let mesh = crate::fitting::hemisphere_fitted_at(2).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let coeffs = project_normals(&mesh, &patches, QuadratureConfig::Standard).unwrap();
        let mut checked = 0;
        for patch in &patches {
            if patch.class != PatchClass::RegularInterior {
                continue;
            }
            // Skip elements whose ring touches an extraordinary vertex.
            if patch.control.iter().any(|&v| mesh.is_extraordinary(v)) {
                continue;
            }
            let c = interpolated_curvature(&mesh, patch, &coeffs, [0.5, 0.5]).unwrap();
            assert!(
                (c.abs() - 2.0).abs() < 0.2,
                "curvature {c} not within 10% of 2"
            );
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn plate_solution_symmetry() {
        // Test 2 is symmetric in x1; mirrored control vertices carry equal
        // coefficients.
        let mesh = generate_plate(PlateVariant::Regular, 1).unwrap();
        let patches = classify_elements(&mesh).unwrap();
        let case = ManufacturedCase::plate(2);
        let sys = assemble(&mesh, &patches, case, QuadratureConfig::Standard, BETA).unwrap();
        let u = solve_penalized(&sys).unwrap();
        // Pair vertices by mirrored coordinates.
        for i in 0..mesh.vertex_count() {
            let p = mesh.vertex(i);
            let mirrored = Point3::new(2.0 - p.x, p.y, p.z);
            let j = (0..mesh.vertex_count())
                .find(|&j| (mesh.vertex(j) - mirrored).norm() < 1e-12)
                .expect("mirror vertex exists");
            assert!(
                (u[i] - u[j]).abs() < 1e-10,
                "asymmetry {} at {:?}",
                (u[i] - u[j]).abs(),
                p
            );
        }
    }
}
