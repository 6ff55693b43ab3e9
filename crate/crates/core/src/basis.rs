//! Catmull-Clark basis functions and their parametric derivatives on all
//! patch types.
//!
//! Regular patches use the tensor product of the uniform cubic B-spline
//! segment basis; patches on an open boundary swap in the boundary-modified
//! basis (end-interpolating, built by eliminating the mirrored ghost point)
//! across the boundary. Elements containing an extraordinary vertex are
//! evaluated by the implicit-subdivision scheme: a parametric point away
//! from the singular corner determines a level `n` and sub-element `k`, and
//! the basis is `[D_k A Ā^(n-1)]ᵀ N(ξ̄)` with the `2^n` chain-rule factor on
//! the derivatives.

use crate::mesh::{ControlMesh, ElementPatch, PatchClass};
use crate::subdivision::{operators_for, SubdivisionError, SubdivisionOperators, MAX_SUBDIVISION_DEPTH};
use nalgebra::{Matrix3x2, Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("parametric coordinate {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("singular point: basis functions are not differentiable at the extraordinary corner")]
    SingularPoint,
    #[error("irregular patch passed to the tensor-product evaluator")]
    IrregularPatch,
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
}

/// Basis values and first parametric derivatives at one point.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub d_xi: Vec<f64>,
    pub d_eta: Vec<f64>,
}

fn check_range(xi: f64) -> Result<(), BasisError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(BasisError::OutOfRange(xi));
    }
    Ok(())
}

/// The four cubic B-spline segment functions and their derivatives.
pub fn curve_basis(xi: f64) -> Result<([f64; 4], [f64; 4]), BasisError> {
    check_range(xi)?;
    let (v, d) = curve_basis_unchecked(xi);
    Ok((v, d))
}

fn curve_basis_unchecked(xi: f64) -> ([f64; 4], [f64; 4]) {
    let x2 = xi * xi;
    let x3 = x2 * xi;
    let values = [
        (1.0 - 3.0 * xi + 3.0 * x2 - x3) / 6.0,
        (4.0 - 6.0 * x2 + 3.0 * x3) / 6.0,
        (1.0 + 3.0 * xi + 3.0 * x2 - 3.0 * x3) / 6.0,
        x3 / 6.0,
    ];
    let derivs = [
        (-3.0 + 6.0 * xi - 3.0 * x2) / 6.0,
        (-12.0 * xi + 9.0 * x2) / 6.0,
        (3.0 + 6.0 * xi - 9.0 * x2) / 6.0,
        3.0 * x2 / 6.0,
    ];
    (values, derivs)
}

/// The three boundary-modified functions for an end element; the first one
/// interpolates the end control point at `ξ = 0`.
pub fn curve_basis_boundary(xi: f64) -> Result<([f64; 3], [f64; 3]), BasisError> {
    check_range(xi)?;
    let (v, d) = curve_basis_boundary_unchecked(xi);
    Ok((v, d))
}

fn curve_basis_boundary_unchecked(xi: f64) -> ([f64; 3], [f64; 3]) {
    let x2 = xi * xi;
    let x3 = x2 * xi;
    let values = [
        (6.0 - 6.0 * xi + x3) / 6.0,
        (6.0 * xi - 2.0 * x3) / 6.0,
        x3 / 6.0,
    ];
    let derivs = [
        (-6.0 + 3.0 * x2) / 6.0,
        (6.0 - 6.0 * x2) / 6.0,
        3.0 * x2 / 6.0,
    ];
    (values, derivs)
}

/// Tensor-product basis for regular and boundary patches.
///
/// Values follow the patch's canonical control ordering; derivative arrays
/// are with respect to the element parametric coordinates.
pub fn surface_basis(patch: &ElementPatch, xi: [f64; 2]) -> Result<BasisEval, BasisError> {
    check_range(xi[0])?;
    check_range(xi[1])?;
    match patch.class {
        PatchClass::RegularInterior => {
            let (bx, dx) = curve_basis_unchecked(xi[0]);
            let (by, dy) = curve_basis_unchecked(xi[1]);
            Ok(tensor(&bx, &dx, &by, &dy))
        }
        PatchClass::BoundaryEdge => {
            let (bx, dx) = curve_basis_unchecked(xi[0]);
            let (by, dy) = curve_basis_boundary_unchecked(xi[1]);
            Ok(tensor(&bx, &dx, &by, &dy))
        }
        PatchClass::BoundaryCorner => {
            let (bx, dx) = curve_basis_boundary_unchecked(xi[0]);
            let (by, dy) = curve_basis_boundary_unchecked(xi[1]);
            Ok(tensor(&bx, &dx, &by, &dy))
        }
        PatchClass::Irregular => Err(BasisError::IrregularPatch),
    }
}

fn tensor(bx: &[f64], dx: &[f64], by: &[f64], dy: &[f64]) -> BasisEval {
    let n = bx.len() * by.len();
    let mut values = Vec::with_capacity(n);
    let mut d_xi = Vec::with_capacity(n);
    let mut d_eta = Vec::with_capacity(n);
    for (&byr, &dyr) in by.iter().zip(dy) {
        for (&bxc, &dxc) in bx.iter().zip(dx) {
            values.push(bxc * byr);
            d_xi.push(dxc * byr);
            d_eta.push(bxc * dyr);
        }
    }
    BasisEval { values, d_xi, d_eta }
}

/// Number of implicit subdivisions `n` and sub-element index `k` for a
/// parametric point of an irregular element.
///
/// Sub-element membership uses half-open intervals `[2^-n, 2^-n+1)`, closed
/// at the outer boundary `ξ = 1`, so every admissible point gets a unique
/// `(n, k)`. Points deeper than [`MAX_SUBDIVISION_DEPTH`] are projected
/// radially onto the deepest ring.
pub fn subdivision_level(xi: [f64; 2]) -> Result<(usize, usize), BasisError> {
    map_to_subelement(xi).map(|(n, k, _)| (n, k))
}

fn map_to_subelement(xi: [f64; 2]) -> Result<(usize, usize, [f64; 2]), BasisError> {
    check_range(xi[0])?;
    check_range(xi[1])?;
    if xi[0] == 0.0 && xi[1] == 0.0 {
        return Err(BasisError::SingularPoint);
    }
    let mut n = 1usize;
    // Doubling is exact in binary floating point, so the half-open interval
    // tests below are deterministic.
    let mut sx = 2.0 * xi[0];
    let mut sy = 2.0 * xi[1];
    while sx < 1.0 && sy < 1.0 {
        if n == MAX_SUBDIVISION_DEPTH {
            let s = sx.max(sy);
            sx /= s;
            sy /= s;
            break;
        }
        sx *= 2.0;
        sy *= 2.0;
        n += 1;
    }
    let (k, mapped) = if sy < 1.0 {
        (1, [sx - 1.0, sy])
    } else if sx < 1.0 {
        (3, [sx, sy - 1.0])
    } else {
        (2, [sx - 1.0, sy - 1.0])
    };
    Ok((n, k, mapped))
}

/// Basis functions of an element containing an extraordinary vertex.
///
/// Returns `2κ+8` values in the canonical irregular ordering; derivatives
/// include the `2^n` mapping factor, so they are with respect to the
/// element's own parametric coordinates.
pub fn eval_irregular(
    patch: &ElementPatch,
    ops: &SubdivisionOperators,
    xi: [f64; 2],
) -> Result<BasisEval, BasisError> {
    debug_assert_eq!(patch.class, PatchClass::Irregular);
    debug_assert_eq!(patch.valence, ops.valence());
    let (n, k, mapped) = map_to_subelement(xi)?;
    let proj = ops.projection(n, k);
    let (bx, dx) = curve_basis_unchecked(mapped[0]);
    let (by, dy) = curve_basis_unchecked(mapped[1]);
    let regular = tensor(&bx, &dx, &by, &dy);
    let scale = (1u64 << n) as f64;

    let cols = proj.ncols();
    let mut values = vec![0.0; cols];
    let mut d_xi = vec![0.0; cols];
    let mut d_eta = vec![0.0; cols];
    for i in 0..16 {
        let vi = regular.values[i];
        let dxi = regular.d_xi[i] * scale;
        let dei = regular.d_eta[i] * scale;
        for j in 0..cols {
            let w = proj[(i, j)];
            values[j] += w * vi;
            d_xi[j] += w * dxi;
            d_eta[j] += w * dei;
        }
    }
    Ok(BasisEval { values, d_xi, d_eta })
}

/// Evaluates any patch type, fetching cached subdivision operators for
/// irregular patches.
pub fn eval_basis(patch: &ElementPatch, xi: [f64; 2]) -> Result<BasisEval, BasisError> {
    match patch.class {
        PatchClass::Irregular => {
            let ops = operators_for(patch.valence)?;
            eval_irregular(patch, &ops, xi)
        }
        _ => surface_basis(patch, xi),
    }
}

/// Limit-surface point of a patch.
pub fn limit_position(
    mesh: &ControlMesh,
    patch: &ElementPatch,
    xi: [f64; 2],
) -> Result<Point3<f64>, BasisError> {
    let basis = eval_basis(patch, xi)?;
    Ok(combine_position(mesh, patch, &basis))
}

/// Surface Jacobian `∂x/∂ξ` as a 3×2 matrix; for irregular patches the
/// implicit-subdivision mapping factor is already included.
pub fn jacobian(
    mesh: &ControlMesh,
    patch: &ElementPatch,
    xi: [f64; 2],
) -> Result<Matrix3x2<f64>, BasisError> {
    let basis = eval_basis(patch, xi)?;
    Ok(combine_jacobian(mesh, patch, &basis))
}

pub fn combine_position(mesh: &ControlMesh, patch: &ElementPatch, basis: &BasisEval) -> Point3<f64> {
    let mut p = Vector3::zeros();
    for (&v, &w) in patch.control.iter().zip(&basis.values) {
        p += w * mesh.vertex(v).coords;
    }
    Point3::from(p)
}

pub fn combine_jacobian(
    mesh: &ControlMesh,
    patch: &ElementPatch,
    basis: &BasisEval,
) -> Matrix3x2<f64> {
    let mut c0 = Vector3::zeros();
    let mut c1 = Vector3::zeros();
    for (i, &v) in patch.control.iter().enumerate() {
        let p = mesh.vertex(v).coords;
        c0 += basis.d_xi[i] * p;
        c1 += basis.d_eta[i] * p;
    }
    Matrix3x2::from_columns(&[c0, c1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn curve_basis_knot_values() {
        let (v, _) = curve_basis(0.0).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 0.0];
        for (a, b) in v.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn curve_basis_midpoint() {
        let (v, _) = curve_basis(0.5).unwrap();
        let expected = [1.0 / 48.0, 23.0 / 48.0, 23.0 / 48.0, 1.0 / 48.0];
        for (a, b) in v.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn curve_basis_partition_of_unity() {
        for i in 0..=20 {
            let xi = i as f64 / 20.0;
            let (v, d) = curve_basis(xi).unwrap();
            assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn boundary_basis_interpolates_end() {
        let (v0, d0) = curve_basis_boundary(0.0).unwrap();
        assert_abs_diff_eq!(v0[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v0[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v0[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d0[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d0[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d0[2], 0.0, epsilon = 1e-15);

        let (v1, _) = curve_basis_boundary(1.0).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        for (a, b) in v1.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_basis_is_ghost_elimination() {
        // N'_1 = N_2 + 2 N_1, N'_2 = N_3 - N_1, N'_3 = N_4.
        for i in 0..=10 {
            let xi = i as f64 / 10.0;
            let (n, _) = curve_basis(xi).unwrap();
            let (m, _) = curve_basis_boundary(xi).unwrap();
            assert_abs_diff_eq!(m[0], n[1] + 2.0 * n[0], epsilon = 1e-15);
            assert_abs_diff_eq!(m[1], n[2] - n[0], epsilon = 1e-15);
            assert_abs_diff_eq!(m[2], n[3], epsilon = 1e-15);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(curve_basis(-0.1).is_err());
        assert!(curve_basis(1.1).is_err());
        assert!(curve_basis_boundary(2.0).is_err());
    }

    #[test]
    fn regular_surface_basis_midpoint() {
        // Tensor product of the 1D midpoint values: the four central
        // control points carry (23/48)², everything positive, sum 1.
        let mesh = crate::mesh::unit_grid(4, 2.0);
        let patches = crate::mesh::classify_elements(&mesh).unwrap();
        let patch = patches
            .iter()
            .find(|p| p.class == PatchClass::RegularInterior)
            .unwrap();
        let eval = surface_basis(patch, [0.5, 0.5]).unwrap();
        assert_eq!(eval.values.len(), 16);
        assert!(eval.values.iter().all(|&v| v > 0.0));
        assert_abs_diff_eq!(eval.values.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let central = 23.0 / 48.0 * 23.0 / 48.0;
        let max = eval.values.iter().cloned().fold(0.0f64, f64::max);
        assert_abs_diff_eq!(max, central, epsilon = 1e-15);
        for idx in [5usize, 6, 9, 10] {
            assert_abs_diff_eq!(eval.values[idx], central, epsilon = 1e-15);
        }
    }

    #[test]
    fn subdivision_level_examples() {
        assert_eq!(subdivision_level([0.6, 0.6]).unwrap(), (1, 2));
        assert_eq!(subdivision_level([0.26, 0.10]).unwrap(), (2, 1));
        assert_eq!(subdivision_level([0.3, 0.4]).unwrap(), (2, 2));
    }

    #[test]
    fn subdivision_level_boundaries() {
        // Half-open cells, closed at the outer boundary.
        assert_eq!(subdivision_level([0.5, 0.5]).unwrap(), (1, 2));
        assert_eq!(subdivision_level([1.0, 0.3]).unwrap(), (1, 1));
        assert_eq!(subdivision_level([1.0, 1.0]).unwrap(), (1, 2));
        assert_eq!(subdivision_level([0.25, 0.1]).unwrap(), (2, 1));
    }

    #[test]
    fn subdivision_level_clamps_deep_points() {
        let (n, _) = subdivision_level([1e-9, 1e-10]).unwrap();
        assert_eq!(n, MAX_SUBDIVISION_DEPTH);
    }

    #[test]
    fn singular_point_rejected() {
        assert!(matches!(
            subdivision_level([0.0, 0.0]),
            Err(BasisError::SingularPoint)
        ));
    }

    #[test]
    fn mapped_coordinates_stay_in_range() {
        for i in 1..50 {
            for j in 0..50 {
                let xi = [i as f64 / 49.0, j as f64 / 49.0];
                let (_, _, m) = map_to_subelement(xi).unwrap();
                assert!((0.0..=1.0).contains(&m[0]), "{:?} -> {:?}", xi, m);
                assert!((0.0..=1.0).contains(&m[1]), "{:?} -> {:?}", xi, m);
            }
        }
    }
}
