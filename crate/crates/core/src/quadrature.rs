//! Gauss quadrature on the reference element `[0,1]²` and the adaptive rule
//! for elements containing an extraordinary vertex.
//!
//! The adaptive rule subdivides the element towards the parametric origin
//! (where the extraordinary vertex sits): at each depth `m = 1..n_d` the
//! L-shaped region of three squares of side `2^-m` carries a scaled
//! tensor-product Gauss rule. The innermost corner cell `[0, 2^-n_d]²` is
//! dropped, so the rule integrates over a domain of measure `1 - 4^-n_d`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("gauss rule needs at least one point per direction")]
    ZeroPoints,
    #[error("adaptive rule needs depth >= 1")]
    ZeroDepth,
}

/// Where a rule came from; the adaptive rule remembers its depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Standard,
    Adaptive { depth: usize },
}

/// A set of quadrature points and weights on the reference square.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_q`, found by Newton
/// iteration from the Chebyshev initial guess, then mapped from `[-1,1]`.
pub fn gauss_1d(q: usize) -> Result<(Vec<f64>, Vec<f64>), QuadratureError> {
    if q == 0 {
        return Err(QuadratureError::ZeroPoints);
    }
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        // Root of P_q in (-1,1), largest first.
        let mut x = (std::f64::consts::PI * (4 * i + 3) as f64 / (4 * q + 2) as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1,1] -> [0,1]; the i-th node is the (q-1-i)-th in ascending order.
        nodes[q - 1 - i] = 0.5 * (x + 1.0);
        weights[q - 1 - i] = 0.5 * w;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if q == 0 {
        return (p0, 0.0);
    }
    for n in 1..q {
        let p2 = ((2 * n + 1) as f64 * x * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor-product Gauss-Legendre rule with `q` points per direction on `[0,1]²`.
pub fn gauss_2d(q: usize) -> Result<QuadratureRule, QuadratureError> {
    let (nodes, weights) = gauss_1d(q)?;
    let mut points = Vec::with_capacity(q * q);
    let mut w = Vec::with_capacity(q * q);
    for (&yn, &yw) in nodes.iter().zip(&weights) {
        for (&xn, &xw) in nodes.iter().zip(&weights) {
            points.push([xn, yn]);
            w.push(xw * yw);
        }
    }
    Ok(QuadratureRule {
        points,
        weights: w,
        provenance: Provenance::Standard,
    })
}

/// Adaptive rule for an irregular element: `3 n_d` sub-squares graded towards
/// the parametric origin, each carrying a scaled `q x q` Gauss rule.
///
/// Level `m` covers the L-shaped region `[0, 2^-(m-1)]² \ [0, 2^-m]²` with
/// three squares of side `2^-m`; the final corner cell is dropped.
pub fn adaptive_rule(n_d: usize, q: usize) -> Result<QuadratureRule, QuadratureError> {
    if n_d == 0 {
        return Err(QuadratureError::ZeroDepth);
    }
    let base = gauss_2d(q)?;
    let mut points = Vec::with_capacity(3 * n_d * q * q);
    let mut weights = Vec::with_capacity(3 * n_d * q * q);
    for m in 1..=n_d {
        let s = 0.5f64.powi(m as i32);
        // Offsets of the three sub-squares: right, diagonal, top.
        for &(ox, oy) in &[(s, 0.0), (s, s), (0.0, s)] {
            for (p, w) in base.points.iter().zip(&base.weights) {
                points.push([ox + s * p[0], oy + s * p[1]]);
                weights.push(w * s * s);
            }
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        provenance: Provenance::Adaptive { depth: n_d },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_2d_two_point_nodes() {
        let rule = gauss_2d(2).unwrap();
        assert_eq!(rule.len(), 4);
        let lo = 0.5 - 1.0 / (2.0 * 3.0f64.sqrt());
        let hi = 0.5 + 1.0 / (2.0 * 3.0f64.sqrt());
        assert_abs_diff_eq!(rule.points[0][0], lo, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.points[3][1], hi, epsilon = 1e-15);
        for w in &rule.weights {
            assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn gauss_2d_single_point() {
        let rule = gauss_2d(1).unwrap();
        assert_eq!(rule.len(), 1);
        assert_abs_diff_eq!(rule.points[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.points[0][1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rule.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule_integrates_bicubics() {
        // 2-point Gauss is exact for degree 3 per direction: int xi^3 eta^3 = 1/16.
        let rule = gauss_2d(2).unwrap();
        let integral: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| p[0].powi(3) * p[1].powi(3) * w)
            .sum();
        assert_abs_diff_eq!(integral, 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss_higher_orders_integrate_polynomials() {
        for q in 1..=6 {
            let (nodes, weights) = gauss_1d(q).unwrap();
            // Exact up to degree 2q-1.
            for d in 0..2 * q {
                let integral: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(x, w)| x.powi(d as i32) * w)
                    .sum();
                assert_abs_diff_eq!(integral, 1.0 / (d as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn adaptive_depth_one() {
        let rule = adaptive_rule(1, 2).unwrap();
        assert_eq!(rule.len(), 12);
        assert_abs_diff_eq!(rule.total_weight(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_depth_seven() {
        let rule = adaptive_rule(7, 2).unwrap();
        assert_eq!(rule.len(), 84);
        assert_abs_diff_eq!(rule.total_weight(), 1.0 - 0.25f64.powi(7), epsilon = 1e-15);
    }

    #[test]
    fn adaptive_points_stay_clear_of_origin() {
        let n_d = 7;
        let rule = adaptive_rule(n_d, 2).unwrap();
        let (nodes, _) = gauss_1d(2).unwrap();
        let floor = 0.5f64.powi(n_d as i32) * nodes[0];
        for p in &rule.points {
            assert!(p[0] >= floor - 1e-15 && p[1] >= floor - 1e-15);
            assert!(p[0] > 0.0 && p[1] > 0.0);
        }
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(gauss_2d(0).is_err());
        assert!(adaptive_rule(0, 2).is_err());
    }
}
