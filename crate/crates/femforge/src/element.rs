//! Isoparametric 4-node quadrilateral machinery: bilinear shape functions on
//! the reference square `[-1,1]^2`, Jacobian mapping, Cartesian derivatives,
//! the Voigt strain-displacement matrix and 2x2 Gauss quadrature.

use crate::error::{FemError, Result};

/// Gauss point abscissa `1/sqrt(3)` of the 2-point rule.
pub const GAUSS_P: f64 = 0.577_350_269_189_625_7;

/// Number of Gauss points of the 2x2 rule.
pub const N_GAUSS: usize = 4;

/// A quadrature rule on the reference square.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// The 2x2 Gauss rule: points `(+-1/sqrt(3), +-1/sqrt(3))`, all weights 1.
/// Exact for polynomials up to degree 3 in each variable.
pub fn quadrature_2x2() -> QuadratureRule {
    let g = GAUSS_P;
    QuadratureRule {
        points: vec![[-g, -g], [g, -g], [g, g], [-g, g]],
        weights: vec![1.0, 1.0, 1.0, 1.0],
    }
}

/// Bilinear shape values at a local coordinate, in counterclockwise corner
/// order `(-1,-1), (+1,-1), (+1,+1), (-1,+1)`.
pub fn shape_values(xi: [f64; 2]) -> [f64; 4] {
    let (x, e) = (xi[0], xi[1]);
    [
        0.25 * (1.0 - x) * (1.0 - e),
        0.25 * (1.0 + x) * (1.0 - e),
        0.25 * (1.0 + x) * (1.0 + e),
        0.25 * (1.0 - x) * (1.0 + e),
    ]
}

/// Local derivatives of the shape functions; row 0 is d/dxi, row 1 is d/deta.
pub fn shape_derivatives_local(xi: [f64; 2]) -> [[f64; 4]; 2] {
    let (x, e) = (xi[0], xi[1]);
    [
        [
            -0.25 * (1.0 - e),
            0.25 * (1.0 - e),
            0.25 * (1.0 + e),
            -0.25 * (1.0 + e),
        ],
        [
            -0.25 * (1.0 - x),
            -0.25 * (1.0 + x),
            0.25 * (1.0 + x),
            0.25 * (1.0 - x),
        ],
    ]
}

/// Shape values and local derivatives pre-evaluated at every Gauss point of a
/// rule. Depends only on the reference element, so one table is shared by all
/// elements.
#[derive(Debug, Clone)]
pub struct ShapeTable {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub n_values: Vec<[f64; 4]>,
    pub dn_dxi: Vec<[[f64; 4]; 2]>,
}

impl ShapeTable {
    pub fn new(rule: &QuadratureRule) -> Self {
        let n_values = rule.points.iter().map(|&p| shape_values(p)).collect();
        let dn_dxi = rule
            .points
            .iter()
            .map(|&p| shape_derivatives_local(p))
            .collect();
        ShapeTable {
            points: rule.points.clone(),
            weights: rule.weights.clone(),
            n_values,
            dn_dxi,
        }
    }

    pub fn quad4() -> Self {
        ShapeTable::new(&quadrature_2x2())
    }
}

/// Per-point element geometry: Jacobian, its determinant, Cartesian shape
/// derivatives and the 3x8 strain-displacement matrix.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub jacobian: [[f64; 2]; 2],
    pub det_j: f64,
    /// Row 0 is d/dx, row 1 is d/dy.
    pub dn_dx: [[f64; 4]; 2],
    /// Rows are (e_xx, e_yy, gamma_xy); columns interleave (u1x, u1y, ..., u4y).
    pub b_voigt: [[f64; 8]; 3],
}

/// Evaluates the isoparametric geometry at a local coordinate for an element
/// with the given counterclockwise node coordinates.
pub fn geometry_at(xi: [f64; 2], node_coords: &[[f64; 2]; 4]) -> Result<ElementGeometry> {
    geometry_at_tagged(xi, node_coords, usize::MAX)
}

/// Same as [`geometry_at`] but reports `element` in degenerate-geometry errors.
pub fn geometry_at_tagged(
    xi: [f64; 2],
    node_coords: &[[f64; 2]; 4],
    element: usize,
) -> Result<ElementGeometry> {
    let dn = shape_derivatives_local(xi);
    // J = sum_i dN_i/dxi x_i^T
    let mut j = [[0.0_f64; 2]; 2];
    for i in 0..4 {
        for r in 0..2 {
            j[r][0] += dn[r][i] * node_coords[i][0];
            j[r][1] += dn[r][i] * node_coords[i][1];
        }
    }
    // Note the layout: j[r][c] = d x_c / d xi_r.
    let det_j = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !(det_j > 0.0) || !det_j.is_finite() {
        return Err(FemError::DegenerateElement { element, det_j });
    }
    // dn_dx = J^{-T applied appropriately}: dN/dx_c = sum_r inv(J)[c][r] dN/dxi_r
    let inv = [
        [j[1][1] / det_j, -j[0][1] / det_j],
        [-j[1][0] / det_j, j[0][0] / det_j],
    ];
    let mut dn_dx = [[0.0_f64; 4]; 2];
    for i in 0..4 {
        dn_dx[0][i] = inv[0][0] * dn[0][i] + inv[0][1] * dn[1][i];
        dn_dx[1][i] = inv[1][0] * dn[0][i] + inv[1][1] * dn[1][i];
    }
    let mut b = [[0.0_f64; 8]; 3];
    for i in 0..4 {
        b[0][2 * i] = dn_dx[0][i];
        b[1][2 * i + 1] = dn_dx[1][i];
        b[2][2 * i] = dn_dx[1][i];
        b[2][2 * i + 1] = dn_dx[0][i];
    }
    Ok(ElementGeometry {
        jacobian: j,
        det_j,
        dn_dx,
        b_voigt: b,
    })
}

/// Interpolates nodal values at a local coordinate.
pub fn interpolate(nodal: &[f64; 4], xi: [f64; 2]) -> f64 {
    let n = shape_values(xi);
    n.iter().zip(nodal.iter()).map(|(a, b)| a * b).sum()
}

/// Cartesian gradient of a nodal scalar field at the point the geometry was
/// evaluated at.
pub fn gradient(nodal: &[f64; 4], geom: &ElementGeometry) -> [f64; 2] {
    let mut g = [0.0_f64; 2];
    for i in 0..4 {
        g[0] += geom.dn_dx[0][i] * nodal[i];
        g[1] += geom.dn_dx[1][i] * nodal[i];
    }
    g
}
