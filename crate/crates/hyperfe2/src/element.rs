//! Isoparametric linear elements: bilinear quads (2D) and trilinear hexes
//! (3D), both with full Gauss quadrature (2 points per direction).

use nalgebra::DMatrix;

pub const GAUSS_1D: [(f64, f64); 2] = [
    (-0.577_350_269_189_625_8, 1.0),
    (0.577_350_269_189_625_8, 1.0),
];

const QUAD_XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const QUAD_ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

const HEX_XI: [f64; 8] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
const HEX_ETA: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
const HEX_ZETA: [f64; 8] = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];

/// Gauss point locations in the reference element, 2D (4 points).
pub fn quad_gauss() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(4);
    for &(eta, _) in &GAUSS_1D {
        for &(xi, _) in &GAUSS_1D {
            pts.push([xi, eta]);
        }
    }
    pts
}

/// Gauss point locations in the reference element, 3D (8 points).
pub fn hex_gauss() -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(8);
    for &(zeta, _) in &GAUSS_1D {
        for &(eta, _) in &GAUSS_1D {
            for &(xi, _) in &GAUSS_1D {
                pts.push([xi, eta, zeta]);
            }
        }
    }
    pts
}

pub fn quad_shape(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for i in 0..4 {
        n[i] = 0.25 * (1.0 + QUAD_XI[i] * xi) * (1.0 + QUAD_ETA[i] * eta);
    }
    n
}

fn quad_shape_derivs(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    let mut d = [[0.0; 2]; 4];
    for i in 0..4 {
        d[i][0] = 0.25 * QUAD_XI[i] * (1.0 + QUAD_ETA[i] * eta);
        d[i][1] = 0.25 * QUAD_ETA[i] * (1.0 + QUAD_XI[i] * xi);
    }
    d
}

pub fn hex_shape(xi: f64, eta: f64, zeta: f64) -> [f64; 8] {
    let mut n = [0.0; 8];
    for i in 0..8 {
        n[i] = 0.125
            * (1.0 + HEX_XI[i] * xi)
            * (1.0 + HEX_ETA[i] * eta)
            * (1.0 + HEX_ZETA[i] * zeta);
    }
    n
}

fn hex_shape_derivs(xi: f64, eta: f64, zeta: f64) -> [[f64; 3]; 8] {
    let mut d = [[0.0; 3]; 8];
    for i in 0..8 {
        d[i][0] = 0.125 * HEX_XI[i] * (1.0 + HEX_ETA[i] * eta) * (1.0 + HEX_ZETA[i] * zeta);
        d[i][1] = 0.125 * HEX_ETA[i] * (1.0 + HEX_XI[i] * xi) * (1.0 + HEX_ZETA[i] * zeta);
        d[i][2] = 0.125 * HEX_ZETA[i] * (1.0 + HEX_XI[i] * xi) * (1.0 + HEX_ETA[i] * eta);
    }
    d
}

/// Strain-displacement matrix of a quad at one reference point.
///
/// Returns (B, det J) with B of shape 3 x 8 mapping interleaved nodal
/// displacements (ux0, uy0, ...) to (eps_xx, eps_yy, gamma_xy).
pub fn quad_b_matrix(coords: &[[f64; 3]], xi: f64, eta: f64) -> (DMatrix<f64>, f64) {
    let d = quad_shape_derivs(xi, eta);
    // jacobian J_ab = d x_a / d xi_b
    let mut j = [[0.0; 2]; 2];
    for (node, dn) in d.iter().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                j[a][b] += coords[node][a] * dn[b];
            }
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    let mut b = DMatrix::zeros(3, 8);
    for (node, dn) in d.iter().enumerate() {
        // dN/dx_a = inv_J^T gradient in reference coords
        let dx = inv[0][0] * dn[0] + inv[1][0] * dn[1];
        let dy = inv[0][1] * dn[0] + inv[1][1] * dn[1];
        b[(0, 2 * node)] = dx;
        b[(1, 2 * node + 1)] = dy;
        b[(2, 2 * node)] = dy;
        b[(2, 2 * node + 1)] = dx;
    }
    (b, det)
}

/// Strain-displacement matrix of a hex at one reference point.
///
/// Returns (B, det J) with B of shape 6 x 24; Voigt rows
/// (xx, yy, zz, xy, yz, xz) with engineering shear.
pub fn hex_b_matrix(coords: &[[f64; 3]], xi: f64, eta: f64, zeta: f64) -> (DMatrix<f64>, f64) {
    let d = hex_shape_derivs(xi, eta, zeta);
    let mut j = [[0.0; 3]; 3];
    for (node, dn) in d.iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                j[a][b] += coords[node][a] * dn[b];
            }
        }
    }
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) * inv_det;
    inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) * inv_det;
    inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) * inv_det;
    inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) * inv_det;
    inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) * inv_det;
    inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) * inv_det;
    inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) * inv_det;
    inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) * inv_det;
    inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) * inv_det;

    let mut b = DMatrix::zeros(6, 24);
    for (node, dn) in d.iter().enumerate() {
        let dx = inv[0][0] * dn[0] + inv[0][1] * dn[1] + inv[0][2] * dn[2];
        let dy = inv[1][0] * dn[0] + inv[1][1] * dn[1] + inv[1][2] * dn[2];
        let dz = inv[2][0] * dn[0] + inv[2][1] * dn[1] + inv[2][2] * dn[2];
        let c = 3 * node;
        b[(0, c)] = dx;
        b[(1, c + 1)] = dy;
        b[(2, c + 2)] = dz;
        b[(3, c)] = dy;
        b[(3, c + 1)] = dx;
        b[(4, c + 1)] = dz;
        b[(4, c + 2)] = dy;
        b[(5, c)] = dz;
        b[(5, c + 2)] = dx;
    }
    (b, det)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_partition_of_unity() {
        let n = quad_shape(0.3, -0.7);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hex_partition_of_unity() {
        let n = hex_shape(0.3, -0.7, 0.2);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quad_b_recovers_affine_strain() {
        // patch test at element level: u = eps . x recovers eps exactly
        let coords = [
            [0.1, 0.2, 0.0],
            [1.3, 0.15, 0.0],
            [1.2, 1.4, 0.0],
            [0.0, 1.1, 0.0],
        ];
        let eps = [3e-3, -2e-3, 4e-3]; // engineering shear
        let mut u = nalgebra::DVector::zeros(8);
        for (i, c) in coords.iter().enumerate() {
            u[2 * i] = eps[0] * c[0] + 0.5 * eps[2] * c[1];
            u[2 * i + 1] = 0.5 * eps[2] * c[0] + eps[1] * c[1];
        }
        for p in quad_gauss() {
            let (b, det) = quad_b_matrix(&coords, p[0], p[1]);
            assert!(det > 0.0);
            let e = &b * &u;
            for i in 0..3 {
                assert!((e[i] - eps[i]).abs() < 1e-14, "component {i}");
            }
        }
    }

    #[test]
    fn hex_b_recovers_affine_strain() {
        let mut coords = [[0.0; 3]; 8];
        let base = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        for (i, c) in base.iter().enumerate() {
            coords[i] = [c[0] * 1.2 + 0.1, c[1] * 0.9, c[2] * 1.1 - 0.2];
        }
        let eps = [1e-3, -2e-3, 3e-3, 4e-3, -5e-3, 6e-3];
        let t = |x: &[f64; 3], i: usize| -> f64 {
            match i {
                0 => eps[0] * x[0] + 0.5 * eps[3] * x[1] + 0.5 * eps[5] * x[2],
                1 => 0.5 * eps[3] * x[0] + eps[1] * x[1] + 0.5 * eps[4] * x[2],
                _ => 0.5 * eps[5] * x[0] + 0.5 * eps[4] * x[1] + eps[2] * x[2],
            }
        };
        let mut u = nalgebra::DVector::zeros(24);
        for (i, c) in coords.iter().enumerate() {
            for a in 0..3 {
                u[3 * i + a] = t(c, a);
            }
        }
        for p in hex_gauss() {
            let (b, det) = hex_b_matrix(&coords, p[0], p[1], p[2]);
            assert!(det > 0.0);
            let e = &b * &u;
            for i in 0..6 {
                assert!((e[i] - eps[i]).abs() < 1e-14, "component {i}");
            }
        }
    }

    #[test]
    fn rigid_translation_gives_zero_strain() {
        let coords = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let mut u = nalgebra::DVector::zeros(8);
        for i in 0..4 {
            u[2 * i] = 0.37;
            u[2 * i + 1] = -0.81;
        }
        let (b, _) = quad_b_matrix(&coords, 0.2, -0.4);
        let e = &b * &u;
        for i in 0..3 {
            assert!(e[i].abs() < 1e-15);
        }
    }
}
