//! Voigt vector conventions shared by every module.
//!
//! Ordering is fixed as (xx, yy, xy) in 2D plane strain and
//! (xx, yy, zz, xy, yz, xz) in 3D. Strain vectors carry engineering shear
//! (factor 2 on the tensor shear components); stress vectors are plain.

use serde::{Deserialize, Serialize};

/// Spatial dimension of the micro problem. 2D means plane strain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn n_dim(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of Voigt stress/strain components.
    pub fn n_sigma(self) -> usize {
        match self {
            Dim::Two => 3,
            Dim::Three => 6,
        }
    }

    pub fn from_n_dim(n: usize) -> Option<Dim> {
        match n {
            2 => Some(Dim::Two),
            3 => Some(Dim::Three),
            _ => None,
        }
    }
}

/// Fixed-capacity Voigt vector; only the first `n_sigma` entries are used.
pub type VoigtVec = [f64; 6];

/// Fixed-capacity Voigt matrix (row-major); top-left `n_sigma` block is used.
pub type VoigtMat = [[f64; 6]; 6];

pub fn zero_vec() -> VoigtVec {
    [0.0; 6]
}

pub fn zero_mat() -> VoigtMat {
    [[0.0; 6]; 6]
}

/// y = M x on the leading n×n block.
pub fn mat_vec(m: &VoigtMat, x: &[f64], n: usize) -> VoigtVec {
    let mut y = [0.0; 6];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += m[i][j] * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn dot(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += a[i] * b[i];
    }
    s
}

pub fn norm(a: &[f64], n: usize) -> f64 {
    dot(a, a, n).sqrt()
}

/// Isotropic elasticity matrix in Voigt form (engineering shear strain).
pub fn elasticity_matrix(young: f64, poisson: f64, dim: Dim) -> VoigtMat {
    let e = young;
    let nu = poisson;
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let mut c = zero_mat();
    match dim {
        Dim::Two => {
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] = lambda;
                }
                c[i][i] += 2.0 * mu;
            }
            c[2][2] = mu;
        }
        Dim::Three => {
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] = lambda;
                }
                c[i][i] += 2.0 * mu;
            }
            for i in 3..6 {
                c[i][i] = mu;
            }
        }
    }
    c
}

/// Lamé parameters (lambda, mu).
pub fn lame(young: f64, poisson: f64) -> (f64, f64) {
    let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    let mu = young / (2.0 * (1.0 + poisson));
    (lambda, mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elasticity_matrix_matches_lame_form() {
        let (lambda, mu) = lame(4000.0, 0.38);
        let c = elasticity_matrix(4000.0, 0.38, Dim::Three);
        assert!((c[0][0] - (lambda + 2.0 * mu)).abs() < 1e-12);
        assert!((c[0][1] - lambda).abs() < 1e-12);
        assert!((c[3][3] - mu).abs() < 1e-12);
        assert!((c[0][3]).abs() == 0.0);
    }

    #[test]
    fn plane_strain_block() {
        let c2 = elasticity_matrix(100.0, 0.3, Dim::Two);
        let c3 = elasticity_matrix(100.0, 0.3, Dim::Three);
        // plane strain keeps the 3D in-plane block and the xy shear term
        assert_eq!(c2[0][0], c3[0][0]);
        assert_eq!(c2[0][1], c3[0][1]);
        assert_eq!(c2[2][2], c3[3][3]);
    }

    #[test]
    fn mat_vec_uniaxial() {
        let c = elasticity_matrix(1000.0, 0.0, Dim::Two);
        let s = mat_vec(&c, &[1e-3, 0.0, 0.0], 3);
        // nu = 0 makes the response uniaxial with modulus E
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
    }
}
