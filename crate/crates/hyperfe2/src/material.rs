//! Traction-only isotropic damage model with bilinear hardening.
//!
//! The constitutive response of every inelastic phase is governed by a single
//! scalar internal variable `r` (strain-like, non-decreasing):
//!
//! ```text
//! sigma       = (1 - d) C : eps = (q(r)/r) C : eps
//! d(r)        = 1 - q(r)/r
//! tau_eps     = sqrt(sigma_bar_plus : eps),   sigma_bar = C : eps
//! g(eps, r)   = tau_eps - r <= 0,  rdot >= 0,  rdot g = 0
//! r0          = sigma_e / sqrt(E),  q(r0) = r0
//! psi         = (1 - d) * 0.5 eps : C : eps
//! ```
//!
//! `sigma_bar_plus` keeps only the positive principal stresses of the
//! effective stress (spectral decomposition with negative eigenvalues
//! zeroed), which makes the elastic domain unbounded in compression.
//!
//! The hardening law `q(r)` is bilinear: slope `H1` up to
//! `r_inf = sigma_inf / sqrt(E)` and slope `H2` beyond. The loading branch of
//! the update is closed form, `r_new = max(r_old, tau_eps)`, which satisfies
//! the loading/unloading conditions exactly.

use crate::error::{Error, Result};
use crate::voigt::{self, Dim, VoigtMat, VoigtVec};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Material parameters of one microstructural phase, as they appear in the
/// phase tables of an RVE configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMaterial {
    /// Young modulus E [N/mm^2].
    pub young_modulus: f64,
    /// Poisson ratio.
    pub poisson_ratio: f64,
    /// Elastic threshold sigma_e [N/mm^2]; unused when `inelastic` is false.
    #[serde(default)]
    pub elastic_threshold: f64,
    /// Infinity elastic threshold sigma_inf [N/mm^2]; marks the H1 -> H2
    /// breakpoint of the bilinear hardening law.
    #[serde(default)]
    pub infinity_threshold: f64,
    /// Hardening slope before the breakpoint.
    #[serde(default)]
    pub hardening_h1: f64,
    /// Hardening slope after the breakpoint.
    #[serde(default)]
    pub hardening_h2: f64,
    /// Phases with `inelastic = false` respond linearly and never damage.
    pub inelastic: bool,
}

impl PhaseMaterial {
    pub fn elastic(young_modulus: f64, poisson_ratio: f64) -> Self {
        PhaseMaterial {
            young_modulus,
            poisson_ratio,
            elastic_threshold: 0.0,
            infinity_threshold: 0.0,
            hardening_h1: 0.0,
            hardening_h2: 0.0,
            inelastic: false,
        }
    }

    pub fn damaging(
        young_modulus: f64,
        poisson_ratio: f64,
        elastic_threshold: f64,
        infinity_threshold: f64,
        hardening_h1: f64,
        hardening_h2: f64,
    ) -> Self {
        PhaseMaterial {
            young_modulus,
            poisson_ratio,
            elastic_threshold,
            infinity_threshold,
            hardening_h1,
            hardening_h2,
            inelastic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) {
            return Err(Error::Config("Young modulus must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::Config("Poisson ratio must lie in [0, 0.5)".into()));
        }
        if self.inelastic {
            if !(self.elastic_threshold > 0.0) {
                return Err(Error::Config("elastic threshold must be positive".into()));
            }
            if self.infinity_threshold < self.elastic_threshold {
                return Err(Error::Config(
                    "infinity threshold must be >= elastic threshold".into(),
                ));
            }
            if !(self.hardening_h1 > 0.0) || !(self.hardening_h2 > 0.0) {
                return Err(Error::Config("hardening parameters must be positive".into()));
            }
        }
        Ok(())
    }

    /// Derived parameter set used by the solvers.
    pub fn damage_params(&self, dim: Dim) -> DamageParams {
        let (lambda, mu) = voigt::lame(self.young_modulus, self.poisson_ratio);
        let sqrt_e = self.young_modulus.sqrt();
        DamageParams {
            dim,
            stiffness: voigt::elasticity_matrix(self.young_modulus, self.poisson_ratio, dim),
            lambda,
            mu,
            r0: if self.inelastic {
                self.elastic_threshold / sqrt_e
            } else {
                0.0
            },
            r_inf: if self.inelastic {
                self.infinity_threshold / sqrt_e
            } else {
                0.0
            },
            h1: self.hardening_h1,
            h2: self.hardening_h2,
            inelastic: self.inelastic,
        }
    }
}

/// Parameters of the damage law in internal-variable units.
#[derive(Clone, Debug)]
pub struct DamageParams {
    pub dim: Dim,
    /// Elasticity matrix (Voigt, engineering shear).
    pub stiffness: VoigtMat,
    pub lambda: f64,
    pub mu: f64,
    /// Initial threshold r0 = sigma_e / sqrt(E); 0 for elastic phases.
    pub r0: f64,
    /// Hardening breakpoint r_inf = sigma_inf / sqrt(E).
    pub r_inf: f64,
    pub h1: f64,
    pub h2: f64,
    pub inelastic: bool,
}

/// History of one integration point: the internal variable r.
///
/// `r` is non-decreasing along any loading path and equals `r0` (or 0 for
/// elastic phases) in the virgin state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DamageState {
    pub r: f64,
}

impl DamageState {
    pub fn virgin(params: &DamageParams) -> Self {
        DamageState { r: params.r0 }
    }
}

/// Output of a constitutive update at one point.
#[derive(Clone, Copy, Debug)]
pub struct MaterialResponse {
    pub stress: VoigtVec,
    /// Consistent tangent on loading steps, secant otherwise.
    pub tangent: VoigtMat,
    pub damage: f64,
    /// Free energy density (1 - d) psi_0 >= 0.
    pub energy: f64,
    /// Updated internal variable.
    pub r: f64,
}

struct Spectral {
    /// Principal effective stresses.
    sigma: [f64; 3],
    /// Strain projected on the same principal directions, n_i' eps n_i.
    eps: [f64; 3],
    /// Principal directions as Voigt strain-gradient vectors
    /// (nx^2, ny^2[, nz^2], nx ny[, ny nz, nx nz]).
    dirs: [VoigtVec; 3],
    n_active: usize,
}

impl DamageParams {
    fn spectral(&self, eps: &[f64]) -> Spectral {
        match self.dim {
            Dim::Two => {
                // effective stress, in-plane block only: the out-of-plane
                // principal stress pairs with eps_zz = 0 and never contributes
                let sxx = self.stiffness[0][0] * eps[0] + self.stiffness[0][1] * eps[1];
                let syy = self.stiffness[1][0] * eps[0] + self.stiffness[1][1] * eps[1];
                let sxy = self.stiffness[2][2] * eps[2];
                // closed-form 2x2 symmetric eigendecomposition
                let half_tr = 0.5 * (sxx + syy);
                let delta = 0.5 * (sxx - syy);
                let rad = (delta * delta + sxy * sxy).sqrt();
                let (c, s) = if rad > 0.0 && sxy.abs() > 1e-300 {
                    let theta = 0.5 * sxy.atan2(delta);
                    (theta.cos(), theta.sin())
                } else if delta >= 0.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                };
                let s1 = half_tr + rad;
                let s2 = half_tr - rad;
                let exx = eps[0];
                let eyy = eps[1];
                let exy = 0.5 * eps[2];
                let n1 = [c, s];
                let n2 = [-s, c];
                let proj = |n: [f64; 2]| {
                    exx * n[0] * n[0] + eyy * n[1] * n[1] + 2.0 * exy * n[0] * n[1]
                };
                let dir = |n: [f64; 2]| -> VoigtVec {
                    [n[0] * n[0], n[1] * n[1], n[0] * n[1], 0.0, 0.0, 0.0]
                };
                Spectral {
                    sigma: [s1, s2, 0.0],
                    eps: [proj(n1), proj(n2), 0.0],
                    dirs: [dir(n1), dir(n2), [0.0; 6]],
                    n_active: 2,
                }
            }
            Dim::Three => {
                let sb = voigt::mat_vec(&self.stiffness, eps, 6);
                let t = Matrix3::new(
                    sb[0], sb[3], sb[5], //
                    sb[3], sb[1], sb[4], //
                    sb[5], sb[4], sb[2],
                );
                let eig = t.symmetric_eigen();
                let et = Matrix3::new(
                    eps[0],
                    0.5 * eps[3],
                    0.5 * eps[5],
                    0.5 * eps[3],
                    eps[1],
                    0.5 * eps[4],
                    0.5 * eps[5],
                    0.5 * eps[4],
                    eps[2],
                );
                let mut sigma = [0.0; 3];
                let mut epsp = [0.0; 3];
                let mut dirs = [[0.0; 6]; 3];
                for i in 0..3 {
                    let n = eig.eigenvectors.column(i);
                    sigma[i] = eig.eigenvalues[i];
                    epsp[i] = (et * n).dot(&n);
                    dirs[i] = [
                        n[0] * n[0],
                        n[1] * n[1],
                        n[2] * n[2],
                        n[0] * n[1],
                        n[1] * n[2],
                        n[0] * n[2],
                    ];
                }
                Spectral {
                    sigma,
                    eps: epsp,
                    dirs,
                    n_active: 3,
                }
            }
        }
    }

    /// Strain norm tau_eps = sqrt(sigma_bar_plus : eps).
    ///
    /// Zero under states without positive principal effective stress
    /// (e.g. hydrostatic compression).
    pub fn tau_epsilon(&self, eps: &[f64]) -> f64 {
        let sp = self.spectral(eps);
        let mut t2 = 0.0;
        for i in 0..sp.n_active {
            if sp.sigma[i] > 0.0 {
                t2 += sp.sigma[i] * sp.eps[i];
            }
        }
        // roundoff can leave a tiny negative sum when tau ~ 0
        t2.max(0.0).sqrt()
    }

    /// Bilinear hardening law; `q(r0) = r0`.
    pub fn hardening_q(&self, r: f64) -> Result<f64> {
        if r < self.r0 - 1e-12 * self.r0.max(1.0) {
            return Err(Error::Domain(format!(
                "hardening law evaluated below r0: r = {r}, r0 = {}",
                self.r0
            )));
        }
        let r = r.max(self.r0);
        Ok(if r <= self.r_inf {
            self.r0 + self.h1 * (r - self.r0)
        } else {
            self.r0 + self.h1 * (self.r_inf - self.r0) + self.h2 * (r - self.r_inf)
        })
    }

    fn hardening_slope(&self, r: f64) -> f64 {
        if r < self.r_inf {
            self.h1
        } else {
            self.h2
        }
    }

    /// Closed-form state update: `r_new = max(r_old, tau_eps)`.
    ///
    /// The tangent is the analytic consistent tangent on loading steps
    /// (including the first crossing of the elastic threshold) and the
    /// secant `(q/r) C` on unloading or neutral steps.
    pub fn update_state(&self, eps: &[f64], state: &DamageState) -> MaterialResponse {
        let n = self.dim.n_sigma();
        if !self.inelastic {
            let stress = voigt::mat_vec(&self.stiffness, eps, n);
            return MaterialResponse {
                stress,
                tangent: self.stiffness,
                damage: 0.0,
                energy: 0.5 * voigt::dot(&stress, eps, n),
                r: state.r,
            };
        }

        let sp = self.spectral(eps);
        let mut t2 = 0.0;
        for i in 0..sp.n_active {
            if sp.sigma[i] > 0.0 {
                t2 += sp.sigma[i] * sp.eps[i];
            }
        }
        let tau = t2.max(0.0).sqrt();

        let loading = tau >= state.r;
        let r = if loading { tau } else { state.r };
        let q = self.hardening_q(r).expect("r >= r0 by construction");
        let factor = q / r;
        let sigma_bar = voigt::mat_vec(&self.stiffness, eps, n);
        let mut stress = [0.0; 6];
        for i in 0..n {
            stress[i] = factor * sigma_bar[i];
        }
        let psi0 = 0.5 * voigt::dot(&sigma_bar, eps, n);

        let mut tangent = voigt::zero_mat();
        for i in 0..n {
            for j in 0..n {
                tangent[i][j] = factor * self.stiffness[i][j];
            }
        }
        if loading && tau > 0.0 {
            // d(q/r)/dr = (H r - q)/r^2, dr/deps = dtau/deps
            let h = self.hardening_slope(r);
            let coeff = (h * r - q) / (r * r);
            // dtau/deps = (1/2 tau) d(sigma_bar_plus : eps)/deps
            let mut dtde = [0.0; 6];
            for k in 0..sp.n_active {
                if sp.sigma[k] > 0.0 {
                    for i in 0..n {
                        dtde[i] += sp.eps[k]
                            * (self.lambda * lam_vec(self.dim)[i] + 2.0 * self.mu * sp.dirs[k][i])
                            + sp.sigma[k] * sp.dirs[k][i];
                    }
                }
            }
            let inv2t = 0.5 / tau;
            for i in 0..n {
                for j in 0..n {
                    tangent[i][j] += coeff * sigma_bar[i] * dtde[j] * inv2t;
                }
            }
        }

        MaterialResponse {
            stress,
            tangent,
            damage: 1.0 - factor,
            energy: factor * psi0,
            r,
        }
    }

    /// Stress from a *given* internal variable, without advancing history.
    /// Used when evaluating the constitutive law on reconstructed fields.
    pub fn stress_at(&self, eps: &[f64], r: f64) -> VoigtVec {
        let n = self.dim.n_sigma();
        let sigma_bar = voigt::mat_vec(&self.stiffness, eps, n);
        if !self.inelastic {
            return sigma_bar;
        }
        let r = r.max(self.r0);
        let factor = self.hardening_q(r).expect("clamped to r0") / r;
        let mut s = [0.0; 6];
        for i in 0..n {
            s[i] = factor * sigma_bar[i];
        }
        s
    }

    /// Damage from a given internal variable, clamped to [0, 1].
    pub fn damage_at(&self, r: f64) -> f64 {
        if !self.inelastic {
            return 0.0;
        }
        let r = r.max(self.r0);
        let q = self.hardening_q(r).expect("clamped to r0");
        (1.0 - q / r).clamp(0.0, 1.0)
    }
}

fn lam_vec(dim: Dim) -> VoigtVec {
    match dim {
        Dim::Two => [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        Dim::Three => [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    }
}
