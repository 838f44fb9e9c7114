//! Online hyper-reduced micro solver.
//!
//! Newton iteration on the mode coefficient vector `c`, with stress and
//! damage evaluated only at the cubature points:
//!
//! ```text
//! R(c) = sum_j w_j Psi_j' sigma(eps + Psi_j c, r_j)
//! K(c) = sum_j w_j Psi_j' C_t,j Psi_j
//! ```
//!
//! Nonnegative weights make `K` a nonnegative combination of the point
//! stiffnesses, so the reduced incremental problem stays stable however few
//! points the rule keeps.
//!
//! Steps with no damage anywhere take an exact linear path instead: the
//! elastic operators `A* = int Psi' C Psi`, `M1 = int C Psi`, `M0 = int C`
//! are full-Gauss integrals computed once per operator set, so the virgin
//! elastic response (and its homogenized tangent) carries no cubature error
//! at all. This is what processing the elastic snapshots separately buys.

use crate::cubature::CubatureRule;
use crate::error::{Error, Result};
use crate::material::{DamageParams, DamageState, PhaseMaterial};
use crate::mesh::RveMesh;
use crate::reduction::StrainBasis;
use crate::voigt::{self, VoigtMat, VoigtVec};
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 25;
const RTOL: f64 = 1e-8;
const ATOL: f64 = 1e-12;

/// Strain-basis rows gathered at the cubature points plus the exact elastic
/// operators; everything the online solver needs.
#[derive(Clone, Debug)]
pub struct ReducedOperators {
    pub n_sigma: usize,
    pub n_modes: usize,
    /// Basis block (n_sigma x n_modes) per cubature point.
    pub psi: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub phases: Vec<usize>,
    /// Global Gauss index of every cubature point.
    pub gauss_indices: Vec<usize>,
    pub volume: f64,
    pub params: Vec<DamageParams>,
    /// Exact integral of Psi' C Psi over the full Gauss rule.
    pub a_star: DMatrix<f64>,
    /// Exact integral of C Psi.
    pub m1: DMatrix<f64>,
    /// Exact integral of C.
    pub m0: DMatrix<f64>,
}

/// Mode coefficients and internal variables at the cubature points.
#[derive(Clone, Debug)]
pub struct ReducedState {
    pub c: DVector<f64>,
    pub r: Vec<f64>,
}

/// One converged reduced increment.
#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub c: DVector<f64>,
    pub macro_stress: VoigtVec,
    pub max_damage: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    /// True when the increment took the exact virgin-elastic path.
    pub elastic_path: bool,
}

/// Gathers the basis block of one global Gauss point as an
/// (n_sigma x n_modes) matrix.
fn gather_block(
    basis: &StrainBasis,
    n_sigma: usize,
    n_modes: usize,
    gauss_index: usize,
) -> DMatrix<f64> {
    DMatrix::from_fn(n_sigma, n_modes, |i, j| {
        basis.modes[(n_sigma * gauss_index + i, j)]
    })
}

/// Builds the operator set for the leading `n_modes` basis columns, the given
/// rule and the given (possibly customized) materials. The elastic integrals
/// are recomputed here, so material overrides keep the virgin-elastic path
/// consistent.
pub fn build_reduced_operators(
    mesh: &RveMesh,
    basis: &StrainBasis,
    n_modes: usize,
    rule: &CubatureRule,
    materials: &[PhaseMaterial],
) -> Result<ReducedOperators> {
    let n_sigma = mesh.n_sigma();
    if n_modes == 0 || n_modes > basis.n_modes() {
        return Err(Error::Config(format!(
            "requested {} modes, basis holds {}",
            n_modes,
            basis.n_modes()
        )));
    }
    for m in materials {
        m.validate()?;
    }
    let params: Vec<DamageParams> =
        materials.iter().map(|m| m.damage_params(mesh.dim)).collect();

    let mut a_star = DMatrix::<f64>::zeros(n_modes, n_modes);
    let mut m1 = DMatrix::<f64>::zeros(n_sigma, n_modes);
    let mut m0 = DMatrix::<f64>::zeros(n_sigma, n_sigma);
    let mut c_mat = DMatrix::<f64>::zeros(n_sigma, n_sigma);
    let mut c_psi = DMatrix::<f64>::zeros(n_sigma, n_modes);
    for (g, gp) in mesh.gauss.iter().enumerate() {
        let psi_g = gather_block(basis, n_sigma, n_modes, g);
        let stiff = &params[gp.phase].stiffness;
        for i in 0..n_sigma {
            for j in 0..n_sigma {
                c_mat[(i, j)] = stiff[i][j];
            }
        }
        c_psi.gemm(1.0, &c_mat, &psi_g, 0.0);
        a_star.gemm_tr(gp.weight, &psi_g, &c_psi, 1.0);
        m1 += c_psi.scale(gp.weight);
        m0 += c_mat.scale(gp.weight);
    }

    let psi: Vec<DMatrix<f64>> = rule
        .indices
        .iter()
        .map(|&g| gather_block(basis, n_sigma, n_modes, g))
        .collect();
    let phases: Vec<usize> = rule.indices.iter().map(|&g| mesh.gauss[g].phase).collect();

    Ok(ReducedOperators {
        n_sigma,
        n_modes,
        psi,
        weights: rule.weights.clone(),
        phases,
        gauss_indices: rule.indices.clone(),
        volume: mesh.volume,
        params,
        a_star,
        m1,
        m0,
    })
}

impl ReducedOperators {
    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn virgin_state(&self) -> ReducedState {
        ReducedState {
            c: DVector::zeros(self.n_modes),
            r: self.phases.iter().map(|&p| self.params[p].r0).collect(),
        }
    }

    fn point_strain(&self, j: usize, c: &DVector<f64>, eps: &[f64], out: &mut DVector<f64>) {
        out.gemv(1.0, &self.psi[j], c, 0.0);
        for i in 0..self.n_sigma {
            out[i] += eps[i];
        }
    }

    /// Reduced out-of-balance force `sum_j w_j Psi_j' sigma_j` at
    /// coefficients `c` (trial evaluation; the state is not advanced).
    pub fn reduced_residual(
        &self,
        c: &DVector<f64>,
        eps: &[f64],
        state: &ReducedState,
    ) -> DVector<f64> {
        let n = self.n_sigma;
        let mut res = DVector::zeros(self.n_modes);
        let mut eps_mu = DVector::zeros(n);
        let mut s = DVector::zeros(n);
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            self.point_strain(j, c, eps, &mut eps_mu);
            let resp = p.update_state(eps_mu.as_slice(), &DamageState { r: state.r[j] });
            for i in 0..n {
                s[i] = resp.stress[i];
            }
            res.gemv_tr(self.weights[j], &self.psi[j], &s, 1.0);
        }
        res
    }

    /// Reduced free energy `sum_j w_j psi_j` with the damage pattern frozen
    /// at `state.r`. The residual is its gradient wherever no point loads.
    pub fn reduced_energy(&self, c: &DVector<f64>, eps: &[f64], state: &ReducedState) -> f64 {
        let n = self.n_sigma;
        let mut total = 0.0;
        let mut eps_mu = DVector::zeros(n);
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            self.point_strain(j, c, eps, &mut eps_mu);
            let d = p.damage_at(state.r[j]);
            let sb = voigt::mat_vec(&p.stiffness, eps_mu.as_slice(), n);
            let psi0 = 0.5 * voigt::dot(&sb, eps_mu.as_slice(), n);
            total += self.weights[j] * (1.0 - d) * psi0;
        }
        total
    }

    /// Reduced Newton matrix dR/dc at the given coefficients.
    pub fn reduced_newton_matrix(
        &self,
        c: &DVector<f64>,
        eps: &[f64],
        state: &ReducedState,
    ) -> DMatrix<f64> {
        self.blocks(c, eps, state, false).0
    }

    /// (K, G, P, H) = (sum w Psi' Ct Psi, sum w Psi' Ct, sum w Ct Psi,
    /// sum w Ct); secant variant replaces Ct by (1-d) C.
    fn blocks(
        &self,
        c: &DVector<f64>,
        eps: &[f64],
        state: &ReducedState,
        secant: bool,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_sigma;
        let m = self.n_modes;
        let mut k = DMatrix::<f64>::zeros(m, m);
        let mut g = DMatrix::<f64>::zeros(m, n);
        let mut p_mat = DMatrix::<f64>::zeros(n, m);
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut eps_mu = DVector::zeros(n);
        let mut ct = DMatrix::<f64>::zeros(n, n);
        let mut ct_psi = DMatrix::<f64>::zeros(n, m);
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            self.point_strain(j, c, eps, &mut eps_mu);
            let resp = p.update_state(eps_mu.as_slice(), &DamageState { r: state.r[j] });
            for a in 0..n {
                for b in 0..n {
                    ct[(a, b)] = if secant {
                        (1.0 - resp.damage) * p.stiffness[a][b]
                    } else {
                        resp.tangent[a][b]
                    };
                }
            }
            let w = self.weights[j];
            ct_psi.gemm(1.0, &ct, &self.psi[j], 0.0);
            k.gemm_tr(w, &self.psi[j], &ct_psi, 1.0);
            g.gemm_tr(w, &self.psi[j], &ct, 1.0);
            p_mat += ct_psi.scale(w);
            h += ct.scale(w);
        }
        (k, g, p_mat, h)
    }

    /// Homogenized stress by the reduced rule, `(1/V) sum_j w_j sigma_j`.
    fn macro_stress(&self, c: &DVector<f64>, eps: &[f64], state: &ReducedState) -> (VoigtVec, f64) {
        let n = self.n_sigma;
        let mut sig = DVector::<f64>::zeros(n);
        let mut eps_mu = DVector::zeros(n);
        let mut max_damage = 0.0f64;
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            self.point_strain(j, c, eps, &mut eps_mu);
            let resp = p.update_state(eps_mu.as_slice(), &DamageState { r: state.r[j] });
            for i in 0..n {
                sig[i] += self.weights[j] * resp.stress[i];
            }
            max_damage = max_damage.max(resp.damage);
        }
        let mut out = voigt::zero_vec();
        for i in 0..n {
            out[i] = sig[i] / self.volume;
        }
        (out, max_damage)
    }

    /// Exact linear elastic solve, `c = -A*^{-1} M1' eps`.
    fn elastic_candidate(&self, eps: &[f64]) -> Option<DVector<f64>> {
        let e = DVector::from_column_slice(&eps[..self.n_sigma]);
        let rhs = -(self.m1.transpose() * e);
        self.a_star.clone().lu().solve(&rhs)
    }

    /// True when every cubature point is undamaged and the candidate strain
    /// keeps it inside its elastic domain.
    fn stays_elastic(&self, c: &DVector<f64>, eps: &[f64], state: &ReducedState) -> bool {
        let n = self.n_sigma;
        let mut eps_mu = DVector::zeros(n);
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            if !p.inelastic {
                continue;
            }
            if state.r[j] > p.r0 {
                return false;
            }
            self.point_strain(j, c, eps, &mut eps_mu);
            if p.tau_epsilon(eps_mu.as_slice()) > p.r0 {
                return false;
            }
        }
        true
    }

    /// Newton solve of one reduced increment; commits internal variables on
    /// success. Warm-started from `state.c`.
    ///
    /// Virgin elastic increments short-circuit to the exact linear solve on
    /// the full-Gauss elastic operators. In the inelastic regime, full Newton
    /// steps can chatter across the loading/unloading kink of the damage
    /// surface, so each step is backtracked on the residual norm and the
    /// iteration falls back to the secant operator when it stagnates.
    pub fn solve_increment_reduced(
        &self,
        eps: &[f64],
        state: &mut ReducedState,
    ) -> Result<ReducedSolution> {
        // exact path for the virgin elastic regime
        if let Some(c_lin) = self.elastic_candidate(eps) {
            if self.stays_elastic(&c_lin, eps, state) {
                let n = self.n_sigma;
                let e = DVector::from_column_slice(&eps[..n]);
                let sig = (&self.m0 * &e + &self.m1 * &c_lin) / self.volume;
                let mut macro_stress = voigt::zero_vec();
                for i in 0..n {
                    macro_stress[i] = sig[i];
                }
                state.c = c_lin.clone();
                return Ok(ReducedSolution {
                    c: c_lin,
                    macro_stress,
                    max_damage: 0.0,
                    iterations: 0,
                    residual_norm: 0.0,
                    elastic_path: true,
                });
            }
        }

        let mut c = state.c.clone();
        let mut ref_norm = 0.0;
        let mut norm = f64::INFINITY;
        let mut iterations = 0;
        let mut secant_mode = false;
        let mut stagnation = 0usize;
        for iter in 0..=MAX_ITER {
            let res = self.reduced_residual(&c, eps, state);
            norm = res.norm();
            if iter == 0 {
                ref_norm = norm;
            }
            if norm <= (RTOL * ref_norm).max(ATOL) {
                iterations = iter;
                break;
            }
            if iter == MAX_ITER || !norm.is_finite() {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual: norm,
                    step: 0,
                });
            }
            let (k, _, _, _) = self.blocks(&c, eps, state, secant_mode);
            let delta = match k.lu().solve(&(-&res)) {
                Some(d) => d,
                None => {
                    let (ks, _, _, _) = self.blocks(&c, eps, state, true);
                    ks.lu()
                        .solve(&(-&res))
                        .ok_or_else(|| Error::Singular("reduced tangent singular".into()))?
                }
            };
            // backtracking line search on the residual norm
            let mut step = 1.0;
            let mut best_norm = f64::INFINITY;
            let mut best_c = c.clone();
            let mut accepted = false;
            for _ in 0..7 {
                let trial = &c + &delta * step;
                let tn = self.reduced_residual(&trial, eps, state).norm();
                if tn < best_norm {
                    best_norm = tn;
                    best_c = trial.clone();
                }
                if tn <= (1.0 - 1e-4 * step) * norm {
                    c = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                if best_norm >= norm {
                    stagnation += 1;
                } else {
                    stagnation = 0;
                }
                c = best_c;
                if stagnation >= 2 {
                    secant_mode = true;
                }
            } else {
                stagnation = 0;
            }
            iterations = iter + 1;
        }

        // commit internal variables
        let n = self.n_sigma;
        let mut eps_mu = DVector::zeros(n);
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            self.point_strain(j, &c, eps, &mut eps_mu);
            let tau = p.tau_epsilon(eps_mu.as_slice());
            if p.inelastic && tau > state.r[j] {
                state.r[j] = tau;
            }
        }
        let (macro_stress, max_damage) = self.macro_stress(&c, eps, state);
        state.c = c.clone();
        Ok(ReducedSolution {
            c,
            macro_stress,
            max_damage,
            iterations,
            residual_norm: norm,
            elastic_path: false,
        })
    }

    /// Homogenized tangent by static condensation,
    /// `C = (1/V) [sum w Ct - (sum w Ct Psi) K^{-1} (sum w Psi' Ct)]`;
    /// virgin elastic states use the exact full-Gauss operators instead.
    pub fn homogenized_tangent_reduced(
        &self,
        eps: &[f64],
        state: &ReducedState,
    ) -> Result<VoigtMat> {
        let n = self.n_sigma;
        let c_hom = if self.stays_elastic(&state.c, eps, state) {
            let dc = self
                .a_star
                .clone()
                .lu()
                .solve(&self.m1.transpose())
                .ok_or_else(|| Error::Singular("elastic operator singular".into()))?;
            (&self.m0 - &self.m1 * dc) / self.volume
        } else {
            let (k, g, p_mat, h) = self.blocks(&state.c, eps, state, false);
            let dc_deps = k
                .lu()
                .solve(&g)
                .ok_or_else(|| Error::Singular("reduced tangent singular".into()))?;
            (h - p_mat * dc_deps) / self.volume
        };
        let mut out = voigt::zero_mat();
        for i in 0..n {
            for j in 0..n {
                out[i][j] = c_hom[(i, j)];
            }
        }
        Ok(out)
    }

    /// Loading-unloading consistency of a committed step: returns the largest
    /// violation of (rdot >= 0, g <= 0, rdot g = 0) over the cubature points.
    pub fn kkt_violation(&self, eps: &[f64], before: &ReducedState, after: &ReducedState) -> f64 {
        let n = self.n_sigma;
        let mut eps_mu = DVector::zeros(n);
        let mut worst = 0.0f64;
        for j in 0..self.n_points() {
            let p = &self.params[self.phases[j]];
            if !p.inelastic {
                continue;
            }
            self.point_strain(j, &after.c, eps, &mut eps_mu);
            let tau = p.tau_epsilon(eps_mu.as_slice());
            let rdot = after.r[j] - before.r[j];
            let scale = after.r[j].max(1.0);
            worst = worst.max(-rdot / scale); // rdot >= 0
            worst = worst.max((tau - after.r[j]) / scale); // g <= 0
            if rdot > 1e-12 * scale {
                worst = worst.max((after.r[j] - tau).abs() / scale); // rdot g = 0
            }
        }
        worst
    }
}

/// One step of a reduced trajectory.
#[derive(Clone, Debug)]
pub struct ReducedStep {
    pub chi: f64,
    pub macro_strain: VoigtVec,
    pub macro_stress: VoigtVec,
    pub max_damage: f64,
    pub c: DVector<f64>,
    pub r: Vec<f64>,
}

/// Runs eps(chi) = direction * chi over an arbitrary (possibly non-monotone)
/// schedule, carrying the reduced state.
pub fn run_trajectory_reduced(
    ops: &ReducedOperators,
    direction: &[f64],
    chis: &[f64],
) -> Result<Vec<ReducedStep>> {
    let n = ops.n_sigma;
    let mut state = ops.virgin_state();
    let mut steps = Vec::with_capacity(chis.len());
    for (k, &chi) in chis.iter().enumerate() {
        let eps: Vec<f64> = direction[..n].iter().map(|d| d * chi).collect();
        let sol = ops.solve_increment_reduced(&eps, &mut state).map_err(|e| match e {
            Error::NonConvergence {
                iterations,
                residual,
                ..
            } => Error::NonConvergence {
                iterations,
                residual,
                step: k,
            },
            other => other,
        })?;
        let mut macro_strain = voigt::zero_vec();
        macro_strain[..n].copy_from_slice(&eps);
        steps.push(ReducedStep {
            chi,
            macro_strain,
            macro_stress: sol.macro_stress,
            max_damage: sol.max_damage,
            c: state.c.clone(),
            r: state.r.clone(),
        });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubature::{select_cubature, CubatureRule};
    use crate::hf::HfModel;
    use crate::material::PhaseMaterial;
    use crate::mesh::{build_fiber_rve, FiberRveConfig};
    use crate::reduction::{build_energy_basis, build_strain_basis};
    use crate::sampling::{collect_snapshots, sqrt_weights, SamplingPlan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        mesh: crate::mesh::RveMesh,
        materials: Vec<PhaseMaterial>,
        basis: crate::reduction::StrainBasis,
        rule: CubatureRule,
    }

    fn fixture() -> Fixture {
        let mesh = build_fiber_rve(
            &FiberRveConfig {
                nx: 10,
                ny: 10,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        let materials = vec![
            PhaseMaterial::damaging(4000.0, 0.38, 60.0, 70.0, 0.335, 0.05),
            PhaseMaterial::elastic(231_000.0, 0.2),
        ];
        let plan = SamplingPlan {
            n_dirs: 10,
            n_steps: 10,
            chi_end: 0.02,
            seed: 3,
        };
        let (set, _) = collect_snapshots(&plan, &mesh, &materials).unwrap();
        let (el, inel) = set.split_elastic_inelastic();
        let sw = sqrt_weights(&mesh);
        let basis = build_strain_basis(&el.strain, &inel.strain, 12, &sw, 3).unwrap();
        let energy = build_energy_basis(&inel.energy, 40, &sw);
        let gw: Vec<f64> = mesh.gauss.iter().map(|g| g.weight).collect();
        let rule = select_cubature(&energy.modes, &gw, mesh.volume).unwrap();
        Fixture {
            mesh,
            materials,
            basis,
            rule,
        }
    }

    #[test]
    fn zero_state_zero_residual() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let state = ops.virgin_state();
        let r = ops.reduced_residual(&state.c, &[0.0, 0.0, 0.0], &state);
        assert!(r.norm() == 0.0);
    }

    #[test]
    fn elastic_projection_zeroes_rom_residual() {
        // the HF elastic fluctuation projected on the basis zeroes the
        // reduced residual under exact (full Gauss) integration
        let f = fixture();
        let gw: Vec<f64> = f.mesh.gauss.iter().map(|g| g.weight).collect();
        let full = CubatureRule::full_gauss(&gw, f.mesh.volume);
        let ops = build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &full, &f.materials)
            .unwrap();
        let model = HfModel::new(&f.mesh, &f.materials).unwrap();
        let mut states = model.virgin_states();
        let eps = [3e-5, 5e-5, -2e-5]; // small: everything stays elastic
        let sol = model.solve_increment(&eps, &mut states, None).unwrap();
        assert_eq!(sol.max_damage(), 0.0);
        // weighted projection of the fluctuation strain field on the basis
        let n_sigma = 3;
        let mut c = DVector::zeros(ops.n_modes);
        for (g, gp) in f.mesh.gauss.iter().enumerate() {
            for m in 0..ops.n_modes {
                let mut dot = 0.0;
                for i in 0..n_sigma {
                    dot += f.basis.modes[(n_sigma * g + i, m)]
                        * (sol.micro_strain[g][i] - eps[i]);
                }
                c[m] += gp.weight * dot;
            }
        }
        let state = ops.virgin_state();
        let res = ops.reduced_residual(&c, &eps, &state);
        let reference = {
            let e = DVector::from_column_slice(&eps);
            (ops.m1.transpose() * e).norm()
        };
        assert!(
            res.norm() <= 1e-10 * reference,
            "residual {} vs reference {}",
            res.norm(),
            reference
        );
    }

    #[test]
    fn elastic_regime_matches_hf_homogenized_stress() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let model = HfModel::new(&f.mesh, &f.materials).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let mut eps = [0.0; 3];
            for e in eps.iter_mut() {
                *e = 1e-5 * rng.gen_range(-1.0..1.0);
            }
            let mut hf_states = model.virgin_states();
            let hf = model.solve_increment(&eps, &mut hf_states, None).unwrap();
            let mut state = ops.virgin_state();
            let red = ops.solve_increment_reduced(&eps, &mut state).unwrap();
            assert!(red.elastic_path);
            let scale = hf.macro_stress[..3]
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..3 {
                assert!(
                    (hf.macro_stress[i] - red.macro_stress[i]).abs() <= 1e-9 * scale,
                    "component {i}: hf {} red {}",
                    hf.macro_stress[i],
                    red.macro_stress[i]
                );
            }
        }
    }

    #[test]
    fn residual_is_gradient_of_frozen_energy() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        // evolve into damage first so the frozen pattern is nontrivial
        let dir = [-0.082, 0.808, 0.583];
        let chis: Vec<f64> = (1..=6).map(|k| 0.02 * k as f64 / 6.0).collect();
        let steps = run_trajectory_reduced(&ops, &dir, &chis).unwrap();
        let last = steps.last().unwrap();
        let state = ReducedState {
            c: last.c.clone(),
            r: last.r.clone(),
        };
        // probe an out-of-equilibrium point at a slightly unloaded strain so
        // no cubature point is loading (frozen damage regime)
        let eps: Vec<f64> = dir.iter().map(|d| d * 0.9 * 0.02).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c0 = &state.c * 0.7;
        let res = ops.reduced_residual(&c0, &eps, &state);
        assert!(res.norm() > 1e-3, "probe should be out of equilibrium");
        let h = 1e-7;
        let e0 = ops.reduced_energy(&c0, &eps, &state);
        let noise = 1e-8 * e0.abs().max(1.0); // fd roundoff floor
        for _ in 0..6 {
            let k = rng.gen_range(0..ops.n_modes);
            let mut cp = c0.clone();
            let mut cm = c0.clone();
            cp[k] += h;
            cm[k] -= h;
            let fd =
                (ops.reduced_energy(&cp, &eps, &state) - ops.reduced_energy(&cm, &eps, &state))
                    / (2.0 * h);
            let scale = res.norm().max(fd.abs());
            assert!(
                (res[k] - fd).abs() <= 1e-5 * scale + noise,
                "mode {k}: residual {} fd {}",
                res[k],
                fd
            );
        }
    }

    #[test]
    fn inelastic_increment_converges_and_commits() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let dir = [-0.082, 0.808, 0.583];
        let chis: Vec<f64> = (1..=8).map(|k| 0.02 * k as f64 / 8.0).collect();
        let steps = run_trajectory_reduced(&ops, &dir, &chis).unwrap();
        assert!(steps.last().unwrap().max_damage > 0.1);
        // r never decreases along the trajectory
        for w in steps.windows(2) {
            for (a, b) in w[0].r.iter().zip(w[1].r.iter()) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn elastic_tangent_matches_hf() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let model = HfModel::new(&f.mesh, &f.materials).unwrap();
        let states = model.virgin_states();
        let hf_c = model.homogenize_tangent(&[0.0; 3], &states, None).unwrap();
        let state = ops.virgin_state();
        let red_c = ops.homogenized_tangent_reduced(&[0.0; 3], &state).unwrap();
        let scale = hf_c[0][0];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (hf_c[i][j] - red_c[i][j]).abs() <= 1e-6 * scale,
                    "({i},{j}): hf {} red {}",
                    hf_c[i][j],
                    red_c[i][j]
                );
            }
        }
    }

    #[test]
    fn damaged_tangent_matches_finite_difference_of_reduced_stress() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let dir = [-0.082, 0.808, 0.583];
        // load into damage then slightly unload: smooth secant regime
        let chis = [0.005, 0.01, 0.015, 0.02, 0.0196];
        let steps = run_trajectory_reduced(&ops, &dir, &chis).unwrap();
        assert!(steps.last().unwrap().max_damage > 0.05);
        let state = ReducedState {
            c: steps.last().unwrap().c.clone(),
            r: steps.last().unwrap().r.clone(),
        };
        let eps: Vec<f64> = dir.iter().map(|d| d * 0.0196).collect();
        let tangent = ops.homogenized_tangent_reduced(&eps, &state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut delta = [0.0; 3];
        for d in delta.iter_mut() {
            *d = rng.gen_range(-1.0..1.0);
        }
        let h = 1e-6;
        let probe = |sign: f64| {
            let e: Vec<f64> = eps
                .iter()
                .zip(delta.iter())
                .map(|(e, d)| e + sign * h * d)
                .collect();
            let mut st = state.clone();
            ops.solve_increment_reduced(&e, &mut st).unwrap().macro_stress
        };
        let sp = probe(1.0);
        let sm = probe(-1.0);
        let scale = {
            let (s, _) = ops.macro_stress(&state.c, &eps, &state);
            s[..3].iter().fold(0.0f64, |a, v| a.max(v.abs()))
        };
        for i in 0..3 {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            let an: f64 = (0..3).map(|j| tangent[i][j] * delta[j]).sum();
            assert!(
                (an - fd).abs() <= 1e-4 * scale.max(fd.abs()),
                "component {i}: an {an} fd {fd}"
            );
        }
    }

    #[test]
    fn kkt_holds_on_cyclic_trajectory() {
        let f = fixture();
        let ops =
            build_reduced_operators(&f.mesh, &f.basis, f.basis.n_modes(), &f.rule, &f.materials)
                .unwrap();
        let dir = [-0.082, 0.808, 0.583];
        let mut chis: Vec<f64> = (1..=8).map(|k| 0.02 * k as f64 / 8.0).collect();
        chis.extend((0..8).map(|k| 0.02 * (7 - k) as f64 / 8.0));
        let mut state = ops.virgin_state();
        let mut damaged = false;
        for &chi in &chis {
            let eps: Vec<f64> = dir.iter().map(|d| d * chi).collect();
            let before = state.clone();
            let sol = ops.solve_increment_reduced(&eps, &mut state).unwrap();
            damaged |= sol.max_damage > 0.0;
            let v = ops.kkt_violation(&eps, &before, &state);
            assert!(v <= 1e-9, "kkt violation {v}");
        }
        assert!(damaged);
        // back at zero strain the secant response passes through the origin
        let (sig, _) = ops.macro_stress(&state.c, &[0.0; 3], &state);
        let norm = sig[..3].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(norm < 1e-10);
    }
}
