//! High-fidelity micro boundary value problem.
//!
//! Given a macro strain, solves for the periodic displacement fluctuation by
//! Newton iteration on the constrained DOFs, carrying the damage history at
//! every Gauss point, and homogenizes stress and tangent. The homogenized
//! tangent is obtained by central perturbation of the macro strain (one pair
//! of micro solves per component) rather than by assembling the localization
//! tensor.

use crate::constraint::PeriodicConstraintMap;
use crate::error::{Error, Result};
use crate::material::{DamageParams, DamageState, PhaseMaterial};
use crate::mesh::RveMesh;
use crate::solver::BandSystem;
use crate::voigt::{self, VoigtMat, VoigtVec};
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 25;
const RTOL: f64 = 1e-8;
const ATOL: f64 = 1e-12;
const TANGENT_H: f64 = 1e-6;

pub struct HfModel<'a> {
    pub mesh: &'a RveMesh,
    pub params: Vec<DamageParams>,
    pub cmap: PeriodicConstraintMap,
    /// Reduced DOF of every element-local DOF; -1 marks pinned.
    elem_dofs: Vec<Vec<isize>>,
}

/// Converged state of one micro solve.
#[derive(Clone, Debug)]
pub struct HfSolution {
    pub macro_strain: VoigtVec,
    /// Nodal fluctuation on the full mesh.
    pub fluctuation: Vec<f64>,
    /// Reduced-coordinate fluctuation (used to warm start the next step).
    pub fluctuation_reduced: Vec<f64>,
    pub micro_strain: Vec<VoigtVec>,
    pub micro_stress: Vec<VoigtVec>,
    pub r: Vec<f64>,
    pub damage: Vec<f64>,
    pub energy: Vec<f64>,
    pub macro_stress: VoigtVec,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl HfSolution {
    pub fn max_damage(&self) -> f64 {
        self.damage.iter().fold(0.0, |a, d| a.max(*d))
    }
}

enum TangentKind {
    Consistent,
    Secant,
}

impl<'a> HfModel<'a> {
    pub fn new(mesh: &'a RveMesh, materials: &[PhaseMaterial]) -> Result<Self> {
        if materials.len() < mesh.phase_names.len() {
            return Err(Error::Config(format!(
                "{} materials provided for {} phases",
                materials.len(),
                mesh.phase_names.len()
            )));
        }
        for m in materials {
            m.validate()?;
        }
        let params: Vec<DamageParams> =
            materials.iter().map(|m| m.damage_params(mesh.dim)).collect();
        let cmap = PeriodicConstraintMap::build(mesh);
        let nd = mesh.dim.n_dim();
        let elem_dofs = mesh
            .elements
            .iter()
            .map(|e| {
                let mut dofs = Vec::with_capacity(nd * e.n_nodes);
                for &node in e.node_ids() {
                    for c in 0..nd {
                        dofs.push(match cmap.dof_map[node * nd + c] {
                            Some(r) => r as isize,
                            None => -1,
                        });
                    }
                }
                dofs
            })
            .collect();
        Ok(HfModel {
            mesh,
            params,
            cmap,
            elem_dofs,
        })
    }

    pub fn virgin_states(&self) -> Vec<DamageState> {
        self.mesh
            .gauss
            .iter()
            .map(|g| DamageState::virgin(&self.params[g.phase]))
            .collect()
    }

    fn assemble(
        &self,
        eps: &[f64],
        states: &[DamageState],
        u: &[f64],
        mut band: Option<&mut BandSystem>,
        residual: &mut [f64],
        kind: &TangentKind,
    ) {
        let mesh = self.mesh;
        let n_sigma = mesh.n_sigma();
        let nd = mesh.dim.n_dim();
        if let Some(b) = band.as_deref_mut() {
            b.reset();
        }
        residual.fill(0.0);

        let nde_max = nd * if mesh.dim == crate::voigt::Dim::Two { 4 } else { 8 };
        let mut ue = DVector::<f64>::zeros(nde_max);
        let mut strain = DVector::<f64>::zeros(n_sigma);
        let mut sigma = DVector::<f64>::zeros(n_sigma);
        let mut ct = DMatrix::<f64>::zeros(n_sigma, n_sigma);
        let mut btc = DMatrix::<f64>::zeros(nde_max, n_sigma);
        let mut ke = DMatrix::<f64>::zeros(nde_max, nde_max);
        let mut re = DVector::<f64>::zeros(nde_max);

        let mut gp_cursor = 0;
        for (eid, _elem) in mesh.elements.iter().enumerate() {
            let dofs = &self.elem_dofs[eid];
            let nde = dofs.len();
            for (a, &d) in dofs.iter().enumerate() {
                ue[a] = if d >= 0 { u[d as usize] } else { 0.0 };
            }
            ke.view_mut((0, 0), (nde, nde)).fill(0.0);
            re.rows_mut(0, nde).fill(0.0);
            let n_gp = if mesh.dim == crate::voigt::Dim::Two { 4 } else { 8 };
            for local in 0..n_gp {
                let gp = &mesh.gauss[gp_cursor + local];
                let p = &self.params[gp.phase];
                strain
                    .rows_mut(0, n_sigma)
                    .gemv(1.0, &gp.b, &ue.rows(0, nde), 0.0);
                for i in 0..n_sigma {
                    strain[i] += eps[i];
                }
                let resp = p.update_state(strain.as_slice(), &states[gp_cursor + local]);
                for i in 0..n_sigma {
                    sigma[i] = resp.stress[i];
                }
                re.rows_mut(0, nde)
                    .gemv_tr(gp.weight, &gp.b, &sigma, 1.0);
                if band.is_some() {
                    for i in 0..n_sigma {
                        for j in 0..n_sigma {
                            ct[(i, j)] = match kind {
                                TangentKind::Consistent => resp.tangent[i][j],
                                TangentKind::Secant => (1.0 - resp.damage) * p.stiffness[i][j],
                            };
                        }
                    }
                    btc.view_mut((0, 0), (nde, n_sigma))
                        .gemm_tr(gp.weight, &gp.b, &ct, 0.0);
                    ke.view_mut((0, 0), (nde, nde)).gemm(
                        1.0,
                        &btc.view((0, 0), (nde, n_sigma)),
                        &gp.b,
                        1.0,
                    );
                }
            }
            for (a, &da) in dofs.iter().enumerate() {
                if da < 0 {
                    continue;
                }
                residual[da as usize] += re[a];
                if let Some(b_sys) = band.as_deref_mut() {
                    for (b, &db) in dofs.iter().enumerate() {
                        if db >= 0 {
                            b_sys.add(da as usize, db as usize, ke[(a, b)]);
                        }
                    }
                }
            }
            gp_cursor += n_gp;
        }
    }

    /// Newton solve of one strain increment from the given history.
    ///
    /// `states` is advanced to the converged configuration on success; trial
    /// evaluations inside the iteration never touch it.
    pub fn solve_increment(
        &self,
        eps: &[f64],
        states: &mut [DamageState],
        warm: Option<&[f64]>,
    ) -> Result<HfSolution> {
        let n_red = self.cmap.n_reduced;
        let mut u = match warm {
            Some(w) => {
                assert_eq!(w.len(), n_red);
                w.to_vec()
            }
            None => vec![0.0; n_red],
        };
        let mut band = BandSystem::new(n_red, self.cmap.half_bandwidth);
        let mut residual = vec![0.0; n_red];

        let mut ref_norm = 0.0;
        let mut norm = f64::INFINITY;
        let mut iterations = 0;
        let mut secant_mode = false;
        let mut stagnation = 0usize;
        for iter in 0..=MAX_ITER {
            let kind = if secant_mode {
                TangentKind::Secant
            } else {
                TangentKind::Consistent
            };
            self.assemble(eps, states, &u, Some(&mut band), &mut residual, &kind);
            norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
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
            if band.factor().is_err() {
                // retry the iteration with the always-definite secant operator
                self.assemble(
                    eps,
                    states,
                    &u,
                    Some(&mut band),
                    &mut residual,
                    &TangentKind::Secant,
                );
                band.factor()?;
            }
            let mut delta: Vec<f64> = residual.iter().map(|v| -v).collect();
            band.solve_in_place(&mut delta);
            // backtracking line search on the residual norm; damage-surface
            // branch switching can make the full step overshoot
            let mut step = 1.0;
            let mut best_norm = f64::INFINITY;
            let mut best_u = u.clone();
            let mut accepted = false;
            let mut trial = vec![0.0; u.len()];
            for _ in 0..6 {
                for ((t, ui), di) in trial.iter_mut().zip(u.iter()).zip(delta.iter()) {
                    *t = ui + step * di;
                }
                self.assemble(eps, states, &trial, None, &mut residual, &kind);
                let tn = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
                if tn < best_norm {
                    best_norm = tn;
                    best_u.copy_from_slice(&trial);
                }
                if tn <= (1.0 - 1e-4 * step) * norm {
                    u.copy_from_slice(&trial);
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
                u.copy_from_slice(&best_u);
                if stagnation >= 2 {
                    secant_mode = true;
                }
            } else {
                stagnation = 0;
            }
            iterations = iter + 1;
        }

        Ok(self.commit(eps, states, u, norm, iterations))
    }

    /// Final field pass at the converged fluctuation; updates the history.
    fn commit(
        &self,
        eps: &[f64],
        states: &mut [DamageState],
        u: Vec<f64>,
        residual_norm: f64,
        iterations: usize,
    ) -> HfSolution {
        let mesh = self.mesh;
        let n_sigma = mesh.n_sigma();
        let nd = mesh.dim.n_dim();
        let n_gp = mesh.n_gauss();
        let mut micro_strain = vec![voigt::zero_vec(); n_gp];
        let mut micro_stress = vec![voigt::zero_vec(); n_gp];
        let mut r = vec![0.0; n_gp];
        let mut damage = vec![0.0; n_gp];
        let mut energy = vec![0.0; n_gp];
        let mut macro_stress = voigt::zero_vec();

        let full = self.cmap.expand(&u);
        let mut strain = DVector::<f64>::zeros(n_sigma);
        let mut gp_cursor = 0;
        for (_eid, elem) in mesh.elements.iter().enumerate() {
            let nde = nd * elem.n_nodes;
            let mut ue = DVector::<f64>::zeros(nde);
            for (a, &node) in elem.node_ids().iter().enumerate() {
                for c in 0..nd {
                    ue[nd * a + c] = full[nd * node + c];
                }
            }
            let n_elem_gp = if mesh.dim == crate::voigt::Dim::Two { 4 } else { 8 };
            for local in 0..n_elem_gp {
                let g = gp_cursor + local;
                let gp = &mesh.gauss[g];
                strain.gemv(1.0, &gp.b, &ue, 0.0);
                for i in 0..n_sigma {
                    strain[i] += eps[i];
                }
                let resp = self.params[gp.phase].update_state(strain.as_slice(), &states[g]);
                states[g].r = resp.r;
                for i in 0..n_sigma {
                    micro_strain[g][i] = strain[i];
                    micro_stress[g][i] = resp.stress[i];
                    macro_stress[i] += gp.weight * resp.stress[i];
                }
                r[g] = resp.r;
                damage[g] = resp.damage;
                energy[g] = resp.energy;
            }
            gp_cursor += n_elem_gp;
        }
        for s in macro_stress.iter_mut() {
            *s /= mesh.volume;
        }
        let mut macro_strain = voigt::zero_vec();
        macro_strain[..n_sigma].copy_from_slice(&eps[..n_sigma]);

        HfSolution {
            macro_strain,
            fluctuation: full,
            fluctuation_reduced: u,
            micro_strain,
            micro_stress,
            r,
            damage,
            energy,
            macro_stress,
            residual_norm,
            iterations,
        }
    }

    /// Volume average of the stored micro stress field.
    pub fn homogenize_stress(&self, solution: &HfSolution) -> VoigtVec {
        let n_sigma = self.mesh.n_sigma();
        let mut s = voigt::zero_vec();
        for (gp, sig) in self.mesh.gauss.iter().zip(solution.micro_stress.iter()) {
            for i in 0..n_sigma {
                s[i] += gp.weight * sig[i];
            }
        }
        for v in s.iter_mut() {
            *v /= self.mesh.volume;
        }
        s
    }

    /// Volume average of the fluctuation strain, per component (should be
    /// zero for a converged periodic solution).
    pub fn fluctuation_mean(&self, solution: &HfSolution) -> VoigtVec {
        let n_sigma = self.mesh.n_sigma();
        let mut m = voigt::zero_vec();
        for (gp, e) in self.mesh.gauss.iter().zip(solution.micro_strain.iter()) {
            for i in 0..n_sigma {
                m[i] += gp.weight * (e[i] - solution.macro_strain[i]);
            }
        }
        for v in m.iter_mut() {
            *v /= self.mesh.volume;
        }
        m
    }

    /// Homogenized tangent by central macro-strain perturbation; each probe
    /// is a full micro solve from the same history. Symmetrized.
    pub fn homogenize_tangent(
        &self,
        eps: &[f64],
        states: &[DamageState],
        warm: Option<&[f64]>,
    ) -> Result<VoigtMat> {
        let n_sigma = self.mesh.n_sigma();
        let mut c = voigt::zero_mat();
        for j in 0..n_sigma {
            let probe = |sign: f64| -> Result<VoigtVec> {
                let mut e = eps.to_vec();
                e[j] += sign * TANGENT_H;
                let mut st = states.to_vec();
                let sol = self.solve_increment(&e, &mut st, warm)?;
                Ok(sol.macro_stress)
            };
            let sp = probe(1.0)?;
            let sm = probe(-1.0)?;
            for i in 0..n_sigma {
                c[i][j] = (sp[i] - sm[i]) / (2.0 * TANGENT_H);
            }
        }
        for i in 0..n_sigma {
            for j in (i + 1)..n_sigma {
                let s = 0.5 * (c[i][j] + c[j][i]);
                c[i][j] = s;
                c[j][i] = s;
            }
        }
        Ok(c)
    }

    /// Proportional trajectory eps(chi) = direction * chi at the given load
    /// factors, carrying history and warm starts between steps. The callback
    /// sees every converged step.
    pub fn run_schedule(
        &self,
        direction: &[f64],
        chis: &[f64],
        mut on_step: impl FnMut(usize, &HfSolution),
    ) -> Result<Vec<DamageState>> {
        let n_sigma = self.mesh.n_sigma();
        let mut states = self.virgin_states();
        let mut warm: Option<Vec<f64>> = None;
        for (k, &chi) in chis.iter().enumerate() {
            let eps: Vec<f64> = direction[..n_sigma].iter().map(|d| d * chi).collect();
            let sol = self
                .solve_increment(&eps, &mut states, warm.as_deref())
                .map_err(|e| match e {
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
            warm = Some(sol.fluctuation_reduced.clone());
            on_step(k, &sol);
        }
        Ok(states)
    }

    /// Monotone trajectory with equally spaced load factors, collected.
    pub fn run_trajectory(
        &self,
        direction: &[f64],
        chi_end: f64,
        n_steps: usize,
    ) -> Result<Vec<HfSolution>> {
        let chis: Vec<f64> = (1..=n_steps)
            .map(|k| chi_end * k as f64 / n_steps as f64)
            .collect();
        let mut out = Vec::with_capacity(n_steps);
        self.run_schedule(direction, &chis, |_, s| out.push(s.clone()))?;
        Ok(out)
    }
}
