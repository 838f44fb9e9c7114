//! Recovery of full-mesh fields from the reduced solution.
//!
//! Displacements: least-squares fit of the nodal fluctuation to the reduced
//! strain field, `q = (int B'B)^{-1} (int B' Psi) c`, assembled on the
//! periodic rigid-body-free space. Internal variable: weighted least-squares
//! fit of the internal-variable modes to the cubature-point values (the
//! mismatch integral is taken over the reduced rule, the only quadrature
//! where r lives). Stress: the damage law evaluated at every full-mesh Gauss
//! point from the reconstructed strain and internal variable.
//!
//! Both projectors are assembled once and reused for every step.

use crate::constraint::PeriodicConstraintMap;
use crate::cubature::CubatureRule;
use crate::error::{Error, Result};
use crate::material::PhaseMaterial;
use crate::mesh::RveMesh;
use crate::reduction::{InternalVarBasis, StrainBasis};
use crate::solver::BandSystem;
use crate::voigt::VoigtVec;
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct ReconstructionProjectors {
    /// Full-DOF displacement projector, n_dofs x n_modes.
    pub d_u: DMatrix<f64>,
    /// Internal-variable projector, n_r x N_r.
    pub d_r: DMatrix<f64>,
    /// Virgin internal variable at every Gauss point.
    pub r0_gp: Vec<f64>,
    /// Virgin internal variable at the cubature points.
    pub r0_z: Vec<f64>,
    n_modes: usize,
}

/// Assembles both projectors. The displacement normal matrix is factored
/// once and discarded; `K_r` must be full rank (enough cubature points for
/// the internal-variable modes).
pub fn build_projectors(
    mesh: &RveMesh,
    cmap: &PeriodicConstraintMap,
    strain_basis: &StrainBasis,
    n_modes: usize,
    internal_basis: &InternalVarBasis,
    rule: &CubatureRule,
    materials: &[PhaseMaterial],
) -> Result<ReconstructionProjectors> {
    let n_sigma = mesh.n_sigma();
    let nd = mesh.dim.n_dim();
    let n_red = cmap.n_reduced;

    // K_u = int B'B, F_u = int B' Psi, on the reduced periodic space
    let mut k_u = BandSystem::new(n_red, cmap.half_bandwidth);
    let mut f_u = DMatrix::<f64>::zeros(n_red, n_modes);
    let mut gp_cursor = 0;
    for elem in &mesh.elements {
        let n_elem_gp = if nd == 2 { 4 } else { 8 };
        for local in 0..n_elem_gp {
            let g = gp_cursor + local;
            let gp = &mesh.gauss[g];
            let w = gp.weight;
            // element-level B'B and B'Psi
            let psi_g = DMatrix::from_fn(n_sigma, n_modes, |i, j| {
                strain_basis.modes[(n_sigma * g + i, j)]
            });
            let btb = gp.b.transpose() * &gp.b * w;
            let btpsi = gp.b.transpose() * psi_g * w;
            for (a, &node_a) in elem.node_ids().iter().enumerate() {
                for ca in 0..nd {
                    let da = match cmap.dof_map[node_a * nd + ca] {
                        Some(r) => r,
                        None => continue,
                    };
                    for m in 0..n_modes {
                        f_u[(da, m)] += btpsi[(nd * a + ca, m)];
                    }
                    for (b, &node_b) in elem.node_ids().iter().enumerate() {
                        for cb in 0..nd {
                            if let Some(db) = cmap.dof_map[node_b * nd + cb] {
                                k_u.add(da, db, btb[(nd * a + ca, nd * b + cb)]);
                            }
                        }
                    }
                }
            }
        }
        gp_cursor += if nd == 2 { 4 } else { 8 };
    }
    k_u.factor()
        .map_err(|_| Error::Singular("displacement projector matrix singular".into()))?;
    let mut d_u_red = DMatrix::<f64>::zeros(n_red, n_modes);
    let mut col = vec![0.0; n_red];
    for m in 0..n_modes {
        for i in 0..n_red {
            col[i] = f_u[(i, m)];
        }
        k_u.solve_in_place(&mut col);
        for i in 0..n_red {
            d_u_red[(i, m)] = col[i];
        }
    }
    // expand to full DOFs (slaves copy masters, pinned stay zero)
    let mut d_u = DMatrix::<f64>::zeros(cmap.n_full_dofs, n_modes);
    for (dof, map) in cmap.dof_map.iter().enumerate() {
        if let Some(r) = map {
            for m in 0..n_modes {
                d_u[(dof, m)] = d_u_red[(*r, m)];
            }
        }
    }

    // D_r = (Z' W Z)^{-1} Z' W over the cubature points
    let n_r = internal_basis.n_modes();
    let n_pts = rule.len();
    let z = DMatrix::from_fn(n_pts, n_r, |j, m| {
        internal_basis.modes[(rule.indices[j], m)]
    });
    let mut ztw = z.transpose();
    for j in 0..n_pts {
        for m in 0..n_r {
            ztw[(m, j)] *= rule.weights[j];
        }
    }
    let k_r = &ztw * &z;
    let d_r = k_r
        .lu()
        .solve(&ztw)
        .ok_or_else(|| Error::Singular("internal-variable projector rank deficient".into()))?;

    let params: Vec<f64> = materials
        .iter()
        .map(|m| m.damage_params(mesh.dim).r0)
        .collect();
    let r0_gp: Vec<f64> = mesh.gauss.iter().map(|g| params[g.phase]).collect();
    let r0_z: Vec<f64> = rule.indices.iter().map(|&g| r0_gp[g]).collect();

    Ok(ReconstructionProjectors {
        d_u,
        d_r,
        r0_gp,
        r0_z,
        n_modes,
    })
}

impl ReconstructionProjectors {
    /// Nodal fluctuation field from mode coefficients.
    pub fn reconstruct_displacement(&self, c: &DVector<f64>) -> Vec<f64> {
        assert_eq!(c.len(), self.n_modes);
        let q = &self.d_u * c;
        q.iter().copied().collect()
    }
}

/// Internal variable and damage at every Gauss point from the cubature-point
/// values. The projected field is clamped from below at the virgin value and
/// the resulting damage saturates into [0, 1].
pub fn reconstruct_internal_variable(
    proj: &ReconstructionProjectors,
    internal_basis: &InternalVarBasis,
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    r_roec: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let centered = DVector::from_fn(r_roec.len(), |j, _| r_roec[j] - proj.r0_z[j]);
    let c_r = &proj.d_r * centered;
    let field = &internal_basis.modes * c_r;
    let params: Vec<crate::material::DamageParams> = materials
        .iter()
        .map(|m| m.damage_params(mesh.dim))
        .collect();
    let mut r = vec![0.0; mesh.n_gauss()];
    let mut d = vec![0.0; mesh.n_gauss()];
    for (g, gp) in mesh.gauss.iter().enumerate() {
        let p = &params[gp.phase];
        let val = (proj.r0_gp[g] + field[g]).max(proj.r0_gp[g]);
        r[g] = val;
        d[g] = p.damage_at(val); // clamped to [0, 1]
    }
    (r, d)
}

/// Microstress at every Gauss point from the reconstructed strain field
/// (macro strain plus reduced fluctuation) and internal variable, through the
/// damage constitutive law.
pub fn reconstruct_stress(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    strain_basis: &StrainBasis,
    eps: &[f64],
    c: &DVector<f64>,
    r_gp: &[f64],
) -> Vec<VoigtVec> {
    let n_sigma = mesh.n_sigma();
    let n_modes = c.len();
    let params: Vec<crate::material::DamageParams> = materials
        .iter()
        .map(|m| m.damage_params(mesh.dim))
        .collect();
    let mut out = Vec::with_capacity(mesh.n_gauss());
    let mut eps_mu = vec![0.0; n_sigma];
    for (g, gp) in mesh.gauss.iter().enumerate() {
        for i in 0..n_sigma {
            let mut v = eps[i];
            for m in 0..n_modes {
                v += strain_basis.modes[(n_sigma * g + i, m)] * c[m];
            }
            eps_mu[i] = v;
        }
        out.push(params[gp.phase].stress_at(&eps_mu, r_gp[g]));
    }
    out
}

/// Field error max_components( |a - b|_1 / |b|_1 ) over Gauss-point values.
/// `b` is the reference; a zero reference norm in any component is an error.
pub fn field_error(test: &[f64], reference: &[f64], n_components: usize) -> Result<f64> {
    assert_eq!(test.len(), reference.len());
    assert_eq!(test.len() % n_components, 0);
    let n = test.len() / n_components;
    let mut worst = 0.0f64;
    for comp in 0..n_components {
        let mut num = 0.0;
        let mut den = 0.0;
        for g in 0..n {
            let idx = n_components * g + comp;
            num += (test[idx] - reference[idx]).abs();
            den += reference[idx].abs();
        }
        if den == 0.0 {
            return Err(Error::ZeroReference);
        }
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// Flattens per-gp Voigt vectors into a component-interleaved slice for
/// [`field_error`].
pub fn flatten_voigt(field: &[VoigtVec], n_sigma: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(field.len() * n_sigma);
    for v in field {
        out.extend_from_slice(&v[..n_sigma]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubature::select_cubature;
    use crate::hf::HfModel;
    use crate::mesh::{build_fiber_rve, FiberRveConfig};
    use crate::reduction::{build_energy_basis, build_internal_basis, build_strain_basis};
    use crate::sampling::{collect_snapshots, sqrt_weights, virgin_internal, SamplingPlan};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Instant;

    fn model_b_materials() -> Vec<PhaseMaterial> {
        vec![
            PhaseMaterial::damaging(4000.0, 0.38, 60.0, 70.0, 0.335, 0.05),
            PhaseMaterial::elastic(231_000.0, 0.2),
        ]
    }

    struct Fixture {
        mesh: RveMesh,
        cmap: PeriodicConstraintMap,
        materials: Vec<PhaseMaterial>,
        basis: StrainBasis,
        internal: InternalVarBasis,
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
        let materials = model_b_materials();
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
        let virgin = virgin_internal(&mesh, &materials);
        let internal = build_internal_basis(&set.internal, &virgin, 12);
        let gw: Vec<f64> = mesh.gauss.iter().map(|g| g.weight).collect();
        let rule = select_cubature(&energy.modes, &gw, mesh.volume).unwrap();
        let cmap = PeriodicConstraintMap::build(&mesh);
        Fixture {
            mesh,
            cmap,
            materials,
            basis,
            internal,
            rule,
        }
    }

    #[test]
    fn constructed_mode_recovers_its_nodal_vector() {
        // a basis mode that is exactly B q must reconstruct q
        let f = fixture();
        let mesh = &f.mesh;
        let n_sigma = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q_red: Vec<f64> = (0..f.cmap.n_reduced)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let q_full = f.cmap.expand(&q_red);
        // evaluate B q at every gp as the single mode
        let mut modes = DMatrix::<f64>::zeros(n_sigma * mesh.n_gauss(), 1);
        let nd = 2;
        let mut gp_cursor = 0;
        for elem in &mesh.elements {
            let mut ue = DVector::<f64>::zeros(nd * elem.n_nodes);
            for (a, &node) in elem.node_ids().iter().enumerate() {
                for c in 0..nd {
                    ue[nd * a + c] = q_full[nd * node + c];
                }
            }
            for local in 0..4 {
                let g = gp_cursor + local;
                let strain = &mesh.gauss[g].b * &ue;
                for i in 0..n_sigma {
                    modes[(n_sigma * g + i, 0)] = strain[i];
                }
            }
            gp_cursor += 4;
        }
        let single = StrainBasis {
            modes,
            n_elastic: 1,
            n_inelastic: 0,
            singular_values: vec![1.0],
        };
        let proj = build_projectors(
            mesh,
            &f.cmap,
            &single,
            1,
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let rec = proj.reconstruct_displacement(&DVector::from_vec(vec![1.0]));
        let scale = q_full.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in rec.iter().zip(q_full.iter()) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_coefficients_zero_field() {
        let f = fixture();
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            f.basis.n_modes(),
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let rec = proj.reconstruct_displacement(&DVector::zeros(f.basis.n_modes()));
        assert!(rec.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn elastic_regime_matches_hf_fields() {
        let f = fixture();
        let ops = crate::hpr::build_reduced_operators(
            &f.mesh,
            &f.basis,
            f.basis.n_modes(),
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            f.basis.n_modes(),
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let model = HfModel::new(&f.mesh, &f.materials).unwrap();
        let eps = [4e-5, 6e-5, -3e-5];
        let mut hf_states = model.virgin_states();
        let hf = model.solve_increment(&eps, &mut hf_states, None).unwrap();
        let mut state = ops.virgin_state();
        let red = ops.solve_increment_reduced(&eps, &mut state).unwrap();
        assert!(red.elastic_path);

        // displacement fluctuation matches HF in relative L2
        let rec = proj.reconstruct_displacement(&state.c);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in rec.iter().zip(hf.fluctuation.iter()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        assert!(num.sqrt() <= 1e-8 * den.sqrt().max(1e-300), "{num} {den}");

        // microstress matches HF pointwise
        let (r_gp, d_gp) =
            reconstruct_internal_variable(&proj, &f.internal, &f.mesh, &f.materials, &state.r);
        assert!(d_gp.iter().all(|&d| d == 0.0));
        let stress = reconstruct_stress(&f.mesh, &f.materials, &f.basis, &eps, &state.c, &r_gp);
        let scale = hf
            .micro_stress
            .iter()
            .flat_map(|s| s[..3].iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in stress.iter().zip(hf.micro_stress.iter()) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn constant_internal_mode_reconstructs_constant() {
        let f = fixture();
        // single-phase style check: constant mode over all gps
        let n_gp = f.mesh.n_gauss();
        let val = 1.0 / (n_gp as f64).sqrt();
        let internal = InternalVarBasis {
            modes: DMatrix::from_element(n_gp, 1, val),
            singular_values: vec![1.0],
        };
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            f.basis.n_modes(),
            &internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        // r at cubature points: virgin plus a constant increment
        let rho = 0.37;
        let r_roec: Vec<f64> = proj.r0_z.iter().map(|r0| r0 + rho).collect();
        let (r_gp, _) =
            reconstruct_internal_variable(&proj, &internal, &f.mesh, &f.materials, &r_roec);
        for (g, r) in r_gp.iter().enumerate() {
            assert_relative_eq!(*r, proj.r0_gp[g] + rho, epsilon = 1e-10);
        }
    }

    #[test]
    fn damage_bounds_after_clamp() {
        let f = fixture();
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            f.basis.n_modes(),
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // wild cubature values, including unphysical below-virgin ones
        let r_roec: Vec<f64> = proj
            .r0_z
            .iter()
            .map(|r0| r0 + rng.gen_range(-2.0..6.0))
            .collect();
        let (r_gp, d_gp) =
            reconstruct_internal_variable(&proj, &f.internal, &f.mesh, &f.materials, &r_roec);
        for (g, (&r, &d)) in r_gp.iter().zip(d_gp.iter()).enumerate() {
            assert!(r >= proj.r0_gp[g]);
            assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn projection_satisfies_normal_equations() {
        let f = fixture();
        let n_modes = f.basis.n_modes();
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            n_modes,
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        // residual of the normal equations for a random coefficient vector:
        // int B'(Psi c - B q) dV = 0 with q = D_u c
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = DVector::from_fn(n_modes, |_, _| rng.gen_range(-1.0..1.0));
        let q = proj.reconstruct_displacement(&c);
        let n_sigma = 3;
        let nd = 2;
        let mut res = vec![0.0; f.cmap.n_reduced];
        let mut gp_cursor = 0;
        for elem in &f.mesh.elements {
            let mut ue = DVector::<f64>::zeros(nd * elem.n_nodes);
            for (a, &node) in elem.node_ids().iter().enumerate() {
                for cc in 0..nd {
                    ue[nd * a + cc] = q[nd * node + cc];
                }
            }
            for local in 0..4 {
                let g = gp_cursor + local;
                let gp = &f.mesh.gauss[g];
                let bq = &gp.b * &ue;
                let mut mismatch = DVector::<f64>::zeros(n_sigma);
                for i in 0..n_sigma {
                    let mut v = 0.0;
                    for m in 0..n_modes {
                        v += f.basis.modes[(n_sigma * g + i, m)] * c[m];
                    }
                    mismatch[i] = v - bq[i];
                }
                let contrib = gp.b.transpose() * mismatch * gp.weight;
                for (a, &node) in elem.node_ids().iter().enumerate() {
                    for cc in 0..nd {
                        if let Some(r) = f.cmap.dof_map[node * nd + cc] {
                            res[r] += contrib[nd * a + cc];
                        }
                    }
                }
            }
            gp_cursor += 4;
        }
        let rn: f64 = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 1e-10, "normal equation residual {rn}");
    }

    #[test]
    fn projector_reuse_is_cheap() {
        let f = fixture();
        let t0 = Instant::now();
        let proj = build_projectors(
            &f.mesh,
            &f.cmap,
            &f.basis,
            f.basis.n_modes(),
            &f.internal,
            &f.rule,
            &f.materials,
        )
        .unwrap();
        let build_time = t0.elapsed();
        let c = DVector::from_element(f.basis.n_modes(), 0.1);
        let mut best = std::time::Duration::MAX;
        for _ in 0..5 {
            let t1 = Instant::now();
            let _ = proj.reconstruct_displacement(&c);
            best = best.min(t1.elapsed());
        }
        assert!(
            best * 50 < build_time,
            "reuse {best:?} vs build {build_time:?}"
        );
    }

    #[test]
    fn field_error_examples() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(field_error(&a, &a, 2).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| 1.1 * v).collect();
        let e = field_error(&b, &a, 1).unwrap();
        assert_relative_eq!(e, 0.1, epsilon = 1e-12);
        // per-component: scale only the first component
        let mut c = a.clone();
        c[0] *= 1.2;
        c[2] *= 1.2;
        let e = field_error(&c, &a, 2).unwrap();
        assert_relative_eq!(e, 0.2, epsilon = 1e-12);
        assert!(field_error(&a, &[0.0; 4], 2).is_err());
    }

    #[test]
    fn field_error_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 50;
        let reference: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let test: Vec<f64> = reference
            .iter()
            .map(|v| v + rng.gen_range(-0.1..0.1))
            .collect();
        let e = field_error(&test, &reference, 2).unwrap();
        let mut expect = 0.0f64;
        for comp in 0..2 {
            let num: f64 = (0..n)
                .map(|g| (test[2 * g + comp] - reference[2 * g + comp]).abs())
                .sum();
            let den: f64 = (0..n).map(|g| reference[2 * g + comp].abs()).sum();
            expect = expect.max(num / den);
        }
        assert_relative_eq!(e, expect, epsilon = 1e-14);
    }
}
