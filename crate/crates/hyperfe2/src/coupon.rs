//! Miniature macro coupon under displacement-controlled shear.
//!
//! A small plane-strain quad mesh whose every Gauss point owns an independent
//! micro material: either a precomputed elastic tensor, a hyper-reduced RVE
//! state, or a full high-fidelity RVE (the desk-scale FE-squared oracle).
//! The bottom edge is clamped; a uniform horizontal displacement is imposed
//! on the top edge and the horizontal reaction there is reported.

use crate::element;
use crate::error::{Error, Result};
use crate::hf::HfModel;
use crate::hpr::{ReducedOperators, ReducedState};
use crate::io::CouponConfig;
use crate::material::DamageState;
use crate::voigt::{self, VoigtMat, VoigtVec};
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 25;

/// Homogenized material living at one macro Gauss point. `update` evaluates
/// a trial response from the last committed micro state; `commit` promotes
/// the trial reached at the given macro strain.
pub trait MacroMaterial {
    fn update(&mut self, eps: &[f64]) -> Result<(VoigtVec, VoigtMat)>;
    fn commit(&mut self, eps: &[f64]) -> Result<()>;
    /// Committed reduced micro state, when the material carries one.
    fn reduced_state(&self) -> Option<&ReducedState> {
        None
    }
}

/// Single-scale elastic oracle: a constant precomputed tensor.
pub struct ElasticMacro {
    pub tensor: VoigtMat,
}

impl MacroMaterial for ElasticMacro {
    fn update(&mut self, eps: &[f64]) -> Result<(VoigtVec, VoigtMat)> {
        Ok((voigt::mat_vec(&self.tensor, eps, 3), self.tensor))
    }

    fn commit(&mut self, _eps: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Hyper-reduced micro model at one macro point.
pub struct ReducedMacro<'a> {
    pub ops: &'a ReducedOperators,
    pub state: ReducedState,
}

impl<'a> ReducedMacro<'a> {
    pub fn new(ops: &'a ReducedOperators) -> Self {
        let state = ops.virgin_state();
        ReducedMacro { ops, state }
    }
}

impl MacroMaterial for ReducedMacro<'_> {
    fn update(&mut self, eps: &[f64]) -> Result<(VoigtVec, VoigtMat)> {
        let mut trial = self.state.clone();
        let sol = self.ops.solve_increment_reduced(eps, &mut trial)?;
        let tangent = self.ops.homogenized_tangent_reduced(eps, &trial)?;
        Ok((sol.macro_stress, tangent))
    }

    fn commit(&mut self, eps: &[f64]) -> Result<()> {
        self.ops.solve_increment_reduced(eps, &mut self.state)?;
        Ok(())
    }

    fn reduced_state(&self) -> Option<&ReducedState> {
        Some(&self.state)
    }
}

/// Full high-fidelity micro model at one macro point (true FE-squared).
pub struct HfMacro<'a> {
    pub model: &'a HfModel<'a>,
    pub states: Vec<DamageState>,
    warm: Option<Vec<f64>>,
}

impl<'a> HfMacro<'a> {
    pub fn new(model: &'a HfModel<'a>) -> Self {
        let states = model.virgin_states();
        HfMacro {
            model,
            states,
            warm: None,
        }
    }
}

impl MacroMaterial for HfMacro<'_> {
    fn update(&mut self, eps: &[f64]) -> Result<(VoigtVec, VoigtMat)> {
        let mut trial = self.states.clone();
        let sol = self.model.solve_increment(eps, &mut trial, self.warm.as_deref())?;
        let tangent = self
            .model
            .homogenize_tangent(eps, &self.states, Some(&sol.fluctuation_reduced))?;
        Ok((sol.macro_stress, tangent))
    }

    fn commit(&mut self, eps: &[f64]) -> Result<()> {
        let sol = self
            .model
            .solve_increment(eps, &mut self.states, self.warm.as_deref())?;
        self.warm = Some(sol.fluctuation_reduced);
        Ok(())
    }
}

/// Reaction curve of the coupon plus the micro history of one monitored
/// macro Gauss point.
#[derive(Clone, Debug)]
pub struct CouponReport {
    pub displacement: Vec<f64>,
    pub reaction: Vec<f64>,
    /// (coefficients, cubature r) of the monitored point, one entry per step.
    pub monitor_history: Vec<(DVector<f64>, Vec<f64>)>,
    pub n_gauss_points: usize,
}

struct MacroMesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    /// (B, weight) per Gauss point per element.
    gauss: Vec<Vec<(DMatrix<f64>, f64)>>,
    bottom_nodes: Vec<usize>,
    top_nodes: Vec<usize>,
}

fn build_macro_mesh(cfg: &CouponConfig) -> MacroMesh {
    let (nx, ny) = (cfg.nx, cfg.ny);
    let mut nodes = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([
                cfg.length * i as f64 / nx as f64,
                cfg.height * j as f64 / ny as f64,
            ]);
        }
    }
    let id = |i: usize, j: usize| i + (nx + 1) * j;
    let mut elements = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut gauss = Vec::new();
    for e in &elements {
        let coords: Vec<[f64; 3]> = e.iter().map(|&n| [nodes[n][0], nodes[n][1], 0.0]).collect();
        let mut pts = Vec::new();
        for p in element::quad_gauss() {
            let (b, det) = element::quad_b_matrix(&coords, p[0], p[1]);
            pts.push((b, det));
        }
        gauss.push(pts);
    }
    let bottom_nodes = (0..=nx).map(|i| id(i, 0)).collect();
    let top_nodes = (0..=nx).map(|i| id(i, ny)).collect();
    MacroMesh {
        nodes,
        elements,
        gauss,
        bottom_nodes,
        top_nodes,
    }
}

/// Runs the displacement-controlled shear test. `make_material` is invoked
/// once per macro Gauss point.
pub fn run_coupon<'m>(
    cfg: &CouponConfig,
    mut make_material: impl FnMut() -> Box<dyn MacroMaterial + 'm>,
) -> Result<CouponReport> {
    let mesh = build_macro_mesh(cfg);
    let n_dofs = 2 * mesh.nodes.len();
    let n_gp_total = mesh.elements.len() * 4;
    let mut materials: Vec<Box<dyn MacroMaterial + 'm>> =
        (0..n_gp_total).map(|_| make_material()).collect();

    // Dirichlet table: bottom clamped, top driven horizontally and held
    // vertically
    let mut prescribed: Vec<Option<f64>> = vec![None; n_dofs]; // scale per unit drive
    for &n in &mesh.bottom_nodes {
        prescribed[2 * n] = Some(0.0);
        prescribed[2 * n + 1] = Some(0.0);
    }
    for &n in &mesh.top_nodes {
        prescribed[2 * n] = Some(1.0);
        prescribed[2 * n + 1] = Some(0.0);
    }
    let free: Vec<usize> = (0..n_dofs).filter(|d| prescribed[*d].is_none()).collect();

    let mut u = vec![0.0; n_dofs];
    let mut report = CouponReport {
        displacement: Vec::new(),
        reaction: Vec::new(),
        monitor_history: Vec::new(),
        n_gauss_points: n_gp_total,
    };

    for step in 1..=cfg.n_steps {
        let drive = cfg.shear_displacement * step as f64 / cfg.n_steps as f64;
        for (d, p) in prescribed.iter().enumerate() {
            if let Some(scale) = p {
                u[d] = scale * drive;
            }
        }

        // macro Newton on the free DOFs
        let mut converged = false;
        let mut ref_norm = 0.0;
        for iter in 0..=MAX_ITER {
            let (f_int, k, _) = assemble_macro(&mesh, &mut materials, &u, true)?;
            let mut r_free = DVector::<f64>::zeros(free.len());
            for (k_f, &d) in free.iter().enumerate() {
                r_free[k_f] = f_int[d];
            }
            let norm = r_free.norm();
            if iter == 0 {
                ref_norm = norm;
            }
            if norm <= (1e-9 * ref_norm).max(1e-12) {
                converged = true;
                break;
            }
            if iter == MAX_ITER {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual: norm,
                    step,
                });
            }
            let k = k.expect("tangent requested");
            let mut k_ff = DMatrix::<f64>::zeros(free.len(), free.len());
            for (a, &da) in free.iter().enumerate() {
                for (b, &db) in free.iter().enumerate() {
                    k_ff[(a, b)] = k[(da, db)];
                }
            }
            let delta = k_ff
                .lu()
                .solve(&(-&r_free))
                .ok_or_else(|| Error::Singular("macro stiffness singular".into()))?;
            for (k_f, &d) in free.iter().enumerate() {
                u[d] += delta[k_f];
            }
        }
        debug_assert!(converged);

        // commit micro states at the converged strains and collect reactions
        commit_macro(&mesh, &mut materials, &u)?;
        let (f_int, _, _) = assemble_macro(&mesh, &mut materials, &u, false)?;
        let reaction: f64 = mesh.top_nodes.iter().map(|&n| f_int[2 * n]).sum();
        report.displacement.push(drive);
        report.reaction.push(reaction);
        let monitored = materials
            .get(cfg.monitor_gauss_point)
            .and_then(|m| m.reduced_state())
            .map(|s| (s.c.clone(), s.r.clone()))
            .unwrap_or_else(|| (DVector::zeros(0), Vec::new()));
        report.monitor_history.push(monitored);
    }
    Ok(report)
}

fn assemble_macro(
    mesh: &MacroMesh,
    materials: &mut [Box<dyn MacroMaterial + '_>],
    u: &[f64],
    with_tangent: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>, Vec<Vec<f64>>)> {
    let n_dofs = u.len();
    let mut f_int = vec![0.0; n_dofs];
    let mut k = if with_tangent {
        Some(DMatrix::<f64>::zeros(n_dofs, n_dofs))
    } else {
        None
    };
    let mut strains: Vec<Vec<f64>> = Vec::with_capacity(materials.len());
    for (eid, elem) in mesh.elements.iter().enumerate() {
        let mut ue = DVector::<f64>::zeros(8);
        for (a, &node) in elem.iter().enumerate() {
            ue[2 * a] = u[2 * node];
            ue[2 * a + 1] = u[2 * node + 1];
        }
        for (local, (b, w)) in mesh.gauss[eid].iter().enumerate() {
            let gp_id = 4 * eid + local;
            let strain = b * &ue;
            let eps = [strain[0], strain[1], strain[2]];
            let (sigma, tangent) = materials[gp_id].update(&eps)?;
            let s = DVector::from_column_slice(&sigma[..3]);
            let fe = b.transpose() * s * *w;
            for (a, &node) in elem.iter().enumerate() {
                f_int[2 * node] += fe[2 * a];
                f_int[2 * node + 1] += fe[2 * a + 1];
            }
            if let Some(kk) = k.as_mut() {
                let ct = DMatrix::from_fn(3, 3, |i, j| tangent[i][j]);
                let ke = b.transpose() * ct * b * *w;
                for (a, &na) in elem.iter().enumerate() {
                    for (bn, &nb) in elem.iter().enumerate() {
                        for ca in 0..2 {
                            for cb in 0..2 {
                                kk[(2 * na + ca, 2 * nb + cb)] +=
                                    ke[(2 * a + ca, 2 * bn + cb)];
                            }
                        }
                    }
                }
            }
            strains.push(eps.to_vec());
        }
    }
    Ok((f_int, k, strains))
}

fn commit_macro(
    mesh: &MacroMesh,
    materials: &mut [Box<dyn MacroMaterial + '_>],
    u: &[f64],
) -> Result<()> {
    for (eid, elem) in mesh.elements.iter().enumerate() {
        let mut ue = DVector::<f64>::zeros(8);
        for (a, &node) in elem.iter().enumerate() {
            ue[2 * a] = u[2 * node];
            ue[2 * a + 1] = u[2 * node + 1];
        }
        for (local, (b, _)) in mesh.gauss[eid].iter().enumerate() {
            let strain = b * &ue;
            materials[4 * eid + local].commit(&[strain[0], strain[1], strain[2]])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_displacement_zero_reaction() {
        let cfg = CouponConfig {
            shear_displacement: 0.0,
            n_steps: 2,
            ..Default::default()
        };
        let c = voigt::elasticity_matrix(4000.0, 0.3, crate::voigt::Dim::Two);
        let rep = run_coupon(&cfg, || Box::new(ElasticMacro { tensor: c })).unwrap();
        assert!(rep.reaction.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn elastic_coupon_reaction_scales_linearly() {
        let cfg = CouponConfig {
            nx: 4,
            ny: 2,
            shear_displacement: 0.01,
            n_steps: 4,
            ..Default::default()
        };
        let c = voigt::elasticity_matrix(4000.0, 0.3, crate::voigt::Dim::Two);
        let rep = run_coupon(&cfg, || Box::new(ElasticMacro { tensor: c })).unwrap();
        assert_eq!(rep.reaction.len(), 4);
        assert!(rep.reaction[3] > 0.0);
        for k in 0..4 {
            let expect = rep.reaction[3] * (k + 1) as f64 / 4.0;
            assert!((rep.reaction[k] - expect).abs() < 1e-9 * rep.reaction[3].abs());
        }
    }
}
