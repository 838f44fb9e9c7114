//! Offline sampling: hypersphere strain directions, trajectory execution and
//! snapshot matrix assembly.
//!
//! A snapshot column holds the strain fluctuation, the free energy density
//! and the internal variable at every Gauss point of one converged step.
//! Strain and energy rows are scaled by sqrt(Gauss weight) so Euclidean inner
//! products of columns equal L2 inner products of the underlying fields;
//! internal-variable rows are kept raw.

use crate::error::{Error, Result};
use crate::hf::HfModel;
use crate::material::PhaseMaterial;
use crate::mesh::RveMesh;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Offline sampling plan: `n_dirs` unit strain directions, each loaded
/// proportionally in `n_steps` equal increments up to `chi_end`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_dirs: usize,
    pub n_steps: usize,
    pub chi_end: f64,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            n_dirs: 100,
            n_steps: 40,
            chi_end: 0.02,
            seed: 0,
        }
    }
}

/// Uniform directions on the unit hypersphere: seeded isotropic Gaussian
/// samples, normalized. Deterministic per seed.
pub fn hypersphere_directions(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim == 3 || dim == 6, "strain space dimension must be 3 or 6");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Vec::with_capacity(n);
    while dirs.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        dirs.push(v);
    }
    dirs
}

/// Provenance of one snapshot column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnTag {
    pub trajectory: usize,
    pub step: usize,
    /// A column is inelastic iff any Gauss point carries damage at that step.
    pub inelastic: bool,
}

/// Snapshot matrices over (Gauss points x steps x trajectories).
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub n_gp: usize,
    pub n_sigma: usize,
    /// sqrt(weight)-scaled strain fluctuations, (n_sigma * n_gp) x columns.
    pub strain: DMatrix<f64>,
    /// sqrt(weight)-scaled free energy densities, n_gp x columns.
    pub energy: DMatrix<f64>,
    /// Raw internal variable, n_gp x columns.
    pub internal: DMatrix<f64>,
    pub tags: Vec<ColumnTag>,
}

#[derive(Clone, Debug, Default)]
pub struct SamplingStats {
    pub trajectories_run: usize,
    pub trajectories_failed: usize,
    pub inelastic_columns: usize,
}

impl SnapshotSet {
    pub fn n_columns(&self) -> usize {
        self.tags.len()
    }

    /// Partition into (elastic, inelastic) by column tag.
    pub fn split_elastic_inelastic(&self) -> (SnapshotSet, SnapshotSet) {
        let pick = |want: bool| -> SnapshotSet {
            let cols: Vec<usize> = self
                .tags
                .iter()
                .enumerate()
                .filter(|(_, t)| t.inelastic == want)
                .map(|(i, _)| i)
                .collect();
            SnapshotSet {
                n_gp: self.n_gp,
                n_sigma: self.n_sigma,
                strain: self.strain.select_columns(&cols),
                energy: self.energy.select_columns(&cols),
                internal: self.internal.select_columns(&cols),
                tags: cols.iter().map(|&i| self.tags[i]).collect(),
            }
        };
        (pick(false), pick(true))
    }
}

struct StepRecord {
    strain_fluct: Vec<f64>,
    energy: Vec<f64>,
    internal: Vec<f64>,
    inelastic: bool,
}

/// Runs the whole plan and assembles the snapshot matrices. Trajectories run
/// in parallel over the immutable mesh and are merged in plan order. Failed
/// trajectories are skipped; more than 10% failures aborts.
pub fn collect_snapshots(
    plan: &SamplingPlan,
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
) -> Result<(SnapshotSet, SamplingStats)> {
    let model = HfModel::new(mesh, materials)?;
    let n_sigma = mesh.n_sigma();
    let dirs = hypersphere_directions(plan.n_dirs, n_sigma, plan.seed);
    let chis: Vec<f64> = (1..=plan.n_steps)
        .map(|k| plan.chi_end * k as f64 / plan.n_steps as f64)
        .collect();

    let results: Vec<Result<Vec<StepRecord>>> = dirs
        .par_iter()
        .map(|dir| {
            let mut records = Vec::with_capacity(plan.n_steps);
            model.run_schedule(dir, &chis, |_, sol| {
                let mut strain_fluct = Vec::with_capacity(n_sigma * mesh.n_gauss());
                for e in &sol.micro_strain {
                    for i in 0..n_sigma {
                        strain_fluct.push(e[i] - sol.macro_strain[i]);
                    }
                }
                records.push(StepRecord {
                    strain_fluct,
                    energy: sol.energy.clone(),
                    internal: sol.r.clone(),
                    inelastic: sol.max_damage() > 0.0,
                });
            })?;
            Ok(records)
        })
        .collect();

    let mut stats = SamplingStats::default();
    let mut kept: Vec<(usize, Vec<StepRecord>)> = Vec::new();
    for (t, res) in results.into_iter().enumerate() {
        stats.trajectories_run += 1;
        match res {
            Ok(records) => kept.push((t, records)),
            Err(_) => stats.trajectories_failed += 1,
        }
    }
    if stats.trajectories_failed * 10 > plan.n_dirs {
        return Err(Error::SamplingFailed {
            failed: stats.trajectories_failed,
            total: plan.n_dirs,
        });
    }

    let n_gp = mesh.n_gauss();
    let n_cols: usize = kept.iter().map(|(_, r)| r.len()).sum();
    let sqrt_w: Vec<f64> = mesh.gauss.iter().map(|g| g.weight.sqrt()).collect();

    let mut strain = DMatrix::<f64>::zeros(n_sigma * n_gp, n_cols);
    let mut energy = DMatrix::<f64>::zeros(n_gp, n_cols);
    let mut internal = DMatrix::<f64>::zeros(n_gp, n_cols);
    let mut tags = Vec::with_capacity(n_cols);
    let mut col = 0;
    for (t, records) in kept {
        for (step, rec) in records.into_iter().enumerate() {
            for g in 0..n_gp {
                let w = sqrt_w[g];
                for i in 0..n_sigma {
                    strain[(n_sigma * g + i, col)] = w * rec.strain_fluct[n_sigma * g + i];
                }
                energy[(g, col)] = w * rec.energy[g];
                internal[(g, col)] = rec.internal[g];
            }
            if rec.inelastic {
                stats.inelastic_columns += 1;
            }
            tags.push(ColumnTag {
                trajectory: t,
                step,
                inelastic: rec.inelastic,
            });
            col += 1;
        }
    }

    Ok((
        SnapshotSet {
            n_gp,
            n_sigma,
            strain,
            energy,
            internal,
            tags,
        },
        stats,
    ))
}

/// Virgin internal-variable vector (per-gp r0 of the point's phase).
pub fn virgin_internal(mesh: &RveMesh, materials: &[PhaseMaterial]) -> Vec<f64> {
    let params: Vec<f64> = materials
        .iter()
        .map(|m| m.damage_params(mesh.dim).r0)
        .collect();
    mesh.gauss.iter().map(|g| params[g.phase]).collect()
}

/// The sqrt-weight row scaling shared by strain and energy snapshots.
pub fn sqrt_weights(mesh: &RveMesh) -> Vec<f64> {
    mesh.gauss.iter().map(|g| g.weight.sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_fiber_rve, FiberRveConfig};
    use approx::assert_relative_eq;

    fn small_mesh() -> RveMesh {
        build_fiber_rve(
            &FiberRveConfig {
                nx: 8,
                ny: 8,
                ..Default::default()
            },
            7,
        )
        .unwrap()
    }

    fn model_b_materials() -> Vec<PhaseMaterial> {
        vec![
            PhaseMaterial::damaging(4000.0, 0.38, 60.0, 70.0, 0.335, 0.05),
            PhaseMaterial::elastic(231_000.0, 0.2),
        ]
    }

    #[test]
    fn directions_have_unit_norm() {
        for dim in [3usize, 6] {
            for d in hypersphere_directions(50, dim, 11) {
                let n: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn directions_deterministic_per_seed() {
        let a = hypersphere_directions(5, 6, 42);
        let b = hypersphere_directions(5, 6, 42);
        assert_eq!(a, b);
        let c = hypersphere_directions(5, 6, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn directions_isotropy_smoke() {
        // the empirical mean of n uniform sphere points concentrates near 0
        let dirs = hypersphere_directions(1000, 6, 3);
        let mut mean = [0.0f64; 6];
        for d in &dirs {
            for i in 0..6 {
                mean[i] += d[i] / 1000.0;
            }
        }
        let norm: f64 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 0.1, "mean norm {norm}");
    }

    #[test]
    fn zero_load_plan_is_all_elastic() {
        let mesh = small_mesh();
        let plan = SamplingPlan {
            n_dirs: 3,
            n_steps: 4,
            chi_end: 0.0,
            seed: 1,
        };
        let (set, stats) = collect_snapshots(&plan, &mesh, &model_b_materials()).unwrap();
        assert_eq!(set.n_columns(), 12);
        assert_eq!(stats.inelastic_columns, 0);
        assert!(set.tags.iter().all(|t| !t.inelastic));
        // internal variable stays at the virgin value
        let virgin = virgin_internal(&mesh, &model_b_materials());
        for c in 0..set.n_columns() {
            for g in 0..set.n_gp {
                assert_eq!(set.internal[(g, c)], virgin[g]);
            }
        }
    }

    #[test]
    fn default_plan_mixes_elastic_and_inelastic() {
        let mesh = small_mesh();
        let plan = SamplingPlan {
            n_dirs: 6,
            n_steps: 8,
            chi_end: 0.02,
            seed: 5,
        };
        let (set, stats) = collect_snapshots(&plan, &mesh, &model_b_materials()).unwrap();
        assert!(stats.inelastic_columns > 0);
        assert!(stats.inelastic_columns < set.n_columns());
    }

    #[test]
    fn weighted_column_inner_product_is_field_quadrature() {
        let mesh = small_mesh();
        let plan = SamplingPlan {
            n_dirs: 2,
            n_steps: 3,
            chi_end: 0.02,
            seed: 2,
        };
        let (set, _) = collect_snapshots(&plan, &mesh, &model_b_materials()).unwrap();
        // undo the sqrt(w) scaling to recover the raw fields, then quadrature
        let sw = sqrt_weights(&mesh);
        let (a, b) = (1usize, 4usize);
        let mut quad = 0.0;
        for g in 0..set.n_gp {
            let mut dot = 0.0;
            for i in 0..set.n_sigma {
                let fa = set.strain[(set.n_sigma * g + i, a)] / sw[g];
                let fb = set.strain[(set.n_sigma * g + i, b)] / sw[g];
                dot += fa * fb;
            }
            quad += mesh.gauss[g].weight * dot;
        }
        let euclid = set.strain.column(a).dot(&set.strain.column(b));
        assert_relative_eq!(euclid, quad, max_relative = 1e-12);
    }

    #[test]
    fn split_partitions_and_preserves_columns() {
        let mesh = small_mesh();
        let plan = SamplingPlan {
            n_dirs: 4,
            n_steps: 6,
            chi_end: 0.02,
            seed: 9,
        };
        let (set, _) = collect_snapshots(&plan, &mesh, &model_b_materials()).unwrap();
        let (el, inel) = set.split_elastic_inelastic();
        assert_eq!(el.n_columns() + inel.n_columns(), set.n_columns());
        assert!(el.tags.iter().all(|t| !t.inelastic));
        assert!(inel.tags.iter().all(|t| t.inelastic));
        // round trip: the union of tags is the original multiset
        let mut all: Vec<_> = el.tags.iter().chain(inel.tags.iter()).cloned().collect();
        all.sort_by_key(|t| (t.trajectory, t.step));
        let mut orig = set.tags.clone();
        orig.sort_by_key(|t| (t.trajectory, t.step));
        assert_eq!(all, orig);
    }

    #[test]
    fn snapshots_reproducible_for_fixed_seed() {
        let mesh = small_mesh();
        let plan = SamplingPlan {
            n_dirs: 3,
            n_steps: 4,
            chi_end: 0.02,
            seed: 31,
        };
        let mats = model_b_materials();
        let (a, _) = collect_snapshots(&plan, &mesh, &mats).unwrap();
        let (b, _) = collect_snapshots(&plan, &mesh, &mats).unwrap();
        assert_eq!(a.strain, b.strain);
        assert_eq!(a.energy, b.energy);
        assert_eq!(a.internal, b.internal);
    }

    #[test]
    fn elastic_strain_columns_span_at_most_n_sigma() {
        // on a linear-elastic cell the fluctuation is linear in the macro
        // strain, so elastic snapshots have rank <= n_sigma
        let mesh = small_mesh();
        let mats = vec![
            PhaseMaterial::elastic(4000.0, 0.38),
            PhaseMaterial::elastic(231_000.0, 0.2),
        ];
        let plan = SamplingPlan {
            n_dirs: 8,
            n_steps: 2,
            chi_end: 0.01,
            seed: 4,
        };
        let (set, _) = collect_snapshots(&plan, &mesh, &mats).unwrap();
        let svd = set.strain.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * smax)
            .count();
        assert!(rank <= 3, "rank {rank}");
    }
}
