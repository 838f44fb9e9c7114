//! Experiment harness: desk-scale model builders, ROM construction, the
//! trajectory error metric, and the accuracy / cycle / customization /
//! speedup / coupon studies.

use crate::cubature::{select_cubature, CubatureRule};
use crate::error::{Error, Result};
use crate::hf::HfModel;
use crate::hpr::{build_reduced_operators, run_trajectory_reduced, ReducedOperators};
use crate::io::Curve;
use crate::material::PhaseMaterial;
use crate::mesh::{build_fiber_rve, build_layered_rve, FiberRveConfig, LayeredRveConfig, RveMesh};
use crate::reduction::{
    build_energy_basis, build_internal_basis, build_strain_basis, EnergyBasis, InternalVarBasis,
    StrainBasis,
};
use crate::sampling::{
    collect_snapshots, sqrt_weights, virgin_internal, SamplingPlan, SamplingStats, SnapshotSet,
};
use crate::voigt::Dim;
use std::collections::BTreeMap;
use std::time::Instant;

/// The validation macrostrain direction (Voigt xx, yy, zz, xy, yz, xz).
pub const VALIDATION_DIRECTION_3D: [f64; 6] = [-0.076, 0.748, 0.188, 0.539, 0.006, -0.329];

/// Validation direction for the given strain-space dimension: the 3D vector,
/// or its normalized in-plane restriction (xx, yy, xy) in 2D.
pub fn validation_direction(n_sigma: usize) -> Vec<f64> {
    match n_sigma {
        6 => VALIDATION_DIRECTION_3D.to_vec(),
        3 => {
            let v = [
                VALIDATION_DIRECTION_3D[0],
                VALIDATION_DIRECTION_3D[1],
                VALIDATION_DIRECTION_3D[3],
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.iter().map(|x| x / n).collect()
        }
        other => panic!("unsupported strain dimension {other}"),
    }
}

/// Monotone load schedule 0 -> chi_end in n equal increments.
pub fn monotone_schedule(chi_end: f64, n_steps: usize) -> Vec<f64> {
    (1..=n_steps)
        .map(|k| chi_end * k as f64 / n_steps as f64)
        .collect()
}

/// Cyclic schedule 0 -> chi_end -> 0 (2n steps, ending exactly at zero).
pub fn cyclic_schedule(chi_end: f64, n_steps: usize) -> Vec<f64> {
    let mut chis = monotone_schedule(chi_end, n_steps);
    chis.extend((0..n_steps).map(|k| chi_end * (n_steps - 1 - k) as f64 / n_steps as f64));
    chis
}

/// A desk-scale RVE with its phase materials.
pub struct DeskRve {
    pub mesh: RveMesh,
    pub materials: Vec<PhaseMaterial>,
}

/// Layered cross-ply analog (matrix / fiber / cohesive / interply phases).
pub fn model_a_desk(resolution: usize) -> Result<DeskRve> {
    let mesh = build_layered_rve(&LayeredRveConfig {
        dim: Dim::Two,
        nx: resolution,
        ny: resolution,
        nz: 4,
        plies: 2,
        fiber_fraction: 0.35,
        cohesive_fraction: 0.03,
        interply_fraction: 0.02,
    })?;
    let materials = vec![
        PhaseMaterial::damaging(3790.0, 0.37, 200.0, 220.0, 0.10, 0.01),
        PhaseMaterial::elastic(72_000.0, 0.25),
        PhaseMaterial::damaging(3790.0, 0.37, 100.0, 100.1, 0.01, 0.01),
        PhaseMaterial::damaging(3790.0, 0.37, 100.0, 100.1, 0.01, 0.01),
    ];
    Ok(DeskRve { mesh, materials })
}

/// Random unidirectional fiber analog (matrix / fiber phases, 60% fibers).
pub fn model_b_desk(resolution: usize, seed: u64) -> Result<DeskRve> {
    let mesh = build_fiber_rve(
        &FiberRveConfig {
            dim: Dim::Two,
            nx: resolution,
            ny: resolution,
            nz: 4,
            n_fibers: 4,
            volume_fraction: 0.60,
            min_gap: 0.05,
        },
        seed,
    )?;
    let materials = vec![
        PhaseMaterial::damaging(4000.0, 0.38, 60.0, 70.0, 0.335, 0.05),
        PhaseMaterial::elastic(231_000.0, 0.2),
    ];
    Ok(DeskRve { mesh, materials })
}

/// Offline reduction products of one sampling run.
pub struct Rom {
    pub strain_basis: StrainBasis,
    pub energy_basis: EnergyBasis,
    pub internal_basis: InternalVarBasis,
    pub stats: SamplingStats,
}

#[derive(Clone, Debug)]
pub struct RomOptions {
    /// Cap on inelastic strain modes kept in the basis.
    pub max_strain_modes: usize,
    /// Cap on energy modes (bounds the largest usable cubature rule).
    pub max_energy_modes: usize,
    pub internal_modes: usize,
}

impl Default for RomOptions {
    fn default() -> Self {
        RomOptions {
            max_strain_modes: 40,
            max_energy_modes: 300,
            internal_modes: 24,
        }
    }
}

/// POD bases from a snapshot set.
pub fn rom_from_snapshots(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    set: &SnapshotSet,
    stats: SamplingStats,
    opts: &RomOptions,
) -> Result<Rom> {
    let sw = sqrt_weights(mesh);
    let (elastic, inelastic) = set.split_elastic_inelastic();
    let strain_basis = build_strain_basis(
        &elastic.strain,
        &inelastic.strain,
        opts.max_strain_modes,
        &sw,
        mesh.n_sigma(),
    )?;
    let energy_basis = build_energy_basis(&inelastic.energy, opts.max_energy_modes, &sw);
    let virgin = virgin_internal(mesh, materials);
    let internal_basis = build_internal_basis(&set.internal, &virgin, opts.internal_modes);
    Ok(Rom {
        strain_basis,
        energy_basis,
        internal_basis,
        stats,
    })
}

/// Samples the plan and builds the ROM in one go.
pub fn build_rom(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    plan: &SamplingPlan,
    opts: &RomOptions,
) -> Result<(Rom, SnapshotSet)> {
    let (set, stats) = collect_snapshots(plan, mesh, materials)?;
    let rom = rom_from_snapshots(mesh, materials, &set, stats, opts)?;
    Ok((rom, set))
}

/// Cubature rule targeting `n_points` points: integrates the leading
/// `n_points - 1` energy modes (or as many as the basis holds) plus the
/// volume.
pub fn make_rule(mesh: &RveMesh, rom: &Rom, n_points: usize) -> Result<CubatureRule> {
    if n_points == 0 {
        return Err(Error::Config("rule needs at least one point".into()));
    }
    let n_phi = (n_points - 1).min(rom.energy_basis.n_modes());
    let modes = rom.energy_basis.modes.columns(0, n_phi).into_owned();
    let gw: Vec<f64> = mesh.gauss.iter().map(|g| g.weight).collect();
    select_cubature(&modes, &gw, mesh.volume)
}

/// Reduced operators for `n_modes` strain modes over the given rule.
pub fn make_operators(
    mesh: &RveMesh,
    rom: &Rom,
    n_modes: usize,
    rule: &CubatureRule,
    materials: &[PhaseMaterial],
) -> Result<ReducedOperators> {
    let n = n_modes.min(rom.strain_basis.n_modes());
    build_reduced_operators(mesh, &rom.strain_basis, n, rule, materials)
}

/// HF curve along eps(chi) = direction * chi.
pub fn hf_curve(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    direction: &[f64],
    chis: &[f64],
) -> Result<Curve> {
    let model = HfModel::new(mesh, materials)?;
    let mut curve = Curve {
        n_sigma: mesh.n_sigma(),
        ..Default::default()
    };
    model.run_schedule(direction, chis, |k, sol| {
        curve.push(chis[k], sol.macro_strain, sol.macro_stress, sol.max_damage());
    })?;
    Ok(curve)
}

/// Reduced curve along the same schedule.
pub fn reduced_curve(ops: &ReducedOperators, direction: &[f64], chis: &[f64]) -> Result<Curve> {
    let steps = run_trajectory_reduced(ops, direction, chis)?;
    let mut curve = Curve {
        n_sigma: ops.n_sigma,
        ..Default::default()
    };
    for s in &steps {
        curve.push(s.chi, s.macro_strain, s.macro_stress, s.max_damage);
    }
    Ok(curve)
}

/// Trajectory error: max over chi of |sigma_hf - sigma_r|_inf / |sigma_hf|_inf,
/// skipping chi = 0 where the metric is singular.
pub fn trajectory_error(hf: &Curve, reduced: &Curve) -> Result<f64> {
    if hf.len() != reduced.len() {
        return Err(Error::CurveAlignment);
    }
    let n = hf.n_sigma;
    let mut worst = 0.0f64;
    for k in 0..hf.len() {
        if (hf.chi[k] - reduced.chi[k]).abs() > 1e-12 * hf.chi[k].abs().max(1.0) {
            return Err(Error::CurveAlignment);
        }
        if hf.chi[k].abs() < 1e-14 {
            continue;
        }
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..n {
            num = num.max((hf.stress[k][i] - reduced.stress[k][i]).abs());
            den = den.max(hf.stress[k][i].abs());
        }
        if den > 0.0 {
            worst = worst.max(num / den);
        } else if num > 0.0 {
            return Err(Error::ZeroReference);
        }
    }
    Ok(worst)
}

/// One sweep combination result. `error` is None when the combination failed.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub n_modes: usize,
    pub n_points: usize,
    pub error: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Full-quadrature ROM error per mode count (the asymptote).
    pub rom_errors: Vec<(usize, f64)>,
    pub hf_seconds: f64,
}

impl SweepReport {
    pub fn error_at(&self, n_modes: usize, n_points: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.n_modes == n_modes && e.n_points == n_points)
            .and_then(|e| e.error)
    }

    pub fn rom_error_at(&self, n_modes: usize) -> Option<f64> {
        self.rom_errors
            .iter()
            .find(|(m, _)| *m == n_modes)
            .map(|(_, e)| *e)
    }
}

/// Accuracy sweep over (modes x points) on the validation trajectory,
/// including the ROM asymptotes.
pub fn sweep(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    rom: &Rom,
    modes: &[usize],
    points: &[usize],
    direction: &[f64],
    chi_end: f64,
    n_steps: usize,
) -> Result<SweepReport> {
    let chis = monotone_schedule(chi_end, n_steps);
    let t0 = Instant::now();
    let hf = hf_curve(mesh, materials, direction, &chis)?;
    let hf_seconds = t0.elapsed().as_secs_f64();

    let mut report = SweepReport {
        hf_seconds,
        ..Default::default()
    };
    let gw: Vec<f64> = mesh.gauss.iter().map(|g| g.weight).collect();
    let full = CubatureRule::full_gauss(&gw, mesh.volume);
    for &m in modes {
        let ops = make_operators(mesh, rom, m, &full, materials)?;
        let curve = reduced_curve(&ops, direction, &chis)?;
        report.rom_errors.push((m, trajectory_error(&hf, &curve)?));
    }

    let mut rules: BTreeMap<usize, CubatureRule> = BTreeMap::new();
    for &p in points {
        match make_rule(mesh, rom, p) {
            Ok(rule) => {
                rules.insert(p, rule);
            }
            Err(_) => continue, // recorded as failed combinations below
        }
    }
    for &m in modes {
        for &p in points {
            let t = Instant::now();
            let error = match rules.get(&p) {
                Some(rule) => make_operators(mesh, rom, m, rule, materials)
                    .and_then(|ops| reduced_curve(&ops, direction, &chis))
                    .and_then(|c| trajectory_error(&hf, &c))
                    .ok(),
                None => None,
            };
            report.entries.push(SweepEntry {
                n_modes: m,
                n_points: p,
                error,
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CycleReport {
    pub hf: Curve,
    pub reduced: Curve,
    pub error: f64,
    pub max_kkt_violation: f64,
}

/// Load-unload cycle on the validation direction: the reduced model is
/// trained on monotone data only, the unloading branch probes completeness.
pub fn cycle_test(
    mesh: &RveMesh,
    materials: &[PhaseMaterial],
    rom: &Rom,
    n_modes: usize,
    n_points: usize,
    direction: &[f64],
    chi_end: f64,
    n_steps: usize,
) -> Result<CycleReport> {
    let chis = cyclic_schedule(chi_end, n_steps);
    let hf = hf_curve(mesh, materials, direction, &chis)?;
    let rule = make_rule(mesh, rom, n_points)?;
    let ops = make_operators(mesh, rom, n_modes, &rule, materials)?;

    // run manually to track the loading-unloading conditions per step
    let mut state = ops.virgin_state();
    let mut curve = Curve {
        n_sigma: ops.n_sigma,
        ..Default::default()
    };
    let mut max_kkt = 0.0f64;
    for (k, &chi) in chis.iter().enumerate() {
        let eps: Vec<f64> = direction[..ops.n_sigma].iter().map(|d| d * chi).collect();
        let before = state.clone();
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
        max_kkt = max_kkt.max(ops.kkt_violation(&eps, &before, &state));
        let mut strain = [0.0; 6];
        strain[..ops.n_sigma].copy_from_slice(&eps);
        curve.push(chi, strain, sol.macro_stress, sol.max_damage);
    }
    let error = trajectory_error(&hf, &curve)?;
    Ok(CycleReport {
        hf,
        reduced: curve,
        error,
        max_kkt_violation: max_kkt,
    })
}

#[derive(Clone, Debug)]
pub struct CustomizationReport {
    pub hf: Curve,
    pub reduced: Curve,
    pub error: f64,
}

/// Customization: reuse the bases built for the original materials with
/// overridden phase parameters, against a fresh HF run with the same
/// overrides.
pub fn customization_test(
    mesh: &RveMesh,
    rom: &Rom,
    overridden: &[PhaseMaterial],
    n_modes: usize,
    n_points: usize,
    direction: &[f64],
    chi_end: f64,
    n_steps: usize,
    cyclic: bool,
) -> Result<CustomizationReport> {
    let chis = if cyclic {
        cyclic_schedule(chi_end, n_steps)
    } else {
        monotone_schedule(chi_end, n_steps)
    };
    let hf = hf_curve(mesh, overridden, direction, &chis)?;
    let rule = make_rule(mesh, rom, n_points)?;
    let ops = make_operators(mesh, rom, n_modes, &rule, overridden)?;
    let reduced = reduced_curve(&ops, direction, &chis)?;
    let error = trajectory_error(&hf, &reduced)?;
    Ok(CustomizationReport { hf, reduced, error })
}

#[derive(Clone, Debug)]
pub struct SpeedupRow {
    pub resolution: usize,
    pub n_gauss: usize,
    pub hf_seconds: f64,
    pub reduced_seconds: f64,
    pub speedup: f64,
}

/// Times one HF trajectory against one reduced trajectory at fixed
/// (modes, points) across meshes of growing size. The reduced model quality
/// is irrelevant here, so a light sampling plan is used per size.
pub fn speedup_study(
    sizes: &[usize],
    seed: u64,
    n_dirs: usize,
    n_modes: usize,
    n_points: usize,
    chi_end: f64,
    n_steps: usize,
) -> Result<Vec<SpeedupRow>> {
    let direction = validation_direction(3);
    let chis = monotone_schedule(chi_end, n_steps);
    let mut rows = Vec::new();
    for &res in sizes {
        let desk = model_b_desk(res, seed)?;
        let plan = SamplingPlan {
            n_dirs,
            n_steps: 10,
            chi_end,
            seed,
        };
        let (rom, _) = build_rom(&desk.mesh, &desk.materials, &plan, &RomOptions::default())?;
        let rule = make_rule(&desk.mesh, &rom, n_points)?;
        let ops = make_operators(&desk.mesh, &rom, n_modes, &rule, &desk.materials)?;

        let t0 = Instant::now();
        let _ = hf_curve(&desk.mesh, &desk.materials, &direction, &chis)?;
        let hf_seconds = t0.elapsed().as_secs_f64();

        let mut reduced_seconds = f64::INFINITY;
        for _ in 0..3 {
            let t1 = Instant::now();
            let _ = reduced_curve(&ops, &direction, &chis)?;
            reduced_seconds = reduced_seconds.min(t1.elapsed().as_secs_f64());
        }
        rows.push(SpeedupRow {
            resolution: res,
            n_gauss: desk.mesh.n_gauss(),
            hf_seconds,
            reduced_seconds,
            speedup: hf_seconds / reduced_seconds,
        });
    }
    Ok(rows)
}
