//! File formats: binary snapshot/basis matrices, RVE configuration files,
//! stress-strain curve CSVs, cubature rule text, ROM manifests and SVG plots.
//!
//! Binary matrix format: magic `HPRSNAP1`, u32 rows, u32 cols, u8 kind, then
//! row-major little-endian f64 payload.

use crate::error::{Error, Result};
use crate::mesh::{
    build_fiber_rve, build_layered_rve, FiberRveConfig, LayeredRveConfig, RveMesh,
};
use crate::material::PhaseMaterial;
use crate::sampling::{ColumnTag, SamplingPlan};
use crate::voigt::{Dim, VoigtVec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MATRIX_MAGIC: &[u8; 8] = b"HPRSNAP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    StrainSnapshots = 0,
    EnergySnapshots = 1,
    InternalSnapshots = 2,
    StrainBasis = 3,
    EnergyBasis = 4,
    InternalBasis = 5,
}

impl MatrixKind {
    fn from_u8(v: u8) -> Result<MatrixKind> {
        Ok(match v {
            0 => MatrixKind::StrainSnapshots,
            1 => MatrixKind::EnergySnapshots,
            2 => MatrixKind::InternalSnapshots,
            3 => MatrixKind::StrainBasis,
            4 => MatrixKind::EnergyBasis,
            5 => MatrixKind::InternalBasis,
            other => return Err(Error::Format(format!("unknown matrix kind {other}"))),
        })
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, kind: MatrixKind) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, MatrixKind)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format("bad matrix magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let kind = MatrixKind::from_u8(b1[0])?;
    let mut data = vec![0.0f64; rows * cols];
    let mut b8 = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    Ok((
        DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j]),
        kind,
    ))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    Ok(format!("{:x}", hasher.finalize()))
}

/// Column tag sidecar: one `trajectory,step,tag` line per snapshot column.
pub fn write_tags(path: &Path, tags: &[ColumnTag]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "trajectory,step,regime")?;
    for t in tags {
        writeln!(
            w,
            "{},{},{}",
            t.trajectory,
            t.step,
            if t.inelastic { "inelastic" } else { "elastic" }
        )?;
    }
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<Vec<ColumnTag>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut tags = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("bad tag line: {line}")));
        }
        tags.push(ColumnTag {
            trajectory: parts[0]
                .parse()
                .map_err(|_| Error::Format("bad trajectory id".into()))?,
            step: parts[1]
                .parse()
                .map_err(|_| Error::Format("bad step".into()))?,
            inelastic: parts[2] == "inelastic",
        });
    }
    Ok(tags)
}

/// Cubature rule text: header line with the selection metadata, then one
/// `gp_index weight` line per point.
pub fn write_rule(path: &Path, rule: &crate::cubature::CubatureRule) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "# n_phi={} volume={:.16e} residual={:.16e}",
        rule.n_energy_modes, rule.volume, rule.residual
    )?;
    for (&i, &wgt) in rule.indices.iter().zip(rule.weights.iter()) {
        writeln!(w, "{i} {wgt:.16e}")?;
    }
    Ok(())
}

pub fn read_rule(path: &Path) -> Result<crate::cubature::CubatureRule> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty rule file".into()))??;
    let mut n_phi = 0usize;
    let mut volume = 0.0f64;
    let mut residual = 0.0f64;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("n_phi=") {
            n_phi = v.parse().map_err(|_| Error::Format("bad n_phi".into()))?;
        } else if let Some(v) = tok.strip_prefix("volume=") {
            volume = v.parse().map_err(|_| Error::Format("bad volume".into()))?;
        } else if let Some(v) = tok.strip_prefix("residual=") {
            residual = v.parse().map_err(|_| Error::Format("bad residual".into()))?;
        }
    }
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let i: usize = it
            .next()
            .ok_or_else(|| Error::Format("bad rule line".into()))?
            .parse()
            .map_err(|_| Error::Format("bad gp index".into()))?;
        let w: f64 = it
            .next()
            .ok_or_else(|| Error::Format("bad rule line".into()))?
            .parse()
            .map_err(|_| Error::Format("bad weight".into()))?;
        indices.push(i);
        weights.push(w);
    }
    Ok(crate::cubature::CubatureRule {
        indices,
        weights,
        n_energy_modes: n_phi,
        volume,
        residual,
    })
}

/// ROM manifest: basis sizes plus the snapshot file hashes they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RomManifest {
    pub n_elastic: usize,
    pub n_inelastic: usize,
    pub n_phi: usize,
    pub n_internal: usize,
    pub hashes: BTreeMap<String, String>,
}

pub fn write_manifest(path: &Path, m: &RomManifest) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "n_elastic={}", m.n_elastic)?;
    writeln!(w, "n_inelastic={}", m.n_inelastic)?;
    writeln!(w, "n_phi={}", m.n_phi)?;
    writeln!(w, "n_internal={}", m.n_internal)?;
    for (k, v) in &m.hashes {
        writeln!(w, "sha256_{k}={v}")?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RomManifest> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut m = RomManifest::default();
    for line in r.lines() {
        let line = line?;
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k {
            "n_elastic" => m.n_elastic = v.parse().unwrap_or(0),
            "n_inelastic" => m.n_inelastic = v.parse().unwrap_or(0),
            "n_phi" => m.n_phi = v.parse().unwrap_or(0),
            "n_internal" => m.n_internal = v.parse().unwrap_or(0),
            other => {
                if let Some(name) = other.strip_prefix("sha256_") {
                    m.hashes.insert(name.to_string(), v.to_string());
                }
            }
        }
    }
    Ok(m)
}

/// A homogenized stress-strain curve sampled along a load schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curve {
    pub n_sigma: usize,
    pub chi: Vec<f64>,
    pub strain: Vec<VoigtVec>,
    pub stress: Vec<VoigtVec>,
    pub max_damage: Vec<f64>,
}

impl Curve {
    pub fn push(&mut self, chi: f64, strain: VoigtVec, stress: VoigtVec, max_damage: f64) {
        self.chi.push(chi);
        self.strain.push(strain);
        self.stress.push(stress);
        self.max_damage.push(max_damage);
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let comp = ["xx", "yy", "zz", "xy", "yz", "xz"];
        let mut header = vec!["chi".to_string()];
        for c in comp.iter().take(self.n_sigma) {
            header.push(format!("eps_{c}"));
        }
        for c in comp2(self.n_sigma) {
            header.push(format!("sig_{c}"));
        }
        header.push("max_damage".to_string());
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut rec = vec![format!("{:.16e}", self.chi[k])];
            for i in 0..self.n_sigma {
                rec.push(format!("{:.16e}", self.strain[k][i]));
            }
            for i in 0..self.n_sigma {
                rec.push(format!("{:.16e}", self.stress[k][i]));
            }
            rec.push(format!("{:.16e}", self.max_damage[k]));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Curve> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = r.headers().map_err(csv_err)?.clone();
        let n_sigma = headers.iter().filter(|h| h.starts_with("eps_")).count();
        if n_sigma != 3 && n_sigma != 6 {
            return Err(Error::Format(format!("bad curve header: {headers:?}")));
        }
        let mut curve = Curve {
            n_sigma,
            ..Default::default()
        };
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let get = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Format("short record".into()))?
                    .parse()
                    .map_err(|_| Error::Format("bad float".into()))
            };
            let chi = get(0)?;
            let mut strain = [0.0; 6];
            let mut stress = [0.0; 6];
            for i in 0..n_sigma {
                strain[i] = get(1 + i)?;
                stress[i] = get(1 + n_sigma + i)?;
            }
            let md = get(1 + 2 * n_sigma)?;
            curve.push(chi, strain, stress, md);
        }
        Ok(curve)
    }
}

fn comp2(n_sigma: usize) -> Vec<&'static str> {
    let comp = ["xx", "yy", "zz", "xy", "yz", "xz"];
    match n_sigma {
        3 => vec![comp[0], comp[1], comp[3]],
        _ => comp.to_vec(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Per-gp scalar field export: `gp,x,y[,z],value` plus per-element means.
pub fn write_field_csv(
    path: &Path,
    mesh: &RveMesh,
    values: &[f64],
    value_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let three_d = mesh.dim == Dim::Three;
    let mut header = vec!["gp", "x", "y"];
    if three_d {
        header.push("z");
    }
    header.push(value_name);
    w.write_record(&header).map_err(csv_err)?;
    for (g, gp) in mesh.gauss.iter().enumerate() {
        let mut rec = vec![
            g.to_string(),
            format!("{:.9e}", gp.position[0]),
            format!("{:.9e}", gp.position[1]),
        ];
        if three_d {
            rec.push(format!("{:.9e}", gp.position[2]));
        }
        rec.push(format!("{:.16e}", values[g]));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn element_means(mesh: &RveMesh, values: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; mesh.elements.len()];
    let mut wsum = vec![0.0; mesh.elements.len()];
    for (g, gp) in mesh.gauss.iter().enumerate() {
        sums[gp.element] += gp.weight * values[g];
        wsum[gp.element] += gp.weight;
    }
    sums.iter().zip(wsum.iter()).map(|(s, w)| s / w).collect()
}

// ---------------------------------------------------------------------------
// configuration files
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeometryConfig {
    Layered {
        dimension: usize,
        resolution: Vec<usize>,
        plies: usize,
        fiber_fraction: f64,
        #[serde(default)]
        cohesive_fraction: f64,
        #[serde(default)]
        interply_fraction: f64,
    },
    Fiber {
        dimension: usize,
        resolution: Vec<usize>,
        n_fibers: usize,
        volume_fraction: f64,
        #[serde(default = "default_min_gap")]
        min_gap: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_min_gap() -> f64 {
    0.05
}

impl GeometryConfig {
    pub fn dim(&self) -> Result<Dim> {
        let d = match self {
            GeometryConfig::Layered { dimension, .. } => *dimension,
            GeometryConfig::Fiber { dimension, .. } => *dimension,
        };
        Dim::from_n_dim(d).ok_or_else(|| Error::Config(format!("bad dimension {d}")))
    }

    pub fn phase_names(&self) -> Vec<&'static str> {
        match self {
            GeometryConfig::Layered { .. } => vec!["matrix", "fiber", "cohesive", "interply"],
            GeometryConfig::Fiber { .. } => vec!["matrix", "fiber"],
        }
    }

    pub fn build_mesh(&self) -> Result<RveMesh> {
        let dim = self.dim()?;
        let res = |r: &Vec<usize>, i: usize| r.get(i).copied().unwrap_or(4);
        match self {
            GeometryConfig::Layered {
                resolution,
                plies,
                fiber_fraction,
                cohesive_fraction,
                interply_fraction,
                ..
            } => build_layered_rve(&LayeredRveConfig {
                dim,
                nx: res(resolution, 0),
                ny: res(resolution, 1),
                nz: res(resolution, 2),
                plies: *plies,
                fiber_fraction: *fiber_fraction,
                cohesive_fraction: *cohesive_fraction,
                interply_fraction: *interply_fraction,
            }),
            GeometryConfig::Fiber {
                resolution,
                n_fibers,
                volume_fraction,
                min_gap,
                seed,
                ..
            } => build_fiber_rve(
                &FiberRveConfig {
                    dim,
                    nx: res(resolution, 0),
                    ny: res(resolution, 1),
                    nz: res(resolution, 2),
                    n_fibers: *n_fibers,
                    volume_fraction: *volume_fraction,
                    min_gap: *min_gap,
                },
                *seed,
            ),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub modes: Vec<usize>,
    pub points: Vec<usize>,
    #[serde(default = "default_internal_modes")]
    pub internal_modes: usize,
}

fn default_internal_modes() -> usize {
    24
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            modes: vec![5, 10, 20],
            points: vec![30, 60, 120, 240],
            internal_modes: 24,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Unit macro strain direction; defaults to the built-in validation
    /// direction of the strain space dimension.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_validation_steps")]
    pub n_steps: usize,
}

fn default_validation_steps() -> usize {
    40
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            direction: None,
            n_steps: 40,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouponConfig {
    #[serde(default = "default_coupon_nx")]
    pub nx: usize,
    #[serde(default = "default_coupon_ny")]
    pub ny: usize,
    #[serde(default = "default_coupon_length")]
    pub length: f64,
    #[serde(default = "default_coupon_height")]
    pub height: f64,
    #[serde(default = "default_coupon_displacement")]
    pub shear_displacement: f64,
    #[serde(default = "default_coupon_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub monitor_gauss_point: usize,
}

fn default_coupon_nx() -> usize {
    8
}
fn default_coupon_ny() -> usize {
    2
}
fn default_coupon_length() -> f64 {
    4.0
}
fn default_coupon_height() -> f64 {
    1.0
}
fn default_coupon_displacement() -> f64 {
    0.02
}
fn default_coupon_steps() -> usize {
    10
}

impl Default for CouponConfig {
    fn default() -> Self {
        CouponConfig {
            nx: 8,
            ny: 2,
            length: 4.0,
            height: 1.0,
            shear_displacement: 0.02,
            n_steps: 10,
            monitor_gauss_point: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeedupConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "default_speedup_dirs")]
    pub n_dirs: usize,
    #[serde(default = "default_speedup_modes")]
    pub modes: usize,
    #[serde(default = "default_speedup_points")]
    pub points: usize,
}

fn default_speedup_dirs() -> usize {
    8
}
fn default_speedup_modes() -> usize {
    10
}
fn default_speedup_points() -> usize {
    40
}

impl Default for SpeedupConfig {
    fn default() -> Self {
        SpeedupConfig {
            sizes: vec![12, 24, 48],
            n_dirs: 8,
            modes: 10,
            points: 40,
        }
    }
}

/// Top-level experiment configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub material: BTreeMap<String, PhaseMaterial>,
    #[serde(default)]
    pub sampling: Option<SamplingPlan>,
    #[serde(default)]
    pub reduction: Option<ReductionConfig>,
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
    /// Per-phase material overrides for customization runs.
    #[serde(default)]
    pub customization: Option<BTreeMap<String, PhaseMaterial>>,
    #[serde(default)]
    pub coupon: Option<CouponConfig>,
    #[serde(default)]
    pub speedup: Option<SpeedupConfig>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for name in self.geometry.phase_names() {
            let m = self
                .material
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing material block `{name}`")))?;
            m.validate()?;
        }
        if let Some(r) = &self.reduction {
            if r.modes.is_empty() || r.points.is_empty() {
                return Err(Error::Config("sweep lists must be nonempty".into()));
            }
        }
        Ok(())
    }

    /// Materials ordered by phase id.
    pub fn materials(&self) -> Vec<PhaseMaterial> {
        self.geometry
            .phase_names()
            .iter()
            .map(|n| self.material[*n].clone())
            .collect()
    }

    /// Materials with the customization overrides applied.
    pub fn customized_materials(&self) -> Result<Vec<PhaseMaterial>> {
        let overrides = self
            .customization
            .as_ref()
            .ok_or_else(|| Error::Config("no [customization] block".into()))?;
        let names = self.geometry.phase_names();
        for k in overrides.keys() {
            if !names.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown phase `{k}` in overrides")));
            }
        }
        Ok(names
            .iter()
            .map(|n| {
                overrides
                    .get(*n)
                    .cloned()
                    .unwrap_or_else(|| self.material[*n].clone())
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Minimal polyline plot with axes, ticks and a legend. `log_y` plots the
/// decimal logarithm (non-positive values are dropped).
pub fn write_line_plot(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    log_y: bool,
) -> Result<()> {
    let (w, h) = (800.0, 560.0);
    let (ml, mr, mt, mb) = (80.0, 30.0, 50.0, 70.0);
    let transform = |y: f64| if log_y { y.log10() } else { y };

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if log_y && y <= 0.0 {
                continue;
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(transform(y));
            ymax = ymax.max(transform(y));
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-300 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-300 {
        ymax = ymin + 1.0;
    }
    let sx = (w - ml - mr) / (xmax - xmin);
    let sy = (h - mt - mb) / (ymax - ymin);
    let px = |x: f64| ml + (x - xmin) * sx;
    let py = |y: f64| h - mb - (transform(y) - ymin) * sy;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-size=\"17\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        w / 2.0,
        title
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    out.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    // ticks
    for k in 0..=5 {
        let xv = xmin + (xmax - xmin) * k as f64 / 5.0;
        let x = px(xv);
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - mb,
            h - mb + 6.0
        ));
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{xv:.3}</text>\n",
            h - mb + 22.0
        ));
        let yv = ymin + (ymax - ymin) * k as f64 / 5.0;
        let y = h - mb - (yv - ymin) * sy;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ml - 6.0
        ));
        let label = if log_y {
            format!("1e{yv:.1}")
        } else {
            format!("{yv:.3}")
        };
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\" font-family=\"sans-serif\">{label}</text>\n",
            ml - 10.0,
            y + 4.0
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">{xlabel}</text>\n",
        (ml + w - mr) / 2.0,
        h - 18.0
    ));
    out.push_str(&format!(
        "<text x=\"22\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 22 {})\">{ylabel}</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    ));
    // series
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(_, y)| !log_y || *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if pts.len() > 1 {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            ));
        }
        for p in &pts {
            let mut it = p.split(',');
            let (x, y) = (it.next().unwrap(), it.next().unwrap());
            out.push_str(&format!(
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"2.6\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = mt + 16.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            w - mr - 150.0,
            w - mr - 125.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">{}</text>\n",
            w - mr - 118.0,
            ly + 4.0,
            s.label
        ));
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out)?;
    Ok(())
}
