//! Desk-scale RVE meshes on the periodic unit square / cube.
//!
//! Two archetypes are provided: a layered laminate cell (matrix / fiber /
//! cohesive / interply strips, mirroring a cross-ply laminate) and a cell of
//! randomly placed non-overlapping circular fibers. Both are rectilinear
//! grids of bilinear quads (2D plane strain) or trilinear hexes (3D), with
//! periodic node pairing on opposite faces.

use crate::element;
use crate::error::{Error, Result};
use crate::voigt::Dim;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

pub const PHASE_MATRIX: usize = 0;
pub const PHASE_FIBER: usize = 1;
pub const PHASE_COHESIVE: usize = 2;
pub const PHASE_INTERPLY: usize = 3;

#[derive(Clone, Debug)]
pub struct MeshElement {
    pub nodes: [usize; 8],
    pub n_nodes: usize,
    pub phase: usize,
}

impl MeshElement {
    pub fn node_ids(&self) -> &[usize] {
        &self.nodes[..self.n_nodes]
    }
}

/// One integration point of the global Gauss table.
#[derive(Clone, Debug)]
pub struct GaussPoint {
    pub element: usize,
    pub local: usize,
    /// Quadrature weight times |J| (volume units).
    pub weight: f64,
    pub phase: usize,
    pub position: [f64; 3],
    /// Strain-displacement matrix, n_sigma x (n_dim * nodes_per_element).
    pub b: DMatrix<f64>,
}

/// Finite element discretization of the periodic microcell.
#[derive(Clone, Debug)]
pub struct RveMesh {
    pub dim: Dim,
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<MeshElement>,
    pub phase_names: Vec<String>,
    /// (slave, master) node pairs; masters carry no wrapped coordinate.
    pub periodic_pairs: Vec<(usize, usize)>,
    pub gauss: Vec<GaussPoint>,
    /// Analytic domain volume.
    pub volume: f64,
    /// Cells per axis of the generating grid ([nx, ny, 1] in 2D).
    pub grid_cells: [usize; 3],
    /// Grid coordinates of every node.
    pub node_grid: Vec<[usize; 3]>,
}

impl RveMesh {
    pub fn n_gauss(&self) -> usize {
        self.gauss.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * self.dim.n_dim()
    }

    pub fn n_sigma(&self) -> usize {
        self.dim.n_sigma()
    }

    /// B-matrix of one global integration point.
    pub fn strain_displacement(&self, gp: usize) -> &DMatrix<f64> {
        &self.gauss[gp].b
    }

    /// Volume fraction occupied by one phase.
    pub fn phase_fraction(&self, phase: usize) -> f64 {
        let w: f64 = self
            .gauss
            .iter()
            .filter(|g| g.phase == phase)
            .map(|g| g.weight)
            .sum();
        w / self.volume
    }

    /// Nodal displacement of the affine field u = eps . x (Voigt eps with
    /// engineering shear). Used for patch tests and deformed configurations.
    pub fn affine_nodal_displacement(&self, eps: &[f64]) -> Vec<f64> {
        let nd = self.dim.n_dim();
        let mut u = vec![0.0; self.n_dofs()];
        for (n, x) in self.nodes.iter().enumerate() {
            match self.dim {
                Dim::Two => {
                    u[2 * n] = eps[0] * x[0] + 0.5 * eps[2] * x[1];
                    u[2 * n + 1] = 0.5 * eps[2] * x[0] + eps[1] * x[1];
                }
                Dim::Three => {
                    u[3 * n] = eps[0] * x[0] + 0.5 * eps[3] * x[1] + 0.5 * eps[5] * x[2];
                    u[3 * n + 1] = 0.5 * eps[3] * x[0] + eps[1] * x[1] + 0.5 * eps[4] * x[2];
                    u[3 * n + 2] = 0.5 * eps[5] * x[0] + 0.5 * eps[4] * x[1] + eps[2] * x[2];
                }
            }
            let _ = nd;
        }
        u
    }

    /// Structural invariants: positive weights, volume closure, valid phases,
    /// bijective periodic pairing.
    pub fn validate(&self) -> Result<()> {
        let mut w = 0.0;
        for g in &self.gauss {
            if !(g.weight > 0.0) {
                return Err(Error::Config("non-positive Gauss weight".into()));
            }
            if g.phase >= self.phase_names.len() {
                return Err(Error::Config("element phase out of range".into()));
            }
            w += g.weight;
        }
        if ((w - self.volume) / self.volume).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "quadrature volume {w} does not close domain volume {}",
                self.volume
            )));
        }
        let mut seen = vec![false; self.nodes.len()];
        for &(s, m) in &self.periodic_pairs {
            if seen[s] {
                return Err(Error::Config("node paired twice as slave".into()));
            }
            seen[s] = true;
            if self.periodic_pairs.iter().any(|&(s2, _)| s2 == m) {
                return Err(Error::Config("master node is itself a slave".into()));
            }
        }
        Ok(())
    }

    /// Plain text export: nodes, elements, phase ids.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "# rve mesh dim={} nodes={} elements={} phases={}",
            self.dim.n_dim(),
            self.nodes.len(),
            self.elements.len(),
            self.phase_names.join(",")
        )?;
        writeln!(w, "nodes")?;
        for (i, n) in self.nodes.iter().enumerate() {
            match self.dim {
                Dim::Two => writeln!(w, "{i} {:.16e} {:.16e}", n[0], n[1])?,
                Dim::Three => writeln!(w, "{i} {:.16e} {:.16e} {:.16e}", n[0], n[1], n[2])?,
            }
        }
        writeln!(w, "elements")?;
        for (i, e) in self.elements.iter().enumerate() {
            let ids: Vec<String> = e.node_ids().iter().map(|n| n.to_string()).collect();
            writeln!(w, "{i} {} {}", e.phase, ids.join(" "))?;
        }
        Ok(())
    }
}

/// Shared rectilinear grid builder. `phase_of_cell` receives cell indices.
fn build_grid(
    dim: Dim,
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    phase_names: Vec<String>,
    phase_of_cell: impl Fn([usize; 3], [f64; 3]) -> usize,
) -> RveMesh {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let nz = if dim == Dim::Three { zs.len() - 1 } else { 1 };

    let mut nodes = Vec::new();
    let mut node_grid = Vec::new();
    match dim {
        Dim::Two => {
            for (j, &y) in ys.iter().enumerate() {
                for (i, &x) in xs.iter().enumerate() {
                    nodes.push([x, y, 0.0]);
                    node_grid.push([i, j, 0]);
                }
            }
        }
        Dim::Three => {
            for (k, &z) in zs.iter().enumerate() {
                for (j, &y) in ys.iter().enumerate() {
                    for (i, &x) in xs.iter().enumerate() {
                        nodes.push([x, y, z]);
                        node_grid.push([i, j, k]);
                    }
                }
            }
        }
    }

    let node_id = |i: usize, j: usize, k: usize| -> usize {
        match dim {
            Dim::Two => i + (nx + 1) * j,
            Dim::Three => i + (nx + 1) * (j + (ny + 1) * k),
        }
    };

    let mut elements = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let center = [
                    0.5 * (xs[i] + xs[i + 1]),
                    0.5 * (ys[j] + ys[j + 1]),
                    if dim == Dim::Three {
                        0.5 * (zs[k] + zs[k + 1])
                    } else {
                        0.0
                    },
                ];
                let phase = phase_of_cell([i, j, k], center);
                let mut e = MeshElement {
                    nodes: [0; 8],
                    n_nodes: if dim == Dim::Two { 4 } else { 8 },
                    phase,
                };
                match dim {
                    Dim::Two => {
                        e.nodes[0] = node_id(i, j, 0);
                        e.nodes[1] = node_id(i + 1, j, 0);
                        e.nodes[2] = node_id(i + 1, j + 1, 0);
                        e.nodes[3] = node_id(i, j + 1, 0);
                    }
                    Dim::Three => {
                        e.nodes[0] = node_id(i, j, k);
                        e.nodes[1] = node_id(i + 1, j, k);
                        e.nodes[2] = node_id(i + 1, j + 1, k);
                        e.nodes[3] = node_id(i, j + 1, k);
                        e.nodes[4] = node_id(i, j, k + 1);
                        e.nodes[5] = node_id(i + 1, j, k + 1);
                        e.nodes[6] = node_id(i + 1, j + 1, k + 1);
                        e.nodes[7] = node_id(i, j + 1, k + 1);
                    }
                }
                elements.push(e);
            }
        }
    }

    // periodic pairing: wrapped boundary nodes are slaves of the wrap-free node
    let mut periodic_pairs = Vec::new();
    for (n, g) in node_grid.iter().enumerate() {
        let wrapped = [
            if g[0] == nx { 0 } else { g[0] },
            if g[1] == ny { 0 } else { g[1] },
            if dim == Dim::Three && g[2] == nz { 0 } else { g[2] },
        ];
        if wrapped != *g {
            periodic_pairs.push((n, node_id(wrapped[0], wrapped[1], wrapped[2])));
        }
    }

    // global Gauss table
    let mut gauss = Vec::new();
    for (eid, e) in elements.iter().enumerate() {
        let coords: Vec<[f64; 3]> = e.node_ids().iter().map(|&n| nodes[n]).collect();
        match dim {
            Dim::Two => {
                for (local, p) in element::quad_gauss().into_iter().enumerate() {
                    let (b, det) = element::quad_b_matrix(&coords, p[0], p[1]);
                    let shape = element::quad_shape(p[0], p[1]);
                    let mut pos = [0.0; 3];
                    for (sn, c) in shape.iter().zip(coords.iter()) {
                        pos[0] += sn * c[0];
                        pos[1] += sn * c[1];
                    }
                    gauss.push(GaussPoint {
                        element: eid,
                        local,
                        weight: det, // 1x1 reference weights
                        phase: e.phase,
                        position: pos,
                        b,
                    });
                }
            }
            Dim::Three => {
                for (local, p) in element::hex_gauss().into_iter().enumerate() {
                    let (b, det) = element::hex_b_matrix(&coords, p[0], p[1], p[2]);
                    let shape = element::hex_shape(p[0], p[1], p[2]);
                    let mut pos = [0.0; 3];
                    for (sn, c) in shape.iter().zip(coords.iter()) {
                        for a in 0..3 {
                            pos[a] += sn * c[a];
                        }
                    }
                    gauss.push(GaussPoint {
                        element: eid,
                        local,
                        weight: det,
                        phase: e.phase,
                        position: pos,
                        b,
                    });
                }
            }
        }
    }

    let volume = (xs[nx] - xs[0])
        * (ys[ny] - ys[0])
        * if dim == Dim::Three { zs[nz] - zs[0] } else { 1.0 };

    RveMesh {
        dim,
        nodes,
        elements,
        phase_names,
        periodic_pairs,
        gauss,
        volume,
        grid_cells: [nx, ny, nz],
        node_grid,
    }
}

/// Layered laminate cell configuration.
///
/// All fractions are volume fractions of the whole cell. Every ply stacks,
/// bottom to top: matrix, cohesive, fiber, cohesive, matrix, interply; bands
/// with zero fraction are dropped. Band edges become mesh lines, so phase
/// fractions are exact and any positive band thickness is resolved.
#[derive(Clone, Debug)]
pub struct LayeredRveConfig {
    pub dim: Dim,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub plies: usize,
    pub fiber_fraction: f64,
    pub cohesive_fraction: f64,
    pub interply_fraction: f64,
}

impl Default for LayeredRveConfig {
    fn default() -> Self {
        LayeredRveConfig {
            dim: Dim::Two,
            nx: 32,
            ny: 32,
            nz: 4,
            plies: 2,
            fiber_fraction: 0.35,
            cohesive_fraction: 0.03,
            interply_fraction: 0.02,
        }
    }
}

pub fn build_layered_rve(config: &LayeredRveConfig) -> Result<RveMesh> {
    if config.plies == 0 || config.nx == 0 || config.ny == 0 {
        return Err(Error::Config("plies and resolution must be positive".into()));
    }
    for f in [
        config.fiber_fraction,
        config.cohesive_fraction,
        config.interply_fraction,
    ] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config("phase fractions must lie in [0, 1)".into()));
        }
    }
    let p = config.plies as f64;
    let h = 1.0 / p;
    let h_f = config.fiber_fraction / p;
    let h_ip = config.interply_fraction / p;
    let h_c = config.cohesive_fraction / (2.0 * p);
    let m = 0.5 * (h - h_f - h_ip - 2.0 * h_c);
    if m <= 0.0 {
        return Err(Error::Config(
            "phase fractions leave no room for the matrix".into(),
        ));
    }

    let mut bands: Vec<(f64, usize)> = Vec::new();
    for _ in 0..config.plies {
        for (height, phase) in [
            (m, PHASE_MATRIX),
            (h_c, PHASE_COHESIVE),
            (h_f, PHASE_FIBER),
            (h_c, PHASE_COHESIVE),
            (m, PHASE_MATRIX),
            (h_ip, PHASE_INTERPLY),
        ] {
            if height > 0.0 {
                bands.push((height, phase));
            }
        }
    }
    if config.ny < bands.len() {
        return Err(Error::Config(format!(
            "resolution ny = {} too coarse to resolve {} phase bands",
            config.ny,
            bands.len()
        )));
    }

    // band edges become mesh lines; each band is subdivided roughly uniformly
    let mut ys = vec![0.0];
    let mut row_phase = Vec::new();
    let mut y = 0.0;
    for &(height, phase) in &bands {
        let cells = ((config.ny as f64 * height).round() as usize).max(1);
        for c in 1..=cells {
            ys.push(y + height * c as f64 / cells as f64);
            row_phase.push(phase);
        }
        y += height;
    }
    let last = ys.len() - 1;
    ys[last] = 1.0;

    let xs: Vec<f64> = (0..=config.nx).map(|i| i as f64 / config.nx as f64).collect();
    let zs: Vec<f64> = (0..=config.nz).map(|k| k as f64 / config.nz as f64).collect();
    let names = vec![
        "matrix".to_string(),
        "fiber".to_string(),
        "cohesive".to_string(),
        "interply".to_string(),
    ];
    let mesh = build_grid(config.dim, &xs, &ys, &zs, names, |cell, _| {
        row_phase[cell[1]]
    });
    mesh.validate()?;
    Ok(mesh)
}

/// Random unidirectional fiber cell configuration.
#[derive(Clone, Debug)]
pub struct FiberRveConfig {
    pub dim: Dim,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub n_fibers: usize,
    pub volume_fraction: f64,
    /// Minimum surface gap between fibers, relative to the diameter.
    pub min_gap: f64,
}

impl Default for FiberRveConfig {
    fn default() -> Self {
        FiberRveConfig {
            dim: Dim::Two,
            nx: 24,
            ny: 24,
            nz: 4,
            n_fibers: 4,
            volume_fraction: 0.60,
            min_gap: 0.05,
        }
    }
}

/// Periodic in-plane distance between two points of the unit cell.
fn min_image_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let mut dx = (a[0] - b[0]).abs();
    let mut dy = (a[1] - b[1]).abs();
    if dx > 0.5 {
        dx = 1.0 - dx;
    }
    if dy > 0.5 {
        dy = 1.0 - dy;
    }
    (dx * dx + dy * dy).sqrt()
}

/// Builds the fiber cell by seeded placement: fiber centers are proposed on a
/// jittered square lattice and rejected on periodic overlap, which reaches
/// packing fractions beyond plain rejection sampling while staying
/// deterministic for a fixed seed. Fibers run along z in 3D.
pub fn build_fiber_rve(config: &FiberRveConfig, seed: u64) -> Result<RveMesh> {
    if config.volume_fraction > 0.65 {
        return Err(Error::Config(
            "target volume fraction must not exceed 0.65".into(),
        ));
    }
    let n = config.n_fibers;
    let names = vec!["matrix".to_string(), "fiber".to_string()];
    let xs: Vec<f64> = (0..=config.nx).map(|i| i as f64 / config.nx as f64).collect();
    let ys: Vec<f64> = (0..=config.ny).map(|j| j as f64 / config.ny as f64).collect();
    let zs: Vec<f64> = (0..=config.nz).map(|k| k as f64 / config.nz as f64).collect();

    if n == 0 || config.volume_fraction <= 0.0 {
        let mesh = build_grid(config.dim, &xs, &ys, &zs, names, |_, _| PHASE_MATRIX);
        mesh.validate()?;
        return Ok(mesh);
    }

    let radius = (config.volume_fraction / (n as f64 * std::f64::consts::PI)).sqrt();
    let d_min = 2.0 * radius * (1.0 + config.min_gap);
    let grid = (n as f64).sqrt().ceil() as usize;
    let pitch = 1.0 / grid as f64;
    let jitter = 0.5 * (pitch - d_min).max(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n);
    'fibers: for f in 0..n {
        let site = [
            (f % grid) as f64 * pitch + 0.5 * pitch,
            (f / grid) as f64 * pitch + 0.5 * pitch,
        ];
        for _ in 0..500 {
            let c = [
                (site[0] + rng.gen_range(-1.0..1.0) * jitter).rem_euclid(1.0),
                (site[1] + rng.gen_range(-1.0..1.0) * jitter).rem_euclid(1.0),
            ];
            if centers.iter().all(|o| min_image_distance(*o, c) >= d_min) {
                centers.push(c);
                continue 'fibers;
            }
        }
        return Err(Error::PlacementSaturated {
            achieved: centers.len() as f64 * std::f64::consts::PI * radius * radius,
            requested: config.volume_fraction,
        });
    }

    let mesh = build_grid(config.dim, &xs, &ys, &zs, names, |_, center| {
        let p = [center[0], center[1]];
        if centers
            .iter()
            .any(|c| min_image_distance(*c, p) <= radius)
        {
            PHASE_FIBER
        } else {
            PHASE_MATRIX
        }
    });
    mesh.validate()?;
    Ok(mesh)
}
