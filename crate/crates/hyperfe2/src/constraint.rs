//! Periodic master/slave DOF elimination.
//!
//! Slave boundary nodes carry the fluctuation of their wrap-free master and
//! one node is pinned to remove rigid translations (rotations are not
//! periodic, so translations are the whole kernel). The reduced unknowns form
//! a torus; master nodes are numbered in a folded grid order so the reduced
//! stiffness has a small band despite the periodic wrap-around coupling.
//!
//! Every periodic fluctuation field has exactly one translate in the reduced
//! space (the one vanishing at the pinned node).

use crate::mesh::RveMesh;

#[derive(Clone, Debug)]
pub struct PeriodicConstraintMap {
    pub n_full_dofs: usize,
    pub n_reduced: usize,
    /// Full DOF index -> reduced DOF index; `None` marks pinned DOFs.
    pub dof_map: Vec<Option<usize>>,
    /// Half bandwidth of the reduced stiffness in the folded numbering.
    pub half_bandwidth: usize,
}

/// Folded ordering of a cyclic axis: wrapped neighbours stay within
/// distance 2 of each other.
fn fold(k: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    if 2 * k < n {
        2 * k
    } else {
        2 * (n - 1 - k) + 1
    }
}

impl PeriodicConstraintMap {
    pub fn build(mesh: &RveMesh) -> Self {
        let nd = mesh.dim.n_dim();
        let n_nodes = mesh.nodes.len();
        let [nx, ny, nz] = mesh.grid_cells;

        let mut master_of: Vec<usize> = (0..n_nodes).collect();
        for &(slave, master) in &mesh.periodic_pairs {
            master_of[slave] = master;
        }

        // folded torus numbering of master nodes; grid (0,0,0) gets index 0
        let reduced_node = |node: usize| -> usize {
            let g = mesh.node_grid[node];
            fold(g[0], nx) + nx * (fold(g[1], ny) + ny * fold(g[2], nz))
        };

        let n_master_nodes = nx * ny * nz;
        let mut dof_map = vec![None; n_nodes * nd];
        for node in 0..n_nodes {
            let rn = reduced_node(master_of[node]);
            if rn == 0 {
                continue; // pinned translations
            }
            for c in 0..nd {
                dof_map[node * nd + c] = Some((rn - 1) * nd + c);
            }
        }
        let n_reduced = (n_master_nodes - 1) * nd;

        let mut half_bandwidth = 0;
        for e in &mesh.elements {
            let ids = e.node_ids();
            for &a in ids {
                for &b in ids {
                    if let (Some(ra), Some(rb)) =
                        (dof_map[a * nd], dof_map[b * nd])
                    {
                        let d = ra.abs_diff(rb) + (nd - 1);
                        half_bandwidth = half_bandwidth.max(d);
                    }
                }
            }
        }

        PeriodicConstraintMap {
            n_full_dofs: n_nodes * nd,
            n_reduced,
            dof_map,
            half_bandwidth,
        }
    }

    /// Scatter a reduced vector to all full DOFs (slaves copy their master,
    /// pinned DOFs are zero).
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_full_dofs];
        self.expand_into(reduced, &mut full);
        full
    }

    pub fn expand_into(&self, reduced: &[f64], full: &mut [f64]) {
        for (dof, m) in self.dof_map.iter().enumerate() {
            full[dof] = match m {
                Some(r) => reduced[*r],
                None => 0.0,
            };
        }
    }

    /// Gather master DOF values from a full vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut reduced = vec![0.0; self.n_reduced];
        for (dof, m) in self.dof_map.iter().enumerate() {
            if let Some(r) = m {
                reduced[*r] = full[dof];
            }
        }
        reduced
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_fiber_rve, build_layered_rve, FiberRveConfig, LayeredRveConfig};
    use crate::voigt::Dim;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fold_is_a_permutation_with_wrapped_adjacency() {
        for n in [1usize, 2, 5, 8, 33] {
            let mut seen = vec![false; n];
            for k in 0..n {
                let f = fold(k, n);
                assert!(!seen[f]);
                seen[f] = true;
                if n > 2 {
                    let next = fold((k + 1) % n, n);
                    assert!(f.abs_diff(next) <= 2, "n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn periodic_field_roundtrips_up_to_translation() {
        let mesh = build_fiber_rve(&FiberRveConfig::default(), 9).unwrap();
        let cmap = PeriodicConstraintMap::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // a periodic nodal field: value determined by wrapped grid coords
        let [nx, ny, _] = mesh.grid_cells;
        let mut value = vec![[0.0f64; 2]; nx * ny];
        for v in value.iter_mut() {
            *v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        let mut full = vec![0.0; cmap.n_full_dofs];
        for (node, g) in mesh.node_grid.iter().enumerate() {
            let v = value[(g[0] % nx) + nx * (g[1] % ny)];
            full[2 * node] = v[0];
            full[2 * node + 1] = v[1];
        }
        // normalize the translate so the pinned node vanishes
        let origin = mesh
            .node_grid
            .iter()
            .position(|g| *g == [0, 0, 0])
            .unwrap();
        let shift = [full[2 * origin], full[2 * origin + 1]];
        for node in 0..mesh.nodes.len() {
            full[2 * node] -= shift[0];
            full[2 * node + 1] -= shift[1];
        }
        let round = cmap.expand(&cmap.restrict(&full));
        for (a, b) in full.iter().zip(round.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn translations_are_excluded() {
        let mesh = build_layered_rve(&LayeredRveConfig {
            nx: 6,
            ny: 14,
            ..Default::default()
        })
        .unwrap();
        let cmap = PeriodicConstraintMap::build(&mesh);
        let full = vec![1.0; cmap.n_full_dofs];
        let reduced = cmap.restrict(&full);
        let back = cmap.expand(&reduced);
        // a pure translation cannot live in the reduced space: its pinned
        // components are forced to zero, every other DOF keeps the constant
        for (dof, m) in cmap.dof_map.iter().enumerate() {
            match m {
                None => assert_eq!(back[dof], 0.0),
                Some(_) => assert_eq!(back[dof], 1.0),
            }
        }
        assert!(cmap.dof_map.iter().any(|m| m.is_none()));
    }

    #[test]
    fn bandwidth_is_torus_scale() {
        let mesh = build_fiber_rve(
            &FiberRveConfig {
                nx: 16,
                ny: 16,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let cmap = PeriodicConstraintMap::build(&mesh);
        // folded torus: neighbour distance is at most ~2 rows of nodes
        assert!(cmap.half_bandwidth <= 2 * (2 * 16 + 2) + 2);
        assert_eq!(cmap.n_reduced, (16 * 16 - 1) * 2);
    }

    #[test]
    fn three_dimensional_map_covers_all_masters() {
        let mesh = build_layered_rve(&LayeredRveConfig {
            dim: Dim::Three,
            nx: 4,
            ny: 14,
            nz: 3,
            ..Default::default()
        })
        .unwrap();
        let cmap = PeriodicConstraintMap::build(&mesh);
        let [nx, ny, nz] = mesh.grid_cells;
        assert_eq!(cmap.n_reduced, (nx * ny * nz - 1) * 3);
        let mut hit = vec![false; cmap.n_reduced];
        for m in cmap.dof_map.iter().flatten() {
            hit[*m] = true;
        }
        assert!(hit.iter().all(|h| *h));
    }
}
