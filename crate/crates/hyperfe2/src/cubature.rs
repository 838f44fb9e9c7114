//! Reduced empirical cubature: select Gauss points and nonnegative weights
//! that integrate the energy modes and the cell volume exactly.
//!
//! The exactness conditions are
//!
//! ```text
//! sum_j  Phi_i(z_j) w_j = int Phi_i dV     i = 1..N_phi
//! sum_j  w_j            = |V|
//! ```
//!
//! which gives N_phi + 1 conditions, hence at most N_r = N_phi + 1 points.
//! Selection is greedy on the residual correlation with a nonnegative
//! least-squares weight subproblem (Lawson-Hanson inner loop) after each
//! addition; points whose weight hits zero are evicted and selection
//! continues. The target vector is a positive combination of the candidate
//! columns (the full Gauss rule itself), so a nonnegative solution exists.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const RESIDUAL_TOL: f64 = 1e-8;
pub const DEGENERACY_TOL: f64 = 1e-6;

/// A reduced integration rule over existing Gauss points.
#[derive(Clone, Debug)]
pub struct CubatureRule {
    /// Global Gauss indices of the retained points.
    pub indices: Vec<usize>,
    /// Strictly positive weights (volume units).
    pub weights: Vec<f64>,
    /// Number of energy modes the rule integrates.
    pub n_energy_modes: usize,
    /// Cell volume targeted by the unit-function condition.
    pub volume: f64,
    /// Relative exactness residual reached by the selection.
    pub residual: f64,
}

impl CubatureRule {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The trivial full-Gauss "rule" (used for plain ROM solves).
    pub fn full_gauss(gauss_weights: &[f64], volume: f64) -> CubatureRule {
        CubatureRule {
            indices: (0..gauss_weights.len()).collect(),
            weights: gauss_weights.to_vec(),
            n_energy_modes: 0,
            volume,
            residual: 0.0,
        }
    }
}

/// Exactness report of [`verify_rule`].
#[derive(Clone, Debug)]
pub struct RuleReport {
    /// Relative residual per energy mode (volume condition last).
    pub per_condition: Vec<f64>,
    pub max_residual: f64,
}

fn candidate_column(modes: &DMatrix<f64>, g: usize) -> DVector<f64> {
    let n_phi = modes.ncols();
    let mut col = DVector::zeros(n_phi + 1);
    for i in 0..n_phi {
        col[i] = modes[(g, i)];
    }
    col[n_phi] = 1.0;
    col
}

fn target_vector(modes: &DMatrix<f64>, gauss_weights: &[f64], volume: f64) -> DVector<f64> {
    let n_phi = modes.ncols();
    let mut b = DVector::zeros(n_phi + 1);
    for i in 0..n_phi {
        let mut s = 0.0;
        for (g, w) in gauss_weights.iter().enumerate() {
            s += w * modes[(g, i)];
        }
        b[i] = s;
    }
    b[n_phi] = volume;
    b
}

/// Unconstrained least squares on the active columns (minimum-norm via SVD).
fn ls_solve(a_cols: &[DVector<f64>], b: &DVector<f64>) -> Vec<f64> {
    let m = b.len();
    let k = a_cols.len();
    let mut a = DMatrix::zeros(m, k);
    for (j, col) in a_cols.iter().enumerate() {
        a.set_column(j, col);
    }
    let svd = a.svd(true, true);
    let x = svd.solve(b, 1e-13).expect("svd solve");
    x.iter().copied().collect()
}

/// Selects the reduced rule for the given energy modes (field values at all
/// Gauss points, one mode per column).
pub fn select_cubature(
    modes: &DMatrix<f64>,
    gauss_weights: &[f64],
    volume: f64,
) -> Result<CubatureRule> {
    let n_gp = gauss_weights.len();
    let n_phi = modes.ncols();
    assert_eq!(modes.nrows(), n_gp);
    let cap = n_phi + 1;
    if cap > n_gp {
        return Err(Error::Config(format!(
            "cannot select {cap} cubature points from {n_gp} Gauss points"
        )));
    }

    let b = target_vector(modes, gauss_weights, volume);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Err(Error::Config("zero cubature target".into()));
    }
    // squared candidate column norms for the correlation scan
    let col_norms: Vec<f64> = (0..n_gp)
        .map(|g| {
            let mut s = 1.0; // unit-function row
            for i in 0..n_phi {
                s += modes[(g, i)] * modes[(g, i)];
            }
            s.sqrt()
        })
        .collect();

    let mut active: Vec<usize> = Vec::new();
    let mut in_active = vec![false; n_gp];
    let mut a_cols: Vec<DVector<f64>> = Vec::new();
    let mut x_prev: Vec<f64> = Vec::new();
    let mut residual = b.clone();
    let mut rel = 1.0;

    let max_outer = 4 * cap;
    for _ in 0..max_outer {
        // greedy: best normalized correlation among the complement;
        // ties break to the lowest Gauss index
        let mut best = f64::NEG_INFINITY;
        let mut best_g = usize::MAX;
        let r_modes = residual.rows(0, n_phi).into_owned();
        let corr_vec = modes * &r_modes;
        let r_last = residual[n_phi];
        for g in 0..n_gp {
            if in_active[g] {
                continue;
            }
            let c = (corr_vec[g] + r_last) / col_norms[g];
            if c > best {
                best = c;
                best_g = g;
            }
        }
        if best_g == usize::MAX || best <= 1e-14 * b_norm {
            break; // residual orthogonal to every remaining column
        }
        active.push(best_g);
        in_active[best_g] = true;
        a_cols.push(candidate_column(modes, best_g));
        x_prev.push(0.0);

        // Lawson-Hanson inner loop: restore feasibility, evicting zeros
        loop {
            let x = ls_solve(&a_cols, &b);
            let min_x = x.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_x > 0.0 {
                x_prev = x;
                break;
            }
            // step from the last feasible point toward x until a weight hits 0
            let mut alpha = 1.0f64;
            for (&xp, &xi) in x_prev.iter().zip(x.iter()) {
                if xi <= 0.0 && xp > xi {
                    alpha = alpha.min(xp / (xp - xi));
                }
            }
            let mid: Vec<f64> = x_prev
                .iter()
                .zip(x.iter())
                .map(|(&xp, &xi)| xp + alpha * (xi - xp))
                .collect();
            let max_mid = mid.iter().cloned().fold(0.0f64, f64::max);
            let cut = 1e-12 * max_mid;
            let keep: Vec<usize> = (0..mid.len()).filter(|&i| mid[i] > cut).collect();
            let drop: Vec<usize> = if keep.len() == mid.len() {
                // numerical stall: evict the most negative target weight
                let worst = x
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                (0..mid.len()).filter(|&i| i != worst).collect()
            } else {
                keep
            };
            for (i, &g) in active.iter().enumerate() {
                if !drop.contains(&i) {
                    in_active[g] = false;
                }
            }
            active = drop.iter().map(|&i| active[i]).collect();
            a_cols = drop.iter().map(|&i| a_cols[i].clone()).collect();
            x_prev = drop.iter().map(|&i| mid[i]).collect();
            if active.is_empty() {
                break;
            }
        }

        residual = b.clone();
        for (col, &w) in a_cols.iter().zip(x_prev.iter()) {
            residual -= col * w;
        }
        rel = residual.norm() / b_norm;
        if rel <= RESIDUAL_TOL || active.len() >= cap {
            break;
        }
    }

    if rel > DEGENERACY_TOL {
        return Err(Error::CubatureDegenerate {
            residual: rel,
            selected: active.len(),
        });
    }

    // order by Gauss index for reproducible downstream gathering
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by_key(|&i| active[i]);
    let indices: Vec<usize> = order.iter().map(|&i| active[i]).collect();
    let weights: Vec<f64> = order.iter().map(|&i| x_prev[i]).collect();
    debug_assert!(weights.iter().all(|w| *w > 0.0));

    Ok(CubatureRule {
        indices,
        weights,
        n_energy_modes: n_phi,
        volume,
        residual: rel,
    })
}

/// Recomputes both sides of the exactness conditions for an existing rule.
///
/// Per-condition residuals are relative to max(|target_i|, ||target||), so
/// modes with a vanishing integral are measured against the overall scale.
pub fn verify_rule(
    rule: &CubatureRule,
    modes: &DMatrix<f64>,
    gauss_weights: &[f64],
    volume: f64,
) -> RuleReport {
    let n_phi = modes.ncols();
    let b = target_vector(modes, gauss_weights, volume);
    let b_norm = b.norm();
    let mut per_condition = Vec::with_capacity(n_phi + 1);
    let mut max_residual = 0.0f64;
    for i in 0..=n_phi {
        let mut s = 0.0;
        for (&z, &w) in rule.indices.iter().zip(rule.weights.iter()) {
            s += w * if i < n_phi { modes[(z, i)] } else { 1.0 };
        }
        let rel = (s - b[i]).abs() / b[i].abs().max(b_norm);
        per_condition.push(rel);
        max_residual = max_residual.max(rel);
    }
    RuleReport {
        per_condition,
        max_residual,
    }
}
