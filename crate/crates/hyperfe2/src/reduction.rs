//! POD bases by truncated SVD.
//!
//! Elastic and inelastic snapshot blocks are processed separately: the
//! elastic block is kept to full rank (rank cut at 1e-10 relative singular
//! value) so the reduced model is exact in the elastic regime, the inelastic
//! block is orthogonalized against it and truncated to the requested size.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

pub const RANK_CUTOFF: f64 = 1e-10;

/// Truncation rule for [`pod`].
#[derive(Clone, Copy, Debug)]
pub enum PodTruncation {
    /// Keep exactly this many modes (fewer if the matrix has lower rank).
    Rank(usize),
    /// Keep the smallest k with sum_{i>k} s_i^2 / sum s_i^2 <= tol.
    EnergyTol(f64),
    /// Keep modes with s_i >= tol * s_1.
    RelSingular(f64),
}

#[derive(Clone, Debug)]
pub struct PodResult {
    /// Orthonormal left singular vectors, one mode per column.
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl PodResult {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    fn empty(rows: usize) -> Self {
        PodResult {
            modes: DMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
        }
    }
}

/// Left singular vectors of a snapshot matrix, truncated.
///
/// Small matrices use a dense SVD; larger ones go through the Gram matrix of
/// the smaller dimension (method of snapshots), whose accuracy is ample for
/// the retained modes, followed by re-orthonormalization. Both paths are
/// deterministic.
pub fn pod(x: &DMatrix<f64>, truncation: PodTruncation) -> PodResult {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return PodResult::empty(rows);
    }
    let max_abs = x.amax();
    if max_abs == 0.0 {
        return PodResult::empty(rows);
    }

    let (mut modes, mut sv) = if cols.min(rows) <= 480 {
        svd_path(x)
    } else {
        gram_path(x)
    };

    // rank guard before user truncation
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > 1e-14 * smax).count();
    let keep = match truncation {
        PodTruncation::Rank(k) => k.min(rank),
        PodTruncation::RelSingular(tol) => sv.iter().filter(|s| **s >= tol * smax).count(),
        PodTruncation::EnergyTol(tol) => {
            let total: f64 = sv.iter().map(|s| s * s).sum();
            let mut tail = total;
            let mut k = 0;
            for s in &sv {
                if tail / total <= tol {
                    break;
                }
                tail -= s * s;
                k += 1;
            }
            k.min(rank)
        }
    };
    modes = modes.columns(0, keep).into_owned();
    sv.truncate(keep);
    PodResult {
        modes,
        singular_values: sv,
    }
}

fn svd_path(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    (u, sv)
}

fn gram_path(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = x.shape();
    debug_assert!(cols <= rows);
    let gram = x.transpose() * x;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    // modes below ~sqrt(eps) relative are noise in the Gram formulation
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > 1e-14 * lmax && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut sv = Vec::with_capacity(keep.len());
    let mut modes = DMatrix::<f64>::zeros(rows, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        sv.push(s);
        let u = x * eig.eigenvectors.column(i) / s;
        modes.set_column(k, &u);
    }
    // restore orthonormality lost to the squared conditioning
    orthonormalize_in_place(&mut modes);
    (modes, sv)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass, preserving
/// column order. Columns that collapse are zeroed.
fn orthonormalize_in_place(m: &mut DMatrix<f64>) {
    let cols = m.ncols();
    for pass in 0..2 {
        for j in 0..cols {
            let mut col = m.column(j).into_owned();
            for i in 0..j {
                let prev = m.column(i);
                let proj = prev.dot(&col);
                col -= prev * proj;
            }
            let norm = col.norm();
            if norm > 1e-300 {
                col /= norm;
            } else if pass == 1 {
                col.fill(0.0);
            }
            m.set_column(j, &col);
        }
    }
}

/// Strain-fluctuation basis: elastic block first, inelastic block after.
/// Columns are stored as *field* values (sqrt-weight scaling removed) and are
/// orthonormal under the Gauss-weighted inner product.
#[derive(Clone, Debug)]
pub struct StrainBasis {
    pub modes: DMatrix<f64>,
    pub n_elastic: usize,
    pub n_inelastic: usize,
    /// Singular values, elastic block then inelastic block.
    pub singular_values: Vec<f64>,
}

impl StrainBasis {
    pub fn n_modes(&self) -> usize {
        self.n_elastic + self.n_inelastic
    }
}

/// Free-energy basis (field values, weighted-orthonormal columns).
#[derive(Clone, Debug)]
pub struct EnergyBasis {
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl EnergyBasis {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }
}

/// Internal-variable basis (plain orthonormal columns, centered at the
/// virgin field).
#[derive(Clone, Debug)]
pub struct InternalVarBasis {
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl InternalVarBasis {
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }
}

/// Removes the sqrt-weight row scaling from a weighted-space basis, turning
/// its columns into physical field values.
fn unweight_rows(modes: &DMatrix<f64>, sqrt_w: &[f64], comps_per_gp: usize) -> DMatrix<f64> {
    let mut out = modes.clone();
    for g in 0..sqrt_w.len() {
        for c in 0..comps_per_gp {
            let row = comps_per_gp * g + c;
            for j in 0..out.ncols() {
                out[(row, j)] /= sqrt_w[g];
            }
        }
    }
    out
}

/// Builds the strain basis from weighted elastic / inelastic snapshot blocks.
///
/// The elastic block is the full POD of the elastic snapshots (rank cut at
/// 1e-10); the inelastic snapshots are projected off the elastic span before
/// their own POD. Requesting more inelastic modes than the projected rank
/// truncates silently to the rank.
pub fn build_strain_basis(
    elastic: &DMatrix<f64>,
    inelastic: &DMatrix<f64>,
    n_inelastic: usize,
    sqrt_w: &[f64],
    n_sigma: usize,
) -> Result<StrainBasis> {
    if elastic.ncols() == 0 {
        return Err(Error::Config("elastic snapshot block is empty".into()));
    }
    let el = pod(elastic, PodTruncation::RelSingular(RANK_CUTOFF));
    let mut singular_values = el.singular_values.clone();
    let n_elastic = el.n_modes();

    let (inel_modes, mut inel_sv) = if n_inelastic == 0 || inelastic.ncols() == 0 {
        (DMatrix::zeros(elastic.nrows(), 0), Vec::new())
    } else {
        // project out the elastic span
        let proj = &el.modes * (el.modes.transpose() * inelastic);
        let deflated = inelastic - proj;
        let p = pod(&deflated, PodTruncation::Rank(n_inelastic));
        (p.modes, p.singular_values)
    };
    let n_inel = inel_modes.ncols();

    let mut combined = DMatrix::<f64>::zeros(elastic.nrows(), n_elastic + n_inel);
    combined.columns_mut(0, n_elastic).copy_from(&el.modes);
    combined
        .columns_mut(n_elastic, n_inel)
        .copy_from(&inel_modes);
    orthonormalize_in_place(&mut combined);
    singular_values.append(&mut inel_sv);

    Ok(StrainBasis {
        modes: unweight_rows(&combined, sqrt_w, n_sigma),
        n_elastic,
        n_inelastic: n_inel,
        singular_values,
    })
}

/// Energy basis: POD of the (weighted) inelastic free-energy snapshots.
pub fn build_energy_basis(
    inelastic_energy: &DMatrix<f64>,
    n_modes: usize,
    sqrt_w: &[f64],
) -> EnergyBasis {
    let p = pod(inelastic_energy, PodTruncation::Rank(n_modes));
    EnergyBasis {
        modes: unweight_rows(&p.modes, sqrt_w, 1),
        singular_values: p.singular_values,
    }
}

/// Internal-variable basis: POD of r snapshots centered on the virgin field,
/// so the undamaged state is represented by zero coefficients.
pub fn build_internal_basis(
    internal: &DMatrix<f64>,
    virgin: &[f64],
    n_modes: usize,
) -> InternalVarBasis {
    let mut centered = internal.clone();
    for g in 0..virgin.len() {
        for c in 0..centered.ncols() {
            centered[(g, c)] -= virgin[g];
        }
    }
    let p = pod(&centered, PodTruncation::Rank(n_modes));
    InternalVarBasis {
        modes: p.modes,
        singular_values: p.singular_values,
    }
}
