//! Banded LU solver for the reduced periodic stiffness.
//!
//! The folded torus numbering keeps the band width at O(grid side), so a
//! dense-in-band factorization is both simple and fast at desk scale. No
//! pivoting: the assembled systems are (nearly) symmetric positive definite;
//! a vanishing pivot is reported so callers can retry with a secant operator.

use crate::error::{Error, Result};

pub struct BandSystem {
    pub n: usize,
    pub hbw: usize,
    stride: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandSystem {
    pub fn new(n: usize, hbw: usize) -> Self {
        let stride = 2 * hbw + 1;
        BandSystem {
            n,
            hbw,
            stride,
            data: vec![0.0; n * stride],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.hbw);
        i * self.stride + (j + self.hbw - i)
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
        self.factored = false;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    /// In-place LU factorization without pivoting.
    pub fn factor(&mut self) -> Result<()> {
        assert!(!self.factored);
        let mut scale = 0.0f64;
        for i in 0..self.n {
            scale = scale.max(self.data[self.idx(i, i)].abs());
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Singular("zero or non-finite stiffness".into()));
        }
        let tol = 1e-13 * scale;
        for k in 0..self.n {
            let pivot = self.data[self.idx(k, k)];
            if !pivot.is_finite() || pivot.abs() < tol {
                return Err(Error::Singular(format!(
                    "pivot {pivot:.3e} at row {k} below tolerance"
                )));
            }
            let jmax = (k + self.hbw).min(self.n - 1);
            for i in (k + 1)..=jmax {
                let at_ik = self.idx(i, k);
                let l = self.data[at_ik] / pivot;
                self.data[at_ik] = l;
                if l != 0.0 {
                    for j in (k + 1)..=jmax {
                        let at_kj = self.idx(k, j);
                        let at_ij = self.idx(i, j);
                        self.data[at_ij] -= l * self.data[at_kj];
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert!(self.factored);
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.hbw);
            let mut s = x[i];
            for j in jmin..i {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let jmax = (i + self.hbw).min(self.n - 1);
            let mut s = x[i];
            for j in (i + 1)..=jmax {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
    }
}
