//! Envelope (skyline) storage and Cholesky factorization for symmetric
//! positive-definite matrices.
//!
//! Row `i` stores the lower-triangular entries from its first structural
//! nonzero `start[i]` through the diagonal. Cholesky fill stays inside the
//! envelope, so the factor reuses the same storage. Chain-structured pose
//! systems have a narrow envelope; a fully coupled system degrades gracefully
//! to dense storage.

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    start: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix with row `i` covering columns `start[i]..=i`.
    pub fn new(start: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(start.len() + 1);
        let mut total = 0;
        for (i, &s) in start.iter().enumerate() {
            assert!(s <= i, "envelope start beyond the diagonal");
            offset.push(total);
            total += i - s + 1;
        }
        offset.push(total);
        SkylineMatrix {
            start,
            offset,
            values: vec![0.0; total],
        }
    }

    #[cfg(test)]
    pub fn dense(n: usize) -> Self {
        SkylineMatrix::new(vec![0; n])
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.offset[i]..self.offset[i + 1]]
    }

    /// Entry `(i, j)` of the lower triangle (`j <= i`); zero outside the envelope.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.start[i] {
            0.0
        } else {
            self.values[self.offset[i] + j - self.start[i]]
        }
    }

    /// Adds `v` to the symmetric entry `(i, j)`. Panics outside the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(j >= self.start[i], "entry ({i}, {j}) outside envelope");
        self.values[self.offset[i] + j - self.start[i]] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// In-place Cholesky `A = L·Lᵀ`. On failure returns the failing pivot row.
    pub fn factorize(mut self) -> Result<SkylineCholesky, usize> {
        let n = self.dim();
        for i in 0..n {
            let si = self.start[i];
            let oi = self.offset[i];
            for j in si..=i {
                let sj = self.start[j];
                let oj = self.offset[j];
                let k0 = si.max(sj);
                let mut s = self.values[oi + j - si];
                // dot(L[i, k0..j], L[j, k0..j])
                let a = &self.values[oi + k0 - si..oi + j - si];
                let b = &self.values[oj + k0 - sj..oj + j - sj];
                s -= dot(a, b);
                if j < i {
                    let ljj = self.values[self.offset[j + 1] - 1];
                    self.values[oi + j - si] = s / ljj;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(i);
                    }
                    self.values[oi + i - si] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { factor: self })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor in envelope storage.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    /// Solves `A·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let n = l.dim();
        // L·y = b
        for i in 0..n {
            let row = l.row(i);
            let si = l.start[i];
            let s = dot(&row[..i - si], &b[si..i]);
            b[i] = (b[i] - s) / row[i - si];
        }
        // Lᵀ·x = y
        for i in (0..n).rev() {
            let row = l.row(i);
            let si = l.start[i];
            let xi = b[i] / row[i - si];
            b[i] = xi;
            for (bk, lik) in b[si..i].iter_mut().zip(&row[..i - si]) {
                *bk -= lik * xi;
            }
        }
    }

    #[cfg(test)]
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Columns `cols` of `A⁻¹`, each as a dense vector.
    pub fn inverse_columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        cols.iter()
            .map(|&c| {
                let mut e = vec![0.0; self.dim()];
                e[c] = 1.0;
                self.solve_in_place(&mut e);
                e
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn to_skyline(a: &DMatrix<f64>) -> SkylineMatrix {
        let n = a.nrows();
        let start = (0..n)
            .map(|i| (0..=i).find(|&j| a[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut s = SkylineMatrix::new(start);
        for i in 0..n {
            for j in 0..=i {
                if a[(i, j)] != 0.0 {
                    s.add(i, j, a[(i, j)]);
                }
            }
        }
        s
    }

    #[test]
    fn banded_matches_dense_solve() {
        let n = 12;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 4.0 + i as f64;
            if i >= 2 {
                a[(i, i - 2)] = -1.0;
                a[(i - 2, i)] = -1.0;
            }
        }
        a[(11, 0)] = 0.5;
        a[(0, 11)] = 0.5;
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let expect = a.clone().cholesky().unwrap().solve(&b);
        let chol = to_skyline(&a).factorize().unwrap();
        let x = chol.solve(b.as_slice());
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_failing_pivot() {
        let mut s = SkylineMatrix::dense(3);
        s.add(0, 0, 1.0);
        s.add(2, 2, 1.0);
        assert_eq!(s.factorize().err(), Some(1));
    }

    proptest! {
        #[test]
        fn random_spd_inverse(vals in prop::collection::vec(-1.0f64..1.0, 36)) {
            let m = DMatrix::from_vec(6, 6, vals);
            let a = &m * m.transpose() + DMatrix::identity(6, 6);
            let chol = to_skyline(&a).factorize().unwrap();
            let cols = chol.inverse_columns(&[0, 3, 5]);
            let inv = a.try_inverse().unwrap();
            for (c, col) in [0usize, 3, 5].iter().zip(&cols) {
                for r in 0..6 {
                    prop_assert!((inv[(r, *c)] - col[r]).abs() < 1e-9);
                }
            }
        }
    }
}
