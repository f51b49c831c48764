//! Compressed sparse row storage for symmetric positive definite matrices
//! and a minimum-degree ordered sparse Cholesky factorization.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric matrix stored with both triangles in CSR layout. Column
/// indices within a row are strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSpd<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseSpd<T> {
    /// Zero matrix with the given row patterns (each sorted, deduplicated
    /// on construction).
    pub fn with_pattern(n: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![T::zero(); col_idx.len()];
        SparseSpd {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sums duplicate triplets in input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            rows[i].push(j);
        }
        let mut m = Self::with_pattern(n, rows);
        for &(i, j, v) in triplets {
            m.add(i, j, v);
        }
        m
    }

    pub fn from_dense(a: &[Vec<T>]) -> Self {
        let n = a.len();
        let mut trips = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() || i == j {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &trips)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), &trips)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.position(i, j).map_or(T::zero(), |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).fold(T::zero(), |acc, (&j, &v)| acc + v * x[j]);
        }
    }

    pub fn mul(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        crate::scalar::dot(x, &self.mul(x))
    }

    /// `||x||_A`.
    pub fn energy_norm(&self, x: &[T]) -> T {
        self.quad_form(x).max(T::zero()).sqrt()
    }

    /// Exact entrywise symmetry, pattern included.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.position(j, i).is_some_and(|k| self.values[k] == v))
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    /// `D^{-1/2} A D^{-1/2}` for a positive diagonal `d`.
    pub fn symmetric_scaled(&self, d: &[T]) -> Self {
        let s: Vec<T> = d.iter().map(|&v| T::one() / v.sqrt()).collect();
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] = self.values[k] * s[i] * s[self.col_idx[k]];
            }
        }
        out
    }
}

/// Fill-reducing permutation by minimum degree on the explicit elimination
/// graph. Ties go to the lowest index, so the ordering is deterministic.
/// Returns the order together with the (old-index) neighbour set of each
/// node at the moment it was eliminated.
fn minimum_degree<T: Scalar>(a: &SparseSpd<T>) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = a.dim();
    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut heap: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut fill = vec![Vec::new(); n];
    while let Some((_, p)) = heap.pop_first() {
        let nbrs = std::mem::take(&mut adj[p]);
        for &q in &nbrs {
            heap.remove(&(adj[q].len(), q));
            let merged = merge_without(&adj[q], &nbrs, p, q);
            adj[q] = merged;
            heap.insert((adj[q].len(), q));
        }
        order.push(p);
        fill[p] = nbrs;
    }
    (order, fill)
}

/// Sorted union of `a` and `b`, dropping `skip_a` and `skip_b`.
fn merge_without(a: &[usize], b: &[usize], skip_a: usize, skip_b: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if v != skip_a && v != skip_b {
            out.push(v);
        }
    }
    out
}

/// `P A P^T = L L^T` with `L` stored column-wise (diagonal kept apart).
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    diag: Vec<T>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &SparseSpd<T>) -> Result<Self> {
        let n = a.dim();
        let (perm, fill) = minimum_degree(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for &old in &perm {
            let mut rows: Vec<usize> = fill[old].iter().map(|&q| iperm[q]).collect();
            rows.sort_unstable();
            row_idx.extend_from_slice(&rows);
            col_ptr.push(row_idx.len());
        }
        let mut row_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for &i in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
                row_lists[i].push(k);
            }
        }

        let mut values = vec![T::zero(); row_idx.len()];
        let mut diag = vec![T::zero(); n];
        let mut next: Vec<usize> = col_ptr[..n].to_vec();
        let mut work = vec![T::zero(); n];
        for j in 0..n {
            let (cols, vals) = a.row(perm[j]);
            for (&c, &v) in cols.iter().zip(vals) {
                let i = iperm[c];
                if i >= j {
                    work[i] = v;
                }
            }
            for &k in &row_lists[j] {
                let pos = next[k];
                debug_assert_eq!(row_idx[pos], j);
                let ljk = values[pos];
                work[j] -= ljk * ljk;
                for t in pos + 1..col_ptr[k + 1] {
                    work[row_idx[t]] -= values[t] * ljk;
                }
                next[k] = pos + 1;
            }
            let d = work[j];
            work[j] = T::zero();
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Solver(format!(
                    "Cholesky pivot {j} (row {}) is not positive: {d}",
                    perm[j]
                )));
            }
            let ljj = d.sqrt();
            diag[j] = ljj;
            for t in col_ptr[j]..col_ptr[j + 1] {
                let i = row_idx[t];
                values[t] = work[i] / ljj;
                work[i] = T::zero();
            }
        }
        Ok(Cholesky {
            n,
            perm,
            iperm,
            diag,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros of `L`, diagonal included.
    pub fn nnz(&self) -> usize {
        self.values.len() + self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut z: Vec<T> = (0..n).map(|k| b[self.perm[k]]).collect();
        for j in 0..n {
            z[j] /= self.diag[j];
            let zj = z[j];
            for t in self.col_ptr[j]..self.col_ptr[j + 1] {
                z[self.row_idx[t]] -= self.values[t] * zj;
            }
        }
        for j in (0..n).rev() {
            let mut s = z[j];
            for t in self.col_ptr[j]..self.col_ptr[j + 1] {
                s -= self.values[t] * z[self.row_idx[t]];
            }
            z[j] = s / self.diag[j];
        }
        (0..n).map(|i| z[self.iperm[i]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Five-point Laplacian on an m x m grid.
    fn laplacian(m: usize) -> SparseSpd<f64> {
        let idx = |i: usize, j: usize| i * m + j;
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                t.push((idx(i, j), idx(i, j), 4.0));
                if i > 0 {
                    t.push((idx(i, j), idx(i - 1, j), -1.0));
                }
                if i + 1 < m {
                    t.push((idx(i, j), idx(i + 1, j), -1.0));
                }
                if j > 0 {
                    t.push((idx(i, j), idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    t.push((idx(i, j), idx(i, j + 1), -1.0));
                }
            }
        }
        SparseSpd::from_triplets(m * m, &t)
    }

    #[test]
    fn solves_laplacian() {
        let a = laplacian(30);
        assert!(a.is_symmetric());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..a.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.mul(&y);
        let f = Cholesky::factor(&a).unwrap();
        let x = f.solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        // minimum degree keeps the factor far below dense fill
        assert!(f.nnz() < a.dim() * a.dim() / 20);
    }

    #[test]
    fn rejects_indefinite() {
        let a = SparseSpd::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(Cholesky::factor(&a), Err(Error::Solver(_))));
    }

    #[test]
    fn dense_agreement() {
        let a = SparseSpd::<f64>::from_dense(&[
            vec![4.0, 1.0, 0.0, 0.5],
            vec![1.0, 3.0, 0.2, 0.0],
            vec![0.0, 0.2, 2.0, 0.1],
            vec![0.5, 0.0, 0.1, 1.5],
        ]);
        let b = [1.0, 2.0, 3.0, 4.0];
        let x = Cholesky::factor(&a).unwrap().solve(&b);
        let r = a.mul(&x);
        for i in 0..4 {
            assert!((r[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn merge_skips() {
        assert_eq!(merge_without(&[1, 3, 5], &[2, 3, 6], 5, 2), vec![1, 3, 6]);
    }
}
