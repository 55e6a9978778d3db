//! Minimal sparse linear algebra: symmetric CSC matrices, a general
//! row-major rectangular type, reverse Cuthill-McKee ordering and a
//! simplicial LDL^T factorization (up-looking, elimination-tree based).
//!
//! The factorization contract used throughout the crate is: build a
//! [`SparseSym`], call [`LdlFactor::new`], then `solve` / `log_det` /
//! `sample_transform`. Matrices are immutable after construction.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Builder that keeps a symmetric triplet list; `add` mirrors off-diagonal
/// entries so callers only specify one triangle.
#[derive(Clone, Debug, Default)]
pub struct SymTriplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        SymTriplets { n, entries: Vec::new() }
    }

    /// Add `v` at (i, j) and, if i != j, at (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v == 0.0 {
            return;
        }
        self.entries.push((i, j, v));
        if i != j {
            self.entries.push((j, i, v));
        }
    }

    /// Add a dense symmetric block on the given index set (upper triangle read).
    pub fn add_sym_block(&mut self, idx: &[usize], block: &DMatrix<f64>) {
        for a in 0..idx.len() {
            for b in a..idx.len() {
                self.add(idx[a], idx[b], block[(a, b)]);
            }
        }
    }

    pub fn build(self) -> SparseSym {
        SparseSym::from_triplets(self.n, &self.entries)
    }
}

/// Symmetric sparse matrix in CSC layout with both triangles stored.
#[derive(Clone, Debug)]
pub struct SparseSym {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Build from a full (both-triangles) triplet list; duplicates are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; n + 1];
        for &(_, j, _) in entries {
            count[j + 1] += 1;
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let mut rows = vec![0usize; entries.len()];
        let mut vals = vec![0f64; entries.len()];
        let mut next = count.clone();
        for &(i, j, v) in entries {
            let p = next[j];
            rows[p] = i;
            vals[p] = v;
            next[j] += 1;
        }
        // sort each column by row and merge duplicates
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            scratch.clear();
            for p in count[j]..count[j + 1] {
                scratch.push((rows[p], vals[p]));
            }
            scratch.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < scratch.len() {
                let r = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == r {
                    v += scratch[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr[j + 1] = row_idx.len();
        }
        SparseSym { n, col_ptr, row_idx, values }
    }

    pub fn identity(n: usize, scale: f64) -> Self {
        let mut t = SymTriplets::new(n);
        for i in 0..n {
            t.add(i, i, scale);
        }
        t.build()
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.col(j).find(|&(r, _)| r == i).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    y[self.row_idx[p]] += self.values[p] * xj;
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for (i, v) in self.col(j) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Extract the symmetric submatrix on `keep` (new index = position in `keep`).
    pub fn submatrix(&self, keep: &[usize]) -> SparseSym {
        let mut pos = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let mut entries = Vec::new();
        for (new_j, &old_j) in keep.iter().enumerate() {
            for (i, v) in self.col(old_j) {
                if pos[i] != usize::MAX {
                    entries.push((pos[i], new_j, v));
                }
            }
        }
        SparseSym::from_triplets(keep.len(), &entries)
    }

    /// Rectangular block rows x cols as a row-major sparse matrix.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> SparseMat {
        let mut pos = vec![usize::MAX; self.n];
        for (new, &old) in rows.iter().enumerate() {
            pos[old] = new;
        }
        let mut m = SparseMat::zeros(rows.len(), cols.len());
        for (new_j, &old_j) in cols.iter().enumerate() {
            for (i, v) in self.col(old_j) {
                if pos[i] != usize::MAX {
                    m.rows[pos[i]].push((new_j, v));
                }
            }
        }
        for r in &mut m.rows {
            r.sort_unstable_by_key(|e| e.0);
        }
        m
    }

    pub fn add(&self, other: &SparseSym) -> SparseSym {
        assert_eq!(self.n, other.n);
        let mut entries = Vec::with_capacity(self.nnz() + other.nnz());
        for j in 0..self.n {
            for (i, v) in self.col(j) {
                entries.push((i, j, v));
            }
            for (i, v) in other.col(j) {
                entries.push((i, j, v));
            }
        }
        SparseSym::from_triplets(self.n, &entries)
    }

    /// Upper triangle of P A P^T in CSC, rows sorted; perm[i] = original index.
    fn permuted_upper(&self, perm: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let n = self.n;
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() / 2 + n);
        for j in 0..n {
            for (i, v) in self.col(j) {
                let (pi, pj) = (inv[i], inv[j]);
                if pi <= pj {
                    entries.push((pi, pj, v));
                }
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            col_ptr[j + 1] += 1;
            row_idx.push(i);
            values.push(v);
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        (col_ptr, row_idx, values)
    }
}

/// General rectangular sparse matrix, stored by rows.
#[derive(Clone, Debug)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMat { nrows, ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        SparseMat { nrows: rows.len(), ncols, rows }
    }

    pub fn push_entry(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.rows[i].push((j, v));
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMat {
        let mut t = SparseMat::zeros(self.ncols, self.nrows);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                t.rows[j].push((i, v));
            }
        }
        for r in &mut t.rows {
            r.sort_unstable_by_key(|e| e.0);
        }
        t
    }

    /// Keep a subset of rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> SparseMat {
        SparseMat {
            nrows: rows.len(),
            ncols: self.ncols,
            rows: rows.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// W = self * Q for symmetric Q.
    pub fn mul_sym(&self, q: &SparseSym) -> SparseMat {
        assert_eq!(self.ncols, q.n);
        let mut out = SparseMat::zeros(self.nrows, q.n);
        let mut acc = vec![0.0f64; q.n];
        let mut touched: Vec<usize> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for &(k, v) in r {
                for (j, qv) in q.col(k) {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += v * qv;
                }
            }
            touched.sort_unstable();
            let row = &mut out.rows[i];
            for &j in &touched {
                if acc[j] != 0.0 {
                    row.push((j, acc[j]));
                }
                acc[j] = 0.0;
            }
            touched.clear();
        }
        out
    }

    /// C = self * other^T (general rectangular result).
    pub fn mul_transpose(&self, other: &SparseMat) -> SparseMat {
        assert_eq!(self.ncols, other.ncols);
        let by_col = other.transpose();
        let mut out = SparseMat::zeros(self.nrows, other.nrows);
        let mut acc = vec![0.0f64; other.nrows];
        let mut touched: Vec<usize> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for &(k, v) in r {
                for &(j, w) in &by_col.rows[k] {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += v * w;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    out.rows[i].push((j, acc[j]));
                }
                acc[j] = 0.0;
            }
            touched.clear();
        }
        out
    }

    /// Keep a contiguous range of columns, shifting indices to start at 0.
    pub fn select_col_range(&self, range: std::ops::Range<usize>) -> SparseMat {
        let mut out = SparseMat::zeros(self.nrows, range.len());
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                if range.contains(&j) {
                    out.rows[i].push((j - range.start, v));
                }
            }
        }
        out
    }

    /// C = self * other^T, returned as a symmetric matrix (caller guarantees
    /// the product is symmetric; it is symmetrized to remove round-off skew).
    pub fn mul_transpose_sym(&self, other: &SparseMat) -> SparseSym {
        assert_eq!(self.ncols, other.ncols);
        assert_eq!(self.nrows, other.nrows);
        let by_col = other.transpose(); // rows of `by_col` are columns of other
        let mut entries = Vec::new();
        let mut acc = vec![0.0f64; other.nrows];
        let mut touched: Vec<usize> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for &(k, v) in r {
                for &(j, w) in &by_col.rows[k] {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += v * w;
                }
            }
            for &j in &touched {
                let v = acc[j];
                acc[j] = 0.0;
                if v != 0.0 {
                    entries.push((i, j, 0.5 * v));
                    entries.push((j, i, 0.5 * v));
                }
            }
            touched.clear();
        }
        SparseSym::from_triplets(self.nrows, &entries)
    }
}

/// Reverse Cuthill-McKee ordering of the pattern of `a`.
/// Returns `perm` with `perm[i]` = original index placed at position `i`.
pub fn rcm_ordering(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|j| a.col_ptr[j + 1] - a.col_ptr[j]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| -> usize {
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            last = u;
            let mut nbrs: Vec<usize> = a.col(u).map(|(i, _)| i).filter(|&i| i != u && !visited[i]).collect();
            nbrs.sort_unstable_by_key(|&i| (degree[i], i));
            for i in nbrs {
                if !visited[i] {
                    visited[i] = true;
                    queue.push_back(i);
                }
            }
        }
        last
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: run BFS twice
        let mut tmp_visited = visited.clone();
        let mut tmp_order = Vec::new();
        let far = bfs(seed, &mut tmp_visited, &mut tmp_order);
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// LDL^T factorization of an SPD [`SparseSym`] with a fill-reducing
/// permutation (reverse Cuthill-McKee by default).
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    pub fn new(a: &SparseSym) -> Result<Self> {
        Self::with_perm(a, rcm_ordering(a))
    }

    pub fn natural(a: &SparseSym) -> Result<Self> {
        Self::with_perm(a, (0..a.n).collect())
    }

    pub fn with_perm(a: &SparseSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.n;
        let (ap, ai, ax) = a.permuted_upper(&perm);

        // symbolic: elimination tree and column counts of L
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }

        // numeric, up-looking row by row
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0f64; lp[n]];
        let mut d = vec![0f64; n];
        let mut y = vec![0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut lnz_done = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                y[i] += ax[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for t in top..n {
                let i = stack[t];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = lp[i] + lnz_done[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                li[p2] = k;
                lx[p2] = lki;
                lnz_done[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::NotPositiveDefinite("LDL^T pivot <= 0"));
            }
        }
        Ok(LdlFactor { n, perm, lp, li, lx, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|&v| v.ln()).sum()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; self.n];
        for (i, &pi) in self.perm.iter().enumerate() {
            out[pi] = x[i];
        }
        out
    }

    /// Quadratic form b^T A^{-1} b.
    pub fn inv_quad(&self, b: &[f64]) -> f64 {
        self.solve(b).iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Map iid standard normals z to a draw with covariance A^{-1}:
    /// returns P^T L^{-T} D^{-1/2} z.
    pub fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut x: Vec<f64> = z.iter().zip(&self.d).map(|(&zi, &di)| zi / di.sqrt()).collect();
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; self.n];
        for (i, &pi) in self.perm.iter().enumerate() {
            out[pi] = x[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_spd(n: usize, rng: &mut ChaCha12Rng) -> SparseSym {
        // graph-like SPD: diagonally dominant on a random sparse pattern
        let mut t = SymTriplets::new(n);
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    t.add(i.min(j), i.max(j), v);
                    diag[i] += v.abs() + 0.1;
                    diag[j] += v.abs() + 0.1;
                }
            }
        }
        for i in 0..n {
            t.add(i, i, diag[i]);
        }
        t.build()
    }

    #[test]
    fn ldl_matches_dense() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..10 {
            let n = 5 + trial * 7;
            let a = random_spd(n, &mut rng);
            let f = LdlFactor::new(&a).unwrap();
            let ad = a.to_dense();
            let chol = nalgebra::Cholesky::new(ad.clone()).unwrap();
            // log determinant
            let ld_dense: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            assert!((f.log_det() - ld_dense).abs() < 1e-9, "logdet mismatch");
            // solve
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = f.solve(&b);
            let xd = chol.solve(&nalgebra::DVector::from_column_slice(&b));
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sample_transform_covariance() {
        // E[x x^T] over the transform of iid normals equals A^{-1}: check via
        // the identity Cov = T T^T where T = P^T L^{-T} D^{-1/2}.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 12;
        let a = random_spd(n, &mut rng);
        let f = LdlFactor::new(&a).unwrap();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut z = vec![0.0; n];
            z[j] = 1.0;
            let col = f.sample_transform(&z);
            for i in 0..n {
                for k in 0..n {
                    cov[(i, k)] += col[i] * col[k];
                }
            }
        }
        let inv = a.to_dense().try_inverse().unwrap();
        assert!((cov - inv).amax() < 1e-9);
    }

    #[test]
    fn products_and_blocks() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 20;
        let q = random_spd(n, &mut rng);
        let mut t = SparseMat::zeros(n, n);
        for i in 0..n {
            t.push_entry(i, i, 1.0);
            if i + 1 < n {
                t.push_entry(i, i + 1, rng.random_range(-1.0..1.0));
            }
        }
        let w = t.mul_sym(&q);
        let c = w.mul_transpose_sym(&t);
        let dense = t.to_dense() * q.to_dense() * t.to_dense().transpose();
        assert!((c.to_dense() - dense).amax() < 1e-12);

        let keep: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let sub = q.submatrix(&keep).to_dense();
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                assert_eq!(sub[(a, b)], q.get(i, j));
            }
        }
    }
}
