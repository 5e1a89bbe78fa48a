//! Sparse symmetric matrices, bandwidth-reducing ordering and a profile
//! Cholesky factorization. These back the shift-invert eigensolver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("factorization pivot {pivot} at row {row} is not positive")]
    NotPositiveDefinite { row: usize, pivot: f64 },
}

/// Compressed sparse row symmetric matrix (both triangles stored).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from (i, j, v) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        let mut cursor = counts.clone();
        for &(i, j, v) in triplets {
            let at = cursor[i];
            cols[at] = j;
            vals[at] = v;
            cursor[i] += 1;
        }
        // sort each row, merge duplicates
        let mut out_cols = Vec::with_capacity(triplets.len());
        let mut out_vals = Vec::with_capacity(triplets.len());
        let mut row_ptr = vec![0usize; n + 1];
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            for k in counts[i]..cursor[i] {
                scratch.push((cols[k], vals[k]));
            }
            scratch.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(j, v) in scratch.iter() {
                if last == Some(j) {
                    *out_vals.last_mut().unwrap() += v;
                } else {
                    out_cols.push(j);
                    out_vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr[i + 1] = out_cols.len();
        }
        Self { n, row_ptr, cols: out_cols, vals: out_vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut row = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                row += v * x[*c];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c == i {
                    d[i] = *v;
                }
            }
        }
        d
    }

    /// Symmetrically scale: out_ij = s_i * a_ij * s_j.
    pub fn scaled(&self, s: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            let lo = out.row_ptr[i];
            let hi = out.row_ptr[i + 1];
            for k in lo..hi {
                out.vals[k] *= s[i] * s[out.cols[k]];
            }
        }
        out
    }

    /// Add `t` to every diagonal entry (diagonal must be structurally present).
    pub fn shifted_diagonal(&self, t: f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            let lo = out.row_ptr[i];
            let hi = out.row_ptr[i + 1];
            let mut found = false;
            for k in lo..hi {
                if out.cols[k] == i {
                    out.vals[k] += t;
                    found = true;
                }
            }
            assert!(found, "diagonal entry missing in row {i}");
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering from a pseudo-peripheral start.
/// Returns `perm` with perm[new] = old.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    if n == 0 {
        return Vec::new();
    }
    let degree = |i: usize| a.row(i).0.len();
    // pseudo-peripheral: start anywhere, repeat BFS to the farthest vertex
    let mut start = (0..n).min_by_key(|&i| degree(i)).unwrap_or(0);
    let mut last_ecc = 0usize;
    for _ in 0..4 {
        let (far, ecc) = bfs_farthest(a, start);
        if ecc <= last_ecc {
            break;
        }
        last_ecc = ecc;
        start = far;
    }
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    let mut components_seed = start;
    loop {
        visited[components_seed] = true;
        queue.push_back(components_seed);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v] && v != u).collect();
            nbrs.sort_unstable_by_key(|&v| (degree(v), v));
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        match (0..n).find(|&i| !visited[i]) {
            Some(s) => components_seed = s,
            None => break,
        }
    }
    order.reverse();
    order
}

fn bfs_farthest(a: &CsrMatrix, start: usize) -> (usize, usize) {
    let n = a.n();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    let mut far = start;
    while let Some(u) = queue.pop_front() {
        if dist[u] > dist[far] {
            far = u;
        }
        for &v in a.row(u).0 {
            if v != u && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (far, dist[far])
}

/// Profile (skyline) Cholesky of a symmetric positive definite matrix,
/// factored in a bandwidth-reducing permutation.
pub struct SkylineCholesky {
    n: usize,
    perm: Vec<usize>, // perm[new] = old
    first: Vec<usize>,    // first stored column of each row
    offset: Vec<usize>,   // start of each row in `data`
    data: Vec<f64>,       // row-major envelope of L
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.n();
        let perm = rcm_order(a);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        // envelope extents in the permuted ordering
        let mut first = vec![0usize; n];
        for new_i in 0..n {
            let old_i = perm[new_i];
            let mut lo = new_i;
            for &old_j in a.row(old_i).0 {
                lo = lo.min(inv_perm[old_j]);
            }
            first[new_i] = lo;
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        // scatter entries of A into the envelope (lower triangle)
        for new_i in 0..n {
            let old_i = perm[new_i];
            let (cols, vals) = a.row(old_i);
            for (&old_j, &v) in cols.iter().zip(vals) {
                let new_j = inv_perm[old_j];
                if new_j <= new_i {
                    data[offset[new_i] + (new_j - first[new_i])] = v;
                }
            }
        }
        // profile LL^T, row by row
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = data[offset[i] + (j - fi)];
                let row_i = offset[i] - fi;
                let row_j = offset[j] - fj;
                for k in lo..j {
                    s -= data[row_i + k] * data[row_j + k];
                }
                data[offset[i] + (j - fi)] = s / data[offset[j] + (j - fj)];
            }
            let mut s = data[offset[i] + (i - fi)];
            let row_i = offset[i] - fi;
            for k in fi..i {
                let l = data[row_i + k];
                s -= l * l;
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
            }
            data[offset[i] + (i - fi)] = s.sqrt();
        }
        let _ = inv_perm;
        Ok(Self { n, perm, first, offset, data })
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = b[self.perm[i]];
        }
        // forward: L z = Pb
        for i in 0..n {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[row + k] * y[k];
            }
            y[i] = s / self.data[row + i];
        }
        // backward: L^T x = z  (column sweep over rows below)
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            y[i] /= self.data[row + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[row + k] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    pub fn profile_size(&self) -> usize {
        self.data.len()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale_in_place(a: &mut [f64], s: f64) {
    for v in a.iter_mut() {
        *v *= s;
    }
}
