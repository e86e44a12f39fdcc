//! Compressed sparse column matrices.

/// A sparse matrix in compressed sparse column form. Row indices within each
/// column are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowind: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Build from `(row, col, value)` triplets, summing duplicates. Entries
    /// that sum to zero are kept as explicit zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowind = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for c in 0..ncols {
            scratch.clear();
            scratch.extend((counts[c]..counts[c + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < scratch.len() {
                let r = scratch[i].0;
                let mut v = 0.0;
                while i < scratch.len() && scratch[i].0 == r {
                    v += scratch[i].1;
                    i += 1;
                }
                rowind.push(r);
                values.push(v);
            }
            colptr[c + 1] = rowind.len();
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.colptr[c]..self.colptr[c + 1]).map(move |p| (self.rowind[p], c, self.values[p]))
        })
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_add(x, &mut y);
        y
    }

    /// `y += A x`
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowind[p]] += self.values[p] * xc;
            }
        }
    }

    /// `y = Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (c, yc) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.colptr[c]..self.colptr[c + 1] {
                s += self.values[p] * x[self.rowind[p]];
            }
            *yc = s;
        }
        y
    }

    /// `y = P x` for a symmetric matrix stored as its upper triangle.
    pub fn sym_upper_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for c in 0..self.ncols {
            for p in self.colptr[c]..self.colptr[c + 1] {
                let r = self.rowind[p];
                let v = self.values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// Upper triangle (including the diagonal) of a square matrix.
    pub fn upper_triangle(&self) -> Self {
        let t: Vec<_> = self.triplets().filter(|(r, c, _)| r <= c).collect();
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Infinity norm of each column.
    pub fn col_norms_inf(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|c| {
                self.values[self.colptr[c]..self.colptr[c + 1]]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    /// Infinity norm of each row.
    pub fn row_norms_inf(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.nrows];
        for (r, _, v) in self.triplets() {
            out[r] = out[r].max(v.abs());
        }
        out
    }

    /// Column infinity norms of a symmetric matrix stored as its upper
    /// triangle.
    pub fn sym_upper_col_norms_inf(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.ncols];
        for (r, c, v) in self.triplets() {
            out[c] = out[c].max(v.abs());
            out[r] = out[r].max(v.abs());
        }
        out
    }

    /// `A ← diag(left) A diag(right)`
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for c in 0..self.ncols {
            for p in self.colptr[c]..self.colptr[c + 1] {
                self.values[p] *= left[self.rowind[p]] * right[c];
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }
}
