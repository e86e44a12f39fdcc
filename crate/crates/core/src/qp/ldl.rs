//! Sparse LDLᵀ factorization of quasi-definite matrices.
//!
//! Up-looking factorization driven by the elimination tree, without
//! pivoting. The matrix is stored as its upper triangle and permuted
//! symmetrically by a fill-reducing ordering before factorization.

use super::csc::CscMatrix;
use super::ordering::{invert, minimum_degree};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    /// Upper triangle of the permuted matrix.
    pa: CscMatrix,
    /// `map[p]` is the position in `pa.values` of entry `p` of the original
    /// upper-triangular input.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LdlError {
    NotUpperTriangular,
    ZeroPivot(usize),
}

impl LdlFactor {
    /// Symbolic analysis of `upper` with a minimum-degree ordering. Values are
    /// loaded but not factorized; call [`LdlFactor::factor`].
    pub fn analyze(upper: &CscMatrix) -> Result<Self, LdlError> {
        let perm = minimum_degree(upper);
        Self::analyze_with(upper, perm)
    }

    pub fn analyze_with(upper: &CscMatrix, perm: Vec<usize>) -> Result<Self, LdlError> {
        let n = upper.ncols;
        let pinv = invert(&perm);
        // Permute entries, remembering where each original entry lands.
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(upper.nnz());
        for c in 0..n {
            for p in upper.colptr[c]..upper.colptr[c + 1] {
                let r = upper.rowind[p];
                if r > c {
                    return Err(LdlError::NotUpperTriangular);
                }
                let (pr, pc) = (pinv[r], pinv[c]);
                let (i, j) = if pr <= pc { (pr, pc) } else { (pc, pr) };
                entries.push((j, i, p));
            }
        }
        entries.sort_unstable();
        let mut colptr = vec![0usize; n + 1];
        let mut rowind = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut map = vec![0usize; upper.nnz()];
        for (pos, &(j, i, p)) in entries.iter().enumerate() {
            colptr[j + 1] += 1;
            rowind.push(i);
            values.push(upper.values[p]);
            map[p] = pos;
        }
        for j in 0..n {
            colptr[j + 1] += colptr[j];
        }
        let pa = CscMatrix {
            nrows: n,
            ncols: n,
            colptr,
            rowind,
            values,
        };

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for p in pa.colptr[j]..pa.colptr[j + 1] {
                let mut i = pa.rowind[p];
                while flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        Ok(Self {
            n,
            perm,
            pa,
            map,
            etree,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            work: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Overwrite the value of entry `p` of the original upper-triangular
    /// input.
    pub fn set_value(&mut self, p: usize, v: f64) {
        self.pa.values[self.map[p]] = v;
    }

    /// Overwrite all values, given in the order of the original input.
    pub fn set_values(&mut self, values: &[f64]) {
        for (p, &v) in values.iter().enumerate() {
            self.pa.values[self.map[p]] = v;
        }
    }

    /// Numeric factorization of the currently loaded values.
    pub fn factor(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let a = &self.pa;
        let mut y_vals = vec![0.0; n];
        let mut y_mark = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let b = a.rowind[p];
                if b == k {
                    self.d[k] = a.values[p];
                    continue;
                }
                y_vals[b] = a.values[p];
                if !y_mark[b] {
                    y_mark[b] = true;
                    elim[0] = b;
                    let mut n_elim = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_mark[next] {
                            break;
                        }
                        y_mark[next] = true;
                        elim[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let l = yc * self.dinv[c];
                self.lx[tmp] = l;
                self.d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_mark[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Number of positive pivots in D.
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|v| **v > 0.0).count()
    }

    /// Solve `K x = b` in place.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            self.work[k] = b[self.perm[k]];
        }
        let x = &mut self.work;
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * x[self.li[j]];
            }
            x[i] = s;
        }
        for k in 0..n {
            b[self.perm[k]] = self.work[k];
        }
    }
}
