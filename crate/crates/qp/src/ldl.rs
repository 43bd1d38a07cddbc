//! Sparse LDLᵀ factorization for symmetric quasi-definite matrices.
//!
//! Symbolic analysis (ordering, elimination tree, column counts) is separated
//! from the numeric phase so that matrices with a fixed pattern can be
//! refactored cheaply when only values change.

use crate::error::QpError;
use crate::ordering::{invert, minimum_degree};
use crate::sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // permuted upper triangle
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    // position in the permuted storage of each entry of the source upper triangle
    src_to_perm: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    src_colptr: Vec<usize>,
    src_rowidx: Vec<usize>,
}

impl LdlSymbolic {
    /// Analyzes the pattern of `upper`, the upper triangle (with full
    /// diagonal) of a symmetric matrix.
    pub fn analyze(upper: &CscMatrix) -> Result<Self, QpError> {
        let n = upper.ncols;
        if upper.nrows != n {
            return Err(QpError::Dimension(format!(
                "KKT matrix is {}x{}",
                upper.nrows, upper.ncols
            )));
        }
        for j in 0..n {
            let col = &upper.rowidx[upper.colptr[j]..upper.colptr[j + 1]];
            if col.iter().any(|&i| i > j) {
                return Err(QpError::Dimension("matrix is not upper triangular".into()));
            }
            if col.last() != Some(&j) {
                return Err(QpError::Dimension(format!("missing diagonal entry {j}")));
            }
        }
        let perm = minimum_degree(upper);
        let iperm = invert(&perm);

        let mut counts = vec![0usize; n + 1];
        for (i, j, _) in upper.iter() {
            let (pi, pj) = (iperm[i], iperm[j]);
            counts[pi.max(pj) + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let colptr = counts.clone();
        let mut next = counts;
        let mut rowidx = vec![0usize; upper.nnz()];
        let mut src_to_perm = vec![0usize; upper.nnz()];
        for (k, (i, j, _)) in upper.iter().enumerate() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = (pi.min(pj), pi.max(pj));
            rowidx[next[c]] = r;
            src_to_perm[k] = next[c];
            next[c] += 1;
        }

        // elimination tree and column counts of L
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for &r in &rowidx[colptr[j]..colptr[j + 1]] {
                let mut i = r;
                while i < j && flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                    if i == NONE {
                        break;
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + lnz[j];
        }

        Ok(Self {
            n,
            perm,
            iperm,
            colptr,
            rowidx,
            src_to_perm,
            etree,
            lp,
            src_colptr: upper.colptr.clone(),
            src_rowidx: upper.rowidx.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn l_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// True when `upper` has exactly the pattern this analysis was built for.
    pub fn matches(&self, upper: &CscMatrix) -> bool {
        upper.ncols == self.n && upper.colptr == self.src_colptr && upper.rowidx == self.src_rowidx
    }
}

/// Numeric factor tied to an [`LdlSymbolic`].
#[derive(Debug, Clone)]
pub struct LdlFactor {
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    values: Vec<f64>,
    positive_pivots: usize,
}

impl LdlFactor {
    /// Factors the matrix whose upper-triangle values (in the source column
    /// order) are `upper_values`.
    pub fn factor(sym: &LdlSymbolic, upper_values: &[f64]) -> Result<Self, QpError> {
        let mut f = Self {
            li: vec![0; sym.l_nnz()],
            lx: vec![0.0; sym.l_nnz()],
            d: vec![0.0; sym.n],
            dinv: vec![0.0; sym.n],
            values: vec![0.0; sym.rowidx.len()],
            positive_pivots: 0,
        };
        f.refactor(sym, upper_values)?;
        Ok(f)
    }

    pub fn refactor(&mut self, sym: &LdlSymbolic, upper_values: &[f64]) -> Result<(), QpError> {
        assert_eq!(upper_values.len(), sym.src_to_perm.len());
        for (k, &v) in upper_values.iter().enumerate() {
            self.values[sym.src_to_perm[k]] = v;
        }
        let n = sym.n;
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut marked = vec![false; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = sym.lp[..n].to_vec();
        self.positive_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in sym.colptr[k]..sym.colptr[k + 1] {
                let i = sym.rowidx[p];
                let v = self.values[p];
                if i == k {
                    self.d[k] = v;
                    continue;
                }
                y_vals[i] = v;
                if marked[i] {
                    continue;
                }
                marked[i] = true;
                elim[0] = i;
                let mut n_e = 1;
                let mut nxt = sym.etree[i];
                while nxt != NONE && nxt < k {
                    if marked[nxt] {
                        break;
                    }
                    marked[nxt] = true;
                    elim[n_e] = nxt;
                    n_e += 1;
                    nxt = sym.etree[nxt];
                }
                while n_e > 0 {
                    n_e -= 1;
                    y_idx[nnz_y] = elim[n_e];
                    nnz_y += 1;
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in sym.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                marked[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(QpError::Factorization(format!("zero or non-finite pivot at {k}")));
            }
            if self.d[k] > 0.0 {
                self.positive_pivots += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    pub fn positive_pivots(&self) -> usize {
        self.positive_pivots
    }

    /// Solves `K x = b` in place.
    pub fn solve(&self, sym: &LdlSymbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[sym.perm[i]]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in sym.lp[j]..sym.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] *= self.dinv[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in sym.lp[j]..sym.lp[j + 1] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[j] = acc;
        }
        for i in 0..n {
            b[i] = x[sym.iperm[i]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;

    fn upper_of(dense: &[Vec<f64>]) -> CscMatrix {
        let n = dense.len();
        let mut t = Triplets::new(n, n);
        for j in 0..n {
            for i in 0..=j {
                if dense[i][j] != 0.0 || i == j {
                    t.push(i, j, dense[i][j]);
                }
            }
        }
        t.to_csc()
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [P A^T; A -I] with P = [[4,1],[1,3]], A = [1 1]
        let k = vec![
            vec![4.0, 1.0, 1.0],
            vec![1.0, 3.0, 1.0],
            vec![1.0, 1.0, -1.0],
        ];
        let up = upper_of(&k);
        let sym = LdlSymbolic::analyze(&up).unwrap();
        let f = LdlFactor::factor(&sym, &up.values).unwrap();
        assert_eq!(f.positive_pivots(), 2);
        let rhs = vec![1.0, 2.0, 3.0];
        let mut x = rhs.clone();
        f.solve(&sym, &mut x);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| k[i][j] * x[j]).sum();
            assert!((r - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn refactor_with_new_values_same_pattern() {
        let k1 = vec![vec![2.0, 1.0], vec![1.0, -1.0]];
        let k2 = vec![vec![5.0, 1.0], vec![1.0, -0.5]];
        let up1 = upper_of(&k1);
        let up2 = upper_of(&k2);
        let sym = LdlSymbolic::analyze(&up1).unwrap();
        assert!(sym.matches(&up2));
        let mut f = LdlFactor::factor(&sym, &up1.values).unwrap();
        f.refactor(&sym, &up2.values).unwrap();
        let mut x = vec![1.0, 1.0];
        f.solve(&sym, &mut x);
        assert!((5.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] - 0.5 * x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let k = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        let up = upper_of(&k);
        let sym = LdlSymbolic::analyze(&up).unwrap();
        assert!(LdlFactor::factor(&sym, &up.values).is_err());
    }
}
