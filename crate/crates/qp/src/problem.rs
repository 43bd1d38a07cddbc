use crate::error::QpError;
use crate::sparse::CscMatrix;

/// Linearly constrained convex QP
///
/// ```text
/// minimize    ½ xᵀ P x + qᵀ x
/// subject to  A x = b,  G x ≤ h,  lb ≤ x ≤ ub
/// ```
///
/// `P` is stored with both triangles. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl QpProblem {
    /// An unconstrained problem over `n` variables with all-zero data.
    pub fn empty(n: usize) -> Self {
        Self {
            p: CscMatrix::zeros(n, n),
            q: vec![0.0; n],
            a: CscMatrix::zeros(0, n),
            b: Vec::new(),
            g: CscMatrix::zeros(0, n),
            h: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * crate::sparse::dot(x, &px) + crate::sparse::dot(&self.q, x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let dims = [
            ("P rows", self.p.nrows, n),
            ("P cols", self.p.ncols, n),
            ("A cols", self.a.ncols, n),
            ("b", self.b.len(), self.a.nrows),
            ("G cols", self.g.ncols, n),
            ("h", self.h.len(), self.g.nrows),
            ("lb", self.lb.len(), n),
            ("ub", self.ub.len(), n),
        ];
        for (what, got, want) in dims {
            if got != want {
                return Err(QpError::Dimension(format!("{what}: got {got}, expected {want}")));
            }
        }
        if !(self.p.is_finite() && self.a.is_finite() && self.g.is_finite()) {
            return Err(QpError::InvalidData("non-finite matrix entry".into()));
        }
        if self.q.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidData("non-finite q or b".into()));
        }
        if self.h.iter().chain(&self.lb).chain(&self.ub).any(|v| v.is_nan()) {
            return Err(QpError::InvalidData("NaN in h or bounds".into()));
        }
        for (i, j, v) in self.p.iter() {
            if (self.p.get(j, i) - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(QpError::InvalidData(format!("P not symmetric at ({i}, {j})")));
            }
        }
        Ok(())
    }
}
