use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

/// Factorization of a symmetric positive semi-definite matrix, reusable for
/// several right-hand sides. Falls back to a truncated SVD when Cholesky fails.
pub enum SpdFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Svd(SVD<f64, Dyn, Dyn>, f64),
}

impl SpdFactor {
    pub fn new(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        match Cholesky::new(a.clone()) {
            // reject factors whose pivots reveal numerical rank loss
            Some(c) if well_conditioned(&c) => SpdFactor::Cholesky(c),
            _ => {
                let svd = SVD::new(a, true, true);
                let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
                let eps = smax * n.max(1) as f64 * f64::EPSILON;
                SpdFactor::Svd(svd, eps)
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Svd(svd, eps) => svd.solve(b, *eps).expect("SVD computed with both factors"),
        }
    }
}

fn well_conditioned(c: &Cholesky<f64, Dyn>) -> bool {
    let l = c.l_dirty();
    let d: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    // pivots are square roots of the eigenvalue scale
    d.iter().all(|v| v.is_finite()) && min > max * (f64::EPSILON * l.nrows().max(1) as f64).sqrt()
}

/// Solves `(a + shift·I) x = b`.
pub fn solve_shifted(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> DVector<f64> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    SpdFactor::new(m).solve(b)
}

/// Principal submatrix and subvector on `idx`.
pub fn restrict(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let n = idx.len();
    (
        DMatrix::from_fn(n, n, |i, j| a[(idx[i], idx[j])]),
        DVector::from_fn(n, |i, _| b[idx[i]]),
    )
}
