//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Row-wise Kronecker product: row i of the result is `a[i, :] ⊗ b[i, :]`.
pub fn row_kron(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.nrows(), b.nrows());
    let (n, p, q) = (a.nrows(), a.ncols(), b.ncols());
    Matrix::from_fn(n, p * q, |i, col| a[(i, col / q)] * b[(i, col % q)])
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Symmetric positive definite system `A x = rhs`, factored once.
///
/// `A` is the penalized Gram matrix plus a ridge jitter proportional to its
/// mean diagonal, which keeps rank-deficient designs solvable.
#[derive(Clone, Debug)]
pub struct SpdSystem {
    matrix: Matrix,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Relative ridge added to the diagonal of every normal-equations matrix.
pub const RIDGE_JITTER: f64 = 1e-10;

impl SpdSystem {
    /// Factor `gram + penalty + jitter·I`, where jitter is
    /// `RIDGE_JITTER · trace(gram) / p`.
    pub fn new(gram: &Matrix, penalty: &Matrix) -> Result<Self> {
        let p = gram.nrows();
        let scale = if p == 0 { 0.0 } else { gram.trace() / p as f64 };
        let jitter = RIDGE_JITTER * if scale > 0.0 { scale } else { 1.0 };
        let mut matrix = gram + penalty;
        for i in 0..p {
            matrix[(i, i)] += jitter;
        }
        Self::factor(matrix, jitter)
    }

    fn factor(matrix: Matrix, jitter: f64) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite normal equations".into()));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Singular("normal equations not positive definite".into()))?;
        Ok(Self {
            matrix,
            chol,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor `L` with `A = L Lᵀ`.
    pub fn lower(&self) -> Matrix {
        self.chol.l()
    }

    /// Solve with one step of iterative refinement.
    pub fn solve(&self, rhs: &Vector) -> Vector {
        let mut x = self.chol.solve(rhs);
        let resid = rhs - &self.matrix * &x;
        x += self.chol.solve(&resid);
        x
    }
}
