//! Difference matrices and the quadratic penalties built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, Matrix, Vector};

/// Default multiplier for asymmetric (constraint) and boundary penalties.
pub const DEFAULT_CONSTRAINT_LAMBDA: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sides {
    Left,
    Right,
    Both,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Signed stencil of an order-`d` forward difference, lowest index first.
fn stencil(d: usize) -> Vec<f64> {
    (0..=d)
        .map(|i| {
            let s = if (d - i) % 2 == 0 { 1.0 } else { -1.0 };
            s * binomial(d, i)
        })
        .collect()
}

/// Order-`d` difference matrix of size `(J − d) × J`. Order 0 is the identity.
pub fn diff_matrix(j: usize, d: usize) -> Result<Matrix> {
    if j == 0 || d >= j {
        return Err(Error::invalid(format!(
            "difference order {d} needs more than {d} coefficients, got {j}"
        )));
    }
    let w = stencil(d);
    let mut m = Matrix::zeros(j - d, j);
    for r in 0..j - d {
        for (i, &v) in w.iter().enumerate() {
            m[(r, r + i)] = v;
        }
    }
    Ok(m)
}

/// Circulant `J × J` difference matrix; row `r` differences `β_r` against the
/// preceding coefficients with indices taken modulo `J`.
pub fn cyclic_diff_matrix(j: usize, d: usize) -> Result<Matrix> {
    if d == 0 || d >= j {
        return Err(Error::invalid(format!(
            "cyclic difference order {d} must satisfy 1 <= d < {j}"
        )));
    }
    let w = stencil(d);
    let mut m = Matrix::zeros(j, j);
    for r in 0..j {
        for (i, &v) in w.iter().enumerate() {
            let col = (r + j + i - d) % j;
            m[(r, col)] += v;
        }
    }
    Ok(m)
}

/// `DᵀD`.
pub fn quad_penalty(d: &Matrix) -> Matrix {
    d.transpose() * d
}

/// 0/1 weights of an asymmetric penalty.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WeightVector(pub Vec<bool>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active(&self) -> usize {
        self.0.iter().filter(|&&v| v).count()
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(self.0.len(), self.0.iter().map(|&v| f64::from(u8::from(v))))
    }
}

/// Weight 1 where a difference violates or touches the constraint.
///
/// Increasing: `v_r = 1` iff `(Dβ)_r ≤ 0`. Decreasing: `v_r = 1` iff `(Dβ)_r ≥ 0`.
pub fn asym_weights(beta: &[f64], d: &Matrix, direction: Direction) -> Result<WeightVector> {
    if beta.len() != d.ncols() {
        return Err(Error::DimensionMismatch {
            context: "asym_weights coefficients",
            expected: d.ncols(),
            found: beta.len(),
        });
    }
    let diffs = d * Vector::from_column_slice(beta);
    let s = direction.sign();
    Ok(WeightVector(diffs.iter().map(|&v| s * v <= 0.0).collect()))
}

/// `Dᵀ diag(v) D`.
pub fn asym_penalty(d: &Matrix, v: &WeightVector) -> Result<Matrix> {
    if v.len() != d.nrows() {
        return Err(Error::DimensionMismatch {
            context: "asym_penalty weights",
            expected: d.nrows(),
            found: v.len(),
        });
    }
    let mut weighted = d.clone();
    for (r, &on) in v.0.iter().enumerate() {
        if !on {
            weighted.row_mut(r).fill(0.0);
        }
    }
    Ok(d.transpose() * weighted)
}

/// Mask of the order-`e` difference rows whose stencil touches one of the
/// `n_edge` outermost coefficients on the selected side(s).
pub fn boundary_mask(j: usize, e: usize, n_edge: usize, sides: Sides) -> Result<WeightVector> {
    if e == 0 || e >= j {
        return Err(Error::invalid(format!("boundary order {e} must satisfy 1 <= e < {j}")));
    }
    if n_edge < e || n_edge > j {
        return Err(Error::invalid(format!(
            "boundary width {n_edge} must lie in {e}..={j}"
        )));
    }
    let left = matches!(sides, Sides::Left | Sides::Both);
    let right = matches!(sides, Sides::Right | Sides::Both);
    Ok(WeightVector(
        (0..j - e)
            .map(|r| (left && r < n_edge) || (right && r + e >= j - n_edge))
            .collect(),
    ))
}

/// Boundary penalty `D₍e₎ᵀ diag(v⁽³⁾) D₍e₎`.
pub fn boundary_penalty(j: usize, e: usize, n_edge: usize, sides: Sides) -> Result<Matrix> {
    let mask = boundary_mask(j, e, n_edge, sides)?;
    asym_penalty(&diff_matrix(j, e)?, &mask)
}

fn require_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

/// `K1 ⊗ I_K + I_J ⊗ K2` for coefficients ordered `β₁₁, …, β₁K, β₂₁, …`.
pub fn tensor_penalty(k1: &Matrix, k2: &Matrix) -> Result<Matrix> {
    require_square(k1, "tensor_penalty first factor")?;
    require_square(k2, "tensor_penalty second factor")?;
    let (j, k) = (k1.nrows(), k2.nrows());
    Ok(kron(k1, &Matrix::identity(k, k)) + kron(&Matrix::identity(j, j), k2))
}

/// Differences along the first tensor direction, `D1 ⊗ I_K`.
pub fn tensor_diff_first(d1: &Matrix, k: usize) -> Matrix {
    kron(d1, &Matrix::identity(k, k))
}

/// Differences along the second tensor direction, `I_J ⊗ D2`.
pub fn tensor_diff_second(d2: &Matrix, j: usize) -> Matrix {
    kron(&Matrix::identity(j, j), d2)
}

/// Asymmetric penalties for both tensor directions.
pub fn tensor_asym_penalties(
    d1: &Matrix,
    d2: &Matrix,
    v1: &WeightVector,
    v2: &WeightVector,
    j: usize,
    k: usize,
) -> Result<(Matrix, Matrix)> {
    if d1.ncols() != j || d2.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "tensor_asym_penalties factor columns",
            expected: j * k,
            found: d1.ncols() * d2.ncols(),
        });
    }
    let p1 = asym_penalty(&tensor_diff_first(d1, k), v1)?;
    let p2 = asym_penalty(&tensor_diff_second(d2, j), v2)?;
    Ok((p1, p2))
}

/// One asymmetric penalty `λ (Dβ)ᵀ V (Dβ)` with state-dependent weights.
#[derive(Clone, Debug)]
pub struct AsymTerm {
    pub diff: Matrix,
    pub direction: Direction,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct BoundaryTerm {
    pub matrix: Matrix,
    pub lambda: f64,
}

/// Smoothness penalty `λ·K` plus optional constraint and boundary penalties.
/// A ridge penalty is a bundle whose `smooth` matrix is the identity.
#[derive(Clone, Debug)]
pub struct PenaltyBundle {
    pub smooth: Matrix,
    pub lambda: f64,
    pub asym: Vec<AsymTerm>,
    pub boundary: Option<BoundaryTerm>,
}

impl PenaltyBundle {
    pub fn new(smooth: Matrix, lambda: f64) -> Self {
        Self {
            smooth,
            lambda,
            asym: Vec::new(),
            boundary: None,
        }
    }

    pub fn none(p: usize) -> Self {
        Self::new(Matrix::zeros(p, p), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.smooth.nrows()
    }

    /// The state-independent part: `λ K + λ₃ P_boundary`.
    pub fn fixed(&self) -> Matrix {
        let mut m = &self.smooth * self.lambda;
        if let Some(b) = &self.boundary {
            m += &b.matrix * b.lambda;
        }
        m
    }
}
