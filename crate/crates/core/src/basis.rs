//! Knot grids and design matrices: B-spline, cyclic B-spline, tensor product,
//! varying coefficient, linear and categorical.
//!
//! B-splines are evaluated with the triangular form of the Cox–de Boor
//! recursion on an expanded knot vector. Non-cyclic grids extend the knot
//! sequence by `degree` equally spaced knots beyond each boundary. Cyclic
//! grids extend it periodically and then fold the `degree` trailing columns
//! onto the leading ones, so each basis function wraps around the seam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_kron, Matrix};

pub const MAX_DEGREE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    inner: Vec<f64>,
    lower: f64,
    upper: f64,
    degree: usize,
    cyclic: bool,
}

impl KnotGrid {
    pub fn new(inner: Vec<f64>, lower: f64, upper: f64, degree: usize, cyclic: bool) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::invalid(format!(
                "boundary knots must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!("degree {degree} exceeds {MAX_DEGREE}")));
        }
        if inner.is_empty() {
            return Err(Error::invalid("at least one inner knot is required"));
        }
        let mut prev = lower;
        for &k in &inner {
            if !(k > prev) {
                return Err(Error::invalid(
                    "inner knots must be strictly increasing inside the boundary knots",
                ));
            }
            prev = k;
        }
        if !(upper > prev) {
            return Err(Error::invalid("inner knots must lie strictly below the upper boundary"));
        }
        if cyclic && inner.len() < degree {
            return Err(Error::invalid(format!(
                "a cyclic grid of degree {degree} needs at least {degree} inner knots"
            )));
        }
        Ok(Self {
            inner,
            lower,
            upper,
            degree,
            cyclic,
        })
    }

    pub fn inner(&self) -> &[f64] {
        &self.inner
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn period(&self) -> f64 {
        self.upper - self.lower
    }

    /// Number of knot intervals between the boundary knots.
    fn n_intervals(&self) -> usize {
        self.inner.len() + 1
    }

    /// Boundary and inner knots, `ξ₀ < … < ξ_N`.
    fn interior(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.inner.len() + 2);
        t.push(self.lower);
        t.extend_from_slice(&self.inner);
        t.push(self.upper);
        t
    }

    /// Interior knots extended by `degree` knots on each side.
    fn expanded(&self) -> Vec<f64> {
        let t = self.interior();
        let n = self.n_intervals();
        let d = self.degree;
        let mut full = Vec::with_capacity(n + 1 + 2 * d);
        if self.cyclic {
            let p = self.period();
            for k in (1..=d).rev() {
                full.push(t[n - k] - p);
            }
            full.extend_from_slice(&t);
            for k in 1..=d {
                full.push(t[k] + p);
            }
        } else {
            let h_left = t[1] - t[0];
            let h_right = t[n] - t[n - 1];
            for k in (1..=d).rev() {
                full.push(self.lower - k as f64 * h_left);
            }
            full.extend_from_slice(&t);
            for k in 1..=d {
                full.push(self.upper + k as f64 * h_right);
            }
        }
        full
    }
}

/// Equidistant knot grid with `n_inner` inner knots on `[x_min, x_max]`.
pub fn make_knots(x_min: f64, x_max: f64, n_inner: usize, degree: usize, cyclic: bool) -> Result<KnotGrid> {
    if !(x_min < x_max) {
        return Err(Error::invalid(format!("empty covariate range [{x_min}, {x_max}]")));
    }
    if n_inner < 1 {
        return Err(Error::invalid("n_inner must be at least 1"));
    }
    if n_inner < degree {
        return Err(Error::invalid(format!(
            "n_inner = {n_inner} is smaller than the degree {degree}"
        )));
    }
    let h = (x_max - x_min) / (n_inner + 1) as f64;
    let inner = (1..=n_inner).map(|i| x_min + i as f64 * h).collect();
    KnotGrid::new(inner, x_min, x_max, degree, cyclic)
}

/// A knot grid together with its expanded knot vector.
#[derive(Clone, Debug)]
pub struct BasisSpec {
    grid: KnotGrid,
    knots: Vec<f64>,
    n_basis: usize,
}

impl BasisSpec {
    pub fn new(grid: KnotGrid) -> Self {
        let knots = grid.expanded();
        let n_basis = if grid.cyclic {
            grid.n_intervals()
        } else {
            grid.n_intervals() + grid.degree
        };
        Self {
            grid,
            knots,
            n_basis,
        }
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn is_cyclic(&self) -> bool {
        self.grid.cyclic
    }

    fn wrap(&self, x: f64) -> f64 {
        let g = &self.grid;
        let w = g.lower + (x - g.lower).rem_euclid(g.period());
        if w >= g.upper {
            g.lower
        } else {
            w
        }
    }

    /// Admissible evaluation point, or an out-of-range error tagged with `row`.
    fn locate(&self, x: f64, row: usize) -> Result<f64> {
        let g = &self.grid;
        if !x.is_finite() {
            return Err(Error::invalid(format!("row {row}: non-finite covariate value")));
        }
        if g.cyclic {
            Ok(self.wrap(x))
        } else if x < g.lower || x > g.upper {
            Err(Error::OutOfRange {
                row,
                value: x,
                lower: g.lower,
                upper: g.upper,
            })
        } else {
            Ok(x)
        }
    }

    /// Index `i` into the expanded knot vector with `knots[i] ≤ x < knots[i+1]`.
    fn span(&self, x: f64) -> usize {
        let d = self.grid.degree;
        let n = self.grid.n_intervals();
        let interior = &self.knots[d..=d + n];
        let s = interior.partition_point(|&k| k <= x).saturating_sub(1).min(n - 1);
        s + d
    }

    /// The `deg + 1` B-splines of degree `deg` that are nonzero on span `i`;
    /// entry `r` belongs to the function starting at knot `i − deg + r`.
    fn nonzero(&self, i: usize, x: f64, deg: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut vals = vec![0.0; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        vals[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        vals
    }

    fn scatter(&self, first: usize, vals: &[f64], out: &mut [f64]) {
        for (r, v) in vals.iter().enumerate() {
            let col = first + r;
            let col = if self.grid.cyclic { col % self.n_basis } else { col };
            out[col] += v;
        }
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_basis];
        self.eval_into(x, 0, &mut out)?;
        Ok(out)
    }

    fn eval_into(&self, x: f64, row: usize, out: &mut [f64]) -> Result<()> {
        let x = self.locate(x, row)?;
        let d = self.grid.degree;
        let i = self.span(x);
        let vals = self.nonzero(i, x, d);
        self.scatter(i - d, &vals, out);
        Ok(())
    }

    /// First derivative of every basis function at `x`.
    pub fn eval_derivative(&self, x: f64) -> Result<Vec<f64>> {
        let x = self.locate(x, 0)?;
        let d = self.grid.degree;
        let mut out = vec![0.0; self.n_basis];
        if d == 0 {
            return Ok(out);
        }
        let t = &self.knots;
        let i = self.span(x);
        let lower = self.nonzero(i, x, d - 1);
        // d/dx B_{k,d} = d·B_{k,d−1}/(t_{k+d}−t_k) − d·B_{k+1,d−1}/(t_{k+d+1}−t_{k+1})
        let mut vals = vec![0.0; d + 1];
        for (r, &b) in lower.iter().enumerate() {
            let k = i + 1 - d + r;
            let w = d as f64 * b / (t[k + d] - t[k]);
            vals[r + 1] += w;
            vals[r] -= w;
        }
        self.scatter(i - d, &vals, &mut out);
        Ok(out)
    }
}

/// Basis vector at one point.
pub fn eval_basis(spec: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    spec.eval(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub values: Matrix,
    pub labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: Matrix, labels: Vec<String>) -> Self {
        debug_assert_eq!(values.ncols(), labels.len());
        Self { values, labels }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            labels: self.labels.clone(),
        }
    }
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

/// Spline design: row `i` is the basis evaluated at `xs[i]`.
pub fn design(spec: &BasisSpec, xs: &[f64]) -> Result<DesignMatrix> {
    let p = spec.n_basis();
    let mut values = Matrix::zeros(xs.len(), p);
    let mut row = vec![0.0; p];
    for (i, &x) in xs.iter().enumerate() {
        row.iter_mut().for_each(|v| *v = 0.0);
        spec.eval_into(x, i, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    Ok(DesignMatrix::new(values, numbered("B", p)))
}

/// Tensor-product design with column `j·K + k` holding `B1[i,j]·B2[i,k]`.
pub fn tensor_design(b1: &DesignMatrix, b2: &DesignMatrix) -> Result<DesignMatrix> {
    if b1.nrows() != b2.nrows() {
        return Err(Error::DimensionMismatch {
            context: "tensor_design rows",
            expected: b1.nrows(),
            found: b2.nrows(),
        });
    }
    let labels = b1
        .labels
        .iter()
        .flat_map(|a| b2.labels.iter().map(move |b| format!("{a}:{b}")))
        .collect();
    Ok(DesignMatrix::new(row_kron(&b1.values, &b2.values), labels))
}

/// Varying-coefficient design `x · B(z)`: rows of `bz` scaled by `x`.
pub fn varying_design(x: &[f64], bz: &DesignMatrix) -> Result<DesignMatrix> {
    if x.len() != bz.nrows() {
        return Err(Error::DimensionMismatch {
            context: "varying_design rows",
            expected: bz.nrows(),
            found: x.len(),
        });
    }
    let mut values = bz.values.clone();
    for (i, &xi) in x.iter().enumerate() {
        values.row_mut(i).scale_mut(xi);
    }
    Ok(DesignMatrix::new(values, bz.labels.clone()))
}

/// 0/1 indicator design for 1-based level ids.
pub fn categorical_design(levels: &[usize], n_levels: usize) -> Result<DesignMatrix> {
    let mut values = Matrix::zeros(levels.len(), n_levels);
    for (i, &l) in levels.iter().enumerate() {
        if l < 1 || l > n_levels {
            return Err(Error::invalid(format!(
                "row {i}: level {l} outside 1..={n_levels}"
            )));
        }
        values[(i, l - 1)] = 1.0;
    }
    Ok(DesignMatrix::new(values, numbered("level", n_levels)))
}

/// Linear design `[1, x₁, …, x_k]` (intercept optional).
pub fn linear_design(columns: &[(&str, &[f64])], n: usize, intercept: bool) -> Result<DesignMatrix> {
    for (name, col) in columns {
        if col.len() != n {
            return Err(Error::DimensionMismatch {
                context: "linear_design rows",
                expected: n,
                found: col.len(),
            });
        }
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("row {i}: non-finite value in `{name}`")));
        }
    }
    let offset = usize::from(intercept);
    let p = columns.len() + offset;
    let values = Matrix::from_fn(n, p, |i, j| {
        if j < offset {
            1.0
        } else {
            columns[j - offset].1[i]
        }
    });
    let mut labels = Vec::with_capacity(p);
    if intercept {
        labels.push("(Intercept)".to_string());
    }
    labels.extend(columns.iter().map(|(name, _)| name.to_string()));
    Ok(DesignMatrix::new(values, labels))
}
