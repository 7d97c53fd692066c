//! Goldfarb–Idnani dual active-set method for strictly convex QPs
//!
//! ```text
//!     minimize   ½ xᵀ G x − aᵀ x
//!     subject to C x ≥ b
//! ```
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time, dropping active ones whose multipliers would
//! turn negative. It keeps `J = L⁻ᵀ Qᵀ` and an upper-triangular `R` with
//! `Jᵀ N = [R; 0]`, where `N` stacks the active constraint normals and
//! `G = L Lᵀ`. Both are updated with Givens rotations.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Debug)]
pub struct QpOutcome {
    pub x: Vector,
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Rotation `(c, s)` with `[c s; −s c]·[a; b] = [h; 0]`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// Columns `(i, k)` of `m` ← `(c·m_i + s·m_k, −s·m_i + c·m_k)`.
fn rotate_columns(m: &mut Matrix, i: usize, k: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (a, b) = (m[(r, i)], m[(r, k)]);
        m[(r, i)] = c * a + s * b;
        m[(r, k)] = -s * a + c * b;
    }
}

struct Factor {
    j: Matrix,
    r: Matrix,
    q: usize,
}

impl Factor {
    /// Append the constraint whose transformed normal is `d = Jᵀ n`.
    fn add(&mut self, mut d: Vector) {
        let p = self.j.nrows();
        let q = self.q;
        for k in (q + 1..p).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
    }

    /// Remove the `k`-th active constraint and restore triangularity.
    fn drop(&mut self, k: usize) {
        let q = self.q;
        for col in k..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for row in k..q - 1 {
            let (c, s, h) = givens(self.r[(row, row)], self.r[(row + 1, row)]);
            if s == 0.0 {
                continue;
            }
            self.r[(row, row)] = h;
            self.r[(row + 1, row)] = 0.0;
            for col in row + 1..q - 1 {
                let (a, b) = (self.r[(row, col)], self.r[(row + 1, col)]);
                self.r[(row, col)] = c * a + s * b;
                self.r[(row + 1, col)] = -s * a + c * b;
            }
            rotate_columns(&mut self.j, row, row + 1, c, s);
        }
        self.q -= 1;
    }

    /// Solve `R[..q, ..q] r = d[..q]`.
    fn back_solve(&self, d: &Vector) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }
}

/// Solve the QP given `L⁻ᵀ` (with `G = L Lᵀ`) and the unconstrained
/// minimizer `x0 = G⁻¹ a`.
pub fn dual_active_set(
    linv_t: &Matrix,
    x0: Vector,
    c: &Matrix,
    b: &Vector,
    max_iter: usize,
) -> Result<QpOutcome> {
    let p = linv_t.nrows();
    let m = c.nrows();
    if c.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "constraint matrix columns",
            expected: p,
            found: c.ncols(),
        });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            context: "constraint bound length",
            expected: m,
            found: b.len(),
        });
    }
    let row_norm = (0..m).map(|i| c.row(i).norm()).fold(0.0_f64, f64::max);
    let b_norm = b.amax();

    let mut x = x0;
    let mut fac = Factor {
        j: linv_t.clone(),
        r: Matrix::zeros(p, p),
        q: 0,
    };
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut iterations = 0;

    loop {
        let tol = 1e-13 * (1.0 + x.amax() * row_norm + b_norm);
        let slack = c * &x - b;
        let mut pick = None;
        let mut worst = -tol;
        for i in 0..m {
            if !is_active[i] && slack[i] < worst {
                worst = slack[i];
                pick = Some(i);
            }
        }
        let Some(pc) = pick else { break };
        let np: Vector = c.row(pc).transpose();
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NotConverged(format!(
                    "active-set QP exceeded {max_iter} iterations"
                )));
            }
            let q = fac.q;
            let d = fac.j.transpose() * &np;
            let tail = d.rows(q, p - q);
            let z = fac.j.columns(q, p - q) * tail;
            let r = fac.back_solve(&d);

            // dual (partial) step bound
            let r_max = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > f64::EPSILON * r_max {
                    let t = mult[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            // primal (full) step
            let z_np = z.dot(&np);
            let t2 = if tail.norm_squared() > 1e-14 * d.norm_squared() && z_np > 0.0 {
                -(np.dot(&x) - b[pc]) / z_np
            } else {
                f64::INFINITY
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }
            for (k, rk) in r.iter().enumerate() {
                mult[k] -= t * rk;
            }
            u_plus += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                fac.add(d);
                active.push(pc);
                mult.push(u_plus);
                is_active[pc] = true;
                break;
            }
            let k = drop_at.expect("finite partial step has a blocking constraint");
            fac.drop(k);
            is_active[active[k]] = false;
            active.remove(k);
            mult.remove(k);
        }
    }

    Ok(QpOutcome {
        x,
        active,
        multipliers: mult,
        iterations,
    })
}
