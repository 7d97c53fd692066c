//! Penalized least squares: unconstrained, iteratively reweighted asymmetric,
//! and inequality constrained, plus smoothing-parameter calibration.

pub mod qp;

use std::collections::HashSet;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdSystem, Vector};
use crate::penalty::{asym_penalty, Direction, PenaltyBundle, WeightVector};

/// Upper cap on calibrated smoothing parameters.
pub const LAMBDA_MAX: f64 = 1e12;
/// Default iteration limit of the reweighting loop.
pub const DEFAULT_MAX_ITER: usize = 50;

/// `(u − Bβ)ᵀ(u − Bβ) + penalty`.
#[derive(Clone, Copy, Debug)]
pub struct PlsProblem<'a> {
    pub design: &'a Matrix,
    pub response: &'a Vector,
    pub penalty: &'a PenaltyBundle,
}

impl<'a> PlsProblem<'a> {
    pub fn new(design: &'a Matrix, response: &'a Vector, penalty: &'a PenaltyBundle) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch {
                context: "response length",
                expected: design.nrows(),
                found: response.len(),
            });
        }
        if design.ncols() != penalty.dim() {
            return Err(Error::DimensionMismatch {
                context: "penalty dimension",
                expected: design.ncols(),
                found: penalty.dim(),
            });
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response contains non-finite values"));
        }
        Ok(Self {
            design,
            response,
            penalty,
        })
    }

    fn gram(&self) -> Matrix {
        self.design.tr_mul(self.design)
    }

    fn cross(&self) -> Vector {
        self.design.tr_mul(self.response)
    }

    /// Objective with the state-independent penalty only.
    pub fn objective(&self, beta: &Vector) -> f64 {
        let resid = self.response - self.design * beta;
        resid.norm_squared() + beta.dot(&(self.penalty.fixed() * beta))
    }
}

/// `Cβ ≥ bound`.
#[derive(Clone, Debug)]
pub struct QpConstraint {
    pub matrix: Matrix,
    pub bound: Vector,
}

impl QpConstraint {
    pub fn homogeneous(matrix: Matrix) -> Self {
        let m = matrix.nrows();
        Self {
            matrix,
            bound: Vector::zeros(m),
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn slack(&self, beta: &Vector) -> Vector {
        &self.matrix * beta - &self.bound
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub beta: Vector,
    pub iterations: usize,
    /// Active constraint rows (QP path).
    pub active_set: Vec<usize>,
    /// Lagrange multipliers of `active_set` for the objective scaled by ½.
    pub multipliers: Vec<f64>,
    /// Final weights, one vector per asymmetric penalty (reweighting path).
    pub weights: Vec<WeightVector>,
    pub converged: bool,
    /// The reweighting loop revisited a weight pattern; `beta` is the
    /// lowest-objective iterate seen.
    pub cycle_detected: bool,
}

impl SolveReport {
    fn direct(beta: Vector) -> Self {
        Self {
            beta,
            iterations: 1,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            weights: Vec::new(),
            converged: true,
            cycle_detected: false,
        }
    }
}

/// `β̂ = (BᵀB + P)⁻¹ Bᵀu` with the fixed part `P` of the penalty bundle.
pub fn solve_pls(prob: &PlsProblem) -> Result<SolveReport> {
    let system = SpdSystem::new(&prob.gram(), &prob.penalty.fixed())?;
    Ok(SolveReport::direct(system.solve(&prob.cross())))
}

/// Effective degrees of freedom `tr(B (BᵀB + λK)⁻¹ Bᵀ)` as a function of λ.
///
/// One Cholesky factorization and one symmetric eigendecomposition make every
/// later evaluation O(p).
pub struct DfCurve {
    eigen: Vec<f64>,
    /// `jitter · ‖L⁻ᵀ qᵢ‖²` per eigenvector.
    correction: Vec<f64>,
}

impl DfCurve {
    pub fn new(design: &Matrix, penalty: &Matrix) -> Result<Self> {
        let p = design.ncols();
        if penalty.nrows() != p || penalty.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "penalty dimension",
                expected: p,
                found: penalty.nrows(),
            });
        }
        let gram = design.tr_mul(design);
        let system = SpdSystem::new(&gram, &Matrix::zeros(p, p))?;
        let l = system.lower();
        let linv = l
            .solve_lower_triangular(&Matrix::identity(p, p))
            .ok_or_else(|| Error::Singular("triangular factor".into()))?;
        let m = &linv * penalty * linv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let w = linv.transpose() * &eig.eigenvectors;
        let jitter = system.jitter();
        Ok(Self {
            eigen: eig.eigenvalues.iter().map(|&s| s.max(0.0)).collect(),
            correction: w.column_iter().map(|c| jitter * c.norm_squared()).collect(),
        })
    }

    pub fn df(&self, lambda: f64) -> f64 {
        self.eigen
            .iter()
            .zip(&self.correction)
            .map(|(&s, &c)| (1.0 - c) / (1.0 + lambda * s))
            .sum()
    }
}

/// λ with `df(λ) = target_df` (to 1e-4), by bisection on log λ.
///
/// Targets at the rank of `B` give λ = 0. Targets between the null-space
/// dimension and `df(LAMBDA_MAX) + 1e-4` return `LAMBDA_MAX` with a warning.
pub fn calibrate_lambda(design: &Matrix, penalty: &Matrix, target_df: f64) -> Result<f64> {
    if !(target_df.is_finite() && target_df > 0.0) {
        return Err(Error::invalid(format!("target df {target_df} must be positive")));
    }
    let curve = DfCurve::new(design, penalty)?;
    let df0 = curve.df(0.0);
    if target_df > df0 + 1e-4 {
        return Err(Error::invalid(format!(
            "target df {target_df} exceeds the rank of the design ({df0:.4})"
        )));
    }
    if target_df >= df0 - 1e-4 {
        return Ok(0.0);
    }
    let df_max = curve.df(LAMBDA_MAX);
    let null_dim = df_max.round();
    if target_df < null_dim - 1e-4 {
        return Err(Error::invalid(format!(
            "target df {target_df} is below the penalty null-space dimension {null_dim}"
        )));
    }
    if target_df <= df_max.max(null_dim) + 1e-4 {
        log::warn!(
            "target df {target_df} not attainable below lambda = {LAMBDA_MAX:e} (df there {df_max:.6}); capping"
        );
        return Ok(LAMBDA_MAX);
    }
    let mut lo = -12.0_f64;
    while curve.df(10f64.powf(lo)) < target_df && lo > -40.0 {
        lo -= 4.0;
    }
    let mut hi = LAMBDA_MAX.log10();
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let df = curve.df(10f64.powf(mid));
        if (df - target_df).abs() <= 1e-8 {
            break;
        }
        if df > target_df {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(mid))
}

/// One-sided penalty `λ Σᵣ vᵣ (Cβ − b)ᵣ²` with `vᵣ = 1` iff `(Cβ − b)ᵣ ≤ 0`.
#[derive(Clone, Debug)]
pub struct AsymConstraint {
    pub constraint: QpConstraint,
    pub lambda: f64,
}

impl AsymConstraint {
    fn weights(&self, beta: &Vector) -> WeightVector {
        WeightVector(self.constraint.slack(beta).iter().map(|&s| s <= 0.0).collect())
    }

    fn value(&self, beta: &Vector) -> f64 {
        let s = self.constraint.slack(beta);
        self.lambda * s.iter().filter(|&&v| v <= 0.0).map(|v| v * v).sum::<f64>()
    }
}

/// Iteratively reweighted fit with asymmetric penalties: solve with the
/// current weights, recompute the weights, stop when they no longer change.
pub fn solve_asymmetric(prob: &PlsProblem, terms: &[AsymConstraint], max_iter: usize) -> Result<SolveReport> {
    let p = prob.design.ncols();
    for t in terms {
        if t.constraint.matrix.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "asymmetric penalty columns",
                expected: p,
                found: t.constraint.matrix.ncols(),
            });
        }
    }
    let gram = prob.gram();
    let fixed = prob.penalty.fixed();
    let cross = prob.cross();
    let objective = |beta: &Vector| prob.objective(beta) + terms.iter().map(|t| t.value(beta)).sum::<f64>();

    let start = SpdSystem::new(&gram, &fixed)?.solve(&cross);
    let mut weights: Vec<WeightVector> = terms.iter().map(|t| t.weights(&start)).collect();
    let mut seen = HashSet::new();
    let mut best: Option<(f64, Vector, Vec<WeightVector>)> = None;

    for iteration in 1..=max_iter {
        let mut pen = fixed.clone();
        let mut rhs = cross.clone();
        for (t, v) in terms.iter().zip(&weights) {
            let c = &t.constraint.matrix;
            pen += asym_penalty(c, v)? * t.lambda;
            let vb = v.to_vector().component_mul(&t.constraint.bound);
            rhs += c.tr_mul(&vb) * t.lambda;
        }
        let beta = SpdSystem::new(&gram, &pen)?.solve(&rhs);
        let next: Vec<WeightVector> = terms.iter().map(|t| t.weights(&beta)).collect();
        if next == weights {
            return Ok(SolveReport {
                beta,
                iterations: iteration,
                active_set: Vec::new(),
                multipliers: Vec::new(),
                weights,
                converged: true,
                cycle_detected: false,
            });
        }
        let obj = objective(&beta);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, beta, weights.clone()));
        }
        seen.insert(weights);
        if seen.contains(&next) {
            let (_, beta, weights) = best.expect("at least one iterate");
            log::debug!("asymmetric reweighting cycled after {iteration} iterations");
            return Ok(SolveReport {
                beta,
                iterations: iteration,
                active_set: Vec::new(),
                multipliers: Vec::new(),
                weights,
                converged: false,
                cycle_detected: true,
            });
        }
        weights = next;
    }
    let (_, beta, weights) = best.expect("at least one iterate");
    Ok(SolveReport {
        beta,
        iterations: max_iter,
        active_set: Vec::new(),
        multipliers: Vec::new(),
        weights,
        converged: false,
        cycle_detected: false,
    })
}

/// Monotone (or, with order-2 differences, convex/concave) fit by
/// reweighting an asymmetric difference penalty of multiplier `lambda2`.
pub fn solve_monotone_iterative(
    prob: &PlsProblem,
    diff: &Matrix,
    direction: Direction,
    lambda2: f64,
) -> Result<SolveReport> {
    if !(lambda2 > 0.0) {
        return Err(Error::invalid("asymmetric penalty multiplier must be positive"));
    }
    let term = AsymConstraint {
        constraint: QpConstraint::homogeneous(diff * direction.sign()),
        lambda: lambda2,
    };
    solve_asymmetric(prob, std::slice::from_ref(&term), DEFAULT_MAX_ITER)
}

/// A factored normal-equations system ready for repeated QP solves.
#[derive(Clone, Debug)]
pub struct QpSystem {
    system: SpdSystem,
    linv_t: Matrix,
}

impl QpSystem {
    pub fn new(system: SpdSystem) -> Result<Self> {
        let p = system.dim();
        let linv_t = system
            .lower()
            .solve_lower_triangular(&Matrix::identity(p, p))
            .ok_or_else(|| Error::Singular("triangular factor".into()))?
            .transpose();
        Ok(Self { system, linv_t })
    }

    pub fn system(&self) -> &SpdSystem {
        &self.system
    }

    /// Minimize `βᵀAβ − 2 rhsᵀβ` subject to the constraint.
    pub fn solve(&self, rhs: &Vector, con: &QpConstraint) -> Result<SolveReport> {
        let x0 = self.system.solve(rhs);
        if con.is_empty() {
            return Ok(SolveReport::direct(x0));
        }
        let max_iter = 20 * (con.len() + self.system.dim()) + 100;
        let out = qp::dual_active_set(&self.linv_t, x0, &con.matrix, &con.bound, max_iter)?;
        Ok(SolveReport {
            beta: out.x,
            iterations: out.iterations,
            active_set: out.active,
            multipliers: out.multipliers,
            weights: Vec::new(),
            converged: true,
            cycle_detected: false,
        })
    }
}

/// Constrained penalized least squares by the dual active-set method.
pub fn solve_qp(prob: &PlsProblem, con: &QpConstraint) -> Result<SolveReport> {
    if con.matrix.ncols() != prob.design.ncols() || con.bound.len() != con.matrix.nrows() {
        return Err(Error::DimensionMismatch {
            context: "constraint matrix",
            expected: prob.design.ncols(),
            found: con.matrix.ncols(),
        });
    }
    let system = SpdSystem::new(&prob.gram(), &prob.penalty.fixed())?;
    QpSystem::new(system)?.solve(&prob.cross(), con)
}
