//! Base-learners: a design, a penalty and a solver behind one fit/predict
//! contract.

use serde::{Deserialize, Serialize};

use crate::basis::{
    categorical_design, design, linear_design, make_knots, tensor_design, varying_design, BasisSpec,
    DesignMatrix,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdSystem, Vector};
use crate::penalty::{
    boundary_penalty, cyclic_diff_matrix, diff_matrix, quad_penalty, tensor_diff_first, tensor_diff_second,
    tensor_penalty, BoundaryTerm, Direction, PenaltyBundle, Sides, DEFAULT_CONSTRAINT_LAMBDA,
};
use crate::solver::{
    calibrate_lambda, solve_asymmetric, AsymConstraint, PlsProblem, QpConstraint, QpSystem, DEFAULT_MAX_ITER,
};

pub const DEFAULT_DF: f64 = 4.0;
pub const DEFAULT_TENSOR_DF: f64 = 6.0;
pub const DEFAULT_KNOTS: usize = 20;
pub const DEFAULT_TENSOR_KNOTS: usize = 8;
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_DIFFERENCE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Linear,
    CategoricalRidge,
    Pspline,
    CyclicPspline,
    MonotonePspline,
    BoundaryPspline,
    Tensor,
    Varying,
}

impl LearnerKind {
    fn tag(self) -> &'static str {
        match self {
            LearnerKind::Linear => "linear",
            LearnerKind::CategoricalRidge => "categorical-ridge",
            LearnerKind::Pspline => "pspline",
            LearnerKind::CyclicPspline => "cyclic-pspline",
            LearnerKind::MonotonePspline => "monotone-pspline",
            LearnerKind::BoundaryPspline => "boundary-pspline",
            LearnerKind::Tensor => "tensor",
            LearnerKind::Varying => "varying",
        }
    }

    fn is_spline(self) -> bool {
        !matches!(self, LearnerKind::Linear | LearnerKind::CategoricalRidge)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    None,
    Increasing,
    Decreasing,
    Convex,
    Concave,
    Cyclic,
    Positive,
    Negative,
    Bounded { lo: f64, hi: f64 },
}

impl Constraint {
    /// Difference order and direction of a shape constraint.
    pub fn shape(self) -> Option<(usize, Direction)> {
        match self {
            Constraint::Increasing => Some((1, Direction::Increasing)),
            Constraint::Decreasing => Some((1, Direction::Decreasing)),
            Constraint::Convex => Some((2, Direction::Increasing)),
            Constraint::Concave => Some((2, Direction::Decreasing)),
            _ => None,
        }
    }

    /// Lower and upper bound on the coefficients themselves.
    pub fn codomain(self) -> Option<(f64, f64)> {
        match self {
            Constraint::Positive => Some((0.0, f64::INFINITY)),
            Constraint::Negative => Some((f64::NEG_INFINITY, 0.0)),
            Constraint::Bounded { lo, hi } => Some((lo, hi)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    Qp,
    Iterative,
}

/// Boundary penalty settings of a boundary P-spline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryOptions {
    #[serde(default = "BoundaryOptions::default_order")]
    pub order: usize,
    #[serde(default = "BoundaryOptions::default_n_edge")]
    pub n_edge: usize,
    #[serde(default = "BoundaryOptions::default_sides")]
    pub sides: Sides,
    #[serde(default = "BoundaryOptions::default_lambda")]
    pub lambda: f64,
}

impl BoundaryOptions {
    fn default_order() -> usize {
        2
    }
    fn default_n_edge() -> usize {
        3
    }
    fn default_sides() -> Sides {
        Sides::Both
    }
    fn default_lambda() -> f64 {
        DEFAULT_CONSTRAINT_LAMBDA
    }
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self {
            order: Self::default_order(),
            n_edge: Self::default_n_edge(),
            sides: Self::default_sides(),
            lambda: Self::default_lambda(),
        }
    }
}

/// Declarative description of one base-learner.
///
/// Unset options take their defaults. `resolve` fills in the data-dependent
/// ones (covariate ranges, level counts) so that a resolved spec rebuilds
/// the same bases on any subset of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: LearnerKind,
    pub covariates: Vec<String>,
    /// Multiplier column of a varying-coefficient learner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by: Option<String>,
    /// One entry per direction for tensors; any combination for one direction otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difference: Option<usize>,
    /// Domain per covariate; for cyclic directions `[start, start + period]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_lambda: Option<f64>,
    #[serde(default)]
    pub solver: SolverKind,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, covariates: &[&str]) -> Self {
        Self {
            name: None,
            kind,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            by: None,
            constraints: Vec::new(),
            df: None,
            knots: None,
            degree: None,
            difference: None,
            range: None,
            boundary: None,
            intercept: None,
            levels: None,
            constraint_lambda: None,
            solver: SolverKind::Qp,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_df(mut self, df: f64) -> Self {
        self.df = Some(df);
        self
    }

    pub fn with_knots(mut self, knots: usize) -> Self {
        self.knots = Some(knots);
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = Some(degree);
        self
    }

    pub fn with_difference(mut self, d: usize) -> Self {
        self.difference = Some(d);
        self
    }

    pub fn with_range(mut self, ranges: &[[f64; 2]]) -> Self {
        self.range = Some(ranges.to_vec());
        self
    }

    pub fn with_by(mut self, by: &str) -> Self {
        self.by = Some(by.to_string());
        self
    }

    pub fn with_boundary(mut self, b: BoundaryOptions) -> Self {
        self.boundary = Some(b);
        self
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = Some(intercept);
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_constraint_lambda(mut self, lambda: f64) -> Self {
        self.constraint_lambda = Some(lambda);
        self
    }

    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => {
                let mut s = format!("{}({})", self.kind.tag(), self.covariates.join(", "));
                if let Some(by) = &self.by {
                    s.push_str(&format!(" by {by}"));
                }
                s
            }
        }
    }

    pub fn target_df(&self) -> f64 {
        self.df.unwrap_or(if self.kind == LearnerKind::Tensor {
            DEFAULT_TENSOR_DF
        } else {
            DEFAULT_DF
        })
    }

    fn n_knots(&self) -> usize {
        self.knots.unwrap_or(if self.kind == LearnerKind::Tensor {
            DEFAULT_TENSOR_KNOTS
        } else {
            DEFAULT_KNOTS
        })
    }

    fn degree(&self) -> usize {
        self.degree.unwrap_or(DEFAULT_DEGREE)
    }

    fn difference(&self) -> usize {
        self.difference.unwrap_or(DEFAULT_DIFFERENCE)
    }

    fn constraint_lambda(&self) -> f64 {
        self.constraint_lambda.unwrap_or(DEFAULT_CONSTRAINT_LAMBDA)
    }

    fn active_constraints(&self) -> impl Iterator<Item = Constraint> + '_ {
        self.constraints.iter().copied().filter(|c| *c != Constraint::None)
    }

    /// Number of spline directions.
    fn n_directions(&self) -> usize {
        match self.kind {
            LearnerKind::Linear | LearnerKind::CategoricalRidge => 0,
            LearnerKind::Tensor => 2,
            _ => 1,
        }
    }

    /// Whether spline direction `k` is cyclic.
    pub fn is_cyclic(&self, k: usize) -> bool {
        match self.kind {
            LearnerKind::CyclicPspline => true,
            LearnerKind::Tensor => self.constraints.get(k) == Some(&Constraint::Cyclic),
            _ => self.active_constraints().any(|c| c == Constraint::Cyclic),
        }
    }

    /// Structural checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let label = self.label();
        let fail = |msg: String| Err(Error::invalid(format!("learner `{label}`: {msg}")));
        let n_cov = self.covariates.len();
        let expected = match self.kind {
            LearnerKind::Linear => n_cov.max(1),
            LearnerKind::Tensor => 2,
            _ => 1,
        };
        if n_cov != expected {
            return fail(format!("needs {expected} covariate(s), got {n_cov}"));
        }
        match (self.kind, &self.by) {
            (LearnerKind::Varying, None) => return fail("varying learner needs `by`".into()),
            (LearnerKind::Varying, Some(_)) | (_, None) => {}
            (_, Some(_)) => return fail("`by` is only valid for varying learners".into()),
        }
        if self.boundary.is_some() && self.kind != LearnerKind::BoundaryPspline {
            return fail("boundary options are only valid for boundary-pspline".into());
        }
        if let Some(df) = self.df {
            if !(df.is_finite() && df > 0.0) {
                return fail(format!("df must be positive, got {df}"));
            }
        }
        if let Some(l) = self.constraint_lambda {
            if !(l.is_finite() && l > 0.0) {
                return fail(format!("constraint_lambda must be positive, got {l}"));
            }
        }
        if self.degree() > crate::basis::MAX_DEGREE {
            return fail(format!("degree {} exceeds 3", self.degree()));
        }
        if self.kind.is_spline() && self.difference() == 0 {
            return fail("difference order must be at least 1".into());
        }
        if let Some(ranges) = &self.range {
            let want = if self.kind == LearnerKind::Linear { n_cov } else { self.n_directions() };
            if ranges.len() != want {
                return fail(format!("range needs {want} entries, got {}", ranges.len()));
            }
            if let Some(r) = ranges.iter().find(|r| !(r[0] < r[1])) {
                return fail(format!("range [{}, {}] is empty", r[0], r[1]));
            }
        }
        for c in self.active_constraints() {
            if let Constraint::Bounded { lo, hi } = c {
                if !(lo < hi) {
                    return fail(format!("bounded constraint needs lo < hi, got [{lo}, {hi}]"));
                }
            }
        }
        match self.kind {
            LearnerKind::Linear | LearnerKind::CategoricalRidge => {
                if self.active_constraints().next().is_some() {
                    return fail("constraints are not supported for this kind".into());
                }
            }
            LearnerKind::Tensor => {
                if !self.constraints.is_empty() && self.constraints.len() != 2 {
                    return fail("tensor constraints need one entry per direction".into());
                }
                if let Some(c) = self.active_constraints().find(|c| c.codomain().is_some()) {
                    return fail(format!("{c:?} is not supported for tensors"));
                }
            }
            _ => {
                let shapes = self.active_constraints().filter(|c| c.shape().is_some()).count();
                let bounds = self.active_constraints().filter(|c| c.codomain().is_some()).count();
                let cyclic = self.is_cyclic(0);
                if shapes > 1 || bounds > 1 {
                    return fail("at most one shape and one co-domain constraint per direction".into());
                }
                if cyclic && shapes > 0 {
                    return fail("a direction cannot be both cyclic and monotone".into());
                }
                if self.kind == LearnerKind::MonotonePspline && shapes == 0 {
                    return fail("monotone-pspline needs increasing, decreasing, convex or concave".into());
                }
                if self.kind == LearnerKind::BoundaryPspline && cyclic {
                    return fail("boundary-pspline cannot be cyclic".into());
                }
            }
        }
        Ok(())
    }

    /// Validate against `data` and fix every data-dependent option.
    pub fn resolve(&self, data: &Dataset) -> Result<LearnerSpec> {
        self.validate()?;
        let mut out = self.clone();
        if out.name.is_none() {
            out.name = Some(self.label());
        }
        for c in &self.covariates {
            check_finite(data.column(c)?, c)?;
        }
        if let Some(by) = &self.by {
            check_finite(data.column(by)?, by)?;
        }
        match self.kind {
            LearnerKind::CategoricalRidge => {
                let col = data.column(&self.covariates[0])?;
                let ids = level_ids(col, None)?;
                let seen = ids.iter().copied().max().unwrap_or(0);
                let levels = self.levels.unwrap_or(seen);
                if levels == 0 || seen > levels {
                    return Err(Error::invalid(format!(
                        "learner `{}`: level id {seen} exceeds levels = {levels}",
                        self.label()
                    )));
                }
                out.levels = Some(levels);
            }
            _ => {
                if out.range.is_none() {
                    let mut ranges = Vec::new();
                    for (k, c) in self.covariates.iter().enumerate() {
                        if self.kind.is_spline() && self.is_cyclic(k) {
                            return Err(Error::invalid(format!(
                                "learner `{}`: cyclic direction `{c}` needs an explicit range (the period)",
                                self.label()
                            )));
                        }
                        let col = data.column(c)?;
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        if !(lo < hi) {
                            return Err(Error::invalid(format!(
                                "learner `{}`: covariate `{c}` is constant",
                                self.label()
                            )));
                        }
                        ranges.push([lo, hi]);
                    }
                    out.range = Some(ranges);
                }
            }
        }
        Ok(out)
    }
}

fn check_finite(col: &[f64], name: &str) -> Result<()> {
    match col.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("row {i}: non-finite value in `{name}`"))),
        None => Ok(()),
    }
}

fn level_ids(col: &[f64], levels: Option<usize>) -> Result<Vec<usize>> {
    col.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.fract() != 0.0 || v < 1.0 || levels.is_some_and(|l| v > l as f64) {
                Err(Error::invalid(format!("row {i}: `{v}` is not a valid level id")))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

/// The data-independent part of a resolved learner: bases and column roles.
#[derive(Clone, Debug)]
pub enum LearnerStructure {
    Linear {
        columns: Vec<String>,
        ranges: Vec<[f64; 2]>,
        intercept: bool,
    },
    Categorical {
        column: String,
        levels: usize,
    },
    Spline {
        column: String,
        basis: BasisSpec,
        boundary: Option<BoundaryOptions>,
    },
    Tensor {
        columns: [String; 2],
        bases: [BasisSpec; 2],
    },
    Varying {
        column: String,
        by: String,
        basis: BasisSpec,
    },
}

/// Evaluation grid of a fitted effect together with its design.
#[derive(Clone, Debug)]
pub struct EffectGrid {
    /// One named coordinate vector per covariate, all of the grid's length.
    pub coords: Vec<(String, Vec<f64>)>,
    pub design: Matrix,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl LearnerStructure {
    /// Rebuild the bases of a resolved spec.
    pub fn from_spec(spec: &LearnerSpec) -> Result<Self> {
        spec.validate()?;
        let unresolved = || Error::invalid(format!("learner `{}` is not resolved", spec.label()));
        let basis = |k: usize| -> Result<BasisSpec> {
            let r = spec.range.as_ref().ok_or_else(unresolved)?[k];
            Ok(BasisSpec::new(make_knots(r[0], r[1], spec.n_knots(), spec.degree(), spec.is_cyclic(k))?))
        };
        Ok(match spec.kind {
            LearnerKind::Linear => LearnerStructure::Linear {
                columns: spec.covariates.clone(),
                ranges: spec.range.clone().ok_or_else(unresolved)?,
                intercept: spec.intercept.unwrap_or(true),
            },
            LearnerKind::CategoricalRidge => LearnerStructure::Categorical {
                column: spec.covariates[0].clone(),
                levels: spec.levels.ok_or_else(unresolved)?,
            },
            LearnerKind::Tensor => LearnerStructure::Tensor {
                columns: [spec.covariates[0].clone(), spec.covariates[1].clone()],
                bases: [basis(0)?, basis(1)?],
            },
            LearnerKind::Varying => LearnerStructure::Varying {
                column: spec.covariates[0].clone(),
                by: spec.by.clone().ok_or_else(unresolved)?,
                basis: basis(0)?,
            },
            _ => LearnerStructure::Spline {
                column: spec.covariates[0].clone(),
                basis: basis(0)?,
                boundary: (spec.kind == LearnerKind::BoundaryPspline)
                    .then(|| spec.boundary.clone().unwrap_or_default()),
            },
        })
    }

    pub fn n_coef(&self) -> usize {
        match self {
            LearnerStructure::Linear { columns, intercept, .. } => columns.len() + usize::from(*intercept),
            LearnerStructure::Categorical { levels, .. } => *levels,
            LearnerStructure::Spline { basis, .. } | LearnerStructure::Varying { basis, .. } => basis.n_basis(),
            LearnerStructure::Tensor { bases, .. } => bases[0].n_basis() * bases[1].n_basis(),
        }
    }

    /// Design matrix on `data`.
    pub fn design(&self, data: &Dataset) -> Result<DesignMatrix> {
        match self {
            LearnerStructure::Linear { columns, intercept, .. } => {
                let cols: Vec<(&str, &[f64])> = columns
                    .iter()
                    .map(|c| Ok((c.as_str(), data.column(c)?)))
                    .collect::<Result<_>>()?;
                linear_design(&cols, data.nrows(), *intercept)
            }
            LearnerStructure::Categorical { column, levels } => {
                categorical_design(&level_ids(data.column(column)?, Some(*levels))?, *levels)
            }
            LearnerStructure::Spline { column, basis, boundary } => {
                let xs = data.column(column)?;
                match boundary {
                    Some(b) => boundary_design(basis, b, xs),
                    None => design(basis, xs),
                }
            }
            LearnerStructure::Tensor { columns, bases } => tensor_design(
                &design(&bases[0], data.column(&columns[0])?)?,
                &design(&bases[1], data.column(&columns[1])?)?,
            ),
            LearnerStructure::Varying { column, by, basis } => {
                let x = data.column(by)?;
                check_finite(x, by)?;
                varying_design(x, &design(basis, data.column(column)?)?)
            }
        }
    }

    /// Equidistant evaluation grid with `n` points per direction; tensors
    /// give an `n × n` grid with the first covariate varying slowest.
    /// Varying-coefficient learners report the coefficient function.
    pub fn effect_grid(&self, n: usize) -> Result<EffectGrid> {
        if n < 2 {
            return Err(Error::invalid("effect grid needs at least 2 points"));
        }
        let spline = |basis: &BasisSpec, column: &str| -> Result<EffectGrid> {
            let g = basis.grid();
            let xs = linspace(g.lower(), g.upper(), n);
            Ok(EffectGrid {
                design: design(basis, &xs)?.values,
                coords: vec![(column.to_string(), xs)],
            })
        };
        match self {
            LearnerStructure::Linear { columns, ranges, intercept } => {
                if columns.len() != 1 {
                    return Err(Error::invalid("effects of linear learners need a single covariate"));
                }
                let xs = linspace(ranges[0][0], ranges[0][1], n);
                let design = linear_design(&[(columns[0].as_str(), &xs)], n, *intercept)?.values;
                Ok(EffectGrid {
                    coords: vec![(columns[0].clone(), xs)],
                    design,
                })
            }
            LearnerStructure::Categorical { column, levels } => Ok(EffectGrid {
                coords: vec![(column.clone(), (1..=*levels).map(|l| l as f64).collect())],
                design: Matrix::identity(*levels, *levels),
            }),
            LearnerStructure::Spline { column, basis, .. } | LearnerStructure::Varying { column, basis, .. } => {
                spline(basis, column)
            }
            LearnerStructure::Tensor { columns, bases } => {
                let g0 = bases[0].grid();
                let g1 = bases[1].grid();
                let a = linspace(g0.lower(), g0.upper(), n);
                let b = linspace(g1.lower(), g1.upper(), n);
                let x1: Vec<f64> = a.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                let x2: Vec<f64> = (0..n).flat_map(|_| b.iter().copied()).collect();
                let d = tensor_design(&design(&bases[0], &x1)?, &design(&bases[1], &x2)?)?.values;
                Ok(EffectGrid {
                    coords: vec![(columns[0].clone(), x1), (columns[1].clone(), x2)],
                    design: d,
                })
            }
        }
    }
}

/// Spline design that continues linearly (order 2) or constantly (order 1)
/// beyond each boundary on which the boundary penalty acts.
fn boundary_design(basis: &BasisSpec, opts: &BoundaryOptions, xs: &[f64]) -> Result<DesignMatrix> {
    let g = basis.grid();
    let (lo, hi) = (g.lower(), g.upper());
    let left = matches!(opts.sides, Sides::Left | Sides::Both);
    let right = matches!(opts.sides, Sides::Right | Sides::Both);
    let inside: Vec<f64> = xs.iter().map(|&x| x.clamp(lo, hi)).collect();
    let mut out = design(basis, &inside).map_err(|e| match e {
        Error::OutOfRange { row, .. } => Error::OutOfRange {
            row,
            value: xs[row],
            lower: lo,
            upper: hi,
        },
        e => e,
    })?;
    for (i, &x) in xs.iter().enumerate() {
        let edge = if x < lo {
            lo
        } else if x > hi {
            hi
        } else {
            continue;
        };
        if (x < lo && !left) || (x > hi && !right) {
            return Err(Error::OutOfRange {
                row: i,
                value: x,
                lower: lo,
                upper: hi,
            });
        }
        if opts.order >= 2 {
            let slope = basis.eval_derivative(edge)?;
            for (j, s) in slope.iter().enumerate() {
                out.values[(i, j)] += (x - edge) * s;
            }
        }
    }
    Ok(out)
}

/// Bounds on the accumulated coefficients of one learner.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Codomain {
    lo: f64,
    hi: f64,
}

/// A learner bound to training data: design, penalty and factored system.
#[derive(Clone, Debug)]
pub struct BaseLearner {
    spec: LearnerSpec,
    structure: LearnerStructure,
    design: Matrix,
    penalty: PenaltyBundle,
    system: QpSystem,
    shape: Option<Matrix>,
    codomain: Option<Codomain>,
}

/// Result of fitting one learner to the negative gradient.
#[derive(Clone, Debug)]
pub struct FittedComponent {
    pub learner: usize,
    pub beta: Vector,
    pub rss: f64,
}

impl BaseLearner {
    /// Resolve `spec` on `data`, build the design and calibrate the
    /// smoothing parameter to the target degrees of freedom.
    pub fn build(spec: &LearnerSpec, data: &Dataset) -> Result<Self> {
        let spec = spec.resolve(data)?;
        let structure = LearnerStructure::from_spec(&spec)?;
        let design = structure.design(data)?.values;
        let p = structure.n_coef();
        let smooth = match &structure {
            LearnerStructure::Linear { .. } => Matrix::zeros(p, p),
            LearnerStructure::Categorical { .. } => Matrix::identity(p, p),
            LearnerStructure::Spline { basis, .. } | LearnerStructure::Varying { basis, .. } => {
                smooth_penalty(basis, spec.difference())?
            }
            LearnerStructure::Tensor { bases, .. } => tensor_penalty(
                &smooth_penalty(&bases[0], spec.difference())?,
                &smooth_penalty(&bases[1], spec.difference())?,
            )?,
        };
        let lambda = match structure {
            LearnerStructure::Linear { .. } => 0.0,
            _ if spec.target_df() >= p as f64 => 0.0,
            _ => calibrate_lambda(&design, &smooth, spec.target_df())?,
        };
        let mut penalty = PenaltyBundle::new(smooth, lambda);
        if let LearnerStructure::Spline { boundary: Some(b), .. } = &structure {
            penalty.boundary = Some(BoundaryTerm {
                matrix: boundary_penalty(p, b.order, b.n_edge, b.sides)?,
                lambda: b.lambda,
            });
        }
        let shape = shape_rows(&spec, &structure)?;
        let codomain = spec.active_constraints().find_map(Constraint::codomain).map(|(lo, hi)| Codomain { lo, hi });
        let system = QpSystem::new(SpdSystem::new(&design.tr_mul(&design), &penalty.fixed())?)?;
        log::debug!("built learner `{}` with {p} coefficients, lambda = {lambda:e}", spec.label());
        Ok(Self {
            spec,
            structure,
            design,
            penalty,
            system,
            shape,
            codomain,
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn structure(&self) -> &LearnerStructure {
        &self.structure
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn penalty(&self) -> &PenaltyBundle {
        &self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.penalty.lambda
    }

    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// Rows `C` of the homogeneous shape constraint `C·increment ≥ 0`.
    pub fn shape_constraint(&self) -> Option<&Matrix> {
        self.shape.as_ref()
    }

    /// Constraint on the increment that keeps `acc + step·increment` inside
    /// every shape and co-domain restriction.
    fn constraint(&self, acc: &Vector, step: f64) -> Option<QpConstraint> {
        let p = self.n_coef();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        if let Some(s) = &self.shape {
            for r in 0..s.nrows() {
                rows.push((s.row(r).iter().copied().collect(), 0.0));
            }
        }
        if let Some(Codomain { lo, hi }) = self.codomain {
            for j in 0..p {
                let mut e = vec![0.0; p];
                if lo.is_finite() {
                    e[j] = 1.0;
                    rows.push((e.clone(), (lo - acc[j]) / step));
                }
                if hi.is_finite() {
                    e[j] = -1.0;
                    rows.push((e, (acc[j] - hi) / step));
                }
            }
        }
        if rows.is_empty() {
            return None;
        }
        let m = rows.len();
        Some(QpConstraint {
            matrix: Matrix::from_fn(m, p, |r, c| rows[r].0[c]),
            bound: Vector::from_iterator(m, rows.iter().map(|r| r.1)),
        })
    }

    /// Fit to the negative gradient `u`; the increment is constrained so
    /// that `acc + step·β̂` stays admissible.
    pub fn fit_increment(&self, index: usize, u: &Vector, acc: &Vector, step: f64) -> Result<FittedComponent> {
        if u.len() != self.design.nrows() {
            return Err(Error::DimensionMismatch {
                context: "gradient length",
                expected: self.design.nrows(),
                found: u.len(),
            });
        }
        let rhs = self.design.tr_mul(u);
        let beta = match self.constraint(acc, step) {
            None => self.system.system().solve(&rhs),
            Some(con) => match self.spec.solver {
                SolverKind::Qp => self.system.solve(&rhs, &con)?.beta,
                SolverKind::Iterative => {
                    let prob = PlsProblem::new(&self.design, u, &self.penalty)?;
                    let term = AsymConstraint {
                        constraint: con,
                        lambda: self.spec.constraint_lambda(),
                    };
                    let rep = solve_asymmetric(&prob, std::slice::from_ref(&term), DEFAULT_MAX_ITER)?;
                    if !rep.converged && !rep.cycle_detected {
                        return Err(Error::NotConverged(format!(
                            "learner `{}`: weights still changing after {} iterations",
                            self.spec.label(),
                            rep.iterations
                        )));
                    }
                    rep.beta
                }
            },
        };
        let rss = (u - &self.design * &beta).norm_squared();
        Ok(FittedComponent {
            learner: index,
            beta,
            rss,
        })
    }

    /// Unscaled fit from zero coefficients.
    pub fn fit_to(&self, u: &Vector) -> Result<FittedComponent> {
        self.fit_increment(0, u, &Vector::zeros(self.n_coef()), 1.0)
    }

    pub fn fitted(&self, beta: &Vector) -> Vector {
        &self.design * beta
    }

    pub fn predict(&self, beta: &Vector, data: &Dataset) -> Result<Vector> {
        Ok(self.structure.design(data)?.values * beta)
    }
}

fn smooth_penalty(basis: &BasisSpec, d: usize) -> Result<Matrix> {
    let p = basis.n_basis();
    let diff = if basis.is_cyclic() {
        cyclic_diff_matrix(p, d)?
    } else {
        diff_matrix(p, d)?
    };
    Ok(quad_penalty(&diff))
}

fn shape_rows(spec: &LearnerSpec, structure: &LearnerStructure) -> Result<Option<Matrix>> {
    Ok(match structure {
        LearnerStructure::Spline { basis, .. } | LearnerStructure::Varying { basis, .. } => {
            match spec.active_constraints().find_map(Constraint::shape) {
                Some((c, dir)) => Some(diff_matrix(basis.n_basis(), c)? * dir.sign()),
                None => None,
            }
        }
        LearnerStructure::Tensor { bases, .. } => {
            let (j, k) = (bases[0].n_basis(), bases[1].n_basis());
            let mut blocks = Vec::new();
            if let Some((c, dir)) = spec.constraints.first().and_then(|c| c.shape()) {
                blocks.push(tensor_diff_first(&diff_matrix(j, c)?, k) * dir.sign());
            }
            if let Some((c, dir)) = spec.constraints.get(1).and_then(|c| c.shape()) {
                blocks.push(tensor_diff_second(&diff_matrix(k, c)?, j) * dir.sign());
            }
            match blocks.len() {
                0 => None,
                1 => blocks.pop(),
                _ => {
                    let (a, b) = (&blocks[0], &blocks[1]);
                    Some(Matrix::from_fn(a.nrows() + b.nrows(), j * k, |r, col| {
                        if r < a.nrows() {
                            a[(r, col)]
                        } else {
                            b[(r - a.nrows(), col)]
                        }
                    }))
                }
            }
        }
        _ => None,
    })
}

/// Accumulated coefficients, one vector per learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStore {
    coefs: Vec<Vec<f64>>,
}

impl CoefficientStore {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            coefs: sizes.iter().map(|&p| vec![0.0; p]).collect(),
        }
    }

    pub fn from_vecs(coefs: Vec<Vec<f64>>) -> Self {
        Self { coefs }
    }

    pub fn len(&self) -> usize {
        self.coefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.is_empty()
    }

    pub fn get(&self, learner: usize) -> Vector {
        Vector::from_column_slice(&self.coefs[learner])
    }

    pub fn raw(&self) -> &[Vec<f64>] {
        &self.coefs
    }

    /// `acc[learner] += step · beta`.
    pub fn add(&mut self, learner: usize, beta: &Vector, step: f64) {
        for (a, b) in self.coefs[learner].iter_mut().zip(beta.iter()) {
            *a += step * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::DfCurve;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sample(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        let g: Vec<f64> = (0..n).map(|i| (i % 3 + 1) as f64).collect();
        Dataset::from_pairs(vec![("x", x), ("z", z), ("t", t), ("g", g)]).unwrap()
    }

    fn grid_data(name: &str, xs: Vec<f64>) -> Dataset {
        Dataset::from_pairs(vec![(name, xs)]).unwrap()
    }

    #[test]
    fn pspline_hits_target_df() {
        let data = sample(1, 100);
        let l = BaseLearner::build(&LearnerSpec::new(LearnerKind::Pspline, &["x"]), &data).unwrap();
        let curve = DfCurve::new(l.design(), &l.penalty().smooth).unwrap();
        assert_abs_diff_eq!(curve.df(l.lambda()), 4.0, epsilon = 1e-4);
        assert_eq!(l.n_coef(), 24);
    }

    #[test]
    fn cyclic_rows_wrap() {
        let spec = LearnerSpec::new(LearnerKind::CyclicPspline, &["day"]).with_range(&[[0.0, 365.0]]);
        let data = grid_data("day", (0..365).map(f64::from).collect());
        let l = BaseLearner::build(&spec, &data).unwrap();
        let d = l.structure().design(&grid_data("day", vec![0.0, 365.0])).unwrap().values;
        assert_eq!(d.row(0), d.row(1));
        assert_eq!(l.n_coef(), 21);
    }

    #[test]
    fn cyclic_needs_range() {
        let data = sample(2, 50);
        assert!(BaseLearner::build(&LearnerSpec::new(LearnerKind::CyclicPspline, &["t"]), &data).is_err());
    }

    #[test]
    fn tensor_cyclic_by_increasing_structure() {
        let data = sample(3, 200);
        let spec = LearnerSpec::new(LearnerKind::Tensor, &["t", "x"])
            .with_constraint(Constraint::Cyclic)
            .with_constraint(Constraint::Increasing)
            .with_range(&[[0.0, 2.0 * PI], [0.0, 1.0]])
            .with_knots(4);
        let l = BaseLearner::build(&spec, &data).unwrap();
        let (j, k) = (5, 8);
        assert_eq!(l.n_coef(), j * k);
        let k1 = quad_penalty(&cyclic_diff_matrix(j, 2).unwrap());
        let k2 = quad_penalty(&diff_matrix(k, 2).unwrap());
        assert_eq!(l.penalty().smooth, tensor_penalty(&k1, &k2).unwrap());
        let expect = tensor_diff_second(&diff_matrix(k, 1).unwrap(), j);
        assert_eq!(l.shape_constraint().unwrap(), &expect);
    }

    #[test]
    fn invalid_combinations_rejected() {
        let data = sample(4, 30);
        let bad = [
            LearnerSpec::new(LearnerKind::Linear, &["x"]).with_constraint(Constraint::Increasing),
            LearnerSpec::new(LearnerKind::Pspline, &["x"]).with_constraint(Constraint::Cyclic).with_constraint(Constraint::Increasing),
            LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]),
            LearnerSpec::new(LearnerKind::Pspline, &["x"]).with_constraint(Constraint::Bounded { lo: 1.0, hi: 0.0 }),
            LearnerSpec::new(LearnerKind::Tensor, &["x"]),
            LearnerSpec::new(LearnerKind::Tensor, &["x", "z"]).with_constraint(Constraint::Positive).with_constraint(Constraint::None),
            LearnerSpec::new(LearnerKind::Varying, &["z"]),
            LearnerSpec::new(LearnerKind::Pspline, &["x"]).with_by("z"),
            LearnerSpec::new(LearnerKind::Pspline, &["nope"]),
        ];
        for spec in &bad {
            assert!(BaseLearner::build(spec, &data).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn zero_gradient_gives_zero_fit() {
        let data = sample(5, 80);
        let l = BaseLearner::build(
            &LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]).with_constraint(Constraint::Increasing),
            &data,
        )
        .unwrap();
        let f = l.fit_to(&Vector::zeros(80)).unwrap();
        assert_eq!(f.beta.amax(), 0.0);
        assert_eq!(f.rss, 0.0);
    }

    #[test]
    fn monotone_signal_matches_unconstrained() {
        let data = sample(6, 100);
        let x = data.column("x").unwrap();
        let u = Vector::from_iterator(100, x.iter().map(|v| 2.0 * v));
        let free = BaseLearner::build(&LearnerSpec::new(LearnerKind::Pspline, &["x"]), &data).unwrap();
        let mono = BaseLearner::build(
            &LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]).with_constraint(Constraint::Increasing),
            &data,
        )
        .unwrap();
        assert_abs_diff_eq!(free.fit_to(&u).unwrap().rss, mono.fit_to(&u).unwrap().rss, epsilon = 1e-8);
    }

    #[test]
    fn categorical_ridge_and_linear() {
        let data = sample(7, 60);
        let cat = BaseLearner::build(&LearnerSpec::new(LearnerKind::CategoricalRidge, &["g"]).with_df(2.0), &data).unwrap();
        assert_eq!(cat.n_coef(), 3);
        assert!(cat.lambda() > 0.0);
        let lin = BaseLearner::build(&LearnerSpec::new(LearnerKind::Linear, &["x", "z"]), &data).unwrap();
        assert_eq!(lin.n_coef(), 3);
        assert_eq!(lin.lambda(), 0.0);
        let u = Vector::from_iterator(60, (0..60).map(|i| data.column("x").unwrap()[i] * 3.0 + 1.0));
        let f = lin.fit_to(&u).unwrap();
        assert!((f.beta - Vector::from_column_slice(&[1.0, 3.0, 0.0])).amax() < 1e-8);
    }

    #[test]
    fn varying_scales_by_multiplier() {
        let data = sample(8, 40);
        let spec = LearnerSpec::new(LearnerKind::Varying, &["z"]).with_by("x");
        let l = BaseLearner::build(&spec, &data).unwrap();
        let bz = BaseLearner::build(&LearnerSpec::new(LearnerKind::Pspline, &["z"]), &data).unwrap();
        let x = data.column("x").unwrap();
        for i in 0..40 {
            for j in 0..l.n_coef() {
                assert_eq!(l.design()[(i, j)], x[i] * bz.design()[(i, j)]);
            }
        }
    }

    #[test]
    fn predict_rejects_out_of_range() {
        let data = sample(9, 50);
        let l = BaseLearner::build(&LearnerSpec::new(LearnerKind::Pspline, &["x"]), &data).unwrap();
        let beta = Vector::from_element(l.n_coef(), 1.0);
        let r = l.predict(&beta, &grid_data("x", vec![0.5, 7.0]));
        assert!(matches!(r, Err(Error::OutOfRange { row: 1, .. })));
    }

    #[test]
    fn boundary_learner_extrapolates_linearly() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let data = grid_data("x", xs.clone());
        let l = BaseLearner::build(&LearnerSpec::new(LearnerKind::BoundaryPspline, &["x"]), &data).unwrap();
        let u = Vector::from_iterator(100, xs.iter().map(|x| (3.0 * x).sin()));
        let beta = l.fit_to(&u).unwrap().beta;
        let out = l.predict(&beta, &grid_data("x", vec![1.0, 1.5, 2.0, -0.5, -1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(out[2] - out[1], out[1] - out[0], epsilon = 1e-10);
        assert_abs_diff_eq!(out[4] - out[3], out[3] - out[5], epsilon = 1e-10);
        let right_only = LearnerSpec::new(LearnerKind::BoundaryPspline, &["x"]).with_boundary(BoundaryOptions {
            sides: Sides::Right,
            ..Default::default()
        });
        let l = BaseLearner::build(&right_only, &data).unwrap();
        assert!(l.predict(&beta, &grid_data("x", vec![-0.1])).is_err());
        assert!(l.predict(&beta, &grid_data("x", vec![1.1])).is_ok());
    }

    #[test]
    fn effect_grid_shapes() {
        let data = sample(10, 100);
        let t = BaseLearner::build(
            &LearnerSpec::new(LearnerKind::Tensor, &["x", "z"]).with_knots(3),
            &data,
        )
        .unwrap();
        let g = t.structure().effect_grid(5).unwrap();
        assert_eq!(g.design.nrows(), 25);
        let x1 = &g.coords[0].1;
        assert!(x1[..5].iter().all(|v| *v == x1[0]) && x1[5] > x1[0]);
        assert_eq!(g.coords[1].1[..5], g.coords[1].1[5..10]);
        let c = BaseLearner::build(&LearnerSpec::new(LearnerKind::CategoricalRidge, &["g"]), &data).unwrap();
        assert_eq!(c.structure().effect_grid(10).unwrap().design.nrows(), 3);
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = LearnerSpec::new(LearnerKind::Pspline, &["x"])
            .with_constraint(Constraint::Bounded { lo: -1.0, hi: 2.5 })
            .with_df(5.0)
            .with_solver(SolverKind::Iterative);
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<LearnerSpec>(&s).unwrap(), spec);
    }

    fn accumulate(l: &BaseLearner, seed: u64, rounds: usize, step: f64) -> Vector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = l.design().nrows();
        let mut acc = Vector::zeros(l.n_coef());
        for _ in 0..rounds {
            let u = Vector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let f = l.fit_increment(0, &u, &acc, step).unwrap();
            acc += f.beta * step;
        }
        acc
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn monotone_survives_accumulation(seed in 0u64..10_000, dec in any::<bool>(), iterative in any::<bool>()) {
            let data = sample(seed, 60);
            let c = if dec { Constraint::Decreasing } else { Constraint::Increasing };
            let solver = if iterative { SolverKind::Iterative } else { SolverKind::Qp };
            let l = BaseLearner::build(
                &LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]).with_constraint(c).with_knots(8).with_solver(solver),
                &data,
            ).unwrap();
            let acc = accumulate(&l, seed, 6, 0.1);
            let xs: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
            let lo = data.column("x").unwrap().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.column("x").unwrap().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let grid: Vec<f64> = xs.iter().map(|t| lo + t * (hi - lo)).collect();
            let pred = l.predict(&acc, &grid_data("x", grid)).unwrap();
            let sign = if dec { -1.0 } else { 1.0 };
            let tol = if iterative { 1e-5 } else { 1e-8 };
            for w in pred.as_slice().windows(2) {
                prop_assert!(sign * (w[1] - w[0]) >= -tol);
            }
        }

        #[test]
        fn bounded_survives_accumulation(seed in 0u64..10_000, lo in -1.0..0.0f64, width in 0.1..2.0f64) {
            let data = sample(seed, 60);
            let hi = lo + width;
            let l = BaseLearner::build(
                &LearnerSpec::new(LearnerKind::Pspline, &["z"]).with_constraint(Constraint::Bounded { lo, hi }).with_knots(8),
                &data,
            ).unwrap();
            let acc = accumulate(&l, seed, 10, 0.3);
            let grid: Vec<f64> = data.column("z").unwrap().to_vec();
            let pred = l.predict(&acc, &grid_data("z", grid)).unwrap();
            prop_assert!(pred.min() >= lo - 1e-6 && pred.max() <= hi + 1e-6);
        }

        #[test]
        fn cyclic_seam_is_smooth(seed in 0u64..10_000) {
            let data = sample(seed, 80);
            let l = BaseLearner::build(
                &LearnerSpec::new(LearnerKind::CyclicPspline, &["t"]).with_range(&[[0.0, 2.0 * PI]]).with_knots(10),
                &data,
            ).unwrap();
            let acc = accumulate(&l, seed, 3, 0.5);
            let h = 1e-5;
            let pts = vec![0.0, h, 2.0 * PI - h, 2.0 * PI];
            let p = l.predict(&acc, &grid_data("t", pts)).unwrap();
            prop_assert!((p[0] - p[3]).abs() <= 1e-8);
            prop_assert!(((p[1] - p[0]) / h - (p[3] - p[2]) / h).abs() <= 1e-4 * (1.0 + acc.amax()));
        }

        #[test]
        fn prediction_is_linear_in_coefficients(seed in 0u64..10_000) {
            let data = sample(seed, 40);
            let l = BaseLearner::build(&LearnerSpec::new(LearnerKind::Pspline, &["x"]).with_knots(6), &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Vector::from_fn(l.n_coef(), |_, _| rng.random::<f64>());
            let b = Vector::from_fn(l.n_coef(), |_, _| rng.random::<f64>());
            let pa = l.predict(&a, &data).unwrap();
            let pb = l.predict(&b, &data).unwrap();
            let pab = l.predict(&(&a + &b), &data).unwrap();
            prop_assert!((pab - pa - pb).amax() <= 1e-14);
        }
    }
}
