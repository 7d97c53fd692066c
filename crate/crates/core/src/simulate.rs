//! Desk-scale simulation studies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::boost::{boost, cvrisk, BoostConfig, BoostModel, Loss, PredictType, Resampling};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{BaseLearner, Constraint, LearnerKind, LearnerSpec};
use crate::linalg::Vector;
use crate::penalty::{diff_matrix, Direction, PenaltyBundle, DEFAULT_CONSTRAINT_LAMBDA};
use crate::solver::{solve_monotone_iterative, solve_qp, PlsProblem, QpConstraint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// `cos(x) + 0.25 sin(4x)` on `[0, 2π)`: cyclic versus ordinary P-spline.
    Cyclic,
    /// Logistic curve on `[0, 1]`: monotone versus ordinary P-spline.
    Monotone,
    /// Active-set QP versus iterative asymmetric penalty on one monotone fit.
    QpVsIter,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Scenario::Cyclic),
            "monotone" => Ok(Scenario::Monotone),
            "qp-vs-iter" => Ok(Scenario::QpVsIter),
            _ => Err(Error::invalid(format!(
                "unknown scenario `{s}` (expected cyclic, monotone or qp-vs-iter)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Cyclic => "cyclic",
            Scenario::Monotone => "monotone",
            Scenario::QpVsIter => "qp-vs-iter",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub reps: usize,
    pub seed: u64,
    pub n: usize,
    pub sigma: f64,
    /// Largest stopping iteration considered by cross-validation.
    pub m_max: usize,
}

impl SimConfig {
    pub fn for_scenario(scenario: Scenario, reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            n: if scenario == Scenario::Cyclic { 150 } else { 100 },
            sigma: if scenario == Scenario::QpVsIter { 0.3 } else { 0.1 },
            m_max: 1000,
        }
    }
}

/// Per-replication metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl SimTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        Some(c.iter().sum::<f64>() / c.len().max(1) as f64)
    }
}

pub fn cyclic_truth(x: f64) -> f64 {
    x.cos() + 0.25 * (4.0 * x).sin()
}

pub fn monotone_truth(x: f64) -> f64 {
    1.0 / (1.0 + (-6.0 * (x - 0.5)).exp())
}

/// Flat, linear ramp on `[0.3, 0.7]`, flat again.
pub fn plateau_truth(x: f64) -> f64 {
    ((x - 0.3) / 0.4).clamp(0.0, 1.0)
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

fn draw(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, sigma: f64, f: fn(f64) -> f64) -> Dataset {
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let x: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let y: Vec<f64> = x.iter().map(|&v| f(v) + noise.sample(rng)).collect();
    Dataset::from_pairs(vec![("x", x), ("y", y)]).expect("equal columns")
}

/// Boost with the stopping iteration chosen by 5-fold cross-validation.
pub fn fit_with_cv(data: &Dataset, spec: &LearnerSpec, m_max: usize, seed: u64) -> Result<BoostModel> {
    let specs = std::slice::from_ref(spec);
    let cfg = BoostConfig::new(0.1, 0, seed);
    let cv = cvrisk(data, "y", specs, Loss::Gaussian, &cfg, Resampling::KFold(5), m_max)?;
    boost(data, "y", specs, Loss::Gaussian, &BoostConfig::new(0.1, cv.m_stop, seed))
}

fn mse(fit: &Vector, data: &Dataset, f: fn(f64) -> f64) -> f64 {
    let x = data.column("x").expect("x column");
    fit.iter().zip(x).map(|(p, &v)| (p - f(v)).powi(2)).sum::<f64>() / x.len() as f64
}

fn cyclic_rep(cfg: &SimConfig, rep: usize) -> Result<Vec<f64>> {
    let mut rng = rep_rng(cfg.seed, rep);
    let data = draw(&mut rng, cfg.n, 0.0, 2.0 * PI, cfg.sigma, cyclic_truth);
    let seed = rng.random();
    let cyc = LearnerSpec::new(LearnerKind::CyclicPspline, &["x"]).with_range(&[[0.0, 2.0 * PI]]);
    let free = LearnerSpec::new(LearnerKind::Pspline, &["x"]);
    let mc = fit_with_cv(&data, &cyc, cfg.m_max, seed)?;
    let mf = fit_with_cv(&data, &free, cfg.m_max, seed)?;
    let seam = Dataset::from_pairs(vec![("x", vec![0.0, 2.0 * PI])])?;
    let s = mc.predict(&seam, PredictType::Link)?;
    Ok(vec![
        rep as f64,
        mse(&mc.predict(&data, PredictType::Link)?, &data, cyclic_truth),
        mse(&mf.predict(&data, PredictType::Link)?, &data, cyclic_truth),
        (s[0] - s[1]).abs(),
        mc.config.m_stop as f64,
        mf.config.m_stop as f64,
    ])
}

/// Number of decreases larger than `tol` along a grid scan of the fit.
fn violations(model: &BoostModel, data: &Dataset, tol: f64) -> Result<usize> {
    let x = data.column("x")?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..=200).map(|i| (lo + (hi - lo) * i as f64 / 200.0).min(hi)).collect();
    let p = model.predict(&Dataset::from_pairs(vec![("x", grid)])?, PredictType::Link)?;
    Ok(p.as_slice().windows(2).filter(|w| w[1] - w[0] < -tol).count())
}

fn monotone_rep(cfg: &SimConfig, rep: usize) -> Result<Vec<f64>> {
    let mut rng = rep_rng(cfg.seed, rep);
    let data = draw(&mut rng, cfg.n, 0.0, 1.0, cfg.sigma, monotone_truth);
    let seed = rng.random();
    let mono = LearnerSpec::new(LearnerKind::MonotonePspline, &["x"]).with_constraint(Constraint::Increasing);
    let free = LearnerSpec::new(LearnerKind::Pspline, &["x"]);
    let mm = fit_with_cv(&data, &mono, cfg.m_max, seed)?;
    let mf = fit_with_cv(&data, &free, cfg.m_max, seed)?;
    Ok(vec![
        rep as f64,
        mse(&mm.predict(&data, PredictType::Link)?, &data, monotone_truth),
        mse(&mf.predict(&data, PredictType::Link)?, &data, monotone_truth),
        violations(&mm, &data, 1e-8)? as f64,
        violations(&mf, &data, 1e-8)? as f64,
    ])
}

/// One monotone P-spline fit with 20 coefficients and 4 degrees of freedom,
/// solved by active-set QP and by the iterative asymmetric penalty.
/// Returns the maximal coefficient discrepancy relative to `‖β_qp‖∞` and the
/// number of active constraints at the QP solution.
pub fn qp_vs_iter_problem(data: &Dataset) -> Result<(f64, usize)> {
    let spec = LearnerSpec::new(LearnerKind::Pspline, &["x"]).with_knots(16);
    let learner = BaseLearner::build(&spec, data)?;
    let u = Vector::from_column_slice(data.column("y")?);
    let pen = PenaltyBundle::new(learner.penalty().smooth.clone(), learner.lambda());
    let prob = PlsProblem::new(learner.design(), &u, &pen)?;
    let d = diff_matrix(learner.n_coef(), 1)?;
    let qp = solve_qp(&prob, &QpConstraint::homogeneous(d.clone()))?;
    let it = solve_monotone_iterative(&prob, &d, Direction::Increasing, DEFAULT_CONSTRAINT_LAMBDA)?;
    if !it.converged && !it.cycle_detected {
        return Err(Error::NotConverged("iterative monotone fit".into()));
    }
    Ok(((it.beta - &qp.beta).amax() / qp.beta.amax(), qp.active_set.len()))
}

fn qp_rep(cfg: &SimConfig, rep: usize) -> Result<Vec<f64>> {
    let mut rng = rep_rng(cfg.seed, rep);
    let data = draw(&mut rng, cfg.n, 0.0, 1.0, cfg.sigma, plateau_truth);
    let (gap, active) = qp_vs_iter_problem(&data)?;
    Ok(vec![rep as f64, gap, active as f64])
}

/// Run `cfg.reps` replications of a scenario.
pub fn simulate(scenario: Scenario, cfg: &SimConfig) -> Result<SimTable> {
    if cfg.reps < 1 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let (columns, run): (Vec<&'static str>, fn(&SimConfig, usize) -> Result<Vec<f64>>) = match scenario {
        Scenario::Cyclic => (
            vec!["rep", "mse_cyclic", "mse_unconstrained", "seam_gap", "mstop_cyclic", "mstop_unconstrained"],
            cyclic_rep,
        ),
        Scenario::Monotone => (
            vec!["rep", "mse_constrained", "mse_unconstrained", "violations_constrained", "violations_unconstrained"],
            monotone_rep,
        ),
        Scenario::QpVsIter => (vec!["rep", "max_discrepancy", "active_constraints"], qp_rep),
    };
    let rows = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimTable { columns, rows })
}
