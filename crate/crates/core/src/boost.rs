//! Componentwise functional gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{BaseLearner, CoefficientStore, FittedComponent, LearnerSpec, LearnerStructure};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Squared error `½(y − η)²`.
    Gaussian,
    /// Poisson negative log-likelihood `exp(η) − yη` with log link.
    Poisson,
}

impl Loss {
    pub fn check_response(self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("row {i}: non-finite response")));
            }
            if self == Loss::Poisson && (v < 0.0 || v.fract() != 0.0) {
                return Err(Error::invalid(format!("row {i}: poisson response {v} is not a count")));
            }
        }
        Ok(())
    }

    /// Risk-minimizing constant.
    pub fn offset(self, y: &[f64]) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::invalid("empty response"));
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        match self {
            Loss::Gaussian => Ok(mean),
            Loss::Poisson if mean > 0.0 => Ok(mean.ln()),
            Loss::Poisson => Err(Error::invalid("poisson offset undefined: all counts are zero")),
        }
    }

    pub fn risk(self, y: f64, eta: f64) -> f64 {
        match self {
            Loss::Gaussian => 0.5 * (y - eta) * (y - eta),
            Loss::Poisson => eta.exp() - y * eta,
        }
    }

    pub fn mean_risk(self, y: &[f64], eta: &[f64]) -> f64 {
        let s: f64 = y.iter().zip(eta).map(|(&a, &b)| self.risk(a, b)).sum();
        s / y.len().max(1) as f64
    }

    pub fn response(self, eta: f64) -> f64 {
        match self {
            Loss::Gaussian => eta,
            Loss::Poisson => eta.exp(),
        }
    }
}

/// `u = −∂risk/∂η`: `y − η` (gaussian) or `y − exp(η)` (poisson).
pub fn negative_gradient(loss: Loss, y: &[f64], eta: &[f64]) -> Result<Vector> {
    if y.len() != eta.len() {
        return Err(Error::DimensionMismatch {
            context: "negative_gradient",
            expected: y.len(),
            found: eta.len(),
        });
    }
    if loss == Loss::Poisson {
        if let Some(i) = y.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(format!("row {i}: negative count {}", y[i])));
        }
    }
    Ok(Vector::from_iterator(
        y.len(),
        y.iter().zip(eta).map(|(&a, &b)| match loss {
            Loss::Gaussian => a - b,
            Loss::Poisson => a - b.exp(),
        }),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    #[serde(default = "BoostConfig::default_step")]
    pub step: f64,
    #[serde(default = "BoostConfig::default_m_stop")]
    pub m_stop: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BoostConfig {
    fn default_step() -> f64 {
        0.1
    }
    fn default_m_stop() -> usize {
        100
    }

    pub fn new(step: f64, m_stop: usize, seed: u64) -> Self {
        Self { step, m_stop, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::invalid(format!("step {} must lie in (0, 1]", self.step)));
        }
        Ok(())
    }
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self::new(Self::default_step(), Self::default_m_stop(), 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictType {
    Link,
    Response,
}

/// The running state of one boosting fit on fixed training data.
struct Engine {
    learners: Vec<BaseLearner>,
    y: Vec<f64>,
    loss: Loss,
    step: f64,
    eta: Vector,
    coefs: CoefficientStore,
    trace: Vec<usize>,
}

impl Engine {
    fn new(specs: &[LearnerSpec], data: &Dataset, y: Vec<f64>, loss: Loss, step: f64) -> Result<(Self, f64)> {
        if specs.is_empty() {
            return Err(Error::invalid("at least one learner is required"));
        }
        let learners = specs
            .par_iter()
            .map(|s| BaseLearner::build(s, data))
            .collect::<Result<Vec<_>>>()?;
        let offset = loss.offset(&y)?;
        let sizes: Vec<usize> = learners.iter().map(BaseLearner::n_coef).collect();
        let n = y.len();
        Ok((
            Self {
                learners,
                y,
                loss,
                step,
                eta: Vector::from_element(n, offset),
                coefs: CoefficientStore::zeros(&sizes),
                trace: Vec::new(),
            },
            offset,
        ))
    }

    /// One iteration; returns the winning component.
    fn iterate(&mut self) -> Result<FittedComponent> {
        let iteration = self.trace.len() + 1;
        let u = negative_gradient(self.loss, &self.y, self.eta.as_slice())?;
        let coefs = &self.coefs;
        let step = self.step;
        let fits: Vec<Result<FittedComponent>> = self
            .learners
            .par_iter()
            .enumerate()
            .map(|(i, l)| l.fit_increment(i, &u, &coefs.get(i), step))
            .collect();
        let mut best: Option<FittedComponent> = None;
        for (i, fit) in fits.into_iter().enumerate() {
            let fit = fit.map_err(|e| Error::AtIteration {
                iteration,
                learner: self.learners[i].spec().label(),
                source: Box::new(e),
            })?;
            if !fit.rss.is_finite() {
                return Err(Error::AtIteration {
                    iteration,
                    learner: self.learners[i].spec().label(),
                    source: Box::new(Error::Singular("non-finite residual sum of squares".into())),
                });
            }
            if best.as_ref().is_none_or(|b| fit.rss < b.rss) {
                best = Some(fit);
            }
        }
        let best = best.expect("at least one learner");
        self.coefs.add(best.learner, &best.beta, step);
        self.eta += self.learners[best.learner].fitted(&best.beta) * step;
        self.trace.push(best.learner);
        Ok(best)
    }

    fn risk(&self) -> f64 {
        self.loss.mean_risk(&self.y, self.eta.as_slice())
    }
}

/// A fitted boosting model.
#[derive(Clone, Debug)]
pub struct BoostModel {
    pub response: String,
    pub loss: Loss,
    pub config: BoostConfig,
    pub offset: f64,
    /// Resolved learner specs; they rebuild the bases exactly.
    pub specs: Vec<LearnerSpec>,
    pub coefs: CoefficientStore,
    /// Index of the selected learner per iteration.
    pub trace: Vec<usize>,
    /// Mean training risk after 0, 1, …, m_stop iterations.
    pub risk: Vec<f64>,
    structures: Vec<LearnerStructure>,
    train_eta: Option<Vector>,
}

impl BoostModel {
    /// Assemble a model from stored parts, rebuilding the learner bases.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        response: String,
        loss: Loss,
        config: BoostConfig,
        offset: f64,
        specs: Vec<LearnerSpec>,
        coefs: CoefficientStore,
        trace: Vec<usize>,
        risk: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let structures = specs.iter().map(LearnerStructure::from_spec).collect::<Result<Vec<_>>>()?;
        if coefs.len() != specs.len() {
            return Err(Error::Format(format!(
                "{} coefficient vectors for {} learners",
                coefs.len(),
                specs.len()
            )));
        }
        for (l, (s, c)) in structures.iter().zip(coefs.raw()).enumerate() {
            if s.n_coef() != c.len() {
                return Err(Error::Format(format!(
                    "learner {l}: {} coefficients, basis has {}",
                    c.len(),
                    s.n_coef()
                )));
            }
        }
        if let Some(&bad) = trace.iter().find(|&&t| t >= specs.len()) {
            return Err(Error::Format(format!("trace refers to learner {bad} of {}", specs.len())));
        }
        if trace.len() != config.m_stop {
            return Err(Error::Format(format!(
                "trace has {} entries, m_stop is {}",
                trace.len(),
                config.m_stop
            )));
        }
        Ok(Self {
            response,
            loss,
            config,
            offset,
            specs,
            coefs,
            trace,
            risk,
            structures,
            train_eta: None,
        })
    }

    pub fn n_learners(&self) -> usize {
        self.specs.len()
    }

    pub fn structure(&self, learner: usize) -> &LearnerStructure {
        &self.structures[learner]
    }

    /// Selection count per learner.
    pub fn selection_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.specs.len()];
        for &t in &self.trace {
            c[t] += 1;
        }
        c
    }

    /// Linear predictor on the training data as tracked during fitting.
    pub fn training_eta(&self) -> Option<&Vector> {
        self.train_eta.as_ref()
    }

    /// Contribution of one learner on `data`.
    pub fn partial(&self, learner: usize, data: &Dataset) -> Result<Vector> {
        Ok(self.structures[learner].design(data)?.values * self.coefs.get(learner))
    }

    pub fn predict(&self, data: &Dataset, kind: PredictType) -> Result<Vector> {
        let mut eta = Vector::from_element(data.nrows(), self.offset);
        for l in 0..self.specs.len() {
            eta += self.partial(l, data)?;
        }
        if kind == PredictType::Response {
            eta.apply(|v| *v = self.loss.response(*v));
        }
        Ok(eta)
    }
}

/// Fit `m_stop` iterations of componentwise boosting.
pub fn boost(
    data: &Dataset,
    response: &str,
    specs: &[LearnerSpec],
    loss: Loss,
    config: &BoostConfig,
) -> Result<BoostModel> {
    config.validate()?;
    let y = data.column(response)?.to_vec();
    loss.check_response(&y)?;
    let resolved = specs.iter().map(|s| s.resolve(data)).collect::<Result<Vec<_>>>()?;
    let (mut engine, offset) = Engine::new(&resolved, data, y, loss, config.step)?;
    let mut risk = Vec::with_capacity(config.m_stop + 1);
    risk.push(engine.risk());
    for _ in 0..config.m_stop {
        engine.iterate()?;
        risk.push(engine.risk());
    }
    let mut model = BoostModel::from_parts(
        response.to_string(),
        loss,
        config.clone(),
        offset,
        resolved,
        engine.coefs,
        engine.trace,
        risk,
    )?;
    model.train_eta = Some(engine.eta);
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "count")]
pub enum Resampling {
    KFold(usize),
    Bootstrap(usize),
}

impl Default for Resampling {
    fn default() -> Self {
        Resampling::KFold(10)
    }
}

impl Resampling {
    /// In-sample and out-of-sample row indices per resample.
    pub fn splits(self, n: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        match self {
            Resampling::KFold(k) => {
                if k < 2 || k > n {
                    return Err(Error::invalid(format!("{k} folds for {n} observations")));
                }
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Ok((0..k)
                    .map(|f| {
                        let mut test: Vec<usize> = perm.iter().skip(f).step_by(k).copied().collect();
                        test.sort_unstable();
                        let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
                        (train, test)
                    })
                    .collect())
            }
            Resampling::Bootstrap(b) => {
                if b < 2 {
                    return Err(Error::invalid("bootstrap resampling needs at least 2 samples"));
                }
                (0..b)
                    .map(|r| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(r as u64 + 1);
                        let train: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                        let mut drawn = vec![false; n];
                        train.iter().for_each(|&i| drawn[i] = true);
                        let test: Vec<usize> = (0..n).filter(|&i| !drawn[i]).collect();
                        if test.is_empty() {
                            return Err(Error::invalid(format!("bootstrap sample {r} has no out-of-sample rows")));
                        }
                        Ok((train, test))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    /// Out-of-sample mean risk, resamples × (m_max + 1).
    pub risk: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub m_stop: usize,
}

/// Out-of-sample risk path of a fit on `train` evaluated on `test`.
fn risk_path(
    specs: &[LearnerSpec],
    train: &Dataset,
    test: &Dataset,
    response: &str,
    loss: Loss,
    step: f64,
    m_max: usize,
) -> Result<Vec<f64>> {
    if test.nrows() == 0 {
        return Err(Error::invalid("empty out-of-sample set"));
    }
    let y_train = train.column(response)?.to_vec();
    let y_test = test.column(response)?.to_vec();
    let (mut engine, offset) = Engine::new(specs, train, y_train, loss, step)?;
    let test_designs: Vec<Matrix> = engine
        .learners
        .iter()
        .map(|l| Ok(l.structure().design(test)?.values))
        .collect::<Result<_>>()?;
    let mut eta = Vector::from_element(test.nrows(), offset);
    let mut path = Vec::with_capacity(m_max + 1);
    path.push(loss.mean_risk(&y_test, eta.as_slice()));
    for _ in 0..m_max {
        let fit = engine.iterate()?;
        eta += &test_designs[fit.learner] * &fit.beta * step;
        path.push(loss.mean_risk(&y_test, eta.as_slice()));
    }
    Ok(path)
}

/// Resampling estimate of the out-of-sample risk for 0..=m_max iterations.
///
/// Covariate domains are fixed on the full data, so every resample shares
/// the same bases.
pub fn cvrisk(
    data: &Dataset,
    response: &str,
    specs: &[LearnerSpec],
    loss: Loss,
    config: &BoostConfig,
    resampling: Resampling,
    m_max: usize,
) -> Result<CvResult> {
    config.validate()?;
    let y = data.column(response)?;
    loss.check_response(y)?;
    let resolved = specs.iter().map(|s| s.resolve(data)).collect::<Result<Vec<_>>>()?;
    let splits = resampling.splits(data.nrows(), config.seed)?;
    let risk = splits
        .par_iter()
        .map(|(train, test)| {
            risk_path(
                &resolved,
                &data.select_rows(train),
                &data.select_rows(test),
                response,
                loss,
                config.step,
                m_max,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mean: Vec<f64> = (0..=m_max)
        .map(|m| risk.iter().map(|r| r[m]).sum::<f64>() / risk.len() as f64)
        .collect();
    let m_stop = mean
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0;
    Ok(CvResult { risk, mean, m_stop })
}
