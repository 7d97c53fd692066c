//! Versioned JSON model files.
//!
//! A model file is one JSON object:
//!
//! ```text
//! {
//!   "format": "conboost-model",
//!   "version": 1,
//!   "response": "y",
//!   "loss": "gaussian" | "poisson",
//!   "config": { "step": 0.1, "m_stop": 100, "seed": 0 },
//!   "offset": 1.25,
//!   "learners": [ { "spec": { ...resolved learner spec... }, "coefficients": [ ... ] } ],
//!   "trace": [0, 1, 0, ...],
//!   "risk": [ ... ]
//! }
//! ```
//!
//! Learner specs are stored resolved (covariate ranges and level counts are
//! explicit), so the bases are rebuilt bit-for-bit. Floats are written in
//! shortest round-trip form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boost::{BoostConfig, BoostModel, Loss};
use crate::error::{Error, Result};
use crate::learner::{CoefficientStore, LearnerSpec};

pub const FORMAT: &str = "conboost-model";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredLearner {
    spec: LearnerSpec,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    response: String,
    loss: Loss,
    config: BoostConfig,
    offset: f64,
    learners: Vec<StoredLearner>,
    trace: Vec<usize>,
    risk: Vec<f64>,
}

pub fn to_json(model: &BoostModel) -> Result<String> {
    let file = ModelFile {
        format: FORMAT.to_string(),
        version: VERSION,
        response: model.response.clone(),
        loss: model.loss,
        config: model.config.clone(),
        offset: model.offset,
        learners: model
            .specs
            .iter()
            .zip(model.coefs.raw())
            .map(|(spec, c)| StoredLearner {
                spec: spec.clone(),
                coefficients: c.clone(),
            })
            .collect(),
        trace: model.trace.clone(),
        risk: model.risk.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<BoostModel> {
    let header: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    match header.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT) => {}
        other => return Err(Error::Format(format!("not a model file (format {other:?})"))),
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(VERSION) => {}
        other => {
            return Err(Error::Format(format!(
                "unsupported model version {other:?}, expected {VERSION}"
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(header).map_err(|e| Error::Format(e.to_string()))?;
    if !file.offset.is_finite() {
        return Err(Error::Format("non-finite offset".into()));
    }
    let (specs, coefs): (Vec<_>, Vec<_>) = file.learners.into_iter().map(|l| (l.spec, l.coefficients)).unzip();
    if coefs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite coefficient".into()));
    }
    BoostModel::from_parts(
        file.response,
        file.loss,
        file.config,
        file.offset,
        specs,
        CoefficientStore::from_vecs(coefs),
        file.trace,
        file.risk,
    )
    .map_err(|e| match e {
        Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    })
}

pub fn save(model: &BoostModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<BoostModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    from_json(&text)
}

/// Check that a loaded model was fitted with the given learner list.
pub fn ensure_learners(model: &BoostModel, specs: &[LearnerSpec]) -> Result<()> {
    if model.specs.len() != specs.len() {
        return Err(Error::Format(format!(
            "model has {} learners, configuration declares {}",
            model.specs.len(),
            specs.len()
        )));
    }
    for (i, (m, s)) in model.specs.iter().zip(specs).enumerate() {
        if m.kind != s.kind || m.covariates != s.covariates || m.by != s.by {
            return Err(Error::Format(format!(
                "learner {i}: model has `{}`, configuration declares `{}`",
                m.label(),
                s.label()
            )));
        }
    }
    Ok(())
}
