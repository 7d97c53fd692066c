//! Bootstrap confidence bands for fitted effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{boost, cvrisk, BoostConfig, BoostModel, Loss, Resampling};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{LearnerSpec, LearnerStructure};
use crate::linalg::Vector;

/// A centered effect on an evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Effect {
    pub learner: usize,
    pub label: String,
    pub coords: Vec<(String, Vec<f64>)>,
    pub values: Vec<f64>,
}

fn centered(structure: &LearnerStructure, beta: &Vector, n_grid: usize) -> Result<(Vec<(String, Vec<f64>)>, Vec<f64>)> {
    let grid = structure.effect_grid(n_grid)?;
    let raw = &grid.design * beta;
    let mean = raw.mean();
    Ok((grid.coords, raw.iter().map(|v| v - mean).collect()))
}

/// Effect of one learner, centered to mean zero over its grid.
pub fn effect(model: &BoostModel, learner: usize, n_grid: usize) -> Result<Effect> {
    if learner >= model.n_learners() {
        return Err(Error::invalid(format!(
            "unknown learner {learner}; the model has {}",
            model.n_learners()
        )));
    }
    let (coords, values) = centered(model.structure(learner), &model.coefs.get(learner), n_grid)?;
    Ok(Effect {
        learner,
        label: model.specs[learner].label(),
        coords,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "BootstrapConfig::default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "BootstrapConfig::default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "BootstrapConfig::default_grid")]
    pub grid: usize,
    /// Folds of the inner cross-validation that picks each resample's stopping iteration.
    #[serde(default = "BootstrapConfig::default_inner_folds")]
    pub inner_folds: usize,
    /// Largest stopping iteration considered by the inner cross-validation.
    #[serde(default = "BootstrapConfig::default_inner_m_max")]
    pub inner_m_max: usize,
    /// Fraction of outer resamples allowed to fail.
    #[serde(default = "BootstrapConfig::default_failure_budget")]
    pub failure_budget: f64,
}

impl BootstrapConfig {
    fn default_n_boot() -> usize {
        1000
    }
    fn default_levels() -> Vec<f64> {
        vec![0.80, 0.95]
    }
    fn default_grid() -> usize {
        100
    }
    fn default_inner_folds() -> usize {
        5
    }
    fn default_inner_m_max() -> usize {
        200
    }
    fn default_failure_budget() -> f64 {
        0.02
    }

    fn validate(&self) -> Result<()> {
        if self.n_boot < 2 {
            return Err(Error::invalid("n_boot must be at least 2"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::invalid("levels must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: Self::default_n_boot(),
            levels: Self::default_levels(),
            grid: Self::default_grid(),
            inner_folds: Self::default_inner_folds(),
            inner_m_max: Self::default_inner_m_max(),
            failure_budget: Self::default_failure_budget(),
        }
    }
}

/// Bootstrap replicates of one learner's centered effect.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCurves {
    pub learner: usize,
    pub label: String,
    pub coords: Vec<(String, Vec<f64>)>,
    /// One curve per successful resample, each of the grid's length.
    pub curves: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Pointwise,
    Simultaneous,
}

impl BandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BandKind::Pointwise => "pointwise",
            BandKind::Simultaneous => "simultaneous",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandLevel {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Inflation factor about the median (1 for pointwise bands).
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceBand {
    pub learner: usize,
    pub coords: Vec<(String, Vec<f64>)>,
    pub median: Vec<f64>,
    pub levels: Vec<BandLevel>,
    pub kind: BandKind,
}

/// One exported band row: grid coordinates, level, lower, upper, kind.
pub type BandRow = (Vec<f64>, f64, f64, f64, BandKind);

impl ConfidenceBand {
    pub fn level(&self, level: f64) -> Option<&BandLevel> {
        self.levels.iter().find(|b| (b.level - level).abs() < 1e-12)
    }

    pub fn rows(&self) -> Vec<BandRow> {
        let n = self.median.len();
        self.levels
            .iter()
            .flat_map(|b| {
                (0..n).map(move |i| {
                    (
                        self.coords.iter().map(|c| c.1[i]).collect(),
                        b.level,
                        b.lower[i],
                        b.upper[i],
                        self.kind,
                    )
                })
            })
            .collect()
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise empirical quantiles at `(1 ± level)/2` for every level.
pub fn pointwise_band(curves: &BootstrapCurves, levels: &[f64]) -> Result<ConfidenceBand> {
    if curves.curves.len() < 2 {
        return Err(Error::invalid("pointwise bands need at least 2 curves"));
    }
    let g = curves.curves[0].len();
    let columns: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            let mut col: Vec<f64> = curves.curves.iter().map(|c| c[i]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    Ok(ConfidenceBand {
        learner: curves.learner,
        coords: curves.coords.clone(),
        median: columns.iter().map(|c| quantile(c, 0.5)).collect(),
        levels: sorted_levels
            .iter()
            .map(|&level| BandLevel {
                level,
                lower: columns.iter().map(|c| quantile(c, (1.0 - level) / 2.0)).collect(),
                upper: columns.iter().map(|c| quantile(c, (1.0 + level) / 2.0)).collect(),
                scale: 1.0,
            })
            .collect(),
        kind: BandKind::Pointwise,
    })
}

/// Smallest inflation of the pointwise band about the median that contains
/// the whole curve.
fn containment_factor(curve: &[f64], median: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut c: f64 = 0.0;
    for i in 0..curve.len() {
        let dev = curve[i] - median[i];
        let half = if dev > 0.0 { upper[i] - median[i] } else { median[i] - lower[i] };
        let need = if dev == 0.0 {
            0.0
        } else if half > 0.0 {
            dev.abs() / half
        } else {
            f64::INFINITY
        };
        c = c.max(need);
    }
    c
}

/// Inflate the pointwise band at `level` about the median by the smallest
/// factor `c ≥ 1` for which at least `level` of the curves lie entirely
/// inside.
pub fn simultaneous_band(curves: &BootstrapCurves, pointwise: &ConfidenceBand, level: f64) -> Result<ConfidenceBand> {
    let b = curves.curves.len();
    if b < 10 {
        return Err(Error::invalid(format!("simultaneous bands need at least 10 curves, got {b}")));
    }
    let band = pointwise
        .level(level)
        .ok_or_else(|| Error::invalid(format!("pointwise band has no level {level}")))?;
    let mut factors: Vec<f64> = curves
        .curves
        .iter()
        .map(|c| containment_factor(c, &pointwise.median, &band.lower, &band.upper))
        .collect();
    factors.sort_by(f64::total_cmp);
    let k = ((level * b as f64).ceil() as usize).clamp(1, b);
    let scale = factors[k - 1].max(1.0);
    if !scale.is_finite() {
        return Err(Error::invalid("pointwise band has zero width where curves differ"));
    }
    let m = &pointwise.median;
    Ok(ConfidenceBand {
        learner: pointwise.learner,
        coords: pointwise.coords.clone(),
        median: m.clone(),
        levels: vec![BandLevel {
            level,
            lower: m.iter().zip(&band.lower).map(|(md, lo)| md - scale * (md - lo)).collect(),
            upper: m.iter().zip(&band.upper).map(|(md, up)| md + scale * (up - md)).collect(),
            scale,
        }],
        kind: BandKind::Simultaneous,
    })
}

/// Fraction of curves lying entirely inside level `level` of `band`.
pub fn containment(curves: &BootstrapCurves, band: &ConfidenceBand, level: f64) -> f64 {
    let Some(b) = band.level(level) else { return 0.0 };
    let inside = curves
        .curves
        .iter()
        .filter(|c| c.iter().enumerate().all(|(i, v)| *v >= b.lower[i] - 1e-12 && *v <= b.upper[i] + 1e-12))
        .count();
    inside as f64 / curves.curves.len() as f64
}

#[derive(Clone, Debug)]
pub struct BootstrapResult {
    pub curves: Vec<BootstrapCurves>,
    pub pointwise: Vec<ConfidenceBand>,
    /// Stopping iteration chosen in each successful resample.
    pub m_stops: Vec<usize>,
    pub failures: usize,
}

fn resample_fit(
    data: &Dataset,
    response: &str,
    specs: &[LearnerSpec],
    loss: Loss,
    config: &BoostConfig,
    boot: &BootstrapConfig,
    r: usize,
) -> Result<(usize, Vec<Vec<f64>>)> {
    let n = data.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(r as u64 + 1);
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let sample = data.select_rows(&rows);
    let inner = BoostConfig::new(config.step, 0, rng.random());
    let cv = cvrisk(
        &sample,
        response,
        specs,
        loss,
        &inner,
        Resampling::KFold(boot.inner_folds),
        boot.inner_m_max,
    )?;
    let model = boost(&sample, response, specs, loss, &BoostConfig::new(config.step, cv.m_stop, config.seed))?;
    let curves = (0..specs.len())
        .map(|l| Ok(centered(model.structure(l), &model.coefs.get(l), boot.grid)?.1))
        .collect::<Result<Vec<_>>>()?;
    Ok((cv.m_stop, curves))
}

/// Nested bootstrap: every outer resample picks its own stopping iteration
/// by inner cross-validation, is refitted, and contributes one centered
/// curve per learner. Failed resamples are skipped up to the failure budget.
pub fn bootstrap_ci(
    data: &Dataset,
    response: &str,
    specs: &[LearnerSpec],
    loss: Loss,
    config: &BoostConfig,
    boot: &BootstrapConfig,
) -> Result<BootstrapResult> {
    boot.validate()?;
    config.validate()?;
    let resolved = specs.iter().map(|s| s.resolve(data)).collect::<Result<Vec<_>>>()?;
    let structures = resolved
        .iter()
        .map(LearnerStructure::from_spec)
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Result<(usize, Vec<Vec<f64>>)>> = (0..boot.n_boot)
        .into_par_iter()
        .map(|r| resample_fit(data, response, &resolved, loss, config, boot, r))
        .collect();
    let mut curves: Vec<BootstrapCurves> = structures
        .iter()
        .enumerate()
        .map(|(l, s)| {
            Ok(BootstrapCurves {
                learner: l,
                label: resolved[l].label(),
                coords: s.effect_grid(boot.grid)?.coords,
                curves: Vec::with_capacity(boot.n_boot),
            })
        })
        .collect::<Result<_>>()?;
    let mut m_stops = Vec::new();
    let mut failures = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((m, per_learner)) => {
                m_stops.push(m);
                for (c, curve) in curves.iter_mut().zip(per_learner) {
                    c.curves.push(curve);
                }
            }
            Err(e) => {
                log::warn!("bootstrap resample {r} skipped: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > boot.failure_budget * boot.n_boot as f64 {
        return Err(Error::NotConverged(format!(
            "{failures} of {} bootstrap resamples failed",
            boot.n_boot
        )));
    }
    let pointwise = curves
        .iter()
        .map(|c| pointwise_band(c, &boot.levels))
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapResult {
        curves,
        pointwise,
        m_stops,
        failures,
    })
}
