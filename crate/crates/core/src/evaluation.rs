//! Risk, negative transfer gap, gate statistics and density-ratio fidelity.

use serde::{Deserialize, Serialize};

use crate::autodiff::{clamped_odds, Tensor};
use crate::data::{analytic_density_ratio, DomainData, Example, ScenarioSpec};
use crate::error::{Error, Result};
use crate::networks::{Label, ModelTriple};
use crate::training::{train, TrainConfig, Variant};

pub const HISTOGRAM_BINS: usize = 20;
pub const DENSITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub loss_kind: LossKind,
    pub n_test: usize,
}

impl RiskEstimate {
    /// `1 - risk` for 0-1 loss.
    pub fn accuracy(&self) -> Option<f64> {
        (self.loss_kind == LossKind::ZeroOne).then_some(1.0 - self.risk)
    }
}

fn inputs(examples: &[Example]) -> Result<Tensor> {
    Tensor::from_rows(&examples.iter().map(|e| e.x.as_slice()).collect::<Vec<_>>())
}

/// Empirical mean loss of `model` on `test`.
pub fn expected_risk(model: &ModelTriple, test: &[Example], loss_kind: LossKind) -> Result<RiskEstimate> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let probs = model.class_probabilities(&inputs(test)?)?;
    let risk = match loss_kind {
        LossKind::ZeroOne => {
            let errors = probs.argmax_rows().iter().zip(test).filter(|(p, e)| **p != e.y).count();
            errors as f64 / test.len() as f64
        }
        LossKind::CrossEntropy => {
            let total: f64 = test
                .iter()
                .enumerate()
                .map(|(i, e)| -probs.row(i)[e.y].max(f64::MIN_POSITIVE).ln())
                .sum();
            total / test.len() as f64
        }
    };
    Ok(RiskEstimate {
        risk,
        loss_kind,
        n_test: test.len(),
    })
}

/// Experimental coordinates attached to a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub seed: u64,
    pub eps_x: f64,
    pub eps_y: f64,
    pub l_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NTGReport {
    pub risk_with_source: RiskEstimate,
    pub risk_target_only: RiskEstimate,
    pub ntg: f64,
    pub ntc: bool,
    pub variant: Variant,
    pub setting: Setting,
}

impl NTGReport {
    pub fn new(
        risk_with_source: RiskEstimate,
        risk_target_only: RiskEstimate,
        variant: Variant,
        setting: Setting,
    ) -> Result<Self> {
        if risk_with_source.loss_kind != risk_target_only.loss_kind {
            return Err(Error::Contract("risks of a gap must use the same loss".into()));
        }
        let ntg = risk_with_source.risk - risk_target_only.risk;
        Ok(Self {
            risk_with_source,
            risk_target_only,
            ntg,
            ntc: ntg > 0.0,
            variant,
            setting,
        })
    }
}

/// Runs `variant` with the source and the target-only baseline without it,
/// sharing seeds and test set, and reports the 0-1 risk gap.
pub fn negative_transfer_gap(
    data: &DomainData,
    cfg: &TrainConfig,
    variant: Variant,
    setting: Setting,
) -> Result<NTGReport> {
    if variant == Variant::TargetOnly {
        return Err(Error::Config(
            "the gap of target_only against itself is not a comparison".into(),
        ));
    }
    let (with, _) = train(data, cfg, variant)?;
    let (without, _) = train(&data.without_source(), cfg, Variant::TargetOnly)?;
    NTGReport::new(
        expected_risk(&with, &data.target_test, LossKind::ZeroOne)?,
        expected_risk(&without, &data.target_test, LossKind::ZeroOne)?,
        variant,
        setting,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean_omega_perturbed: Option<f64>,
    pub mean_omega_clean: Option<f64>,
    pub n_perturbed: usize,
    pub n_clean: usize,
    /// Counts of raw `d` in 20 equal bins over `[0, 1]`.
    pub histogram: Vec<usize>,
}

/// Per-example gate weights `ω = clamped D/(1 - D)` on `(x, y)` pairs.
pub fn gate_weights(model: &ModelTriple, examples: &[Example], delta: f64) -> Result<Vec<(f64, f64)>> {
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let labels: Vec<Label> = examples.iter().map(|e| Label::Class(e.y)).collect();
    let d = model.discriminate(&inputs(examples)?, &labels)?;
    Ok(d.into_iter().map(|d| (clamped_odds(d, delta), d)).collect())
}

pub fn weight_stats(model: &ModelTriple, source: &[Example], delta: f64) -> Result<WeightStats> {
    let weights = gate_weights(model, source, delta)?;
    let mut histogram = vec![0; HISTOGRAM_BINS];
    let (mut sp, mut np, mut sc, mut nc) = (0.0, 0, 0.0, 0);
    for (e, &(omega, d)) in source.iter().zip(&weights) {
        let bin = ((d * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
        if e.is_perturbed() {
            sp += omega;
            np += 1;
        } else {
            sc += omega;
            nc += 1;
        }
    }
    Ok(WeightStats {
        mean_omega_perturbed: (np > 0).then(|| sp / np as f64),
        mean_omega_clean: (nc > 0).then(|| sc / nc as f64),
        n_perturbed: np,
        n_clean: nc,
        histogram,
    })
}

/// Evenly spaced points per input dimension over `[lo, hi]`, crossed with every class.
pub fn evaluation_grid(dim: usize, num_classes: usize, points: usize, lo: f64, hi: f64) -> Vec<(Vec<f64>, usize)> {
    if dim == 0 || points == 0 {
        return Vec::new();
    }
    let axis: Vec<f64> = if points == 1 {
        vec![(lo + hi) / 2.0]
    } else {
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    };
    let mut cells = vec![Vec::new()];
    for _ in 0..dim {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                axis.iter().map(move |&a| {
                    let mut c = c.clone();
                    c.push(a);
                    c
                })
            })
            .collect();
    }
    cells
        .into_iter()
        .flat_map(|x| (0..num_classes).map(move |y| (x.clone(), y)))
        .collect()
}

/// Mean of `|ω - r| / r` over grid points where both joint densities exceed
/// the floor, with `ω` supplied by `omega`.
pub fn ratio_fit_error_with(
    omega: impl Fn(&[(Vec<f64>, usize)]) -> Result<Vec<f64>>,
    target: &ScenarioSpec,
    source: &ScenarioSpec,
    grid: &[(Vec<f64>, usize)],
) -> Result<f64> {
    let valid: Vec<(Vec<f64>, usize)> = grid
        .iter()
        .filter(|(x, y)| target.joint_density(x, *y) > DENSITY_FLOOR && source.joint_density(x, *y) > DENSITY_FLOOR)
        .cloned()
        .collect();
    if valid.is_empty() {
        return Err(Error::Empty("ratio grid after density floor"));
    }
    let w = omega(&valid)?;
    if w.len() != valid.len() {
        return Err(Error::Contract("one weight per grid point expected".into()));
    }
    let mut total = 0.0;
    for ((x, y), w) in valid.iter().zip(w) {
        let r = analytic_density_ratio(target, source, x, *y)?;
        total += (w - r).abs() / r;
    }
    Ok(total / valid.len() as f64)
}

/// [`ratio_fit_error_with`] for the gate weights of a trained model.
pub fn ratio_fit_error(
    model: &ModelTriple,
    target: &ScenarioSpec,
    source: &ScenarioSpec,
    grid: &[(Vec<f64>, usize)],
    delta: f64,
) -> Result<f64> {
    ratio_fit_error_with(
        |pts| {
            let examples: Vec<Example> = pts.iter().map(|(x, y)| Example::new(x.clone(), *y)).collect();
            Ok(gate_weights(model, &examples, delta)?
                .into_iter()
                .map(|(w, _)| w)
                .collect())
        },
        target,
        source,
        grid,
    )
}

#[cfg(test)]
mod tests;
