//! Training losses: L1 on waypoints, orientation (negative cosine
//! similarity), arrival BCE, feature hallucination MSE, and their weighted
//! combination. Each loss has an analytic gradient used by the trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Ground-truth actions with norm at or below this are excluded from the
/// orientation term; their angle is too noisy to supervise.
pub const ORIENTATION_EPSILON: f64 = 1e-8;

/// Weights of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub orientation: f64,
    pub arrival: f64,
    pub feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { l1: 1.0, orientation: 5.0, arrival: 1.0, feature: 0.1 }
    }
}

fn check_shapes(pred: &[Vec2], gt: &[Vec2], context: &'static str) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            context,
            expected: gt.len().to_string(),
            got: pred.len().to_string(),
        });
    }
    Ok(())
}

/// Mean absolute difference over all waypoint coordinates.
pub fn l1_loss(pred: &[Vec2], gt: &[Vec2]) -> Result<f64> {
    check_shapes(pred, gt, "l1 loss actions")?;
    let n = (pred.len() * 2) as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.x - g.x).abs() + (p.y - g.y).abs())
        .sum();
    Ok(sum / n)
}

/// d l1_loss / d pred.
pub fn l1_loss_grad(pred: &[Vec2], gt: &[Vec2]) -> Result<Vec<Vec2>> {
    check_shapes(pred, gt, "l1 loss actions")?;
    let n = (pred.len() * 2) as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| Vec2::new((p.x - g.x).signum() / n, (p.y - g.y).signum() / n))
        .collect())
}

/// Orientation loss value plus the number of excluded pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationLoss {
    pub value: f64,
    pub excluded: usize,
}

/// Negative cosine similarity between predicted and ground-truth actions,
/// averaged over the pairs whose ground-truth norm exceeds `epsilon`.
/// Range [−1, 1]; scale-invariant in the predictions.
pub fn orientation_loss(pred: &[Vec2], gt: &[Vec2], epsilon: f64) -> Result<OrientationLoss> {
    check_shapes(pred, gt, "orientation loss actions")?;
    let mut sum = 0.0;
    let mut included = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if g.norm() <= epsilon {
            continue;
        }
        let pn = p.norm().max(1e-300);
        sum += p.dot(*g) / (pn * g.norm());
        included += 1;
    }
    if included == 0 {
        return Err(Error::AllPairsDegenerate);
    }
    Ok(OrientationLoss {
        value: -sum / included as f64,
        excluded: pred.len() - included,
    })
}

/// d orientation_loss / d pred. Excluded pairs get zero gradient.
pub fn orientation_loss_grad(pred: &[Vec2], gt: &[Vec2], epsilon: f64) -> Result<Vec<Vec2>> {
    check_shapes(pred, gt, "orientation loss actions")?;
    let included = gt.iter().filter(|g| g.norm() > epsilon).count();
    if included == 0 {
        return Err(Error::AllPairsDegenerate);
    }
    let k = included as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            if g.norm() <= epsilon {
                return Vec2::ZERO;
            }
            let pn = p.norm().max(1e-300);
            let gn = g.norm();
            let dot = p.dot(*g);
            // d/dp [ <p,g> / (|p||g|) ] = g/(|p||g|) − (<p,g>/(|p|³|g|)) p
            let gx = g.x / (pn * gn) - dot * p.x / (pn * pn * pn * gn);
            let gy = g.y / (pn * gn) - dot * p.y / (pn * pn * pn * gn);
            Vec2::new(-gx / k, -gy / k)
        })
        .collect())
}

/// Numerically stable binary cross-entropy on a logit.
pub fn arrival_loss(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// d arrival_loss / d logit = sigmoid(logit) − label.
pub fn arrival_loss_grad(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    sigmoid(logit) - y
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean squared error between hallucinated future tokens and tokens
/// extracted from the actual future frames. The future tokens come from the
/// frozen provider and receive no gradient.
pub fn feature_hallucination_loss(hallucinated: &[Vec<f64>], future: &[Vec<f64>]) -> Result<f64> {
    if hallucinated.len() != future.len()
        || hallucinated
            .iter()
            .zip(future)
            .any(|(h, f)| h.len() != f.len())
    {
        return Err(Error::ShapeMismatch {
            context: "feature hallucination tokens",
            expected: format!("{}x{}", future.len(), future.first().map_or(0, Vec::len)),
            got: format!("{}x{}", hallucinated.len(), hallucinated.first().map_or(0, Vec::len)),
        });
    }
    let n: usize = hallucinated.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::EmptyInput("feature hallucination tokens"));
    }
    let sum: f64 = hallucinated
        .iter()
        .zip(future)
        .flat_map(|(h, f)| h.iter().zip(f).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    Ok(sum / n as f64)
}

/// d feature_hallucination_loss / d hallucinated.
pub fn feature_hallucination_loss_grad(
    hallucinated: &[Vec<f64>],
    future: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    feature_hallucination_loss(hallucinated, future)?;
    let n: usize = hallucinated.iter().map(Vec::len).sum();
    Ok(hallucinated
        .iter()
        .zip(future)
        .map(|(h, f)| {
            h.iter()
                .zip(f)
                .map(|(a, b)| 2.0 * (a - b) / n as f64)
                .collect()
        })
        .collect())
}

/// Per-term loss values for one step. `feature` is `None` when the
/// hallucination switch is off; the term is then omitted from the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub orientation: f64,
    pub arrival: f64,
    pub feature: Option<f64>,
}

/// Weighted sum of the individual losses.
pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    for (term, value) in [
        ("l1", Some(parts.l1)),
        ("orientation", Some(parts.orientation)),
        ("arrival", Some(parts.arrival)),
        ("feature", parts.feature),
    ] {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, value: v, batch: None });
            }
        }
    }
    let mut total =
        weights.l1 * parts.l1 + weights.orientation * parts.orientation + weights.arrival * parts.arrival;
    if let Some(feat) = parts.feature {
        total += weights.feature * feat;
    }
    Ok(total)
}
