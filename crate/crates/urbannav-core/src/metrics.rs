//! Offline evaluation: per-step orientation error, its per-sample maximum,
//! L2 distance, arrival accuracy, and scenario-stratified aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::NavigationSample;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::losses::sigmoid;
use crate::scenario::Scenario;

/// Pairs with either norm at or below this are excluded from orientation
/// metrics and counted per cell.
pub const METRIC_EPSILON: f64 = 1e-8;

/// One model output in evaluation form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub actions: Vec<Vec2>,
    /// Arrival probability in [0, 1].
    pub arrival_prob: f64,
}

impl Prediction {
    pub fn from_logit(actions: Vec<Vec2>, logit: f64) -> Self {
        Prediction { actions, arrival_prob: sigmoid(logit) }
    }
}

/// A predicted/ground-truth action-sequence pair, the unit the orientation
/// metrics operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub pred: Vec<Vec2>,
    pub gt: Vec<Vec2>,
}

/// Angle between one predicted and one ground-truth action, in degrees.
/// The dot ratio is clamped into [−1, 1] before arccos to guard
/// floating-point overshoot near 0°/180°.
pub fn aoe_step(pred: Vec2, gt: Vec2, epsilon: f64) -> Result<f64> {
    let pn = pred.norm();
    let gn = gt.norm();
    if pn <= epsilon || gn <= epsilon {
        return Err(Error::DegeneratePair);
    }
    let ratio = (pred.dot(gt) / (pn * gn)).clamp(-1.0, 1.0);
    Ok(ratio.acos().to_degrees())
}

/// Mean orientation error at step `k` (0-based) over all pairs, excluding
/// degenerate ones.
pub fn aoe(pairs: &[EvalPair], k: usize, epsilon: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        if k >= pair.pred.len() || k >= pair.gt.len() {
            return Err(Error::OutOfRange { t: k, horizon: 0, len: pair.pred.len() });
        }
        match aoe_step(pair.pred[k], pair.gt[k], epsilon) {
            Ok(theta) => {
                sum += theta;
                n += 1;
            }
            Err(Error::DegeneratePair) => {}
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::EmptyAfterExclusion("aoe"));
    }
    Ok(sum / n as f64)
}

/// Mean over samples of the per-sample maximum orientation error across
/// steps. Samples whose pairs are all excluded drop out of the mean.
pub fn maoe(pairs: &[EvalPair], epsilon: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        let mut max: Option<f64> = None;
        for (p, g) in pair.pred.iter().zip(&pair.gt) {
            if let Ok(theta) = aoe_step(*p, *g, epsilon) {
                max = Some(max.map_or(theta, |m: f64| m.max(theta)));
            }
        }
        if let Some(m) = max {
            sum += m;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyAfterExclusion("maoe"));
    }
    Ok(sum / n as f64)
}

/// Mean Euclidean distance over the waypoint pairs, denormalized to meters.
pub fn l2_metric(pred: &[Vec2], gt: &[Vec2], step_length: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            context: "l2 metric actions",
            expected: gt.len().to_string(),
            got: pred.len().to_string(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("l2 metric"));
    }
    let mean: f64 =
        pred.iter().zip(gt).map(|(p, g)| p.distance(*g)).sum::<f64>() / pred.len() as f64;
    Ok(mean * step_length)
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub epsilon: f64,
    /// Arrival counts as predicted when the probability exceeds this.
    pub arrival_prob_threshold: f64,
    /// Optional alternate aggregator: softmax-weighted mean of per-step
    /// orientation errors instead of the plain mean. Off by default.
    pub softmax_aggregation: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { epsilon: METRIC_EPSILON, arrival_prob_threshold: 0.5, softmax_aggregation: false }
    }
}

/// One table cell: a scenario stratum, the All column, or the Mean column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    /// Samples in the cell (for Mean: scenarios averaged).
    pub count: usize,
    /// Prediction/ground-truth pairs excluded by the epsilon rule.
    pub excluded_pairs: usize,
    pub l2_m: Option<f64>,
    /// AOE(1..horizon), each `None` when every pair at that step was excluded.
    pub aoe_deg: Vec<Option<f64>>,
    pub maoe_deg: Option<f64>,
    pub arrival_pct: Option<f64>,
}

impl MetricCell {
    fn empty(horizon: usize) -> Self {
        MetricCell {
            count: 0,
            excluded_pairs: 0,
            l2_m: None,
            aoe_deg: vec![None; horizon],
            maoe_deg: None,
            arrival_pct: None,
        }
    }
}

/// Scenario-stratified metric table mirroring the offline benchmark layout:
/// six scenario columns plus Mean (scenario mean) and All (sample mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizon: usize,
    /// Which ground-truth step defines the action angle for tagging.
    pub action_angle_convention: String,
    /// How L2 aggregates the waypoints (always per-step mean here).
    pub l2_convention: String,
    pub epsilon: f64,
    pub arrival_prob_threshold: f64,
    pub softmax_aggregation: bool,
    /// Unweighted average over the six scenario cells.
    pub mean: MetricCell,
    pub scenarios: BTreeMap<Scenario, MetricCell>,
    /// Sample mean over all samples, each counted once.
    pub all: MetricCell,
    /// Fraction of samples carrying each tag.
    pub proportions: BTreeMap<Scenario, f64>,
}

fn softmax_weighted_mean(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values.iter().map(|v| ((v - max) / 10.0).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum
}

fn cell_from_indices(
    indices: &[usize],
    samples: &[NavigationSample],
    preds: &[Prediction],
    step_lengths: &BTreeMap<String, f64>,
    cfg: &MetricConfig,
    horizon: usize,
) -> Result<MetricCell> {
    if indices.is_empty() {
        return Ok(MetricCell::empty(horizon));
    }
    let mut excluded = 0usize;
    let mut l2_sum = 0.0;
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut maxima: Vec<f64> = Vec::new();
    let mut arrival_correct = 0usize;

    for &i in indices {
        let s = &samples[i];
        let p = &preds[i];
        let step_length = *step_lengths.get(&s.trajectory_id).ok_or_else(|| {
            Error::Config(format!("missing step length for trajectory {}", s.trajectory_id))
        })?;
        l2_sum += l2_metric(&p.actions, &s.future_actions, step_length)?;

        let mut max: Option<f64> = None;
        for (k, (pa, ga)) in p.actions.iter().zip(&s.future_actions).enumerate() {
            match aoe_step(*pa, *ga, cfg.epsilon) {
                Ok(theta) => {
                    per_step[k].push(theta);
                    max = Some(max.map_or(theta, |m: f64| m.max(theta)));
                }
                Err(Error::DegeneratePair) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        if let Some(m) = max {
            maxima.push(m);
        }

        let predicted = p.arrival_prob > cfg.arrival_prob_threshold;
        if predicted == s.arrival_label {
            arrival_correct += 1;
        }
    }

    let aggregate = |vals: &[f64]| -> Option<f64> {
        if vals.is_empty() {
            None
        } else if cfg.softmax_aggregation {
            Some(softmax_weighted_mean(vals))
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    Ok(MetricCell {
        count: indices.len(),
        excluded_pairs: excluded,
        l2_m: Some(l2_sum / indices.len() as f64),
        aoe_deg: per_step.iter().map(|v| aggregate(v)).collect(),
        maoe_deg: aggregate(&maxima),
        arrival_pct: Some(100.0 * arrival_correct as f64 / indices.len() as f64),
    })
}

fn average_cells(cells: &[&MetricCell], horizon: usize) -> MetricCell {
    let avg = |values: Vec<f64>| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let nonempty: Vec<&&MetricCell> = cells.iter().filter(|c| c.count > 0).collect();
    MetricCell {
        count: nonempty.len(),
        excluded_pairs: cells.iter().map(|c| c.excluded_pairs).sum(),
        l2_m: avg(nonempty.iter().filter_map(|c| c.l2_m).collect()),
        aoe_deg: (0..horizon)
            .map(|k| avg(nonempty.iter().filter_map(|c| c.aoe_deg[k]).collect()))
            .collect(),
        maoe_deg: avg(nonempty.iter().filter_map(|c| c.maoe_deg).collect()),
        arrival_pct: avg(nonempty.iter().filter_map(|c| c.arrival_pct).collect()),
    }
}

/// Fill the whole table: one cell per scenario, the All sample mean, and the
/// Mean scenario mean.
pub fn evaluate(
    samples: &[NavigationSample],
    preds: &[Prediction],
    step_lengths: &BTreeMap<String, f64>,
    angle_convention: &str,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if samples.len() != preds.len() {
        return Err(Error::CountMismatch { samples: samples.len(), predictions: preds.len() });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let horizon = samples[0].future_actions.len();
    for (s, p) in samples.iter().zip(preds) {
        if p.actions.len() != s.future_actions.len() {
            return Err(Error::ShapeMismatch {
                context: "prediction horizon",
                expected: s.future_actions.len().to_string(),
                got: p.actions.len().to_string(),
            });
        }
    }

    let all_indices: Vec<usize> = (0..samples.len()).collect();
    let all = cell_from_indices(&all_indices, samples, preds, step_lengths, cfg, horizon)?;

    let mut scenarios = BTreeMap::new();
    for scenario in Scenario::ALL {
        let indices: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].scenario_tags.contains(scenario))
            .collect();
        let cell = cell_from_indices(&indices, samples, preds, step_lengths, cfg, horizon)?;
        scenarios.insert(scenario, cell);
    }
    let cell_refs: Vec<&MetricCell> = Scenario::ALL.iter().map(|s| &scenarios[s]).collect();
    let mean = average_cells(&cell_refs, horizon);

    let tags: Vec<_> = samples.iter().map(|s| s.scenario_tags).collect();
    let proportions = crate::scenario::scenario_proportions(&tags)?;

    Ok(MetricReport {
        horizon,
        action_angle_convention: angle_convention.to_string(),
        l2_convention: "per-step mean".to_string(),
        epsilon: cfg.epsilon,
        arrival_prob_threshold: cfg.arrival_prob_threshold,
        softmax_aggregation: cfg.softmax_aggregation,
        mean,
        scenarios,
        all,
        proportions,
    })
}

/// The exact column order of the offline benchmark table.
pub const REPORT_COLUMNS: [&str; 8] =
    ["Mean", "Turn", "Crossing", "Detour", "Proximity", "Crowd", "Other", "All"];

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "-".to_string(),
    }
}

/// Render the report as an aligned text table with the exact eight columns.
pub fn render_text(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# offline benchmark (action angle: {}, L2: {}, eps: {:.0e}, arrival threshold: {})\n",
        report.action_angle_convention,
        report.l2_convention,
        report.epsilon,
        report.arrival_prob_threshold,
    ));
    if report.softmax_aggregation {
        out.push_str("# aggregation: softmax-weighted orientation errors\n");
    }

    let cells: Vec<&MetricCell> = std::iter::once(&report.mean)
        .chain(Scenario::ALL.iter().map(|s| &report.scenarios[s]))
        .chain(std::iter::once(&report.all))
        .collect();

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push((
        "Proportion (%)".to_string(),
        std::iter::once("-".to_string())
            .chain(Scenario::ALL.iter().map(|s| format!("{:.1}", report.proportions[s] * 100.0)))
            .chain(std::iter::once("100.0".to_string()))
            .collect(),
    ));
    rows.push(("Count".to_string(), cells.iter().map(|c| c.count.to_string()).collect()));
    rows.push(("L2 (m)".to_string(), cells.iter().map(|c| fmt_opt(c.l2_m)).collect()));
    for k in 0..report.horizon {
        rows.push((
            format!("AOE({}) (deg)", k + 1),
            cells.iter().map(|c| fmt_opt(c.aoe_deg[k])).collect(),
        ));
    }
    rows.push(("MAOE (deg)".to_string(), cells.iter().map(|c| fmt_opt(c.maoe_deg)).collect()));
    rows.push(("Arrival (%)".to_string(), cells.iter().map(|c| fmt_opt(c.arrival_pct)).collect()));
    rows.push((
        "Excluded pairs".to_string(),
        cells.iter().map(|c| c.excluded_pairs.to_string()).collect(),
    ));

    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Metric".len());
    let mut col_widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
    for (_, vals) in &rows {
        for (i, v) in vals.iter().enumerate() {
            col_widths[i] = col_widths[i].max(v.len());
        }
    }

    out.push_str(&format!("{:<label_width$}", "Metric"));
    for (i, col) in REPORT_COLUMNS.iter().enumerate() {
        out.push_str(&format!("  {:>width$}", col, width = col_widths[i]));
    }
    out.push('\n');
    for (label, vals) in &rows {
        out.push_str(&format!("{label:<label_width$}"));
        for (i, v) in vals.iter().enumerate() {
            out.push_str(&format!("  {:>width$}", v, width = col_widths[i]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrameRef;
    use crate::scenario::ScenarioTagSet;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn aoe_step_examples() {
        // arccos is ill-conditioned at 0 and 180 degrees, so the parallel
        // and antiparallel cases get a looser bound than the orthogonal one.
        assert!(aoe_step(v(0.4, 1.2), v(0.4, 1.2), METRIC_EPSILON).unwrap().abs() < 1e-5);
        assert!((aoe_step(v(1.0, 0.0), v(0.0, 1.0), METRIC_EPSILON).unwrap() - 90.0).abs() < 1e-12);
        assert!((aoe_step(v(1.0, 1.0), v(-1.0, -1.0), METRIC_EPSILON).unwrap() - 180.0).abs() < 1e-5);
        assert!(matches!(
            aoe_step(v(0.0, 0.0), v(1.0, 0.0), METRIC_EPSILON),
            Err(Error::DegeneratePair)
        ));
    }

    #[test]
    fn aoe_step_scale_invariant() {
        let p = v(0.3, 0.8);
        let g = v(-0.2, 1.1);
        let base = aoe_step(p, g, METRIC_EPSILON).unwrap();
        for c in [1e-3, 7.0, 1e3] {
            assert!((aoe_step(p.scale(c), g, METRIC_EPSILON).unwrap() - base).abs() < 1e-9);
            assert!((aoe_step(p, g.scale(c), METRIC_EPSILON).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn aoe_two_sample_mean() {
        // Step-0 angles 10 and 30 degrees -> mean 20.
        let mk = |deg: f64| {
            let r = deg.to_radians();
            EvalPair { pred: vec![v(r.sin(), r.cos())], gt: vec![v(0.0, 1.0)] }
        };
        let pairs = vec![mk(10.0), mk(30.0)];
        assert!((aoe(&pairs, 0, METRIC_EPSILON).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn maoe_forced_example() {
        // Sample A step angles [10,20,5,~0,~0], sample B [~0,~0,~0,30,~0]
        // -> (20+30)/2 = 25.
        let from_angles = |angles: &[f64]| EvalPair {
            pred: angles
                .iter()
                .map(|d| {
                    let r = d.to_radians();
                    v(r.sin(), r.cos())
                })
                .collect(),
            gt: vec![v(0.0, 1.0); angles.len()],
        };
        let pairs = vec![
            from_angles(&[10.0, 20.0, 5.0, 0.0, 0.0]),
            from_angles(&[0.0, 0.0, 0.0, 30.0, 0.0]),
        ];
        assert!((maoe(&pairs, METRIC_EPSILON).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn l2_examples() {
        let a = vec![v(1.0, 2.0); 5];
        assert_eq!(l2_metric(&a, &a, 1.0).unwrap(), 0.0);
        let gt = vec![v(0.0, 0.0); 5];
        let pred: Vec<Vec2> = gt.iter().map(|p| v(p.x + 0.6, p.y + 0.8)).collect();
        assert!((l2_metric(&pred, &gt, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // Denormalization scales linearly.
        assert!((l2_metric(&pred, &gt, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    fn sample(gt: Vec<Vec2>, tags: ScenarioTagSet, arrival: bool) -> NavigationSample {
        NavigationSample {
            past_frame_refs: vec![FrameRef::new("f"); 5],
            past_positions: vec![Vec2::ZERO; 5],
            target_position: v(0.0, 5.0),
            future_actions: gt,
            future_frame_refs: vec![FrameRef::new("f"); 5],
            arrival_label: arrival,
            scenario_tags: tags,
            trajectory_id: "t".to_string(),
            t: 10,
        }
    }

    fn steps() -> Vec<Vec2> {
        (1..=5).map(|i| v(0.1 * i as f64, i as f64)).collect()
    }

    fn step_lengths() -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("t".to_string(), 1.0);
        m
    }

    #[test]
    fn perfect_predictor_zeroes_table() {
        let samples: Vec<NavigationSample> = (0..10)
            .map(|i| {
                sample(
                    steps(),
                    ScenarioTagSet { turn: i % 2 == 0, ..ScenarioTagSet::default() },
                    i % 3 == 0,
                )
            })
            .collect();
        let preds: Vec<Prediction> = samples
            .iter()
            .map(|s| Prediction {
                actions: s.future_actions.clone(),
                arrival_prob: if s.arrival_label { 1.0 } else { 0.0 },
            })
            .collect();
        let report =
            evaluate(&samples, &preds, &step_lengths(), "final_step", &MetricConfig::default())
                .unwrap();
        assert_eq!(report.all.count, 10);
        assert!(report.all.l2_m.unwrap().abs() < 1e-12);
        assert!(report.all.maoe_deg.unwrap().abs() < 1e-12);
        assert_eq!(report.all.arrival_pct.unwrap(), 100.0);
        for s in Scenario::ALL {
            let cell = &report.scenarios[&s];
            if cell.count > 0 {
                assert!(cell.maoe_deg.unwrap().abs() < 1e-12);
                assert_eq!(cell.arrival_pct.unwrap(), 100.0);
            }
        }
        assert_eq!(report.mean.arrival_pct.unwrap(), 100.0);
    }

    #[test]
    fn evaluate_rejects_count_mismatch() {
        let samples = vec![sample(steps(), ScenarioTagSet::default(), false)];
        assert!(matches!(
            evaluate(&samples, &[], &step_lengths(), "final_step", &MetricConfig::default()),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn all_is_sample_mean_not_cell_average() {
        // Two samples: one Turn-tagged with 30-degree error, one untagged
        // (Other) with 0 error. All = 15; Mean over {Turn, Other} = 15 too,
        // but with a third untagged zero-error sample All = 10 while the
        // scenario mean stays 15.
        let r30 = 30.0f64.to_radians();
        let turn = sample(steps(), ScenarioTagSet { turn: true, ..Default::default() }, false);
        let other1 = sample(steps(), ScenarioTagSet::default(), false);
        let other2 = sample(steps(), ScenarioTagSet::default(), false);
        let samples = vec![turn, other1, other2];
        let rotate = |a: &Vec2| {
            v(a.x * r30.cos() + a.y * r30.sin(), -a.x * r30.sin() + a.y * r30.cos())
        };
        let preds = vec![
            Prediction { actions: samples[0].future_actions.iter().map(rotate).collect(), arrival_prob: 0.0 },
            Prediction { actions: samples[1].future_actions.clone(), arrival_prob: 0.0 },
            Prediction { actions: samples[2].future_actions.clone(), arrival_prob: 0.0 },
        ];
        let report =
            evaluate(&samples, &preds, &step_lengths(), "final_step", &MetricConfig::default())
                .unwrap();
        assert!((report.all.maoe_deg.unwrap() - 10.0).abs() < 1e-9);
        assert!((report.mean.maoe_deg.unwrap() - 15.0).abs() < 1e-9);
        assert_eq!(report.mean.count, 2, "two scenarios present");
    }

    #[test]
    fn evaluate_permutation_invariant() {
        let mut samples: Vec<NavigationSample> = (0..6)
            .map(|i| {
                sample(
                    (1..=5).map(|k| v(0.05 * i as f64, k as f64)).collect(),
                    ScenarioTagSet { crossing: i % 2 == 0, ..Default::default() },
                    i % 2 == 1,
                )
            })
            .collect();
        let mut preds: Vec<Prediction> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| Prediction {
                actions: s.future_actions.iter().map(|a| v(a.x + 0.01 * i as f64, a.y)).collect(),
                arrival_prob: 0.4,
            })
            .collect();
        let cfg = MetricConfig::default();
        let a = evaluate(&samples, &preds, &step_lengths(), "final_step", &cfg).unwrap();
        samples.reverse();
        preds.reverse();
        let b = evaluate(&samples, &preds, &step_lengths(), "final_step", &cfg).unwrap();
        assert!((a.all.maoe_deg.unwrap() - b.all.maoe_deg.unwrap()).abs() < 1e-9);
        assert!((a.all.l2_m.unwrap() - b.all.l2_m.unwrap()).abs() < 1e-9);
        assert_eq!(a.all.count, b.all.count);
    }

    #[test]
    fn report_text_has_exact_columns() {
        let samples = vec![sample(steps(), ScenarioTagSet::default(), true)];
        let preds = vec![Prediction { actions: steps(), arrival_prob: 0.9 }];
        let report =
            evaluate(&samples, &preds, &step_lengths(), "final_step", &MetricConfig::default())
                .unwrap();
        let text = render_text(&report);
        let header = text.lines().find(|l| l.starts_with("Metric")).unwrap();
        let cols: Vec<&str> = header.split_whitespace().skip(1).collect();
        assert_eq!(cols, REPORT_COLUMNS.to_vec());
    }
}
