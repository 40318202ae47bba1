//! Sample extraction: trajectory windows → training/evaluation records,
//! plus detection-log ingestion.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AgentFrame, FrameRef, Trajectory, Vec2};
use crate::scenario::ScenarioTagSet;

/// One training/evaluation record: a window of past context, the target,
/// and the normalized future actions with an arrival label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationSample {
    /// k refs to the past frames, ending at the current frame.
    pub past_frame_refs: Vec<FrameRef>,
    /// k past positions in the current agent frame, normalized units.
    /// The last entry is the current position, hence (0, 0).
    pub past_positions: Vec<Vec2>,
    /// Target position in the current agent frame, normalized units.
    pub target_position: Vec2,
    /// Future actions (horizon entries), normalized units.
    pub future_actions: Vec<Vec2>,
    /// Refs to the future frames (feature hallucination targets).
    pub future_frame_refs: Vec<FrameRef>,
    pub arrival_label: bool,
    pub scenario_tags: ScenarioTagSet,
    pub trajectory_id: String,
    /// Pose index within the source trajectory.
    pub t: usize,
}

impl NavigationSample {
    fn validate(&self, context: usize, horizon: usize) -> Result<()> {
        if self.past_positions.len() != context || self.past_frame_refs.len() != context {
            return Err(Error::ShapeMismatch {
                context: "past positions",
                expected: context.to_string(),
                got: self.past_positions.len().to_string(),
            });
        }
        if self.future_actions.len() != horizon || self.future_frame_refs.len() != horizon {
            return Err(Error::ShapeMismatch {
                context: "future actions",
                expected: horizon.to_string(),
                got: self.future_actions.len().to_string(),
            });
        }
        let all_finite = self.past_positions.iter().all(|p| p.is_finite())
            && self.future_actions.iter().all(|p| p.is_finite())
            && self.target_position.is_finite();
        if !all_finite {
            return Err(Error::NonFiniteInput("navigation sample coordinates"));
        }
        Ok(())
    }
}

/// Window-extraction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    /// Number of past positions/frames per sample (k).
    pub context: usize,
    /// Number of future actions per sample.
    pub horizon: usize,
    /// Frames between consecutive samples.
    pub stride: usize,
    /// Target drawn uniformly from [min, max] frames ahead, per sample.
    pub target_lookahead_min: usize,
    pub target_lookahead_max: usize,
    /// Arrival label fires when the target lies within this many normalized
    /// units of the agent (inclusive).
    pub arrival_radius: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            context: 5,
            horizon: 5,
            stride: 1,
            target_lookahead_min: 5,
            target_lookahead_max: 25,
            arrival_radius: 2.0,
            seed: 0,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One sample per valid index (configurable stride). Past positions and the
/// target are expressed in the agent frame at t and normalized by the
/// trajectory's fitted step length.
pub fn build_samples(traj: &Trajectory, params: &SamplingParams) -> Result<Vec<NavigationSample>> {
    let d = traj.step_length_mean.ok_or_else(|| {
        Error::Config(format!("trajectory {} has no fitted step length", traj.id))
    })?;
    if params.target_lookahead_min > params.target_lookahead_max
        || params.target_lookahead_min == 0
        || params.stride == 0
        || params.context == 0
        || params.horizon == 0
    {
        return Err(Error::Config(format!(
            "bad sampling params: {params:?}"
        )));
    }
    let reach = params.horizon.max(params.target_lookahead_max);
    let t_min = params.context;
    let needed = t_min + reach + 1;
    if traj.len() < needed {
        return Err(Error::TrajectoryTooShort {
            id: traj.id.clone(),
            len: traj.len(),
            needed,
        });
    }
    let t_max = traj.len() - 1 - reach;

    // Per-trajectory stream keyed by (seed, id) so that shard-level
    // parallelism cannot reorder draws.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ fnv1a(traj.id.as_bytes()));

    let mut samples = Vec::new();
    let mut t = t_min;
    while t <= t_max {
        let frame = AgentFrame::new(traj.poses[t]);
        let inv_d = 1.0 / d;

        let past_positions: Vec<Vec2> = (t + 1 - params.context..=t)
            .map(|i| frame.to_agent(traj.poses[i].position()).scale(inv_d))
            .collect();
        let past_frame_refs: Vec<FrameRef> =
            traj.frame_refs[t + 1 - params.context..=t].to_vec();

        let future_actions: Vec<Vec2> = traj
            .relative_actions(t, params.horizon)?
            .into_iter()
            .map(|a| a.scale(inv_d))
            .collect();
        let future_frame_refs: Vec<FrameRef> =
            traj.frame_refs[t + 1..=t + params.horizon].to_vec();

        let lookahead =
            rng.gen_range(params.target_lookahead_min..=params.target_lookahead_max);
        let target_position = frame
            .to_agent(traj.poses[t + lookahead].position())
            .scale(inv_d);
        let arrival_label = target_position.norm() <= params.arrival_radius;

        let sample = NavigationSample {
            past_frame_refs,
            past_positions,
            target_position,
            future_actions,
            future_frame_refs,
            arrival_label,
            scenario_tags: ScenarioTagSet::default(),
            trajectory_id: traj.id.clone(),
            t,
        };
        sample.validate(params.context, params.horizon)?;
        samples.push(sample);
        t += params.stride;
    }
    Ok(samples)
}

/// One object detection with a normalized bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_label: String,
    /// Confidence in [0, 1].
    pub score: f64,
    /// (x0, y0, x1, y1), normalized to [0, 1], x0 < x1 and y0 < y1.
    pub bbox: [f64; 4],
}

impl Detection {
    /// Box area as a fraction of the image area.
    pub fn area(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])
    }
}

/// All detections for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: i64,
    pub detections: Vec<Detection>,
}

/// Parse a line-delimited detection log: `frame_index class score x0 y0 x1 y1`.
/// Lines for the same frame merge into one record; frames absent from the
/// log simply have no record (treated as empty downstream).
pub fn ingest_detections(path: &Path) -> Result<BTreeMap<i64, DetectionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut map: BTreeMap<i64, DetectionRecord> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let frame_index: i64 = fields[0].parse().map_err(|_| {
            Error::parse(path.display().to_string(), lineno, "bad frame index")
        })?;
        let score: f64 = fields[2].parse().map_err(|_| {
            Error::parse(path.display().to_string(), lineno, "bad score")
        })?;
        let mut bbox = [0.0f64; 4];
        for (i, f) in fields[3..7].iter().enumerate() {
            bbox[i] = f.parse().map_err(|_| {
                Error::parse(path.display().to_string(), lineno, "bad bbox coordinate")
            })?;
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(
                path.display().to_string(),
                lineno,
                format!("score {score} outside [0, 1]"),
            ));
        }
        if bbox[0] >= bbox[2] || bbox[1] >= bbox[3] {
            return Err(Error::parse(
                path.display().to_string(),
                lineno,
                "bbox must satisfy x0 < x1 and y0 < y1",
            ));
        }
        map.entry(frame_index)
            .or_insert_with(|| DetectionRecord { frame_index, detections: Vec::new() })
            .detections
            .push(Detection { class_label: fields[1].to_string(), score, bbox });
    }
    Ok(map)
}
