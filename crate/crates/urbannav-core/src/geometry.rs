//! Geometry primitives: pose-log ingestion types, ground-plane projection,
//! agent-frame transforms, relative actions, and step-length normalization.
//!
//! Conventions, used everywhere in this crate:
//!
//! * The ground plane is world x–y; z is up and is discarded on projection.
//! * `Pose2.yaw` is the CCW-positive rotation about +z that maps the world
//!   +y axis onto the heading, wrapped to (−π, π]. Yaw 0 faces +y.
//! * The agent frame puts the agent at the origin with heading = +y and
//!   right = +x. Angles of agent-frame points are measured from +y,
//!   positive toward +x, so a right turn has positive angle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D vector / point, in meters or normalized units depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Angle from the +y axis, positive toward +x, in radians in (−π, π].
    /// The origin maps to 0 by convention.
    pub fn angle_from_heading(self) -> f64 {
        if self.x == 0.0 && self.y == 0.0 {
            0.0
        } else {
            self.x.atan2(self.y)
        }
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Raw 3D pose from an egomotion log: frame index, position, unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    /// Frame index; strictly increasing within a log.
    pub t: i64,
    /// Position in meters (odometry scale, possibly ambiguous).
    pub position: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub rotation: [f64; 4],
}

impl Pose3 {
    /// Rotate a vector by this pose's quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let [w, qx, qy, qz] = self.rotation;
        // v' = v + 2w(u × v) + 2(u × (u × v)), u = (qx, qy, qz)
        let u = [qx, qy, qz];
        let uv = cross(u, v);
        let uuv = cross(u, uv);
        [
            v[0] + 2.0 * (w * uv[0] + uuv[0]),
            v[1] + 2.0 * (w * uv[1] + uuv[1]),
            v[2] + 2.0 * (w * uv[2] + uuv[2]),
        ]
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Which body axis the pose log treats as "forward". VO tools differ; the
/// choice is a per-ingestion-profile constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardAxis {
    PosX,
    NegX,
    #[default]
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl ForwardAxis {
    pub fn unit(self) -> [f64; 3] {
        match self {
            ForwardAxis::PosX => [1.0, 0.0, 0.0],
            ForwardAxis::NegX => [-1.0, 0.0, 0.0],
            ForwardAxis::PosY => [0.0, 1.0, 0.0],
            ForwardAxis::NegY => [0.0, -1.0, 0.0],
            ForwardAxis::PosZ => [0.0, 0.0, 1.0],
            ForwardAxis::NegZ => [0.0, 0.0, -1.0],
        }
    }
}

impl std::str::FromStr for ForwardAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos_x" | "+x" => Ok(ForwardAxis::PosX),
            "neg_x" | "-x" => Ok(ForwardAxis::NegX),
            "pos_y" | "+y" => Ok(ForwardAxis::PosY),
            "neg_y" | "-y" => Ok(ForwardAxis::NegY),
            "pos_z" | "+z" => Ok(ForwardAxis::PosZ),
            "neg_z" | "-z" => Ok(ForwardAxis::NegZ),
            other => Err(Error::Config(format!("unknown forward axis `{other}`"))),
        }
    }
}

/// Ground-plane pose: position plus heading yaw (see module docs for signs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// CCW-positive rotation about +z mapping +y onto the heading, in (−π, π].
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World-frame heading unit vector.
    pub fn heading(&self) -> Vec2 {
        Vec2::new(-self.yaw.sin(), self.yaw.cos())
    }

    /// World-frame right-hand unit vector (+x of the agent frame).
    pub fn right(&self) -> Vec2 {
        Vec2::new(self.yaw.cos(), self.yaw.sin())
    }
}

/// Project a raw 3D pose onto the ground plane.
///
/// x, y are copied from the horizontal components; yaw is the heading of the
/// rotated forward axis projected to the ground plane.
pub fn project_to_ground(pose: &Pose3, forward: ForwardAxis) -> Result<Pose2> {
    const VERTICAL_TOL: f64 = 1e-6;
    let norm = pose.quaternion_norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidQuaternion { frame: pose.t, norm });
    }
    let f = pose.rotate(forward.unit());
    let planar = f[0].hypot(f[1]);
    if planar < VERTICAL_TOL {
        return Err(Error::DegeneratePose { frame: pose.t, tol: VERTICAL_TOL });
    }
    let yaw = (-f[0]).atan2(f[1]);
    Ok(Pose2::new(pose.position[0], pose.position[1], yaw))
}

/// The frame in which actions, targets, and angles live: agent at the
/// origin, heading along +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub origin: Pose2,
}

impl AgentFrame {
    pub fn new(origin: Pose2) -> Self {
        AgentFrame { origin }
    }

    /// World point → agent frame. Rigid motion; the origin maps to (0, 0)
    /// and the agent heading maps to +y.
    pub fn to_agent(&self, point: Vec2) -> Vec2 {
        let d = point - self.origin.position();
        Vec2::new(d.dot(self.origin.right()), d.dot(self.origin.heading()))
    }

    /// Agent-frame point → world. Inverse of [`AgentFrame::to_agent`].
    pub fn from_agent(&self, point: Vec2) -> Vec2 {
        let r = self.origin.right();
        let h = self.origin.heading();
        Vec2::new(
            self.origin.x + point.x * r.x + point.y * h.x,
            self.origin.y + point.x * r.y + point.y * h.y,
        )
    }
}

/// Reference to an image frame or cached feature record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef(pub String);

impl FrameRef {
    pub fn new(s: impl Into<String>) -> Self {
        FrameRef(s.into())
    }
}

impl std::fmt::Display for FrameRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a trajectory came from; embodiments differ in step length and optics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDomain {
    Walking,
    Driving,
    Teleop,
}

impl std::str::FromStr for SourceDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walking" => Ok(SourceDomain::Walking),
            "driving" => Ok(SourceDomain::Driving),
            "teleop" => Ok(SourceDomain::Teleop),
            other => Err(Error::Config(format!("unknown source domain `{other}`"))),
        }
    }
}

impl std::fmt::Display for SourceDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SourceDomain::Walking => "walking",
            SourceDomain::Driving => "driving",
            SourceDomain::Teleop => "teleop",
        };
        f.write_str(s)
    }
}

/// A time-ordered ground-plane pose log with per-frame references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub poses: Vec<Pose2>,
    pub frame_refs: Vec<FrameRef>,
    /// Mean consecutive displacement (d̄), set by [`Trajectory::fit_step_length`].
    pub step_length_mean: Option<f64>,
    pub source_domain: SourceDomain,
}

impl Trajectory {
    pub fn new(
        id: impl Into<String>,
        poses: Vec<Pose2>,
        frame_refs: Vec<FrameRef>,
        source_domain: SourceDomain,
    ) -> Result<Self> {
        let id = id.into();
        if poses.len() != frame_refs.len() {
            return Err(Error::ShapeMismatch {
                context: "trajectory poses vs frame refs",
                expected: poses.len().to_string(),
                got: frame_refs.len().to_string(),
            });
        }
        Ok(Trajectory { id, poses, frame_refs, step_length_mean: None, source_domain })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Positions of poses t+1..t+horizon expressed in the agent frame of
    /// pose t, in odometry units (unnormalized). Only local relative pose
    /// enters; the global trajectory origin never does.
    pub fn relative_actions(&self, t: usize, horizon: usize) -> Result<Vec<Vec2>> {
        if t + horizon >= self.poses.len() {
            return Err(Error::OutOfRange { t, horizon, len: self.poses.len() });
        }
        let frame = AgentFrame::new(self.poses[t]);
        Ok((1..=horizon)
            .map(|k| frame.to_agent(self.poses[t + k].position()))
            .collect())
    }

    /// Mean of ‖p_{t+1} − p_t‖ over all consecutive pairs; stores the result
    /// into `step_length_mean`.
    pub fn fit_step_length(&mut self) -> Result<f64> {
        if self.poses.len() < 2 {
            return Err(Error::TrajectoryTooShort {
                id: self.id.clone(),
                len: self.poses.len(),
                needed: 2,
            });
        }
        let sum: f64 = self
            .poses
            .windows(2)
            .map(|w| w[1].position().distance(w[0].position()))
            .sum();
        let mean = sum / (self.poses.len() - 1) as f64;
        if mean < 1e-9 {
            return Err(Error::DegenerateTrajectory { id: self.id.clone(), mean });
        }
        self.step_length_mean = Some(mean);
        Ok(mean)
    }
}

/// Divide each action component by the trajectory's mean step length d̄.
pub fn normalize_actions(actions: &[Vec2], step_length_mean: f64) -> Result<Vec<Vec2>> {
    if step_length_mean <= 0.0 {
        return Err(Error::DegenerateTrajectory {
            id: String::new(),
            mean: step_length_mean,
        });
    }
    Ok(actions.iter().map(|a| a.scale(1.0 / step_length_mean)).collect())
}

/// Scale normalized actions by a deployment agent's step length, in meters.
pub fn denormalize_actions(actions: &[Vec2], robot_step: f64) -> Result<Vec<Vec2>> {
    if robot_step <= 0.0 {
        return Err(Error::InvalidStepLength(robot_step));
    }
    Ok(actions.iter().map(|a| a.scale(robot_step)).collect())
}
