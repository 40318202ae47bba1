//! Pose-log and manifest ingestion.
//!
//! Pose logs are line-delimited: `frame_index tx ty tz qw qx qy qz`.
//! A manifest maps trajectory id → pose-log path, frame source (image
//! directory or feature-cache prefix), and source domain, one per line:
//! `id pose_log_path frame_source domain`.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_to_ground, ForwardAxis, FrameRef, Pose3, SourceDomain, Trajectory};

pub fn parse_pose_log(path: &Path) -> Result<Vec<Pose3>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut poses = Vec::new();
    let mut last_index: Option<i64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let t: i64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), lineno, "bad frame index"))?;
        let mut vals = [0.0f64; 7];
        for (i, f) in fields[1..8].iter().enumerate() {
            vals[i] = f.parse().map_err(|_| {
                Error::parse(path.display().to_string(), lineno, format!("bad float `{f}`"))
            })?;
        }
        if let Some(prev) = last_index {
            if t <= prev {
                return Err(Error::parse(
                    path.display().to_string(),
                    lineno,
                    format!("frame index {t} not strictly increasing after {prev}"),
                ));
            }
        }
        last_index = Some(t);
        poses.push(Pose3 {
            t,
            position: [vals[0], vals[1], vals[2]],
            rotation: [vals[3], vals[4], vals[5], vals[6]],
        });
    }
    Ok(poses)
}

pub fn write_pose_log(path: &Path, poses: &[Pose3]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            p.t,
            p.position[0],
            p.position[1],
            p.position[2],
            p.rotation[0],
            p.rotation[1],
            p.rotation[2],
            p.rotation[3],
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub pose_log: PathBuf,
    /// Prefix for per-frame refs (image directory or feature-cache key).
    pub frame_source: String,
    pub source_domain: SourceDomain,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path.display().to_string(),
                lineno,
                format!("expected `id pose_log frame_source domain`, got {} fields", fields.len()),
            ));
        }
        let domain: SourceDomain = fields[3]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), lineno, "bad source domain"))?;
        let pose_log = base.join(fields[1]);
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            pose_log,
            frame_source: fields[2].to_string(),
            source_domain: domain,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{} {} {} {}\n",
            e.id,
            e.pose_log.display(),
            e.frame_source,
            e.source_domain
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load, project, and step-length-fit one trajectory from a manifest entry.
/// Frame refs are `<frame_source>/<frame_index, 6 digits>`. `subsample`
/// keeps every Nth pose, for logs extracted at a higher frame rate than the
/// intended sample spacing (1 = keep all).
pub fn load_trajectory(
    entry: &ManifestEntry,
    forward: ForwardAxis,
    subsample: usize,
) -> Result<Trajectory> {
    if subsample == 0 {
        return Err(Error::Config("pose subsample must be >= 1".into()));
    }
    let raw = parse_pose_log(&entry.pose_log)?;
    let mut poses = Vec::with_capacity(raw.len() / subsample + 1);
    let mut refs = Vec::with_capacity(raw.len() / subsample + 1);
    for p in raw.iter().step_by(subsample) {
        poses.push(project_to_ground(p, forward)?);
        refs.push(FrameRef::new(format!("{}/{:06}", entry.frame_source, p.t)));
    }
    let mut traj = Trajectory::new(entry.id.clone(), poses, refs, entry.source_domain)?;
    traj.fit_step_length()?;
    Ok(traj)
}
