//! Dataset shard persistence: a directory with a schema-versioned index
//! file plus line-delimited record files. Round-trips are bit-exact for
//! integers and flags and exact for finite f64 (shortest-round-trip JSON).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{NavigationSample, SamplingParams};
use crate::error::{Error, Result};
use crate::geometry::SourceDomain;

pub const SHARD_SCHEMA_VERSION: u32 = 1;

/// Records per record file.
const RECORDS_PER_FILE: usize = 8192;

/// Shard-level metadata: provenance and normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardMetadata {
    /// Mean step length (d̄) per trajectory id, in meters.
    pub step_lengths: BTreeMap<String, f64>,
    /// Source domain per trajectory id.
    pub domains: BTreeMap<String, SourceDomain>,
    /// Parameters the samples were built with.
    pub params: SamplingParams,
}

/// An in-memory shard: samples plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub samples: Vec<NavigationSample>,
    pub metadata: ShardMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct ShardIndex {
    schema_version: u32,
    record_files: Vec<String>,
    sample_count: usize,
    metadata: ShardMetadata,
}

impl DatasetShard {
    pub fn new(samples: Vec<NavigationSample>, metadata: ShardMetadata) -> Self {
        DatasetShard { samples, metadata }
    }

    /// Every sample's trajectory id must resolve in the metadata maps.
    pub fn validate_refs(&self) -> Result<()> {
        for s in &self.samples {
            if !self.metadata.step_lengths.contains_key(&s.trajectory_id) {
                return Err(Error::Config(format!(
                    "sample references trajectory {} absent from shard metadata",
                    s.trajectory_id
                )));
            }
        }
        Ok(())
    }
}

/// Write a shard to `dir` (created if needed). Existing record files are
/// replaced; the write is single-owner by contract.
pub fn write_shard(shard: &DatasetShard, dir: &Path) -> Result<()> {
    shard.validate_refs()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut record_files = Vec::new();
    for (chunk_idx, chunk) in shard.samples.chunks(RECORDS_PER_FILE).enumerate() {
        let name = format!("records-{chunk_idx:05}.jsonl");
        let path = dir.join(&name);
        let file = std::fs::File::create(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        for sample in chunk {
            let line = serde_json::to_string(sample)
                .map_err(|e| Error::Config(format!("serialize sample: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        record_files.push(name);
    }

    let index = ShardIndex {
        schema_version: SHARD_SCHEMA_VERSION,
        record_files,
        sample_count: shard.samples.len(),
        metadata: shard.metadata.clone(),
    };
    let index_path = dir.join("index.json");
    let body = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::Config(format!("serialize index: {e}")))?;
    std::fs::write(&index_path, body).map_err(|e| Error::io(index_path.display().to_string(), e))?;
    Ok(())
}

/// Read a shard directory written by [`write_shard`].
pub fn read_shard(dir: &Path) -> Result<DatasetShard> {
    let index_path = dir.join("index.json");
    let body = std::fs::read_to_string(&index_path)
        .map_err(|e| Error::io(index_path.display().to_string(), e))?;
    // Check the schema version before strict decoding so version drift is
    // reported as such rather than as a field error.
    let probe: serde_json::Value = serde_json::from_str(&body)
        .map_err(|e| Error::parse(index_path.display().to_string(), 0, e.to_string()))?;
    let found = probe
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != SHARD_SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            path: index_path.display().to_string(),
            found,
            expected: SHARD_SCHEMA_VERSION,
        });
    }
    let index: ShardIndex = serde_json::from_str(&body)
        .map_err(|e| Error::parse(index_path.display().to_string(), 0, e.to_string()))?;

    let mut samples = Vec::with_capacity(index.sample_count);
    for name in &index.record_files {
        let path = dir.join(name);
        let file =
            std::fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: NavigationSample = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
            samples.push(sample);
        }
    }
    if samples.len() != index.sample_count {
        return Err(Error::CountMismatch {
            samples: index.sample_count,
            predictions: samples.len(),
        });
    }
    Ok(DatasetShard { samples, metadata: index.metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FrameRef, Vec2};
    use crate::scenario::ScenarioTagSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn metadata() -> ShardMetadata {
        let mut step_lengths = BTreeMap::new();
        step_lengths.insert("t".to_string(), 0.73);
        let mut domains = BTreeMap::new();
        domains.insert("t".to_string(), SourceDomain::Walking);
        ShardMetadata { step_lengths, domains, params: SamplingParams::default() }
    }

    fn random_sample(rng: &mut ChaCha8Rng) -> NavigationSample {
        let v2 = |r: &mut ChaCha8Rng| Vec2::new(r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0));
        NavigationSample {
            past_frame_refs: (0..5).map(|i| FrameRef::new(format!("t/{i}"))).collect(),
            past_positions: (0..5).map(|_| v2(rng)).collect(),
            target_position: v2(rng),
            future_actions: (0..5).map(|_| v2(rng)).collect(),
            future_frame_refs: (5..10).map(|i| FrameRef::new(format!("t/{i}"))).collect(),
            arrival_label: rng.gen_bool(0.3),
            scenario_tags: ScenarioTagSet {
                turn: rng.gen_bool(0.2),
                crossing: rng.gen_bool(0.2),
                detour: rng.gen_bool(0.2),
                proximity: rng.gen_bool(0.2),
                crowd: rng.gen_bool(0.2),
            },
            trajectory_id: "t".to_string(),
            t: rng.gen_range(5..10_000),
        }
    }

    #[test]
    fn empty_shard_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let shard = DatasetShard::new(vec![], metadata());
        write_shard(&shard, dir.path()).unwrap();
        let back = read_shard(dir.path()).unwrap();
        assert_eq!(back, shard);
    }

    #[test]
    fn single_sample_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shard = DatasetShard::new(vec![random_sample(&mut rng)], metadata());
        write_shard(&shard, dir.path()).unwrap();
        assert_eq!(read_shard(dir.path()).unwrap(), shard);
    }

    #[test]
    fn ten_thousand_random_samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<NavigationSample> = (0..10_000).map(|_| random_sample(&mut rng)).collect();
        let shard = DatasetShard::new(samples, metadata());
        write_shard(&shard, dir.path()).unwrap();
        let back = read_shard(dir.path()).unwrap();
        assert_eq!(back.samples.len(), shard.samples.len());
        // Field-for-field: exact equality, floats included (shortest
        // round-trip representation is lossless for finite f64).
        for (a, b) in shard.samples.iter().zip(&back.samples) {
            assert_eq!(a, b);
        }
        assert_eq!(back.metadata, shard.metadata);
        // Chunking produced more than one record file.
        assert!(dir.path().join("records-00001.jsonl").exists());
    }

    #[test]
    fn schema_version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let shard = DatasetShard::new(vec![], metadata());
        write_shard(&shard, dir.path()).unwrap();
        let index_path = dir.path().join("index.json");
        let body = std::fs::read_to_string(&index_path).unwrap();
        std::fs::write(&index_path, body.replace("\"schema_version\": 1", "\"schema_version\": 999")).unwrap();
        assert!(matches!(
            read_shard(dir.path()),
            Err(Error::SchemaVersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn missing_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(read_shard(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn unresolved_trajectory_ref_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sample = random_sample(&mut rng);
        sample.trajectory_id = "unknown".to_string();
        let shard = DatasetShard::new(vec![sample], metadata());
        assert!(write_shard(&shard, dir.path()).is_err());
    }
}
