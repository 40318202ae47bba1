//! Frozen image-feature interface. The trunk only ever sees per-frame
//! feature tokens; where those tokens come from (a pretrained backbone, a
//! cache of precomputed features, or a deterministic synthetic generator)
//! is a pluggable profile choice.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{FrameRef, SourceDomain};
use crate::nn::standard_normal;

/// Provides one feature token per frame reference.
///
/// Implementations must be deterministic per frame ref. Frozen providers
/// sit outside the training graph and receive no gradient.
pub trait FeatureProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn is_frozen(&self) -> bool {
        true
    }
    /// Parameter count of the underlying backbone, for accounting only.
    fn param_count(&self) -> u64 {
        0
    }
    fn features(&self, frame: &FrameRef) -> Result<Vec<f64>>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic pseudo-random projection provider: the token for a frame
/// ref is a fixed unit-variance Gaussian vector seeded by the ref string.
/// Desk-scale stand-in for a real backbone.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    pub dim: usize,
    pub seed: u64,
    declared_params: u64,
}

impl SyntheticProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        SyntheticProvider { dim, seed, declared_params: 0 }
    }
}

impl FeatureProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> u64 {
        self.declared_params
    }

    fn features(&self, frame: &FrameRef) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(frame.0.as_bytes()));
        Ok((0..self.dim).map(|_| standard_normal(&mut rng)).collect())
    }
}

/// Reads precomputed feature records: `<dir>/<frame ref>.json`, each a JSON
/// array of `dim` floats.
#[derive(Debug, Clone)]
pub struct CachedFeatureProvider {
    pub dir: PathBuf,
    pub dim: usize,
}

impl CachedFeatureProvider {
    pub fn new(dir: impl Into<PathBuf>, dim: usize) -> Self {
        CachedFeatureProvider { dir: dir.into(), dim }
    }
}

impl FeatureProvider for CachedFeatureProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, frame: &FrameRef) -> Result<Vec<f64>> {
        let path = self.dir.join(format!("{}.json", frame.0));
        let body = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let v: Vec<f64> = serde_json::from_str(&body)
            .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch {
                context: "cached feature record",
                expected: self.dim.to_string(),
                got: v.len().to_string(),
            });
        }
        Ok(v)
    }
}

/// Analytic parameter count of a standard ViT: patch embedding, class
/// token, position embeddings, `depth` pre-norm blocks with 4x MLP, and a
/// final norm.
pub fn vit_param_count(embed_dim: u64, depth: u64, patch: u64, image_side: u64) -> u64 {
    let tokens = (image_side / patch) * (image_side / patch) + 1;
    let patch_embed = 3 * patch * patch * embed_dim + embed_dim;
    let cls = embed_dim;
    let pos = tokens * embed_dim;
    let block = 2 * embed_dim // ln1
        + embed_dim * 3 * embed_dim + 3 * embed_dim // qkv
        + embed_dim * embed_dim + embed_dim // proj
        + 2 * embed_dim // ln2
        + embed_dim * 4 * embed_dim + 4 * embed_dim // fc1
        + 4 * embed_dim * embed_dim + embed_dim; // fc2
    patch_embed + cls + pos + depth * block + 2 * embed_dim
}

/// Expected camera resolution per source domain, center-cropped so the side
/// is divisible by the ViT patch size. A property of the feature profile,
/// not of the trunk.
pub fn input_resolution(domain: SourceDomain) -> (u32, u32) {
    match domain {
        SourceDomain::Walking | SourceDomain::Driving => (350, 630),
        SourceDomain::Teleop => (392, 392),
    }
}

/// Frozen full-backbone profile: declares the real backbone's parameter
/// count for accounting while serving deterministic synthetic tokens at
/// desk scale. Plug a [`CachedFeatureProvider`] instead to replay real
/// precomputed features.
#[derive(Debug, Clone)]
pub struct FrozenBackboneProfile {
    inner: SyntheticProvider,
}

impl FrozenBackboneProfile {
    pub fn vit_b14(dim: usize, seed: u64) -> Self {
        let mut inner = SyntheticProvider::new(dim, seed);
        // ViT-B/14 at 518x518: 86.6M parameters.
        inner.declared_params = vit_param_count(768, 12, 14, 518);
        FrozenBackboneProfile { inner }
    }
}

impl FeatureProvider for FrozenBackboneProfile {
    fn dim(&self) -> usize {
        self.inner.dim
    }

    fn param_count(&self) -> u64 {
        self.inner.declared_params
    }

    fn features(&self, frame: &FrameRef) -> Result<Vec<f64>> {
        self.inner.features(frame)
    }
}

/// Resolve a backbone id to a provider.
///
/// * `synthetic` - zero-parameter deterministic test provider.
/// * `vit-b14` - frozen full-backbone profile (synthetic tokens, real count).
/// * `cache:<dir>` - precomputed feature records on disk.
pub fn provider_for(backbone_id: &str, dim: usize, seed: u64) -> Result<Box<dyn FeatureProvider>> {
    if let Some(dir) = backbone_id.strip_prefix("cache:") {
        return Ok(Box::new(CachedFeatureProvider::new(dir, dim)));
    }
    match backbone_id {
        "synthetic" => Ok(Box::new(SyntheticProvider::new(dim, seed))),
        "vit-b14" => Ok(Box::new(FrozenBackboneProfile::vit_b14(dim, seed))),
        other => Err(Error::Config(format!("unknown backbone id `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_features_deterministic_per_ref() {
        let p = SyntheticProvider::new(16, 9);
        let a = p.features(&FrameRef::new("traj/000042")).unwrap();
        let b = p.features(&FrameRef::new("traj/000042")).unwrap();
        assert_eq!(a, b);
        let c = p.features(&FrameRef::new("traj/000043")).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn synthetic_seed_changes_tokens() {
        let a = SyntheticProvider::new(8, 1).features(&FrameRef::new("x")).unwrap();
        let b = SyntheticProvider::new(8, 2).features(&FrameRef::new("x")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn vit_b14_count_matches_published_size() {
        let count = vit_param_count(768, 12, 14, 518);
        assert_eq!(count, 86_561_280);
        // ~86.6M, the standard ViT-B figure.
        assert!((count as f64 - 86.6e6).abs() / 86.6e6 < 0.01);
    }

    #[test]
    fn cached_provider_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("t")).unwrap();
        std::fs::write(dir.path().join("t/0001.json"), "[1.0, -2.0, 0.5]").unwrap();
        let p = CachedFeatureProvider::new(dir.path(), 3);
        let v = p.features(&FrameRef::new("t/0001")).unwrap();
        assert_eq!(v, vec![1.0, -2.0, 0.5]);
        assert!(p.features(&FrameRef::new("t/0002")).is_err());
    }

    #[test]
    fn provider_for_ids() {
        assert_eq!(provider_for("synthetic", 8, 0).unwrap().param_count(), 0);
        let full = provider_for("vit-b14", 768, 0).unwrap();
        assert_eq!(full.param_count(), 86_561_280);
        assert!(full.is_frozen());
        assert!(provider_for("bogus", 8, 0).is_err());
    }

    #[test]
    fn domain_resolutions() {
        assert_eq!(input_resolution(SourceDomain::Walking), (350, 630));
        assert_eq!(input_resolution(SourceDomain::Teleop), (392, 392));
    }
}
