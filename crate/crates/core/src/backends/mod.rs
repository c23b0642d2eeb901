//! Providers of point maps, per-pixel features and keypoint matches.
//!
//! Each provider is selected by a serializable config and built into a trait
//! object. Neural backends are reached either through a tensor cache filled
//! ahead of time or by launching an external process per request; both speak
//! the [`crate::tensor`] container format.

pub mod synthetic;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{FeatureGrid, ImageFrame, PointMapPair, Reference};
use crate::tensor::{Container, Tensor};

pub use synthetic::Match;
use synthetic::{SceneSurface, Surface};

/// Regresses a pixel-aligned point-map pair in the first frame's camera.
pub trait PointMapBackend: Send + Sync {
    fn infer(&self, first: &ImageFrame, second: &ImageFrame) -> Result<PointMapPair>;
}

/// Produces per-pixel features at image resolution.
pub trait FeatureBackend: Send + Sync {
    fn extract(&self, frame: &ImageFrame) -> Result<FeatureGrid>;
}

/// Finds keypoint correspondences between two frames.
pub trait CorrespondenceBackend: Send + Sync {
    fn matches(&self, first: &ImageFrame, second: &ImageFrame) -> Result<Vec<Match>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PointMapBackendConfig {
    ExternalProcess { executable: PathBuf, model_id: String },
    TensorCache { cache_dir: PathBuf },
    /// Exact maps ray-cast from the frames' ground-truth poses.
    SyntheticPinhole { surface: SceneSurface },
    /// Like `SyntheticPinhole`, with the surface read from each sequence's
    /// `scene.json`. Resolved by the harness before building.
    SyntheticSidecar,
}

impl PointMapBackendConfig {
    pub fn build(&self) -> Result<Box<dyn PointMapBackend>> {
        Ok(match self {
            Self::ExternalProcess { executable, model_id } => Box::new(ExternalPointMaps {
                process: ExternalProcess::new(executable, model_id),
            }),
            Self::TensorCache { cache_dir } => Box::new(CachedPointMaps {
                cache: TensorCache::new(cache_dir),
            }),
            Self::SyntheticPinhole { surface } => Box::new(SyntheticPointMaps {
                surface: Surface::new(surface)?,
            }),
            Self::SyntheticSidecar => return Err(unresolved_sidecar()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureBackendConfig {
    ExternalProcess {
        executable: PathBuf,
        model_id: String,
        /// Expected channel count, checked on arrival when set.
        channels: Option<usize>,
        /// Bilinearly resize maps that arrive below image resolution.
        upsample: bool,
    },
    TensorCache {
        cache_dir: PathBuf,
        channels: Option<usize>,
        upsample: bool,
    },
    /// The pixels themselves, as 3 channels.
    Rgb,
    /// A fixed random linear map from RGB to `channels` dimensions.
    SeededRandomProjection { channels: usize, seed: u64 },
}

impl FeatureBackendConfig {
    /// Channel count if it is known before extraction.
    pub fn channels(&self) -> Option<usize> {
        match self {
            Self::Rgb => Some(3),
            Self::SeededRandomProjection { channels, .. } => Some(*channels),
            Self::ExternalProcess { channels, .. } | Self::TensorCache { channels, .. } => *channels,
        }
    }

    pub fn build(&self) -> Result<Box<dyn FeatureBackend>> {
        Ok(match self {
            Self::ExternalProcess { executable, model_id, channels, upsample } => Box::new(ExternalFeatures {
                process: ExternalProcess::new(executable, model_id),
                channels: *channels,
                upsample: *upsample,
            }),
            Self::TensorCache { cache_dir, channels, upsample } => Box::new(CachedFeatures {
                cache: TensorCache::new(cache_dir),
                channels: *channels,
                upsample: *upsample,
            }),
            Self::Rgb => Box::new(RgbFeatures),
            Self::SeededRandomProjection { channels, seed } => Box::new(RandomProjection::new(*channels, *seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrespondenceBackendConfig {
    ExternalProcess { executable: PathBuf, model_id: String },
    TensorCache { cache_dir: PathBuf },
    /// Exact matches from ground-truth poses.
    Synthetic { surface: SceneSurface, count: usize, seed: u64 },
    /// Like `Synthetic`, with the surface read from each sequence's `scene.json`.
    SyntheticSidecar { count: usize, seed: u64 },
}

impl CorrespondenceBackendConfig {
    pub fn build(&self) -> Result<Box<dyn CorrespondenceBackend>> {
        Ok(match self {
            Self::ExternalProcess { executable, model_id } => Box::new(ExternalMatches {
                process: ExternalProcess::new(executable, model_id),
            }),
            Self::TensorCache { cache_dir } => Box::new(CachedMatches {
                cache: TensorCache::new(cache_dir),
            }),
            Self::Synthetic { surface, count, seed } => Box::new(SyntheticMatches {
                surface: Surface::new(surface)?,
                count: *count,
                seed: *seed,
            }),
            Self::SyntheticSidecar { .. } => return Err(unresolved_sidecar()),
        })
    }
}

fn unresolved_sidecar() -> Error {
    Error::Config("synthetic sidecar backend must be resolved against a sequence directory".into())
}

fn same_resolution(a: &ImageFrame, b: &ImageFrame) -> Result<()> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "frames are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic oracles

struct SyntheticPointMaps {
    surface: Surface,
}

fn ground_truth(frame: &ImageFrame) -> Result<(crate::model::Pose, crate::model::CameraIntrinsics)> {
    match (frame.pose, frame.intrinsics) {
        (Some(p), Some(k)) => Ok((p, k)),
        _ => Err(Error::Config(format!(
            "synthetic backend needs ground-truth pose and intrinsics on frame {}",
            frame.frame_index
        ))),
    }
}

impl PointMapBackend for SyntheticPointMaps {
    fn infer(&self, first: &ImageFrame, second: &ImageFrame) -> Result<PointMapPair> {
        same_resolution(first, second)?;
        let (p1, k1) = ground_truth(first)?;
        let (p2, k2) = ground_truth(second)?;
        let (w, h) = (first.width(), first.height());
        let x1 = synthetic::point_map(&self.surface, &p1, &k1, w, h, &p1)?;
        let x2 = synthetic::point_map(&self.surface, &p2, &k2, w, h, &p1)?;
        let ones = Array2::ones((h, w));
        PointMapPair::new(x1, x2, ones.clone(), ones, Reference::First)
    }
}

struct SyntheticMatches {
    surface: Surface,
    count: usize,
    seed: u64,
}

impl CorrespondenceBackend for SyntheticMatches {
    fn matches(&self, first: &ImageFrame, second: &ImageFrame) -> Result<Vec<Match>> {
        let (p1, k1) = ground_truth(first)?;
        let (p2, k2) = ground_truth(second)?;
        Ok(synthetic::exact_matches(
            &self.surface,
            (&p1, &k1, first.width(), first.height()),
            (&p2, &k2, second.width(), second.height()),
            self.count,
            self.seed ^ ((first.frame_index as u64) << 32 | second.frame_index as u64),
        ))
    }
}

struct RgbFeatures;

impl FeatureBackend for RgbFeatures {
    fn extract(&self, frame: &ImageFrame) -> Result<FeatureGrid> {
        FeatureGrid::new(frame.pixels.clone(), "rgb")
    }
}

/// Deterministic `channels × 3` linear map applied to RGB.
pub struct RandomProjection {
    matrix: Array2<f64>,
    seed: u64,
}

impl RandomProjection {
    pub fn new(channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("random projection needs at least one channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = Array2::from_shape_simple_fn((channels, 3), || rng.random_range(-1.0..1.0));
        Ok(Self { matrix, seed })
    }
}

impl FeatureBackend for RandomProjection {
    fn extract(&self, frame: &ImageFrame) -> Result<FeatureGrid> {
        let (h, w, _) = frame.pixels.dim();
        let flat = frame
            .pixels
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, 3))
            .expect("contiguous");
        let projected = flat.dot(&self.matrix.t());
        let values = projected
            .into_shape_with_order((h, w, self.matrix.nrows()))
            .expect("contiguous");
        FeatureGrid::new(values, format!("randproj-{}", self.seed))
    }
}

// ---------------------------------------------------------------------------
// Tensor cache

/// Directory of containers keyed by sequence and frame indices:
///
/// ```text
/// <root>/<sequence>/pair_<i>_<j>.met3rt     x1, x2, c1, c2
/// <root>/<sequence>/feat_<i>.met3rt         feat
/// <root>/<sequence>/matches_<i>_<j>.met3rt  matches (N×4: u1 v1 u2 v2)
/// ```
#[derive(Clone, Debug)]
pub struct TensorCache {
    root: PathBuf,
}

impl TensorCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pair_path(&self, sequence: &str, i: usize, j: usize) -> PathBuf {
        self.root.join(sequence).join(format!("pair_{i}_{j}.met3rt"))
    }

    pub fn feature_path(&self, sequence: &str, i: usize) -> PathBuf {
        self.root.join(sequence).join(format!("feat_{i}.met3rt"))
    }

    pub fn matches_path(&self, sequence: &str, i: usize, j: usize) -> PathBuf {
        self.root.join(sequence).join(format!("matches_{i}_{j}.met3rt"))
    }

    fn load(&self, path: PathBuf) -> Result<Container> {
        if !path.is_file() {
            return Err(Error::CacheMiss(path));
        }
        Container::load(&path)
    }

    pub fn store_pair(&self, sequence: &str, i: usize, j: usize, pair: &PointMapPair) -> Result<()> {
        pair_container(pair).save(&self.pair_path(sequence, i, j))
    }

    pub fn store_features(&self, sequence: &str, i: usize, features: &Array3<f64>) -> Result<()> {
        let mut c = Container::new();
        c.push(Tensor::from_f64("feat", features));
        c.save(&self.feature_path(sequence, i))
    }

    pub fn store_matches(&self, sequence: &str, i: usize, j: usize, matches: &[Match]) -> Result<()> {
        matches_container(matches).save(&self.matches_path(sequence, i, j))
    }
}

pub fn pair_container(pair: &PointMapPair) -> Container {
    let mut c = Container::new();
    c.push(Tensor::from_f64("x1", &pair.x1))
        .push(Tensor::from_f64("x2", &pair.x2))
        .push(Tensor::from_f64("c1", &pair.c1))
        .push(Tensor::from_f64("c2", &pair.c2));
    c
}

pub fn matches_container(matches: &[Match]) -> Container {
    let a = Array2::from_shape_fn((matches.len(), 4), |(r, k)| {
        let m = &matches[r];
        [m.u1, m.v1, m.u2, m.v2][k]
    });
    let mut c = Container::new();
    c.push(Tensor::from_f64("matches", &a));
    c
}

fn pair_from_container(c: &Container, first: &ImageFrame) -> Result<PointMapPair> {
    let pair = PointMapPair::new(
        c.get("x1")?.to_array3()?,
        c.get("x2")?.to_array3()?,
        c.get("c1")?.to_array2()?,
        c.get("c2")?.to_array2()?,
        Reference::First,
    )?;
    pair.check_resolution(first)?;
    Ok(pair)
}

fn features_from_container(
    c: &Container,
    frame: &ImageFrame,
    channels: Option<usize>,
    upsample: bool,
    source: &str,
) -> Result<FeatureGrid> {
    let mut values = c.get("feat")?.to_array3()?;
    let (h, w, d) = values.dim();
    if let Some(expected) = channels {
        if d != expected {
            return Err(Error::ShapeMismatch(format!("expected {expected} feature channels, got {d}")));
        }
    }
    if (h, w) != (frame.height(), frame.width()) {
        if !upsample {
            return Err(Error::ShapeMismatch(format!(
                "feature map is {w}x{h}, image is {}x{}",
                frame.width(),
                frame.height()
            )));
        }
        values = imageio::resize_bilinear(&values, frame.height(), frame.width());
    }
    FeatureGrid::new(values, source)
}

fn matches_from_container(c: &Container) -> Result<Vec<Match>> {
    let a = c.get("matches")?.to_array2()?;
    if a.ncols() != 4 {
        return Err(Error::ShapeMismatch(format!("matches must be N×4, got {:?}", a.dim())));
    }
    Ok(a.axis_iter(Axis(0))
        .map(|r| Match { u1: r[0], v1: r[1], u2: r[2], v2: r[3] })
        .collect())
}

struct CachedPointMaps {
    cache: TensorCache,
}

impl PointMapBackend for CachedPointMaps {
    fn infer(&self, first: &ImageFrame, second: &ImageFrame) -> Result<PointMapPair> {
        same_resolution(first, second)?;
        let path = self.cache.pair_path(first.sequence(), first.frame_index, second.frame_index);
        pair_from_container(&self.cache.load(path)?, first)
    }
}

struct CachedFeatures {
    cache: TensorCache,
    channels: Option<usize>,
    upsample: bool,
}

impl FeatureBackend for CachedFeatures {
    fn extract(&self, frame: &ImageFrame) -> Result<FeatureGrid> {
        let path = self.cache.feature_path(frame.sequence(), frame.frame_index);
        features_from_container(&self.cache.load(path)?, frame, self.channels, self.upsample, "cache")
    }
}

struct CachedMatches {
    cache: TensorCache,
}

impl CorrespondenceBackend for CachedMatches {
    fn matches(&self, first: &ImageFrame, second: &ImageFrame) -> Result<Vec<Match>> {
        let path = self.cache.matches_path(first.sequence(), first.frame_index, second.frame_index);
        matches_from_container(&self.cache.load(path)?)
    }
}

// ---------------------------------------------------------------------------
// External processes

/// A model runner launched once per request.
///
/// The executable is invoked as `<exe> --model <id> --task <task>` with three
/// newline-terminated lines on stdin: the first PNG path, the second PNG path
/// (empty for single-image tasks) and the path of the container to write.
/// A zero exit status signals success.
#[derive(Clone, Debug)]
pub struct ExternalProcess {
    executable: PathBuf,
    model_id: String,
}

impl ExternalProcess {
    pub fn new(executable: &Path, model_id: &str) -> Self {
        Self {
            executable: executable.to_path_buf(),
            model_id: model_id.to_string(),
        }
    }

    pub fn run(&self, task: &str, frames: &[&ImageFrame]) -> Result<Container> {
        let dir = tempfile::Builder::new().prefix("met3r-ext").tempdir()?;
        let mut inputs = Vec::new();
        for (k, f) in frames.iter().enumerate() {
            let path = dir.path().join(format!("input{k}.png"));
            imageio::save_png(&path, &f.pixels)?;
            inputs.push(path);
        }
        let out = dir.path().join("output.met3rt");
        let line = |p: Option<&PathBuf>| p.map(|p| p.display().to_string()).unwrap_or_default();
        let request = format!("{}\n{}\n{}\n", line(inputs.first()), line(inputs.get(1)), out.display());

        let unavailable = |msg: String| Error::BackendUnavailable(format!("{}: {msg}", self.executable.display()));
        let mut child = Command::new(&self.executable)
            .args(["--model", &self.model_id, "--task", task])
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| unavailable(format!("launch failed: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(request.as_bytes())
            .map_err(|e| unavailable(format!("writing request: {e}")))?;
        let output = child.wait_with_output().map_err(|e| unavailable(e.to_string()))?;
        if !output.status.success() {
            return Err(unavailable(format!(
                "exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        if !out.is_file() {
            return Err(unavailable("no output container written".into()));
        }
        Container::load(&out).map_err(|e| unavailable(format!("unreadable output: {e}")))
    }
}

struct ExternalPointMaps {
    process: ExternalProcess,
}

impl PointMapBackend for ExternalPointMaps {
    fn infer(&self, first: &ImageFrame, second: &ImageFrame) -> Result<PointMapPair> {
        same_resolution(first, second)?;
        let c = self.process.run("pointmap", &[first, second])?;
        pair_from_container(&c, first)
    }
}

struct ExternalFeatures {
    process: ExternalProcess,
    channels: Option<usize>,
    upsample: bool,
}

impl FeatureBackend for ExternalFeatures {
    fn extract(&self, frame: &ImageFrame) -> Result<FeatureGrid> {
        let c = self.process.run("features", &[frame])?;
        features_from_container(&c, frame, self.channels, self.upsample, &self.process.model_id)
    }
}

struct ExternalMatches {
    process: ExternalProcess,
}

impl CorrespondenceBackend for ExternalMatches {
    fn matches(&self, first: &ImageFrame, second: &ImageFrame) -> Result<Vec<Match>> {
        let c = self.process.run("matches", &[first, second])?;
        matches_from_container(&c)
    }
}
