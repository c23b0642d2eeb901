//! Domain types shared by every stage of the pipeline.
//!
//! All grids are row-major `(row, col[, channel])` ndarrays of `f64`. Pixel
//! `(row, col)` has its center at image coordinates `(u, v) = (col, row)`.

use nalgebra::{Matrix3, Point3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible image side.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Lower clamp applied to point-map confidences on ingestion.
pub const MIN_CONFIDENCE: f64 = 1e-8;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Checks the focal lengths and that the principal point lies inside a
    /// `width`×`height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Range(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..width as f64).contains(&self.cx) || !(0.0..height as f64).contains(&self.cy) {
            return Err(Error::Range(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Projects a camera-space point to pixel coordinates. `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-space ray direction (z = 1) through pixel coordinates `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics for the same camera after resampling the image by
    /// `(sx, sy)` with pixel-center alignment.
    pub fn rescaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid world-from-camera transform, stored as a row-major 3×4 matrix `[R | t]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub [[f64; 4]; 3]);

impl Pose {
    pub fn identity() -> Self {
        Self::from_parts(&Matrix3::identity(), &Vector3::zeros())
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut m = [[0.0; 4]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = rotation[(r, c)];
            }
            row[3] = translation[r];
        }
        Self(m)
    }

    /// Camera translated by `offset` (world units) without rotation.
    pub fn translation(offset: [f64; 3]) -> Self {
        Self::from_parts(&Matrix3::identity(), &Vector3::from(offset))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.0[r][c])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.0[0][3], self.0[1][3], self.0[2][3])
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.center())
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation().transpose() * (p.coords - self.center()))
    }

    /// Relative transform `(R, t)` mapping camera-`self` coordinates into
    /// camera-`other` coordinates: `x_other = R x_self + t`.
    pub fn relative_to(&self, other: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
        let r_other_t = other.rotation().transpose();
        let r = r_other_t * self.rotation();
        let t = r_other_t * (self.center() - other.center());
        (r, t)
    }

    /// Parses the 12 row-major values of the sidecar format.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::Format(format!("pose needs 12 values, got {}", values.len())));
        }
        let mut m = [[0.0; 4]; 3];
        for (k, v) in values.iter().enumerate() {
            m[k / 4][k % 4] = *v;
        }
        Ok(Self(m))
    }
}

/// An RGB frame with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    /// `H×W×3` pixel grid.
    pub pixels: Array3<f64>,
    /// Position within its sequence.
    pub frame_index: usize,
    /// Sequence the frame belongs to; keys cache lookups.
    pub sequence_id: Option<String>,
    pub pose: Option<Pose>,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl ImageFrame {
    pub fn new(pixels: Array3<f64>, frame_index: usize) -> Self {
        Self {
            pixels,
            frame_index,
            sequence_id: None,
            pose: None,
            intrinsics: None,
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn sequence(&self) -> &str {
        self.sequence_id.as_deref().unwrap_or("default")
    }

    pub fn with_pose(mut self, pose: Pose, intrinsics: CameraIntrinsics) -> Self {
        self.pose = Some(pose);
        self.intrinsics = Some(intrinsics);
        self
    }

    /// Returns the frame unchanged if it satisfies the frame invariants.
    pub fn validate(self) -> Result<Self> {
        let (h, w, c) = self.pixels.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "{w}x{h} is below the {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum"
            )));
        }
        if let Some(bad) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("pixel value {bad} outside [0, 1]")));
        }
        if let Some(k) = &self.intrinsics {
            k.validate(w, h)?;
        }
        Ok(self)
    }
}

/// Which input image's camera frame a point-map pair is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    First,
    Second,
}

/// Two pixel-aligned point maps with confidences, both in the reference camera frame.
#[derive(Clone, Debug)]
pub struct PointMapPair {
    pub x1: Array3<f64>,
    pub x2: Array3<f64>,
    pub c1: Array2<f64>,
    pub c2: Array2<f64>,
    pub reference: Reference,
}

impl PointMapPair {
    /// Builds a pair, checking shapes and clamping confidences to [`MIN_CONFIDENCE`].
    pub fn new(
        x1: Array3<f64>,
        x2: Array3<f64>,
        c1: Array2<f64>,
        c2: Array2<f64>,
        reference: Reference,
    ) -> Result<Self> {
        let (h, w, c) = x1.dim();
        if c != 3 || x2.dim() != (h, w, 3) || c1.dim() != (h, w) || c2.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "point maps {:?}/{:?}, confidences {:?}/{:?}",
                x1.dim(),
                x2.dim(),
                c1.dim(),
                c2.dim()
            )));
        }
        if c1.iter().chain(c2.iter()).any(|v| v.is_nan()) {
            return Err(Error::Range("NaN confidence".into()));
        }
        let clamp = |c: Array2<f64>| c.mapv_into(|v| v.max(MIN_CONFIDENCE));
        Ok(Self {
            x1,
            x2,
            c1: clamp(c1),
            c2: clamp(c2),
            reference,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.x1.dim();
        (h, w)
    }

    /// Checks that the pair matches the resolution of an input image.
    pub fn check_resolution(&self, frame: &ImageFrame) -> Result<()> {
        if self.dim() != (frame.height(), frame.width()) {
            return Err(Error::ShapeMismatch(format!(
                "point maps are {:?}, image is {}x{}",
                self.dim(),
                frame.width(),
                frame.height()
            )));
        }
        Ok(())
    }
}

/// Per-pixel feature vectors at image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    /// `H×W×D` values.
    pub values: Array3<f64>,
    /// Backend identifier.
    pub source: String,
}

impl FeatureGrid {
    pub fn new(values: Array3<f64>, source: impl Into<String>) -> Result<Self> {
        if values.dim().2 == 0 {
            return Err(Error::Shape("feature grid needs at least one channel".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            source: source.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

/// Output of rasterizing an attributed point cloud into a view.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    /// `H×W×D`; uncovered pixels hold `sentinel` in every channel.
    pub attributes: Array3<f64>,
    /// Depth of the winning point; `+inf` where uncovered.
    pub depth: Array2<f64>,
    pub mask: Array2<bool>,
    /// Source point index that won each pixel.
    pub winner: Array2<Option<usize>>,
    pub sentinel: f64,
}

impl ProjectionResult {
    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn covered(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// PSNR in decibels; identical inputs yield [`Psnr::Exact`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Exact,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Exact
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Psnr::Db(v) => *v,
            Psnr::Exact => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v}"),
            Psnr::Exact => f.write_str("exact"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Exact => s.serialize_str("exact"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Tag(t) if t == "exact" => Ok(Psnr::Exact),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unknown psnr tag {t:?}"))),
        }
    }
}

/// Scores for one image pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub met3r: f64,
    pub s_forward: f64,
    pub s_backward: Option<f64>,
    /// `|M| / (H·W)` of the forward direction.
    pub overlap_fraction: f64,
    pub psnr: Option<Psnr>,
    pub ssim: Option<f64>,
    /// Score computed without the overlap mask.
    pub unmasked: Option<f64>,
    pub sed: Option<f64>,
    pub tsed: Option<bool>,
}

impl PairScore {
    pub fn new(s_forward: f64, s_backward: Option<f64>, overlap_fraction: f64) -> Self {
        Self {
            met3r: combine(s_forward, s_backward),
            s_forward,
            s_backward,
            overlap_fraction,
            psnr: None,
            ssim: None,
            unmasked: None,
            sed: None,
            tsed: None,
        }
    }

    /// Recomputes the score from the stored directional similarities.
    pub fn reconstructed_met3r(&self) -> f64 {
        combine(self.s_forward, self.s_backward)
    }

    /// Whether every value lies in its documented range.
    pub fn in_range(&self) -> bool {
        let s_ok = |s: f64| (-1.0..=1.0).contains(&s);
        (0.0..=2.0).contains(&self.met3r)
            && s_ok(self.s_forward)
            && self.s_backward.is_none_or(s_ok)
            && (0.0..=1.0).contains(&self.overlap_fraction)
    }
}

/// `1 − ½(S₁₂ + S₂₁)`, or `1 − S₁₂` with a single direction.
pub fn combine(s_forward: f64, s_backward: Option<f64>) -> f64 {
    match s_backward {
        Some(sb) => 1.0 - 0.5 * (s_forward + sb),
        None => 1.0 - s_forward,
    }
}

/// One sliding-window pair of a sequence and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub score: Option<PairScore>,
    /// Set when the pair was excluded from aggregates.
    pub excluded_reason: Option<String>,
}

/// Per-pair results of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence_id: String,
    pub frame_count: usize,
    pub pairs: Vec<PairRecord>,
}

impl SequenceReport {
    pub fn excluded(&self) -> impl Iterator<Item = &PairRecord> {
        self.pairs.iter().filter(|p| p.excluded_reason.is_some())
    }
}
