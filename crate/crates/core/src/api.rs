//! JSON request and response bodies of the scoring service.

use std::path::PathBuf;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::backends::{FeatureBackendConfig, PointMapBackendConfig};
use crate::error::Result;
use crate::harness::{EvalJob, ExternMetrics, Summary};
use crate::imageio;
use crate::metric::MetricOptions;
use crate::model::{CameraIntrinsics, ImageFrame, PairScore, Pose};

/// A frame on the wire: PNG bytes in base64 plus optional ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub png_base64: String,
    #[serde(default)]
    pub frame_index: usize,
    #[serde(default)]
    pub sequence_id: Option<String>,
    #[serde(default)]
    pub pose: Option<Pose>,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
}

impl FramePayload {
    /// Encodes a frame losslessly enough for scoring (16-bit PNG).
    pub fn from_frame(frame: &ImageFrame) -> Self {
        Self {
            png_base64: base64::engine::general_purpose::STANDARD.encode(imageio::encode_png(&frame.pixels)),
            frame_index: frame.frame_index,
            sequence_id: frame.sequence_id.clone(),
            pose: frame.pose,
            intrinsics: frame.intrinsics,
        }
    }

    pub fn to_frame(&self) -> Result<ImageFrame> {
        let label = format!("frame {}", self.frame_index);
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.png_base64)
            .map_err(|e| crate::Error::CorruptImage { path: label.clone().into(), reason: e.to_string() })?;
        let mut frame = ImageFrame::new(imageio::decode_rgb(&bytes, &label)?, self.frame_index);
        frame.sequence_id = self.sequence_id.clone();
        frame.pose = self.pose;
        frame.intrinsics = self.intrinsics;
        frame.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRequest {
    pub first: FramePayload,
    pub second: FramePayload,
    pub point_backend: PointMapBackendConfig,
    pub feature_backend: FeatureBackendConfig,
    #[serde(default)]
    pub metric: MetricOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub job: EvalJob,
    /// Directory for `pairs.csv`, `summary.json` and plots; nothing is written when unset.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub extern_metrics: Option<ExternMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

/// Error body returned by every endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// Snake-case error kind, e.g. `config` or `failure_budget`.
    pub kind: String,
    pub message: String,
}

impl From<&crate::Error> for ApiError {
    fn from(e: &crate::Error) -> Self {
        Self { kind: e.kind().into(), message: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    #[serde(default)]
    pub error: Option<ApiError>,
    #[serde(default)]
    pub summary: Option<Summary>,
    /// Files written into the job's output directory.
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestRequest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selftest_size")]
    pub size: usize,
}

fn default_selftest_size() -> usize {
    48
}

impl Default for SelftestRequest {
    fn default() -> Self {
        Self { seed: 0, size: default_selftest_size() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// Convenience for responses that carry only a score.
pub type PairResponse = PairScore;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn frame_payload_round_trip() {
        let px = Array3::from_shape_fn((16, 20, 3), |(r, c, k)| ((r * 20 + c + k) % 9) as f64 / 9.0);
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 9.5, cy: 7.5 };
        let frame = ImageFrame::new(px, 3).with_pose(Pose::translation([0.1, 0.0, 0.0]), k);
        let back = FramePayload::from_frame(&frame).to_frame().unwrap();
        assert_eq!((back.frame_index, back.pose, back.intrinsics), (3, frame.pose, frame.intrinsics));
        assert!(back.pixels.iter().zip(frame.pixels.iter()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn bad_base64_is_corrupt_image() {
        let p = FramePayload { png_base64: "***".into(), frame_index: 0, sequence_id: None, pose: None, intrinsics: None };
        assert!(matches!(p.to_frame(), Err(crate::Error::CorruptImage { .. })));
    }
}
