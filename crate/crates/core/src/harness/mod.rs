//! Sequence evaluation: ingestion, resizing, sliding-window pair scoring,
//! aggregation across sequences, and report emission.

mod io;
pub mod plot;
mod report;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backends::{CorrespondenceBackendConfig, FeatureBackendConfig, PointMapBackendConfig};
use crate::baselines::TsedThresholds;
use crate::error::{Error, Result};
use crate::metric::MetricOptions;

pub use io::{
    discover_sequences, load_sequence, read_poses, resize_policy_dims, standardize_resolution, write_poses,
    write_synthetic_sequence, SceneSidecar, POSES_FILE, SCENE_FILE,
};
pub use report::{emit_outputs, pairs_csv, read_summary, summary, ExternMetrics, Summary, CSV_HEADER};
pub use run::{aggregate, run_job, sliding_pairs, AggregateCurve, CurvePoint, JobResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizePolicy {
    /// Bilinear resize to exactly `resolution × resolution`.
    #[default]
    Direct,
    /// Keep the aspect ratio, pixel count near `resolution²`, sides multiples of 16.
    Aspect,
}

/// Everything needed to evaluate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    /// A sequence directory, or a directory of sequence directories.
    pub data_root: PathBuf,
    /// Subset of sequence ids to evaluate; all when empty.
    #[serde(default)]
    pub sequences: Vec<String>,
    pub stride: usize,
    /// Target side length; frames are resized according to `resize`.
    pub resolution: usize,
    pub resize: ResizePolicy,
    pub point_backend: PointMapBackendConfig,
    pub feature_backend: FeatureBackendConfig,
    #[serde(default)]
    pub correspondence_backend: Option<CorrespondenceBackendConfig>,
    #[serde(default)]
    pub metric: MetricOptions,
    /// Compute SED and TSED columns.
    #[serde(default)]
    pub baselines: bool,
    #[serde(default)]
    pub tsed: TsedThresholds,
    /// Write heatmaps and raw score maps for every pair.
    #[serde(default)]
    pub score_maps: bool,
    pub workers: usize,
    pub seed: u64,
    /// Method name in the summary; the data root's directory name when unset.
    #[serde(default)]
    pub label: Option<String>,
}

impl EvalJob {
    pub fn new(data_root: impl Into<PathBuf>, point_backend: PointMapBackendConfig, feature_backend: FeatureBackendConfig) -> Self {
        Self {
            data_root: data_root.into(),
            sequences: Vec::new(),
            stride: 1,
            resolution: 256,
            resize: ResizePolicy::Direct,
            point_backend,
            feature_backend,
            correspondence_backend: None,
            metric: MetricOptions::default(),
            baselines: false,
            tsed: TsedThresholds::default(),
            score_maps: false,
            workers: 1,
            seed: 0,
            label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.resolution < 16 || !self.resolution.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "resolution must be a positive multiple of 16, got {}",
                self.resolution
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.metric.rasterizer.validate()?;
        if self.baselines {
            self.tsed.validate()?;
            if self.correspondence_backend.is_none() {
                return Err(Error::Config("baselines need a correspondence backend".into()));
            }
        }
        if !self.data_root.is_dir() {
            return Err(Error::Config(format!("data root {} is not a directory", self.data_root.display())));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            self.data_root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        })
    }
}
