use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{discover_sequences, scan_sequence, standardize_resolution, SceneSidecar};
use super::EvalJob;
use crate::backends::{
    CorrespondenceBackend, CorrespondenceBackendConfig, FeatureBackend, PointMapBackend, PointMapBackendConfig,
};
use crate::baselines::{fundamental_from_pose, sed_pair, tsed_pair};
use crate::error::{Error, Result};
use crate::metric::evaluate_pair;
use crate::model::{ImageFrame, PairRecord, PairScore, Psnr, SequenceReport};

/// Sliding-window pairs `(i, i + stride)`.
pub fn sliding_pairs(frame_count: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if frame_count < stride + 1 {
        return Err(Error::EmptySequence(format!(
            "{frame_count} frames cannot form a pair at stride {stride}"
        )));
    }
    Ok((0..frame_count - stride).map(|i| (i, i + stride)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Position of the pair in its sequence's sliding window.
    pub index: usize,
    pub mean: f64,
    /// Population standard deviation across sequences.
    pub std: f64,
    /// Sequences contributing at this index.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub column: String,
    pub points: Vec<CurvePoint>,
}

/// Report columns that can be averaged.
pub(crate) const CURVE_COLUMNS: [&str; 5] = ["met3r", "psnr", "ssim", "unmasked", "sed"];

/// Numeric value of a column. Exact PSNR has no finite value and is skipped.
pub(crate) fn column_value(score: &PairScore, column: &str) -> Option<f64> {
    match column {
        "met3r" => Some(score.met3r),
        "psnr" => match score.psnr {
            Some(Psnr::Db(v)) => Some(v),
            _ => None,
        },
        "ssim" => score.ssim,
        "unmasked" => score.unmasked,
        "sed" => score.sed,
        _ => None,
    }
}

/// Per-index mean and population std of one column across sequences.
/// Excluded pairs and missing values do not contribute.
pub fn aggregate(reports: &[SequenceReport], column: &str) -> AggregateCurve {
    let len = reports.iter().map(|r| r.pairs.len()).max().unwrap_or(0);
    let mut points = Vec::new();
    for index in 0..len {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.pairs.get(index))
            .filter(|p| p.excluded_reason.is_none())
            .filter_map(|p| p.score.as_ref().and_then(|s| column_value(s, column)))
            .collect();
        if values.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        points.push(CurvePoint { index, mean, std: var.sqrt(), count: values.len() });
    }
    AggregateCurve { column: column.to_string(), points }
}

/// Outcome of a job.
#[derive(Clone, Debug)]
pub struct JobResult {
    pub reports: Vec<SequenceReport>,
    /// One curve per column that has any value.
    pub curves: Vec<AggregateCurve>,
    /// `(sequence, i, j, map)` for every scored pair when requested.
    pub score_maps: Vec<(String, usize, usize, Array2<f64>)>,
}

impl JobResult {
    pub fn curve(&self, column: &str) -> Option<&AggregateCurve> {
        self.curves.iter().find(|c| c.column == column)
    }
}

struct SequenceContext {
    id: String,
    frames: Vec<std::result::Result<ImageFrame, String>>,
    points: Box<dyn PointMapBackend>,
    features: Box<dyn FeatureBackend>,
    matches: Option<Box<dyn CorrespondenceBackend>>,
    pairs: Vec<(usize, usize)>,
}

fn describe(e: &Error) -> String {
    format!("{}: {e}", e.kind())
}

fn resolve_points(cfg: &PointMapBackendConfig, dir: &Path) -> Result<PointMapBackendConfig> {
    Ok(match cfg {
        PointMapBackendConfig::SyntheticSidecar => PointMapBackendConfig::SyntheticPinhole {
            surface: SceneSidecar::load(dir)?.surface,
        },
        other => other.clone(),
    })
}

fn resolve_matches(cfg: &CorrespondenceBackendConfig, dir: &Path) -> Result<CorrespondenceBackendConfig> {
    Ok(match cfg {
        CorrespondenceBackendConfig::SyntheticSidecar { count, seed } => CorrespondenceBackendConfig::Synthetic {
            surface: SceneSidecar::load(dir)?.surface,
            count: *count,
            seed: *seed,
        },
        other => other.clone(),
    })
}

fn prepare(job: &EvalJob, dir: &Path) -> Result<SequenceContext> {
    let scanned = scan_sequence(dir)?;
    let frames = scanned
        .frames
        .into_iter()
        .map(|f| match f {
            Ok(f) => Ok(standardize_resolution(&f, job.resolution, job.resize)),
            Err(e) => {
                tracing::warn!(sequence = %scanned.id, error = %e, "frame failed to load");
                Err(describe(&e))
            }
        })
        .collect::<Vec<_>>();
    let pairs = sliding_pairs(frames.len(), job.stride)?;
    let matches = match (&job.correspondence_backend, job.baselines) {
        (Some(cfg), true) => Some(resolve_matches(cfg, dir)?.build()?),
        _ => None,
    };
    Ok(SequenceContext {
        id: scanned.id,
        frames,
        points: resolve_points(&job.point_backend, dir)?.build()?,
        features: job.feature_backend.build()?,
        matches,
        pairs,
    })
}

fn baselines(ctx: &SequenceContext, a: &ImageFrame, b: &ImageFrame, job: &EvalJob, score: &mut PairScore) {
    let Some(backend) = &ctx.matches else { return };
    let (Some(p1), Some(k1), Some(p2), Some(k2)) = (a.pose, a.intrinsics, b.pose, b.intrinsics) else {
        tracing::warn!(sequence = %ctx.id, i = a.frame_index, "baselines need poses; columns left empty");
        return;
    };
    let setup = match fundamental_from_pose(&p1, &p2, &k1, &k2) {
        Ok(s) => s,
        Err(e) => {
            tracing::warn!(sequence = %ctx.id, i = a.frame_index, error = %e, "pair not evaluable by epipolar baselines");
            return;
        }
    };
    match backend.matches(a, b) {
        Ok(m) => {
            score.sed = sed_pair(&m, &setup).ok();
            score.tsed = Some(tsed_pair(&m, &setup, &job.tsed));
        }
        Err(e) => tracing::warn!(sequence = %ctx.id, i = a.frame_index, error = %e, "correspondence backend failed"),
    }
}

fn evaluate(ctx: &SequenceContext, i: usize, j: usize, job: &EvalJob) -> (PairRecord, Option<Array2<f64>>) {
    let excluded = |reason: String| {
        tracing::warn!(sequence = %ctx.id, i, j, %reason, "pair excluded");
        (PairRecord { i, j, score: None, excluded_reason: Some(reason) }, None)
    };
    let (a, b) = match (&ctx.frames[i], &ctx.frames[j]) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return excluded(e.clone()),
    };
    match evaluate_pair(a, b, ctx.points.as_ref(), ctx.features.as_ref(), &job.metric) {
        Ok(eval) => {
            let mut score = eval.score;
            baselines(ctx, a, b, job, &mut score);
            let map = job.score_maps.then(|| eval.forward.score_map());
            (PairRecord { i, j, score: Some(score), excluded_reason: None }, map)
        }
        Err(e) => excluded(describe(&e)),
    }
}

/// Evaluates every sliding-window pair of every sequence.
///
/// Pairs run on a pool of `job.workers` threads; results are assembled in
/// `(sequence, index)` order so the output does not depend on scheduling.
pub fn run_job(job: &EvalJob) -> Result<JobResult> {
    job.validate()?;
    let mut dirs = discover_sequences(&job.data_root)?;
    if !job.sequences.is_empty() {
        let known: Vec<String> = dirs.iter().map(|d| d.file_name().unwrap().to_string_lossy().into_owned()).collect();
        for s in &job.sequences {
            if !known.contains(s) {
                return Err(Error::Config(format!("unknown sequence {s}")));
            }
        }
        dirs.retain(|d| job.sequences.contains(&d.file_name().unwrap().to_string_lossy().into_owned()));
    }
    let contexts = dirs.iter().map(|d| prepare(job, d)).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = contexts
        .iter()
        .enumerate()
        .flat_map(|(s, ctx)| (0..ctx.pairs.len()).map(move |p| (s, p)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<(PairRecord, Option<Array2<f64>>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, p)| {
                let (i, j) = contexts[s].pairs[p];
                evaluate(&contexts[s], i, j, job)
            })
            .collect()
    });

    let total = outcomes.len();
    let failed = outcomes.iter().filter(|(r, _)| r.excluded_reason.is_some()).count();
    if failed * 2 > total {
        return Err(Error::FailureBudget { failed, total });
    }

    let mut outcomes = outcomes.into_iter();
    let mut reports = Vec::with_capacity(contexts.len());
    let mut score_maps = Vec::new();
    for ctx in &contexts {
        let mut pairs = Vec::with_capacity(ctx.pairs.len());
        for _ in 0..ctx.pairs.len() {
            let (record, map) = outcomes.next().expect("one outcome per task");
            if let Some(map) = map {
                score_maps.push((ctx.id.clone(), record.i, record.j, map));
            }
            pairs.push(record);
        }
        reports.push(SequenceReport { sequence_id: ctx.id.clone(), frame_count: ctx.frames.len(), pairs });
    }
    let curves = CURVE_COLUMNS
        .iter()
        .map(|c| aggregate(&reports, c))
        .filter(|c| !c.points.is_empty())
        .collect();
    Ok(JobResult { reports, curves, score_maps })
}
