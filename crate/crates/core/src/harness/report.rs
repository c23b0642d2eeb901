use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot;
use super::run::{column_value, AggregateCurve, JobResult};
use super::EvalJob;
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{PairRecord, SequenceReport};
use crate::tensor::{Container, Tensor};

pub const CSV_HEADER: [&str; 13] = [
    "sequence_id",
    "i",
    "j",
    "met3r",
    "s_forward",
    "s_backward",
    "overlap_fraction",
    "psnr",
    "ssim",
    "unmasked",
    "sed",
    "tsed",
    "excluded_reason",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_row(sequence: &str, p: &PairRecord) -> Vec<String> {
    let s = p.score.as_ref();
    vec![
        sequence.to_string(),
        p.i.to_string(),
        p.j.to_string(),
        opt(s.map(|s| s.met3r)),
        opt(s.map(|s| s.s_forward)),
        opt(s.and_then(|s| s.s_backward)),
        opt(s.map(|s| s.overlap_fraction)),
        opt(s.and_then(|s| s.psnr)),
        opt(s.and_then(|s| s.ssim)),
        opt(s.and_then(|s| s.unmasked)),
        opt(s.and_then(|s| s.sed)),
        opt(s.and_then(|s| s.tsed)),
        p.excluded_reason.clone().unwrap_or_default(),
    ]
}

/// Renders all pair rows as CSV text.
pub fn pairs_csv(reports: &[SequenceReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in reports {
        for p in &r.pairs {
            w.write_record(csv_row(&r.sequence_id, p)).map_err(to_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Distribution metrics computed elsewhere and merged into the summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternMetrics {
    #[serde(default)]
    pub fid: Option<f64>,
    #[serde(default)]
    pub kid: Option<f64>,
    #[serde(default)]
    pub fvd: Option<f64>,
}

impl ExternMetrics {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// One row of the method comparison table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodMeans {
    pub met3r: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub unmasked: Option<f64>,
    pub sed: Option<f64>,
    /// Mean over sequences of the fraction of TSED-consistent pairs.
    pub tsed: Option<f64>,
    pub fid: Option<f64>,
    pub kid: Option<f64>,
    pub fvd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub sequences: usize,
    pub pairs: usize,
    pub excluded: usize,
    pub means: MethodMeans,
    pub curves: Vec<AggregateCurve>,
}

fn pooled_mean(reports: &[SequenceReport], column: &str) -> Option<f64> {
    let values: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.pairs.iter())
        .filter(|p| p.excluded_reason.is_none())
        .filter_map(|p| p.score.as_ref().and_then(|s| column_value(s, column)))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn tsed_mean(reports: &[SequenceReport]) -> Option<f64> {
    let fractions: Vec<f64> = reports
        .iter()
        .filter_map(|r| {
            let flags: Vec<bool> = r.pairs.iter().filter_map(|p| p.score.as_ref().and_then(|s| s.tsed)).collect();
            crate::baselines::tsed_fraction(&flags)
        })
        .collect();
    (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64)
}

pub fn summary(result: &JobResult, method: &str, extern_metrics: Option<&ExternMetrics>) -> Summary {
    let reports = &result.reports;
    let ext = extern_metrics.cloned().unwrap_or_default();
    Summary {
        method: method.to_string(),
        sequences: reports.len(),
        pairs: reports.iter().map(|r| r.pairs.len()).sum(),
        excluded: reports.iter().map(|r| r.excluded().count()).sum(),
        means: MethodMeans {
            met3r: pooled_mean(reports, "met3r"),
            psnr: pooled_mean(reports, "psnr"),
            ssim: pooled_mean(reports, "ssim"),
            unmasked: pooled_mean(reports, "unmasked"),
            sed: pooled_mean(reports, "sed"),
            tsed: tsed_mean(reports),
            fid: ext.fid,
            kid: ext.kid,
            fvd: ext.fvd,
        },
        curves: result.curves.clone(),
    }
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes `pairs.csv`, `summary.json`, one curve plot per column under
/// `curves/`, and score maps under `score_maps/` when present.
/// Returns the written paths.
pub fn emit_outputs(
    result: &JobResult,
    job: &EvalJob,
    out_dir: &Path,
    extern_metrics: Option<&ExternMetrics>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("pairs.csv");
    fs::write(&csv_path, pairs_csv(&result.reports)?)?;
    written.push(csv_path);

    let summary = summary(result, &job.label(), extern_metrics);
    let json_path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    fs::write(&json_path, json)?;
    written.push(json_path);

    for curve in &result.curves {
        let path = out_dir.join("curves").join(format!("{}.png", curve.column));
        plot::save_curves(&path, &[(summary.method.as_str(), curve)])?;
        written.push(path);
    }

    for (seq, i, j, map) in &result.score_maps {
        let dir = out_dir.join("score_maps").join(seq);
        fs::create_dir_all(&dir)?;
        let png = dir.join(format!("pair_{i}_{j}.png"));
        imageio::heatmap(map)
            .save_with_format(&png, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let raw = dir.join(format!("pair_{i}_{j}.met3rt"));
        Container::new()
            .push(Tensor::from_f32("scoremap", &map.mapv(|v| v as f32)))
            .save(&raw)?;
        written.push(png);
        written.push(raw);
    }
    Ok(written)
}
