use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ResizePolicy;
use crate::backends::synthetic::{SceneSurface, SyntheticSequenceSpec};
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::{CameraIntrinsics, ImageFrame, Pose};

/// Per-frame poses: 12 row-major `[R | t]` values then `fx fy cx cy`.
pub const POSES_FILE: &str = "poses.txt";
/// Ground-truth scene description used by the synthetic backends.
pub const SCENE_FILE: &str = "scene.json";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub(crate) fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    paths.sort();
    Ok(paths)
}

fn sequence_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "default".into())
}

/// Sequence directories under `root`, sorted by name.
///
/// A root that itself holds frames is a single sequence.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if !frame_paths(root)?.is_empty() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if !frame_paths(&d)?.is_empty() {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySequence(format!("no frames under {}", root.display())));
    }
    Ok(out)
}

/// Parses a poses sidecar into one `(pose, intrinsics)` per line.
pub fn read_poses(path: &Path) -> Result<Vec<(Pose, CameraIntrinsics)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if values.len() != 16 {
            return Err(Error::Format(format!(
                "{}:{}: expected 16 values, got {}",
                path.display(),
                n + 1,
                values.len()
            )));
        }
        let pose = Pose::from_row_major(&values[..12])?;
        let k = CameraIntrinsics { fx: values[12], fy: values[13], cx: values[14], cy: values[15] };
        out.push((pose, k));
    }
    Ok(out)
}

pub fn write_poses(path: &Path, frames: &[(Pose, CameraIntrinsics)]) -> Result<()> {
    let mut text = String::new();
    for (pose, k) in frames {
        for row in &pose.0 {
            for v in row {
                write!(text, "{v} ").expect("string write");
            }
        }
        writeln!(text, "{} {} {} {}", k.fx, k.fy, k.cx, k.cy).expect("string write");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Loads a directory of frames in lexicographic order, attaching poses when
/// a sidecar is present.
pub fn load_sequence(dir: &Path) -> Result<Vec<ImageFrame>> {
    let loaded = scan_sequence(dir)?;
    loaded.frames.into_iter().collect()
}

pub(crate) struct ScannedSequence {
    pub id: String,
    pub frames: Vec<Result<ImageFrame>>,
}

/// Like [`load_sequence`] but keeps per-frame decode failures.
pub(crate) fn scan_sequence(dir: &Path) -> Result<ScannedSequence> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptySequence(format!("no frames in {}", dir.display())));
    }
    let id = sequence_id(dir);
    let poses_path = dir.join(POSES_FILE);
    let poses = if poses_path.is_file() {
        let poses = read_poses(&poses_path)?;
        if poses.len() != paths.len() {
            return Err(Error::Format(format!(
                "{} has {} rows for {} frames",
                poses_path.display(),
                poses.len(),
                paths.len()
            )));
        }
        Some(poses)
    } else {
        None
    };
    let frames = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut frame = ImageFrame::new(imageio::load_rgb(p)?, i);
            frame.sequence_id = Some(id.clone());
            if let Some(poses) = &poses {
                frame = frame.with_pose(poses[i].0, poses[i].1);
            }
            frame.validate()
        })
        .collect();
    Ok(ScannedSequence { id, frames })
}

/// Output `(height, width)` for a source image under a resize policy.
pub fn resize_policy_dims(height: usize, width: usize, target: usize, policy: ResizePolicy) -> (usize, usize) {
    match policy {
        ResizePolicy::Direct => (target, target),
        ResizePolicy::Aspect => {
            let s = ((target * target) as f64 / (width * height) as f64).sqrt();
            let down16 = |x: f64| (((x / 16.0).floor() as usize) * 16).max(16);
            (down16(height as f64 * s), down16(width as f64 * s))
        }
    }
}

/// Resizes a frame, rescaling its intrinsics to match.
pub fn standardize_resolution(frame: &ImageFrame, target: usize, policy: ResizePolicy) -> ImageFrame {
    let (h, w) = (frame.height(), frame.width());
    let (nh, nw) = resize_policy_dims(h, w, target, policy);
    if (nh, nw) == (h, w) {
        return frame.clone();
    }
    let mut out = frame.clone();
    out.pixels = imageio::resize_bilinear(&frame.pixels, nh, nw);
    out.intrinsics = frame
        .intrinsics
        .map(|k| k.rescaled(nw as f64 / w as f64, nh as f64 / h as f64));
    out
}

/// Ground-truth description stored next to a synthetic sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub surface: SceneSurface,
    #[serde(default)]
    pub spec: Option<SyntheticSequenceSpec>,
}

impl SceneSidecar {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENE_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Renders a synthetic sequence into `dir` as PNG frames, a poses sidecar
/// and a scene description.
pub fn write_synthetic_sequence(dir: &Path, spec: &SyntheticSequenceSpec) -> Result<Vec<ImageFrame>> {
    let frames = spec.render()?;
    fs::create_dir_all(dir)?;
    let digits = (frames.len().max(1) - 1).to_string().len().max(3);
    for f in &frames {
        imageio::save_png(&dir.join(format!("frame_{:0digits$}.png", f.frame_index)), &f.pixels)?;
    }
    let poses: Vec<_> = frames
        .iter()
        .map(|f| (f.pose.expect("rendered with pose"), f.intrinsics.expect("rendered with intrinsics")))
        .collect();
    write_poses(&dir.join(POSES_FILE), &poses)?;
    let sidecar = SceneSidecar { surface: spec.surface.clone(), spec: Some(spec.clone()) };
    fs::write(
        dir.join(SCENE_FILE),
        serde_json::to_string_pretty(&sidecar).expect("scene serializes"),
    )?;
    Ok(frames)
}
