//! Pose-dependent epipolar baselines: symmetric epipolar distance (SED) and
//! its thresholded pass/fail form (TSED).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::backends::Match;
use crate::error::{Error, Result};
use crate::geometry::lower_median;
use crate::model::{CameraIntrinsics, Pose};

/// Translations shorter than this leave the fundamental matrix undefined.
pub const MIN_BASELINE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarSetup {
    /// Maps a homogeneous pixel in image 1 to its epipolar line in image 2.
    pub f: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsedThresholds {
    /// Pixel error threshold.
    pub te: f64,
    /// Minimum number of matches.
    pub tm: usize,
}

impl Default for TsedThresholds {
    fn default() -> Self {
        Self { te: 2.0, tm: 10 }
    }
}

impl TsedThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.te > 0.0 && self.te.is_finite()) {
            return Err(Error::Config(format!("TSED pixel threshold must be positive, got {}", self.te)));
        }
        if self.tm == 0 {
            return Err(Error::Config("TSED minimum match count must be at least 1".into()));
        }
        Ok(())
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix of two posed cameras, scaled to unit Frobenius norm.
pub fn fundamental_from_pose(
    pose1: &Pose,
    pose2: &Pose,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<EpipolarSetup> {
    for k in [k1, k2] {
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::Range(format!("focal lengths must be positive, got {} {}", k.fx, k.fy)));
        }
    }
    let (r, t) = pose1.relative_to(pose2);
    if t.norm() < MIN_BASELINE {
        return Err(Error::DegeneratePose(format!("baseline {:.3e} too short", t.norm())));
    }
    let k1_inv = k1.matrix().try_inverse().expect("positive focals");
    let k2_inv = k2.matrix().try_inverse().expect("positive focals");
    let f = k2_inv.transpose() * skew(&t) * r * k1_inv;
    let f = f / f.norm();
    let sv = f.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min / max >= 1e-6 {
        return Err(Error::DegeneratePose(format!("fundamental matrix is not rank 2 (σ ratio {:.3e})", min / max)));
    }
    Ok(EpipolarSetup { f })
}

fn line_distance(line: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    line.dot(p).abs() / (line.x * line.x + line.y * line.y).sqrt()
}

/// Symmetric epipolar distance of one match in pixels.
pub fn symmetric_distance(m: &Match, setup: &EpipolarSetup) -> f64 {
    let x1 = Vector3::new(m.u1, m.v1, 1.0);
    let x2 = Vector3::new(m.u2, m.v2, 1.0);
    0.5 * (line_distance(&(setup.f * x1), &x2) + line_distance(&(setup.f.transpose() * x2), &x1))
}

/// Mean symmetric epipolar distance over all matches.
pub fn sed_pair(matches: &[Match], setup: &EpipolarSetup) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::NoMatches);
    }
    Ok(matches.iter().map(|m| symmetric_distance(m, setup)).sum::<f64>() / matches.len() as f64)
}

/// Whether a pair has at least `tm` matches with lower-median distance below `te`.
pub fn tsed_pair(matches: &[Match], setup: &EpipolarSetup, thr: &TsedThresholds) -> bool {
    if matches.len() < thr.tm {
        return false;
    }
    let mut d: Vec<f64> = matches.iter().map(|m| symmetric_distance(m, setup)).collect();
    lower_median(&mut d).is_some_and(|median| median < thr.te)
}

/// Fraction of pairs judged consistent; `None` for an empty list.
pub fn tsed_fraction(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::synthetic::{exact_matches, SceneSurface, Surface, SurfaceGeometry};
    use nalgebra::Rotation3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics { fx: 100.0, fy: 100.0, cx: 32.0, cy: 32.0 }
    }

    #[test]
    fn sideways_stereo_has_horizontal_epipolar_lines() {
        let setup = fundamental_from_pose(&Pose::identity(), &Pose::translation([1.0, 0.0, 0.0]), &k(), &k()).unwrap();
        for (u, v) in [(3.0, 7.0), (40.0, 12.5), (60.0, 60.0)] {
            let line = setup.f * Vector3::new(u, v, 1.0);
            assert!(line.x.abs() < 1e-12, "{line:?}");
            // the line passes through the same row
            assert!((line.y * v + line.z).abs() < 1e-9);
        }
        assert!((setup.f.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_poses_are_degenerate() {
        let p = Pose::translation([0.3, 0.1, 0.0]);
        assert!(matches!(fundamental_from_pose(&p, &p, &k(), &k()), Err(Error::DegeneratePose(_))));
    }

    #[test]
    fn exact_correspondences_satisfy_the_constraint() {
        let surface = Surface::new(&SceneSurface {
            geometry: SurfaceGeometry::TexturedHeightField,
            depth_range: (2.5, 3.5),
            seed: 4,
        })
        .unwrap();
        let p1 = Pose::identity();
        let rot = Rotation3::from_euler_angles(0.02, -0.05, 0.01);
        let p2 = Pose::from_parts(rot.matrix(), &Vector3::new(0.2, -0.05, 0.1));
        let matches = exact_matches(&surface, (&p1, &k(), 64, 64), (&p2, &k(), 64, 64), 200, 9);
        assert!(matches.len() > 100);
        let setup = fundamental_from_pose(&p1, &p2, &k(), &k()).unwrap();
        for m in &matches {
            let r = Vector3::new(m.u2, m.v2, 1.0).dot(&(setup.f * Vector3::new(m.u1, m.v1, 1.0)));
            assert!(r.abs() < 1e-9, "{r}");
        }
        assert!(sed_pair(&matches, &setup).unwrap() < 1e-6);
        assert!(tsed_pair(&matches, &setup, &TsedThresholds::default()));
    }

    /// A match whose second point is moved `d` pixels along its epipolar line normal.
    fn displaced(setup: &EpipolarSetup, u1: f64, v1: f64, u2: f64, v2: f64, d: f64) -> Match {
        let l2 = setup.f * Vector3::new(u1, v1, 1.0);
        let n2 = Vector3::new(l2.x, l2.y, 0.0).normalize();
        let x2 = Vector3::new(u2, v2, 1.0) + n2 * d;
        Match { u1, v1, u2: x2.x, v2: x2.y }
    }

    #[test]
    fn perpendicular_displacement_is_measured_in_pixels() {
        // pure sideways stereo: epipolar lines are rows in both images
        let setup = fundamental_from_pose(&Pose::identity(), &Pose::translation([1.0, 0.0, 0.0]), &k(), &k()).unwrap();
        let m = displaced(&setup, 20.0, 30.0, 10.0, 30.0, 3.0);
        assert!((sed_pair(&[m], &setup).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_matches() {
        let setup = fundamental_from_pose(&Pose::identity(), &Pose::translation([1.0, 0.0, 0.0]), &k(), &k()).unwrap();
        assert!(matches!(sed_pair(&[], &setup), Err(Error::NoMatches)));
        assert!(!tsed_pair(&[], &setup, &TsedThresholds::default()));
    }

    #[test]
    fn tsed_median_straddle() {
        let setup = fundamental_from_pose(&Pose::identity(), &Pose::translation([1.0, 0.0, 0.0]), &k(), &k()).unwrap();
        let exact = |i: usize| Match { u1: 10.0 + i as f64 * 0.3, v1: 20.0, u2: 5.0, v2: 20.0 };
        let off = |i: usize| Match { u1: 10.0 + i as f64 * 0.3, v1: 20.0, u2: 5.0, v2: 30.0 };
        let thr = TsedThresholds::default();
        let half: Vec<Match> = (0..100).map(|i| if i < 50 { exact(i) } else { off(i) }).collect();
        assert!(tsed_pair(&half, &setup, &thr));
        let more: Vec<Match> = (0..100).map(|i| if i < 49 { exact(i) } else { off(i) }).collect();
        assert!(!tsed_pair(&more, &setup, &thr));
        assert!(!tsed_pair(&half[..5], &setup, &thr));
    }

    #[test]
    fn thresholds_validate() {
        assert!(TsedThresholds::default().validate().is_ok());
        assert!(TsedThresholds { te: 0.0, tm: 10 }.validate().is_err());
        assert!(TsedThresholds { te: 2.0, tm: 0 }.validate().is_err());
        assert_eq!(tsed_fraction(&[true, false, true, true]), Some(0.75));
        assert_eq!(tsed_fraction(&[]), None);
    }
}
