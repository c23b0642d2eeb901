//! Built-in oracle suite: each check compares the pipeline against a
//! closed form or a brute-force recomputation on generated inputs.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::synthetic::{exact_matches, SyntheticSceneSpec};
use crate::backends::{FeatureBackendConfig, Match, PointMapBackendConfig};
use crate::baselines::{fundamental_from_pose, sed_pair, tsed_pair, TsedThresholds};
use crate::error::Error;
use crate::geometry::{self, PixelGrid, RasterizerSettings};
use crate::metric::{masked_similarity, met3r_pair, MetricOptions};
use crate::model::{CameraIntrinsics, PairScore, PointMapPair, Pose, Reference};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A pair scored in both argument orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPair {
    pub label: String,
    pub forward: PairScore,
    pub reversed: PairScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub pairs: Vec<EvaluatedPair>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Runs every check. `size` is the side length of the synthetic renders.
pub fn run(seed: u64, size: usize) -> SelftestReport {
    let mut checks = Vec::new();
    let mut pairs = Vec::new();
    checks.push(scene_checks(seed, size, &mut pairs));
    checks.push(identity_check(seed, size));
    let sym = pairs
        .iter()
        .all(|p| p.forward.met3r.to_bits() == p.reversed.met3r.to_bits());
    let range = pairs.iter().all(|p| p.forward.in_range() && p.reversed.in_range());
    checks.push(check("symmetry", sym, format!("{} pairs in both orders", pairs.len())));
    checks.push(check("range", range, format!("{} pairs", pairs.len())));
    checks.push(rasterizer_check(seed));
    checks.push(focal_check(seed));
    checks.push(similarity_check(seed));
    checks.push(epipolar_check(seed));
    SelftestReport { checks, pairs }
}

const EPSILONS: [f64; 4] = [0.0, 0.15, 0.3, 0.6];

fn scene_checks(seed: u64, size: usize, pairs: &mut Vec<EvaluatedPair>) -> Check {
    let features = FeatureBackendConfig::Rgb.build().expect("rgb backend");
    let opts = MetricOptions::default();
    let mut means = Vec::new();
    for eps in EPSILONS {
        let mut total = 0.0;
        for s in 0..3 {
            let spec = SyntheticSceneSpec::standard(seed + s, size, size, eps);
            let points = PointMapBackendConfig::SyntheticPinhole { surface: spec.surface.clone() }
                .build()
                .expect("synthetic backend");
            let result = spec.render().and_then(|(a, b)| {
                Ok((
                    met3r_pair(&a, &b, points.as_ref(), features.as_ref(), &opts)?,
                    met3r_pair(&b, &a, points.as_ref(), features.as_ref(), &opts)?,
                ))
            });
            match result {
                Ok((forward, reversed)) => {
                    total += forward.met3r;
                    pairs.push(EvaluatedPair {
                        label: format!("seed {} eps {eps}", seed + s),
                        forward,
                        reversed,
                    });
                }
                Err(e) => return check("monotonicity", false, format!("eps {eps}: {e}")),
            }
        }
        means.push(total / 3.0);
    }
    let ok = means.windows(2).all(|w| w[1] > w[0]);
    check("monotonicity", ok, format!("mean score over eps {EPSILONS:?}: {means:?}"))
}

fn identity_check(seed: u64, size: usize) -> Check {
    let features = FeatureBackendConfig::Rgb.build().expect("rgb backend");
    let mut worst: f64 = 0.0;
    for s in 0..4 {
        let spec = SyntheticSceneSpec::standard(seed + 10 + s, size, size, 0.0);
        let points = PointMapBackendConfig::SyntheticPinhole { surface: spec.surface.clone() }
            .build()
            .expect("synthetic backend");
        let frame = match spec.render() {
            Ok((a, _)) => a,
            Err(e) => return check("identity", false, e.to_string()),
        };
        match met3r_pair(&frame, &frame, points.as_ref(), features.as_ref(), &MetricOptions::default()) {
            Ok(score) => worst = worst.max(score.met3r.abs()),
            Err(e) => return check("identity", false, e.to_string()),
        }
    }
    check("identity", worst < 1e-6, format!("max |score(I, I)| = {worst:.3e}"))
}

fn rasterizer_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11CE);
    let settings = RasterizerSettings { splat_radius: 1.0, ..Default::default() };
    for trial in 0..10 {
        let (h, w) = (rng.random_range(16..40), rng.random_range(16..40));
        let n = rng.random_range(1..300);
        let k = CameraIntrinsics { fx: 30.0, fy: 30.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0 };
        let pts = Array2::from_shape_fn((n, 3), |(_, c)| match c {
            2 => rng.random_range(0.5..3.0),
            _ => rng.random_range(-1.0..1.0),
        });
        let attrs = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let fast = match geometry::rasterize_points(pts.view(), attrs.view(), &k, (h, w), &settings) {
            Ok(r) => r,
            Err(e) => return check("rasterizer", false, e.to_string()),
        };
        for r in 0..h {
            for c in 0..w {
                let mut best: Option<(f64, usize)> = None;
                for p in 0..n {
                    let z = pts[[p, 2]];
                    let du = k.fx * pts[[p, 0]] / z + k.cx - c as f64;
                    let dv = k.fy * pts[[p, 1]] / z + k.cy - r as f64;
                    if du * du + dv * dv <= 1.0 && best.is_none_or(|(bz, _)| z < bz) {
                        best = Some((z, p));
                    }
                }
                if fast.winner[[r, c]] != best.map(|b| b.1) {
                    return check("rasterizer", false, format!("trial {trial}: pixel ({r}, {c}) differs"));
                }
            }
        }
    }
    check("rasterizer", true, "10 random clouds match the exhaustive oracle".into())
}

fn focal_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF0CA1);
    let (h, w) = (24, 32);
    let (cx, cy) = geometry::image_center(w, h);
    let grid = PixelGrid::centered(w, h, cx, cy);
    let mut detail = Vec::new();
    for f in [50.0, 100.0, 300.0] {
        let depth = Array2::from_shape_fn((h, w), |_| rng.random_range(1.0..4.0));
        let x = Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            let z = depth[[r, c]];
            match k {
                0 => (c as f64 - cx) * z / f,
                1 => (r as f64 - cy) * z / f,
                _ => z,
            }
        });
        let ones = Array2::ones((h, w));
        let pair = PointMapPair::new(x.clone(), x, ones.clone(), ones, Reference::First).expect("valid pair");
        let canon = geometry::canonical_point_map(&pair);
        match geometry::estimate_focal(&canon, &grid) {
            Ok((fx, fy)) => {
                let err = ((fx - f).abs() / f).max((fy - f).abs() / f);
                if err > 1e-6 {
                    return check("focal", false, format!("f = {f}: got ({fx}, {fy})"));
                }
                detail.push(format!("{f}"));
            }
            Err(e) => return check("focal", false, e.to_string()),
        }
    }
    let flat = Array3::from_shape_fn((h, w, 3), |(_, _, k)| if k == 2 { 2.0 } else { 0.0 });
    let ones = Array2::ones((h, w));
    let pair = PointMapPair::new(flat.clone(), flat, ones.clone(), ones, Reference::First).expect("valid pair");
    let degenerate = matches!(
        geometry::estimate_focal(&geometry::canonical_point_map(&pair), &grid),
        Err(Error::DegenerateGeometry(_))
    );
    check(
        "focal",
        degenerate,
        format!("recovered f = {}; degenerate plane rejected: {degenerate}", detail.join(", ")),
    )
}

fn similarity_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51A);
    for trial in 0..10 {
        let (h, w, d) = (rng.random_range(4..16), rng.random_range(4..16), rng.random_range(1..6));
        let a = Array3::from_shape_fn((h, w, d), |_| rng.random_range(-1.0..1.0));
        let b = Array3::from_shape_fn((h, w, d), |_| rng.random_range(-1.0..1.0));
        let mask = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.7));
        let proj = |attrs: Array3<f64>| crate::model::ProjectionResult {
            attributes: attrs,
            depth: Array2::zeros((h, w)),
            mask: Array2::from_elem((h, w), true),
            winner: Array2::from_elem((h, w), Some(0)),
            sentinel: geometry::DEFAULT_SENTINEL,
        };
        let (pa, pb) = (proj(a.clone()), proj(b.clone()));
        let (mut sum, mut count) = (0.0, 0);
        for r in 0..h {
            for c in 0..w {
                if !mask[[r, c]] {
                    continue;
                }
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for k in 0..d {
                    dot += a[[r, c, k]] * b[[r, c, k]];
                    na += a[[r, c, k]] * a[[r, c, k]];
                    nb += b[[r, c, k]] * b[[r, c, k]];
                }
                sum += dot / (na.sqrt() * nb.sqrt());
                count += 1;
            }
        }
        let got = masked_similarity(&pa, &pb, &mask);
        let ok = match got {
            Ok(v) => count > 0 && (v - sum / count as f64).abs() < 1e-9,
            Err(Error::EmptyOverlap) => count == 0,
            Err(_) => false,
        };
        if !ok {
            return check("similarity", false, format!("trial {trial}: {got:?}"));
        }
    }
    check("similarity", true, "10 random instances match the scalar loop".into())
}

fn epipolar_check(seed: u64) -> Check {
    let spec = SyntheticSceneSpec::standard(seed, 64, 64, 0.0);
    let surface = match crate::backends::synthetic::Surface::new(&spec.surface) {
        Ok(s) => s,
        Err(e) => return check("epipolar", false, e.to_string()),
    };
    let k = spec.intrinsics;
    let [p1, p2] = spec.poses;
    let matches = exact_matches(&surface, (&p1, &k, 64, 64), (&p2, &k, 64, 64), 100, seed);
    let thr = TsedThresholds::default();
    let Ok(setup) = fundamental_from_pose(&p1, &p2, &k, &k) else {
        return check("epipolar", false, "fundamental matrix failed".into());
    };
    let exact = sed_pair(&matches, &setup).unwrap_or(f64::INFINITY);
    let consistent = tsed_pair(&matches, &setup, &thr);
    let too_few = !tsed_pair(&matches[..matches.len().min(thr.tm - 1)], &setup, &thr);

    let stereo = fundamental_from_pose(&Pose::identity(), &Pose::translation([1.0, 0.0, 0.0]), &k, &k)
        .expect("sideways stereo");
    let displaced = sed_pair(&[Match { u1: 20.0, v1: 30.0, u2: 12.0, v2: 33.0 }], &stereo).unwrap_or(f64::NAN);
    let ok = exact < 1e-6 && consistent && too_few && (displaced - 3.0).abs() < 1e-6;
    check(
        "epipolar",
        ok,
        format!("exact sed {exact:.3e}, tsed {consistent}, few-match tsed {}, displaced sed {displaced}", !too_few),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let report = run(0, 32);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert_eq!(report.pairs.len(), 12);
    }
}
