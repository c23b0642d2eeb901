//! Pose-free projection core.
//!
//! Both point maps of a pair are fused into a canonical map, a focal length is
//! read off that map, and each view's attributes are splatted into the
//! reference camera with a nearest-depth z-buffer.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::model::{CameraIntrinsics, FeatureGrid, PointMapPair, ProjectionResult};

/// Background fill written into uncovered pixels.
pub const DEFAULT_SENTINEL: f64 = -10000.0;

/// Minimum number of usable pixels per axis for focal estimation.
pub const MIN_VALID_PIXELS: usize = 64;

/// Pixels whose lateral coordinate is at most this are skipped by the focal median.
pub const DIVISION_GUARD: f64 = 1e-8;

/// Points at or in front of this depth are culled by the rasterizer.
pub const Z_NEAR: f64 = 1e-6;

/// Principal-point-centered pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    /// `col − cx` per pixel.
    pub u: Array2<f64>,
    /// `row − cy` per pixel.
    pub v: Array2<f64>,
}

impl PixelGrid {
    pub fn centered(width: usize, height: usize, cx: f64, cy: f64) -> Self {
        Self {
            u: Array2::from_shape_fn((height, width), |(_, c)| c as f64 - cx),
            v: Array2::from_shape_fn((height, width), |(r, _)| r as f64 - cy),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }
}

/// Principal point at the image center, `((W−1)/2, (H−1)/2)`.
pub fn image_center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Confidence-weighted fusion of a point-map pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPointMap {
    pub xc: Array3<f64>,
}

impl CanonicalPointMap {
    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.xc.index_axis(Axis(2), 0)
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.xc.index_axis(Axis(2), 1)
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.xc.index_axis(Axis(2), 2)
    }
}

/// `(C1⊙X1 + C2⊙X2) / (C1 + C2)` per pixel and channel.
pub fn canonical_point_map(pair: &PointMapPair) -> CanonicalPointMap {
    let mut xc = Array3::zeros(pair.x1.dim());
    Zip::from(xc.lanes_mut(Axis(2)))
        .and(pair.x1.lanes(Axis(2)))
        .and(pair.x2.lanes(Axis(2)))
        .and(&pair.c1)
        .and(&pair.c2)
        .for_each(|mut out, a, b, &ca, &cb| {
            let denom = ca + cb;
            for k in 0..3 {
                out[k] = (ca * a[k] + cb * b[k]) / denom;
            }
        });
    CanonicalPointMap { xc }
}

/// Lower median: for an even count, the smaller of the two central order statistics.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Per-axis focal lengths as the medians of `U·Z/X` and `V·Z/Y`.
pub fn estimate_focal(canon: &CanonicalPointMap, grid: &PixelGrid) -> Result<(f64, f64)> {
    let (h, w, _) = canon.xc.dim();
    if grid.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "pixel grid {:?} vs point map {:?}",
            grid.dim(),
            (h, w)
        )));
    }
    let ratios = |lateral: ArrayView2<'_, f64>, coord: &Array2<f64>| -> Vec<f64> {
        Zip::from(&lateral)
            .and(coord)
            .and(&canon.z())
            .fold(Vec::new(), |mut acc, &x, &u, &z| {
                if x.abs() > DIVISION_GUARD {
                    let q = u * z / x;
                    if q.is_finite() {
                        acc.push(q);
                    }
                }
                acc
            })
    };
    let mut qx = ratios(canon.x(), &grid.u);
    let mut qy = ratios(canon.y(), &grid.v);
    for (axis, q) in [("x", &qx), ("y", &qy)] {
        if q.len() < MIN_VALID_PIXELS {
            return Err(Error::DegenerateGeometry(format!(
                "only {} usable pixels on the {axis} axis, need {MIN_VALID_PIXELS}",
                q.len()
            )));
        }
    }
    let fx = lower_median(&mut qx).expect("nonempty");
    let fy = lower_median(&mut qy).expect("nonempty");
    Ok((fx, fy))
}

/// Intrinsics from estimated focals and a principal point.
pub fn build_projection(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<CameraIntrinsics> {
    if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
        return Err(Error::Range(format!(
            "focal lengths must be positive and finite, got fx={fx} fy={fy}"
        )));
    }
    Ok(CameraIntrinsics { fx, fy, cx, cy })
}

/// [`build_projection`] with the principal point at the image center.
pub fn build_centered_projection(fx: f64, fy: f64, width: usize, height: usize) -> Result<CameraIntrinsics> {
    let (cx, cy) = image_center(width, height);
    build_projection(fx, fy, cx, cy)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RasterizerSettings {
    /// Pixels whose center lies within this distance of a projected point
    /// compete for that point.
    pub splat_radius: f64,
    pub sentinel: f64,
}

impl Default for RasterizerSettings {
    fn default() -> Self {
        Self {
            // Half the diagonal of a pixel: a unit-spaced grid of points covers
            // every pixel, while grid neighbours never reach each other's center.
            splat_radius: std::f64::consts::FRAC_1_SQRT_2,
            sentinel: DEFAULT_SENTINEL,
        }
    }
}

impl RasterizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.splat_radius > 0.0 && self.splat_radius.is_finite()) {
            return Err(Error::Range(format!("splat radius {} must be positive", self.splat_radius)));
        }
        Ok(())
    }
}

/// Z-buffered splatting of `P` points (`P×3`, camera space) carrying `P×D`
/// attributes into an `height`×`width` view.
///
/// Ties in depth go to the lowest point index.
pub fn rasterize_points(
    points: ArrayView2<'_, f64>,
    attributes: ArrayView2<'_, f64>,
    k: &CameraIntrinsics,
    (height, width): (usize, usize),
    settings: &RasterizerSettings,
) -> Result<ProjectionResult> {
    settings.validate()?;
    let (n, three) = points.dim();
    if three != 3 || attributes.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "points {:?} vs attributes {:?}",
            points.dim(),
            attributes.dim()
        )));
    }
    let d = attributes.ncols();
    let r = settings.splat_radius;
    let r2 = r * r;
    let mut depth = Array2::from_elem((height, width), f64::INFINITY);
    let mut winner: Array2<Option<usize>> = Array2::from_elem((height, width), None);

    for (idx, p) in points.outer_iter().enumerate() {
        let z = p[2];
        if !(z > Z_NEAR) || !p[0].is_finite() || !p[1].is_finite() || !z.is_finite() {
            continue;
        }
        let px = k.fx * p[0] / z + k.cx;
        let py = k.fy * p[1] / z + k.cy;
        if !(px + r >= 0.0 && py + r >= 0.0 && px - r <= (width - 1) as f64 && py - r <= (height - 1) as f64) {
            continue;
        }
        let c0 = (px - r).ceil().max(0.0) as usize;
        let c1 = ((px + r).floor() as usize).min(width - 1);
        let r0 = (py - r).ceil().max(0.0) as usize;
        let r1 = ((py + r).floor() as usize).min(height - 1);
        for row in r0..=r1 {
            let dy = row as f64 - py;
            for col in c0..=c1 {
                let dx = col as f64 - px;
                if dx * dx + dy * dy <= r2 && z < depth[[row, col]] {
                    depth[[row, col]] = z;
                    winner[[row, col]] = Some(idx);
                }
            }
        }
    }

    let mut attrs = Array3::from_elem((height, width, d), settings.sentinel);
    Zip::from(attrs.lanes_mut(Axis(2)))
        .and(&winner)
        .for_each(|mut out, w| {
            if let Some(idx) = w {
                out.assign(&attributes.row(*idx));
            }
        });
    let mask = winner.mapv(|w| w.is_some());
    Ok(ProjectionResult {
        attributes: attrs,
        depth,
        mask,
        winner,
        sentinel: settings.sentinel,
    })
}

/// Rasterizes a pixel-aligned point map carrying `features` into a view of
/// the same resolution.
pub fn rasterize_grid(
    points: ArrayView3<'_, f64>,
    features: &FeatureGrid,
    k: &CameraIntrinsics,
    settings: &RasterizerSettings,
) -> Result<ProjectionResult> {
    let (h, w, _) = points.dim();
    if features.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "point map {:?} vs features {:?}",
            (h, w),
            features.dim()
        )));
    }
    let d = features.channels();
    let flat_points = points
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((h * w, 3))
        .expect("contiguous");
    let flat_attrs = features
        .values
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((h * w, d))
        .expect("contiguous");
    rasterize_points(flat_points.view(), flat_attrs.view(), k, (h, w), settings)
}

/// Coverage derived from background values: a pixel is uncovered iff every
/// channel equals the sentinel.
pub fn mask_from_sentinel(attributes: ArrayView3<'_, f64>, sentinel: f64) -> Array2<bool> {
    attributes.map_axis(Axis(2), |px| px.iter().any(|v| *v != sentinel))
}

/// Pixels covered in both projections.
pub fn overlap_mask(r1: &ProjectionResult, r2: &ProjectionResult) -> Result<Array2<bool>> {
    if r1.dim() != r2.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", r1.dim(), r2.dim())));
    }
    Ok(Zip::from(&r1.mask).and(&r2.mask).map_collect(|a, b| *a && *b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Reference;
    use ndarray::{s, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pinhole_scene(f: f64, h: usize, w: usize, rng: &mut ChaCha8Rng) -> (CanonicalPointMap, PixelGrid) {
        let (cx, cy) = image_center(w, h);
        let grid = PixelGrid::centered(w, h, cx, cy);
        let mut xc = Array3::zeros((h, w, 3));
        for r in 0..h {
            for c in 0..w {
                let z: f64 = rng.random_range(1.0..5.0);
                xc[[r, c, 0]] = grid.u[[r, c]] * z / f;
                xc[[r, c, 1]] = grid.v[[r, c]] * z / f;
                xc[[r, c, 2]] = z;
            }
        }
        (CanonicalPointMap { xc }, grid)
    }

    #[test]
    fn canonical_with_equal_confidence_is_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x1 = Array3::from_shape_fn((4, 5, 3), |_| rng.random_range(-3.0..3.0));
        let x2 = Array3::from_shape_fn((4, 5, 3), |_| rng.random_range(-3.0..3.0));
        let ones = Array2::ones((4, 5));
        let pair = PointMapPair::new(x1.clone(), x2.clone(), ones.clone(), ones, Reference::First).unwrap();
        let canon = canonical_point_map(&pair);
        let mid = (&x1 + &x2) / 2.0;
        for (a, b) in canon.xc.iter().zip(mid.iter()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn canonical_with_vanishing_confidence_tracks_first_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1 = Array3::from_shape_fn((4, 4, 3), |_| rng.random_range(0.5..3.0));
        let x2 = Array3::from_shape_fn((4, 4, 3), |_| rng.random_range(0.5..3.0));
        let pair = PointMapPair::new(
            x1.clone(),
            x2,
            Array2::ones((4, 4)),
            Array2::from_elem((4, 4), 1e-8),
            Reference::First,
        )
        .unwrap();
        let canon = canonical_point_map(&pair);
        for (a, b) in canon.xc.iter().zip(x1.iter()) {
            assert!(((a - b) / b).abs() < 1e-7);
        }
    }

    #[test]
    fn lower_median_picks_lower_central_element() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn focal_recovered_on_pinhole_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (canon, grid) = pinhole_scene(100.0, 48, 64, &mut rng);
        let (fx, fy) = estimate_focal(&canon, &grid).unwrap();
        assert!((fx - 100.0).abs() < 1e-6 && (fy - 100.0).abs() < 1e-6, "{fx} {fy}");
    }

    #[test]
    fn focal_survives_outlier_depths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut canon, grid) = pinhole_scene(100.0, 40, 40, &mut rng);
        let n = 40 * 40;
        for k in rand::seq::index::sample(&mut rng, n, n / 10) {
            canon.xc[[k / 40, k % 40, 2]] *= rng.random_range(5.0..50.0);
        }
        let (fx, fy) = estimate_focal(&canon, &grid).unwrap();
        assert!((fx - 100.0).abs() < 1e-6 && (fy - 100.0).abs() < 1e-6, "{fx} {fy}");
    }

    #[test]
    fn plane_x_zero_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut canon, grid) = pinhole_scene(100.0, 32, 32, &mut rng);
        canon.xc.slice_mut(s![.., .., 0]).fill(0.0);
        assert!(matches!(estimate_focal(&canon, &grid), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn focal_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (canon, grid) = pinhole_scene(80.0, 32, 40, &mut rng);
        let base = estimate_focal(&canon, &grid).unwrap();
        for s in [0.1, 1.0, 10.0] {
            let scaled = CanonicalPointMap { xc: &canon.xc * s };
            let (fx, fy) = estimate_focal(&scaled, &grid).unwrap();
            assert!((fx - base.0).abs() < 1e-9 && (fy - base.1).abs() < 1e-9);
        }
    }

    #[test]
    fn build_projection_rejects_non_positive_focal() {
        assert!(build_projection(100.0, 100.0, 127.5, 127.5).is_ok());
        assert!(matches!(build_projection(0.0, 100.0, 127.5, 127.5), Err(Error::Range(_))));
    }

    fn single(points: &[[f64; 3]], attrs: &[f64], k: &CameraIntrinsics, size: (usize, usize)) -> ProjectionResult {
        let p = Array2::from_shape_vec((points.len(), 3), points.concat()).unwrap();
        let a = Array1::from(attrs.to_vec()).insert_axis(Axis(1));
        rasterize_points(p.view(), a.view(), k, size, &RasterizerSettings::default()).unwrap()
    }

    #[test]
    fn on_axis_point_covers_center_pixel_only() {
        let k = CameraIntrinsics { fx: 50.0, fy: 50.0, cx: 128.0, cy: 128.0 };
        let r = single(&[[0.0, 0.0, 2.0]], &[7.0], &k, (256, 256));
        assert!(r.mask[[128, 128]]);
        assert_eq!(r.covered(), 1);
        assert_eq!(r.attributes[[128, 128, 0]], 7.0);
        assert_eq!(r.attributes[[0, 0, 0]], DEFAULT_SENTINEL);
        assert_eq!(r.depth[[128, 128]], 2.0);
    }

    #[test]
    fn nearer_point_wins_and_ties_go_to_lower_index() {
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 8.0, cy: 8.0 };
        let r = single(&[[0.0, 0.0, 3.0], [0.0, 0.0, 1.0]], &[3.0, 1.0], &k, (16, 16));
        assert_eq!(r.attributes[[8, 8, 0]], 1.0);
        assert_eq!(r.winner[[8, 8]], Some(1));
        let r = single(&[[0.0, 0.0, 2.0], [0.0, 0.0, 2.0]], &[5.0, 6.0], &k, (16, 16));
        assert_eq!(r.winner[[8, 8]], Some(0));
    }

    #[test]
    fn points_behind_camera_are_culled() {
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 8.0, cy: 8.0 };
        let r = single(&[[0.0, 0.0, -2.0], [0.1, 0.1, -0.5]], &[1.0, 2.0], &k, (16, 16));
        assert_eq!(r.covered(), 0);
        assert!(r.attributes.iter().all(|v| *v == DEFAULT_SENTINEL));
    }

    #[test]
    fn sentinel_mask_agrees_with_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Array2::from_shape_fn((300, 3), |(_, c)| {
            if c == 2 { rng.random_range(-0.5..4.0) } else { rng.random_range(-1.0..1.0) }
        });
        let a = Array2::from_shape_fn((300, 4), |_| rng.random_range(-1.0..1.0));
        let k = CameraIntrinsics { fx: 20.0, fy: 20.0, cx: 15.5, cy: 15.5 };
        let r = rasterize_points(p.view(), a.view(), &k, (32, 32), &RasterizerSettings::default()).unwrap();
        assert_eq!(mask_from_sentinel(r.attributes.view(), r.sentinel), r.mask);
        assert!(r.covered() > 0);
    }

    #[test]
    fn overlap_is_elementwise_and() {
        let mk = |m: Array2<bool>| ProjectionResult {
            attributes: Array3::zeros((m.nrows(), m.ncols(), 1)),
            depth: Array2::zeros(m.dim()),
            winner: Array2::from_elem(m.dim(), None),
            mask: m,
            sentinel: DEFAULT_SENTINEL,
        };
        let left = mk(Array2::from_shape_fn((4, 4), |(_, c)| c < 2));
        let right = mk(Array2::from_shape_fn((4, 4), |(_, c)| c >= 2));
        assert!(overlap_mask(&left, &right).unwrap().iter().all(|m| !m));
        let full = mk(Array2::from_elem((4, 4), true));
        assert!(overlap_mask(&full, &full).unwrap().iter().all(|m| *m));
        let small = mk(Array2::from_elem((3, 4), true));
        assert!(matches!(overlap_mask(&full, &small), Err(Error::ShapeMismatch(_))));
    }
}
