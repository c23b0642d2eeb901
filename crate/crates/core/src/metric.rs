//! The consistency score and its ablation variants.
//!
//! For an ordered pair `(I1, I2)` both images' features are splatted into
//! camera 1 through the regressed point maps, and `S(I1, I2)` is the mean
//! cosine similarity over pixels covered by both projections. The symmetric
//! score is `1 − ½(S(I1, I2) + S(I2, I1))`, in `[0, 2]`, lower is better.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::backends::{FeatureBackend, PointMapBackend};
use crate::error::{Error, Result};
use crate::geometry::{self, PixelGrid, RasterizerSettings};
use crate::model::{CameraIntrinsics, FeatureGrid, ImageFrame, PairScore, ProjectionResult, Psnr};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Cosine similarity of projected features.
    #[default]
    FeatureCosine,
    /// Additionally compare RGB projections by PSNR.
    RgbPsnr,
    /// Additionally compare RGB projections by SSIM.
    RgbSsim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Evaluate only `S(I1, I2)`.
    pub one_directional: bool,
    pub variant: Variant,
    /// Also report the score averaged over all pixels, without the overlap mask.
    pub unmasked_ablation: bool,
    pub rasterizer: RasterizerSettings,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            one_directional: false,
            variant: Variant::FeatureCosine,
            unmasked_ablation: false,
            rasterizer: RasterizerSettings::default(),
        }
    }
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine of two feature vectors, clamped to `[-1, 1]`; `None` if either is zero.
fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

fn check_pair(f1: &ProjectionResult, f2: &ProjectionResult, mask: &Array2<bool>) -> Result<()> {
    if f1.attributes.dim() != f2.attributes.dim() || f1.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "projections {:?} / {:?}, mask {:?}",
            f1.attributes.dim(),
            f2.attributes.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// Per-pixel cosine inside `mask`, `None` outside or where a feature has zero norm.
fn masked_cosines(f1: &ProjectionResult, f2: &ProjectionResult, mask: &Array2<bool>) -> Array2<Option<f64>> {
    Zip::from(f1.attributes.lanes(Axis(2)))
        .and(f2.attributes.lanes(Axis(2)))
        .and(mask)
        .map_collect(|a, b, &m| if m { cosine(a, b) } else { None })
}

/// Mean cosine similarity of two projections over `mask`.
///
/// Pixels where either feature vector has zero norm are dropped from the mask.
pub fn masked_similarity(f1: &ProjectionResult, f2: &ProjectionResult, mask: &Array2<bool>) -> Result<f64> {
    check_pair(f1, f2, mask)?;
    let (sum, count) = masked_cosines(f1, f2, mask)
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1));
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / count as f64)
}

/// `1 − cos` per pixel inside the mask, NaN elsewhere.
pub fn score_map(f1: &ProjectionResult, f2: &ProjectionResult, mask: &Array2<bool>) -> Result<Array2<f64>> {
    check_pair(f1, f2, mask)?;
    Ok(masked_cosines(f1, f2, mask).mapv(|c| c.map_or(f64::NAN, |c| 1.0 - c)))
}

/// Mean cosine over every pixel, background included as-is. Zero-norm pixels count as 0.
pub fn unmasked_similarity(f1: &ProjectionResult, f2: &ProjectionResult) -> Result<f64> {
    check_pair(f1, f2, &f1.mask)?;
    let n = f1.mask.len();
    let sum: f64 = Zip::from(f1.attributes.lanes(Axis(2)))
        .and(f2.attributes.lanes(Axis(2)))
        .fold(0.0, |acc, a, b| acc + cosine(a, b).unwrap_or(0.0));
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RgbMode {
    Psnr,
    Ssim,
}

/// Outcome of [`rgb_variant_score`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RgbScore {
    Psnr { psnr: Psnr, mse: f64 },
    Ssim(f64),
}

fn check_rgb(p: &ProjectionResult) -> Result<()> {
    if p.attributes.dim().2 != 3 {
        return Err(Error::Config(format!(
            "RGB variants need 3-channel projections, got {}",
            p.attributes.dim().2
        )));
    }
    Ok(())
}

/// Mean squared error over masked pixels and all channels.
pub fn masked_mse(p1: &ProjectionResult, p2: &ProjectionResult, mask: &Array2<bool>) -> Result<f64> {
    check_pair(p1, p2, mask)?;
    let (sum, count) = Zip::from(p1.attributes.lanes(Axis(2)))
        .and(p2.attributes.lanes(Axis(2)))
        .and(mask)
        .fold((0.0, 0usize), |(s, n), a, b, &m| {
            if !m {
                return (s, n);
            }
            let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            (s + d, n + a.len())
        });
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / count as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter evaluated only where the full window fits.
fn filter_valid(img: ArrayView2<'_, f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = kernel.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(r, c)| {
        kernel.iter().enumerate().map(|(k, g)| g * img[[r, c + k]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(r, c)| {
        kernel.iter().enumerate().map(|(k, g)| g * rows[[r + k, c]]).sum::<f64>()
    })
}

/// Mean SSIM over channels and over pixels whose whole window lies inside `mask`.
///
/// Background pixels of each projection are zeroed before filtering.
pub fn masked_ssim(p1: &ProjectionResult, p2: &ProjectionResult, mask: &Array2<bool>) -> Result<f64> {
    check_pair(p1, p2, mask)?;
    let (h, w) = mask.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::EmptyOverlap);
    }
    // summed-area table of the mask for the full-window test
    let mut sat = Array2::<usize>::zeros((h + 1, w + 1));
    for r in 0..h {
        for c in 0..w {
            sat[[r + 1, c + 1]] = mask[[r, c]] as usize + sat[[r, c + 1]] + sat[[r + 1, c]] - sat[[r, c]];
        }
    }
    let n = SSIM_WINDOW;
    let valid = Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(r, c)| {
        sat[[r + n, c + n]] + sat[[r, c]] - sat[[r, c + n]] - sat[[r + n, c]] == n * n
    });
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let kernel = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let zeroed = |p: &ProjectionResult, k: usize| {
        Zip::from(p.attributes.index_axis(Axis(2), k))
            .and(&p.mask)
            .map_collect(|v, m| if *m { *v } else { 0.0 })
    };
    let mut total = 0.0;
    for k in 0..3 {
        let x = zeroed(p1, k);
        let y = zeroed(p2, k);
        let mx = filter_valid(x.view(), &kernel);
        let my = filter_valid(y.view(), &kernel);
        let mxx = filter_valid((&x * &x).view(), &kernel);
        let myy = filter_valid((&y * &y).view(), &kernel);
        let mxy = filter_valid((&x * &y).view(), &kernel);
        for ((r, c), ok) in valid.indexed_iter() {
            if !ok {
                continue;
            }
            let (ux, uy) = (mx[[r, c]], my[[r, c]]);
            let vx = mxx[[r, c]] - ux * ux;
            let vy = myy[[r, c]] - uy * uy;
            let cxy = mxy[[r, c]] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (3 * count) as f64)
}

/// Compares two RGB projections over `mask` by PSNR (peak 1.0) or SSIM.
pub fn rgb_variant_score(
    p1: &ProjectionResult,
    p2: &ProjectionResult,
    mask: &Array2<bool>,
    mode: RgbMode,
) -> Result<RgbScore> {
    check_rgb(p1)?;
    check_rgb(p2)?;
    match mode {
        RgbMode::Psnr => {
            let mse = masked_mse(p1, p2, mask)?;
            Ok(RgbScore::Psnr { psnr: Psnr::from_mse(mse), mse })
        }
        RgbMode::Ssim => masked_ssim(p1, p2, mask).map(RgbScore::Ssim),
    }
}

/// Everything computed for one direction `S(reference, other)`.
#[derive(Clone, Debug)]
pub struct DirectionalResult {
    /// Reference image's features splatted into the reference camera.
    pub projected_reference: ProjectionResult,
    /// Other image's features splatted into the reference camera.
    pub projected_other: ProjectionResult,
    pub overlap: Array2<bool>,
    pub intrinsics: CameraIntrinsics,
    pub similarity: f64,
}

impl DirectionalResult {
    pub fn overlap_fraction(&self) -> f64 {
        self.overlap.iter().filter(|m| **m).count() as f64 / self.overlap.len() as f64
    }

    pub fn score_map(&self) -> Array2<f64> {
        score_map(&self.projected_reference, &self.projected_other, &self.overlap).expect("shapes agree")
    }
}

/// Projects both images' features into the reference camera and compares them.
pub fn directional(
    reference: &ImageFrame,
    other: &ImageFrame,
    features: (&FeatureGrid, &FeatureGrid),
    points: &dyn PointMapBackend,
    settings: &RasterizerSettings,
) -> Result<DirectionalResult> {
    let pair = points.infer(reference, other)?;
    pair.check_resolution(reference)?;
    let (h, w) = pair.dim();
    let canon = geometry::canonical_point_map(&pair);
    let (cx, cy) = geometry::image_center(w, h);
    let (fx, fy) = geometry::estimate_focal(&canon, &PixelGrid::centered(w, h, cx, cy))?;
    let k = geometry::build_projection(fx, fy, cx, cy)?;
    let projected_reference = geometry::rasterize_grid(pair.x1.view(), features.0, &k, settings)?;
    let projected_other = geometry::rasterize_grid(pair.x2.view(), features.1, &k, settings)?;
    let overlap = geometry::overlap_mask(&projected_reference, &projected_other)?;
    let similarity = masked_similarity(&projected_reference, &projected_other, &overlap)?;
    Ok(DirectionalResult {
        projected_reference,
        projected_other,
        overlap,
        intrinsics: k,
        similarity,
    })
}

/// Full evaluation of one pair, keeping intermediate projections.
#[derive(Clone, Debug)]
pub struct PairEvaluation {
    pub score: PairScore,
    pub forward: DirectionalResult,
    pub backward: Option<DirectionalResult>,
}

/// Scores a pair and keeps the projections of both directions.
pub fn evaluate_pair(
    first: &ImageFrame,
    second: &ImageFrame,
    points: &dyn PointMapBackend,
    features: &dyn FeatureBackend,
    opts: &MetricOptions,
) -> Result<PairEvaluation> {
    if first.pixels.dim() != second.pixels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "frames are {}x{} and {}x{}",
            first.width(),
            first.height(),
            second.width(),
            second.height()
        )));
    }
    let f1 = features.extract(first)?;
    let f2 = features.extract(second)?;
    for f in [&f1, &f2] {
        if f.dim() != (first.height(), first.width()) {
            return Err(Error::ShapeMismatch(format!("feature grid {:?} vs image", f.dim())));
        }
    }
    if opts.variant != Variant::FeatureCosine && f1.channels() != 3 {
        return Err(Error::Config(format!(
            "variant {:?} needs 3-channel features, backend gives {}",
            opts.variant,
            f1.channels()
        )));
    }
    let forward = directional(first, second, (&f1, &f2), points, &opts.rasterizer)?;
    let backward = if opts.one_directional {
        None
    } else {
        Some(directional(second, first, (&f2, &f1), points, &opts.rasterizer)?)
    };

    let mut score = PairScore::new(
        forward.similarity,
        backward.as_ref().map(|b| b.similarity),
        forward.overlap_fraction(),
    );
    let directions: Vec<&DirectionalResult> = std::iter::once(&forward).chain(backward.as_ref()).collect();

    match opts.variant {
        Variant::FeatureCosine => {}
        Variant::RgbPsnr => {
            let mut mse = 0.0;
            for d in &directions {
                match rgb_variant_score(&d.projected_reference, &d.projected_other, &d.overlap, RgbMode::Psnr)? {
                    RgbScore::Psnr { mse: m, .. } => mse += m,
                    RgbScore::Ssim(_) => unreachable!(),
                }
            }
            score.psnr = Some(Psnr::from_mse(mse / directions.len() as f64));
        }
        Variant::RgbSsim => {
            let mut total = 0.0;
            for d in &directions {
                match rgb_variant_score(&d.projected_reference, &d.projected_other, &d.overlap, RgbMode::Ssim)? {
                    RgbScore::Ssim(v) => total += v,
                    RgbScore::Psnr { .. } => unreachable!(),
                }
            }
            score.ssim = Some(total / directions.len() as f64);
        }
    }
    if opts.unmasked_ablation {
        let mut u = Vec::with_capacity(2);
        for d in &directions {
            u.push(unmasked_similarity(&d.projected_reference, &d.projected_other)?);
        }
        score.unmasked = Some(crate::model::combine(u[0], u.get(1).copied()));
    }
    Ok(PairEvaluation { score, forward, backward })
}

/// The consistency score of a pair.
pub fn met3r_pair(
    first: &ImageFrame,
    second: &ImageFrame,
    points: &dyn PointMapBackend,
    features: &dyn FeatureBackend,
    opts: &MetricOptions,
) -> Result<PairScore> {
    evaluate_pair(first, second, points, features, opts).map(|e| e.score)
}

/// Crops the outer `border` pixels; used to compare maps away from image edges.
pub fn interior(map: &Array2<f64>, border: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    map.slice(s![border..h - border, border..w - border]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn projection(attrs: Array3<f64>, mask: Array2<bool>) -> ProjectionResult {
        let (h, w, _) = attrs.dim();
        let mut attrs = attrs;
        for ((r, c), m) in mask.indexed_iter() {
            if !m {
                attrs.slice_mut(s![r, c, ..]).fill(-10000.0);
            }
        }
        ProjectionResult {
            attributes: attrs,
            depth: Array2::zeros((h, w)),
            winner: mask.mapv(|m| m.then_some(0)),
            mask,
            sentinel: -10000.0,
        }
    }

    fn full(h: usize, w: usize) -> Array2<bool> {
        Array2::from_elem((h, w), true)
    }

    #[test]
    fn self_similarity_is_one() {
        let a = Array3::from_shape_fn((8, 8, 4), |(r, c, k)| (r + 2 * c + k) as f64 + 1.0);
        let p = projection(a, full(8, 8));
        assert!((masked_similarity(&p, &p, &p.mask).unwrap() - 1.0).abs() < 1e-15);
        assert!(score_map(&p, &p, &p.mask).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn orthogonal_features_give_zero() {
        let a = Array3::from_shape_fn((4, 4, 2), |(_, _, k)| if k == 0 { 1.0 } else { 0.0 });
        let b = Array3::from_shape_fn((4, 4, 2), |(_, _, k)| if k == 1 { 3.0 } else { 0.0 });
        let (pa, pb) = (projection(a, full(4, 4)), projection(b, full(4, 4)));
        assert_eq!(masked_similarity(&pa, &pb, &full(4, 4)).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_is_empty_overlap() {
        let a = Array3::ones((4, 4, 3));
        let p = projection(a, full(4, 4));
        let none = Array2::from_elem((4, 4), false);
        assert!(matches!(masked_similarity(&p, &p, &none), Err(Error::EmptyOverlap)));
        assert!(matches!(masked_mse(&p, &p, &none), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn zero_norm_pixels_leave_the_mask() {
        let mut a = Array3::ones((2, 2, 3));
        a.slice_mut(s![0, 0, ..]).fill(0.0);
        let mut b = Array3::ones((2, 2, 3));
        b.slice_mut(s![1, 1, ..]).fill(-1.0);
        let (pa, pb) = (projection(a, full(2, 2)), projection(b, full(2, 2)));
        // pixels: (0,0) excluded, (0,1) = 1, (1,0) = 1, (1,1) = -1
        assert!((masked_similarity(&pa, &pb, &full(2, 2)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(score_map(&pa, &pb, &full(2, 2)).unwrap()[[0, 0]].is_nan());
    }

    #[test]
    fn uniform_gray_psnr_is_twenty_db() {
        let a = projection(Array3::from_elem((16, 16, 3), 0.5), full(16, 16));
        let b = projection(Array3::from_elem((16, 16, 3), 0.6), full(16, 16));
        match rgb_variant_score(&a, &b, &full(16, 16), RgbMode::Psnr).unwrap() {
            RgbScore::Psnr { psnr, mse } => {
                assert!((mse - 0.01).abs() < 1e-12);
                assert!((psnr.as_f64() - 20.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_rgb_projections_are_exact() {
        let a = projection(Array3::from_shape_fn((16, 16, 3), |(r, c, k)| ((r * c + k) % 7) as f64 / 7.0), full(16, 16));
        match rgb_variant_score(&a, &a, &a.mask, RgbMode::Psnr).unwrap() {
            RgbScore::Psnr { psnr, .. } => assert_eq!(psnr, Psnr::Exact),
            other => panic!("{other:?}"),
        }
        match rgb_variant_score(&a, &a, &a.mask, RgbMode::Ssim).unwrap() {
            RgbScore::Ssim(v) => assert!((v - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ssim_needs_a_full_window_inside_the_mask() {
        let a = projection(Array3::from_elem((12, 12, 3), 0.5), full(12, 12));
        let mut m = full(12, 12);
        m[[5, 5]] = false;
        assert!(matches!(masked_ssim(&a, &a, &m), Err(Error::EmptyOverlap)));
        assert!(masked_ssim(&a, &a, &full(12, 12)).is_ok());
    }

    #[test]
    fn rgb_variants_reject_feature_projections() {
        let a = projection(Array3::ones((16, 16, 5)), full(16, 16));
        assert!(matches!(rgb_variant_score(&a, &a, &a.mask, RgbMode::Psnr), Err(Error::Config(_))));
    }

    #[test]
    fn unmasked_of_identical_projections_is_one() {
        let mut mask = full(6, 6);
        mask[[0, 0]] = false;
        let p = projection(Array3::from_elem((6, 6, 3), 0.4), mask);
        assert!((unmasked_similarity(&p, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_masks_pull_unmasked_below_masked() {
        let feats = Array3::from_elem((4, 4, 3), 0.5);
        let left = Array2::from_shape_fn((4, 4), |(_, c)| c < 3);
        let right = Array2::from_shape_fn((4, 4), |(_, c)| c >= 1);
        let (a, b) = (projection(feats.clone(), left), projection(feats, right));
        let m = Zip::from(&a.mask).and(&b.mask).map_collect(|x, y| *x && *y);
        let masked = masked_similarity(&a, &b, &m).unwrap();
        let unmasked = unmasked_similarity(&a, &b).unwrap();
        assert!((masked - 1.0).abs() < 1e-15);
        assert!(unmasked < masked, "{unmasked}");
    }
}
