use ndarray::{Array2, Array3};
use proptest::prelude::*;

use met3r_core::geometry::{self, PixelGrid, RasterizerSettings};
use met3r_core::harness::{aggregate, sliding_pairs};
use met3r_core::imageio::resize_bilinear;
use met3r_core::metric::{masked_similarity, score_map};
use met3r_core::model::{combine, CameraIntrinsics, PairRecord, PairScore, PointMapPair, ProjectionResult, Reference, SequenceReport};

fn grid(h: usize, w: usize, d: usize) -> impl Strategy<Value = Array3<f64>> {
    prop::collection::vec(-3.0f64..3.0, h * w * d).prop_map(move |v| Array3::from_shape_vec((h, w, d), v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..10, 2usize..10)
}

fn full_projection(attrs: Array3<f64>) -> ProjectionResult {
    let (h, w, _) = attrs.dim();
    ProjectionResult {
        attributes: attrs,
        depth: Array2::ones((h, w)),
        mask: Array2::from_elem((h, w), true),
        winner: Array2::from_elem((h, w), Some(0)),
        sentinel: geometry::DEFAULT_SENTINEL,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_map_lies_between_inputs(
        (x1, x2, c1, c2) in dims().prop_flat_map(|(h, w)| (
            grid(h, w, 3),
            grid(h, w, 3),
            prop::collection::vec(0.0f64..5.0, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap()),
            prop::collection::vec(0.0f64..5.0, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap()),
        ))
    ) {
        let pair = PointMapPair::new(x1.clone(), x2.clone(), c1, c2, Reference::First).unwrap();
        let canon = geometry::canonical_point_map(&pair);
        for ((idx, v), (a, b)) in canon.xc.indexed_iter().zip(x1.iter().zip(x2.iter())) {
            let (lo, hi) = (a.min(*b), a.max(*b));
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12, "{idx:?}: {v} not in [{lo}, {hi}]");
        }
        let same = PointMapPair::new(x1.clone(), x1.clone(), pair.c1.clone(), pair.c2.clone(), Reference::First).unwrap();
        let canon = geometry::canonical_point_map(&same);
        for (v, a) in canon.xc.iter().zip(x1.iter()) {
            prop_assert!((v - a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn similarity_is_bounded_and_matches_score_map(
        (a, b, m) in (dims(), 1usize..5).prop_flat_map(|((h, w), d)| (
            grid(h, w, d),
            grid(h, w, d),
            prop::collection::vec(any::<bool>(), h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap()),
        ))
    ) {
        let (pa, pb) = (full_projection(a), full_projection(b));
        let map = score_map(&pa, &pb, &m).unwrap();
        let inside: Vec<f64> = map.iter().copied().filter(|v| !v.is_nan()).collect();
        match masked_similarity(&pa, &pb, &m) {
            Ok(s) => {
                prop_assert!((-1.0..=1.0).contains(&s));
                let from_map = 1.0 - inside.iter().sum::<f64>() / inside.len() as f64;
                prop_assert!((s - from_map).abs() < 1e-12);
                prop_assert!(map.iter().all(|v| v.is_nan() || (0.0..=2.0).contains(v)));
            }
            Err(_) => prop_assert!(inside.is_empty()),
        }
        // swapping the projections does not change the directional value
        let swapped = masked_similarity(&pb, &pa, &m).ok();
        prop_assert_eq!(masked_similarity(&pa, &pb, &m).ok(), swapped);
    }

    #[test]
    fn combined_score_is_in_range_and_symmetric(sf in -1.0f64..=1.0, sb in -1.0f64..=1.0) {
        let s = combine(sf, Some(sb));
        prop_assert!((0.0..=2.0).contains(&s));
        prop_assert_eq!(s.to_bits(), combine(sb, Some(sf)).to_bits());
        prop_assert!((0.0..=2.0).contains(&combine(sf, None)));
    }

    #[test]
    fn rasterizer_mask_matches_sentinel_and_depth_is_finite(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.5f64..3.0), 1..200),
        radius in 0.3f64..2.0,
    ) {
        let n = pts.len();
        let points = Array2::from_shape_fn((n, 3), |(i, c)| match c { 0 => pts[i].0, 1 => pts[i].1, _ => pts[i].2 });
        let attrs = Array2::from_shape_fn((n, 2), |(i, c)| i as f64 + c as f64 * 0.5);
        let k = CameraIntrinsics { fx: 12.0, fy: 12.0, cx: 8.0, cy: 8.0 };
        let settings = RasterizerSettings { splat_radius: radius, ..Default::default() };
        let r = geometry::rasterize_points(points.view(), attrs.view(), &k, (16, 16), &settings).unwrap();
        let from_sentinel = geometry::mask_from_sentinel(r.attributes.view(), settings.sentinel);
        prop_assert_eq!(&r.mask, &from_sentinel);
        for ((idx, m), d) in r.mask.indexed_iter().zip(r.depth.iter()) {
            prop_assert_eq!(*m, d.is_finite(), "{:?}", idx);
            if *m { prop_assert!(*d > 0.0); }
        }
    }

    #[test]
    fn overlap_is_contained_in_both_masks(
        (m1, m2) in dims().prop_flat_map(|(h, w)| (
            prop::collection::vec(any::<bool>(), h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap()),
            prop::collection::vec(any::<bool>(), h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap()),
        ))
    ) {
        let (h, w) = m1.dim();
        let mk = |m: Array2<bool>| ProjectionResult {
            attributes: Array3::zeros((h, w, 1)),
            depth: Array2::zeros((h, w)),
            winner: m.mapv(|v| v.then_some(0)),
            mask: m,
            sentinel: geometry::DEFAULT_SENTINEL,
        };
        let (a, b) = (mk(m1.clone()), mk(m2.clone()));
        let o = geometry::overlap_mask(&a, &b).unwrap();
        for ((x, y), z) in m1.iter().zip(m2.iter()).zip(o.iter()) {
            prop_assert_eq!(*z, *x && *y);
        }
    }

    #[test]
    fn focal_estimate_is_scale_invariant(f in 20.0f64..400.0, s in 0.05f64..20.0, seed in 0u64..1000) {
        let (h, w) = (12usize, 14usize);
        let (cx, cy) = geometry::image_center(w, h);
        let depth = |r: usize, c: usize| 1.0 + ((r * 31 + c * 17 + seed as usize) % 23) as f64 / 7.0;
        let x = Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            let z = depth(r, c) * s;
            match k { 0 => (c as f64 - cx) * z / f, 1 => (r as f64 - cy) * z / f, _ => z }
        });
        let ones = Array2::ones((h, w));
        let pair = PointMapPair::new(x.clone(), x, ones.clone(), ones, Reference::First).unwrap();
        let (fx, fy) = geometry::estimate_focal(&geometry::canonical_point_map(&pair), &PixelGrid::centered(w, h, cx, cy)).unwrap();
        prop_assert!(((fx - f) / f).abs() < 1e-9 && ((fy - f) / f).abs() < 1e-9);
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_bounds(
        v in 0.0f64..1.0, (h, w) in (2usize..40, 2usize..40), (nh, nw) in (2usize..40, 2usize..40),
    ) {
        let src = Array3::from_elem((h, w, 3), v);
        let out = resize_bilinear(&src, nh, nw);
        prop_assert_eq!(out.dim(), (nh, nw, 3));
        prop_assert!(out.iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn sliding_pair_count(n in 1usize..200, stride in 1usize..10) {
        match sliding_pairs(n, stride) {
            Ok(p) => {
                prop_assert_eq!(p.len(), n - stride);
                prop_assert!(p.iter().all(|(i, j)| j - i == stride && *j < n));
            }
            Err(_) => prop_assert!(n < stride + 1),
        }
    }

    #[test]
    fn aggregate_matches_scalar_loop(values in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..2.0), 1..8), 1..6)) {
        let reports: Vec<SequenceReport> = values.iter().enumerate().map(|(s, seq)| SequenceReport {
            sequence_id: format!("s{s}"),
            frame_count: seq.len() + 1,
            pairs: seq.iter().enumerate().map(|(i, v)| PairRecord {
                i, j: i + 1,
                score: v.map(|m| { let mut p = PairScore::new(0.0, None, 1.0); p.met3r = m; p }),
                excluded_reason: v.is_none().then(|| "excluded".into()),
            }).collect(),
        }).collect();
        let curve = aggregate(&reports, "met3r");
        let longest = values.iter().map(|v| v.len()).max().unwrap();
        let mut expected = Vec::new();
        for idx in 0..longest {
            let xs: Vec<f64> = values.iter().filter_map(|seq| seq.get(idx).copied().flatten()).collect();
            if xs.is_empty() { continue; }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            expected.push((idx, mean, var.sqrt(), xs.len()));
        }
        prop_assert_eq!(curve.points.len(), expected.len());
        for (p, (idx, mean, std, n)) in curve.points.iter().zip(expected) {
            prop_assert_eq!(p.index, idx);
            prop_assert_eq!(p.count, n);
            prop_assert!((p.mean - mean).abs() < 1e-12 && (p.std - std).abs() < 1e-12);
        }
    }
}
