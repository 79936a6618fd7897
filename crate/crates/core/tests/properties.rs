//! Property tests and brute-force oracles for the numeric building blocks.

use pofsm::flow::{decode_flow, encode_flow, DecodeMode, FlowCodebook, FlowField, KMeans, SpatialProbMap};
use pofsm::image::Image;
use pofsm::loss::{spatial_loss_v1, spatial_loss_v2, LossConfig};
use pofsm::pipeline::average_precision;
use pofsm::saliency::{otsu_threshold, raw_saliency, SaliencyParams};
use pofsm::flow::ClusterLabelMap;
use proptest::prelude::*;

mod common;

use common::{brute_force_ap, brute_force_two_means, codebook_sse as sse, exhaustive_otsu, prob_map};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(u, v)| [u, v])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kmeans_sse_never_increases(pts in prop::collection::vec(point(), 6..60), k in 1usize..5, seed in any::<u64>()) {
        let run = KMeans { clusters: k, max_iters: 50, restarts: 1, seed }.fit_traced(&pts);
        if let Ok(run) = run {
            for w in run.sse_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", run.sse_history);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic(pts in prop::collection::vec(point(), 4..40), seed in any::<u64>()) {
        let km = KMeans { clusters: 3, max_iters: 50, restarts: 3, seed };
        prop_assert_eq!(km.fit(&pts).ok(), km.fit(&pts).ok());
    }

    #[test]
    fn kmeans_two_clusters_is_optimal(pts in prop::collection::vec(point(), 3..=8), seed in any::<u64>()) {
        let km = KMeans { clusters: 2, max_iters: 100, restarts: 8, seed };
        if let Ok(cb) = km.fit(&pts) {
            let best = brute_force_two_means(&pts);
            prop_assert!((sse(&cb, &pts) - best).abs() <= 1e-9 * best.max(1.0));
        }
    }

    #[test]
    fn encode_matches_exhaustive_nearest(cents in prop::collection::vec(point(), 1..8), flow in prop::collection::vec(point(), 12)) {
        let cb = FlowCodebook::new(cents.clone(), 1.0).unwrap();
        let field = FlowField::new(3, 4, flow.clone()).unwrap();
        let labels = encode_flow(&field, &cb);
        for (uv, &l) in flow.iter().zip(labels.labels()) {
            let d = |c: &[f64; 2]| (uv[0] - c[0]).powi(2) + (uv[1] - c[1]).powi(2);
            let mut best = 0;
            for (j, c) in cents.iter().enumerate() {
                if d(c) < d(&cents[best]) {
                    best = j;
                }
            }
            prop_assert_eq!(l as usize, best);
        }
    }

    #[test]
    fn encode_decode_idempotent(cents in prop::collection::vec(point(), 1..8), flow in prop::collection::vec(point(), 6)) {
        let cb = FlowCodebook::new(cents, 1.0).unwrap();
        let labels = encode_flow(&FlowField::new(2, 3, flow).unwrap(), &cb);
        let decoded = decode_flow(&SpatialProbMap::one_hot(&labels), &cb, DecodeMode::Argmax).unwrap();
        prop_assert_eq!(encode_flow(&decoded, &cb), labels.clone());
        let expected = decode_flow(&SpatialProbMap::one_hot(&labels), &cb, DecodeMode::Expected).unwrap();
        prop_assert_eq!(expected, decoded);
    }

    #[test]
    fn expected_decode_is_linear(seed in any::<u64>(), t in 0.0..1.0f64) {
        let cb = FlowCodebook::new(vec![[-2.0, 1.0], [0.5, 0.0], [3.0, -1.5]], 3.0).unwrap();
        let (a, _) = prob_map(seed, 2, 2, 3);
        let (b, _) = prob_map(seed ^ 1, 2, 2, 3);
        let mix: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let m = SpatialProbMap::new(2, 2, 3, mix).unwrap();
        let (da, db, dm) = (
            decode_flow(&a, &cb, DecodeMode::Expected).unwrap(),
            decode_flow(&b, &cb, DecodeMode::Expected).unwrap(),
            decode_flow(&m, &cb, DecodeMode::Expected).unwrap(),
        );
        for i in 0..4 {
            for c in 0..2 {
                let lin = t * da.vectors()[i][c] + (1.0 - t) * db.vectors()[i][c];
                prop_assert!((dm.vectors()[i][c] - lin).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_pixel_permutation_invariant(seed in any::<u64>(), shift in 1usize..11) {
        let (p, l) = prob_map(seed, 3, 4, 6);
        let n = 12;
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pd: Vec<f64> = perm.iter().flat_map(|&i| p.pixel(i).to_vec()).collect();
        let ld: Vec<u32> = perm.iter().map(|&i| l.labels()[i]).collect();
        let (p2, l2) = (SpatialProbMap::new(3, 4, 6, pd).unwrap(), ClusterLabelMap::new(3, 4, 6, ld).unwrap());
        let cfg = LossConfig::top_k(3);
        let (a, b) = (spatial_loss_v1(&p, &l).unwrap().value, spatial_loss_v1(&p2, &l2).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        let (a, b) = (spatial_loss_v2(&p, &l, &cfg).unwrap().value, spatial_loss_v2(&p2, &l2, &cfg).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn v2_bounded_by_scaled_v1(seed in any::<u64>(), k in 1usize..12) {
        let (p, l) = prob_map(seed, 4, 4, 8);
        let v1 = spatial_loss_v1(&p, &l).unwrap().value;
        let v2 = spatial_loss_v2(&p, &l, &LossConfig::top_k(k)).unwrap().value;
        prop_assert!(v1 >= 0.0 && v2 >= 0.0);
        prop_assert!(v2 <= v1 / k as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn otsu_matches_exhaustive_scan(vals in prop::collection::vec(0.0..1.0f64, 2..200), bins in 2usize..64) {
        prop_assert_eq!(otsu_threshold(&vals, bins).unwrap().tau, exhaustive_otsu(&vals, bins));
    }

    #[test]
    fn otsu_matches_on_bimodal_counts(a in 1usize..50, b in 1usize..50, lo in 0.0..0.3f64, hi in 0.6..1.0f64) {
        let mut vals = vec![lo; a];
        vals.extend(std::iter::repeat_n(hi, b));
        vals.push((lo + hi) / 2.0);
        let t = otsu_threshold(&vals, 256).unwrap();
        prop_assert_eq!(t.tau, exhaustive_otsu(&vals, 256));
        prop_assert!(t.tau > lo && t.tau <= hi);
    }

    #[test]
    fn ap_matches_brute_force(items in prop::collection::vec((0u8..6, any::<bool>()), 1..=20)) {
        // Coarse scores so that ties are frequent.
        let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64 / 5.0).collect();
        let pos: Vec<bool> = items.iter().map(|(_, p)| *p).collect();
        match (average_precision(&scores, &pos), brute_force_ap(&scores, &pos)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}

fn textured(seed: u64, rows: usize, cols: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(rows, cols, 1, (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn saliency_invariant_to_affine_intensity() {
    let params = SaliencyParams::default();
    for seed in 0..5 {
        let img = textured(seed, 20, 24);
        let shifted =
            Image::new(20, 24, 1, img.data().iter().map(|v| 2.0 * v + 0.1).collect()).unwrap();
        let a = raw_saliency(&img, &params).unwrap();
        let b = raw_saliency(&shifted, &params).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn saliency_translation_covariant() {
    // A textured patch on a flat canvas, moved by (dr, dc) while staying
    // well inside the borders: the raw map moves with it.
    let params = SaliencyParams::default();
    let patch = textured(3, 8, 8);
    let place = |top: usize, left: usize| {
        let mut img = Image::filled(40, 40, 1, 0.4);
        for r in 0..8 {
            for c in 0..8 {
                img.set(top + r, left + c, 0, patch.get(r, c, 0));
            }
        }
        img
    };
    let (dr, dc) = (3, 5);
    let a = raw_saliency(&place(12, 10), &params).unwrap();
    let b = raw_saliency(&place(12 + dr, 10 + dc), &params).unwrap();
    let margin = 8;
    for r in margin..40 - margin - dr {
        for c in margin..40 - margin - dc {
            let (x, y) = (a[r * 40 + c], b[(r + dr) * 40 + c + dc]);
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "({r},{c}): {x} vs {y}");
        }
    }
}
