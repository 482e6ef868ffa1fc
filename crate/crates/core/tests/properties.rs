use nearmatch::classifier::auc_from_scores;
use nearmatch::eval::{proportion, CiMethod};
use nearmatch::feature_io::{read_features, write_features};
use nearmatch::index::FlatIndex;
use nearmatch::{DescriptorSet, FeatureKind, PerceptualHash};
use proptest::prelude::*;

fn binary_images(bytes: usize) -> impl Strategy<Value = Vec<(String, DescriptorSet)>> {
    let bits = (bytes * 8) as u32;
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(any::<u8>(), bytes), 0..6),
        1..6,
    )
    .prop_map(move |images| {
        images
            .into_iter()
            .enumerate()
            .map(|(i, rows)| {
                (
                    format!("im{i}"),
                    DescriptorSet::from_binary_rows(bits, &rows),
                )
            })
            .collect()
    })
}

fn real_images() -> impl Strategy<Value = Vec<(String, DescriptorSet)>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 8), 0..4),
        1..5,
    )
    .prop_map(|images| {
        images
            .into_iter()
            .enumerate()
            .map(|(i, rows)| (format!("r{i}"), DescriptorSet::from_real_rows(8, &rows)))
            .collect()
    })
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (s, _) in scores.iter().zip(labels).filter(|p| *p.1) {
        for (t, _) in scores.iter().zip(labels).filter(|p| !*p.1) {
            pairs += 1.0;
            wins += if s > t {
                1.0
            } else if s == t {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn binary_feature_file_round_trips(images in binary_images(16)) {
        let bytes = write_features(&images, FeatureKind::ORB_CODE).unwrap();
        let back = read_features(&bytes).unwrap();
        prop_assert_eq!(back.kind, FeatureKind::ORB_CODE);
        prop_assert_eq!(&back.images, &images);
        prop_assert_eq!(write_features(&back.images, back.kind).unwrap(), bytes);
    }

    #[test]
    fn real_feature_file_round_trips(images in real_images()) {
        let kind = FeatureKind::Real { dim: 8 };
        let bytes = write_features(&images, kind).unwrap();
        prop_assert_eq!(read_features(&bytes).unwrap().images, images);
    }

    #[test]
    fn truncated_feature_files_are_rejected(images in binary_images(32), cut in any::<prop::sample::Index>()) {
        let bytes = write_features(&images, FeatureKind::ORB_RAW).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(read_features(&bytes[..n]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = read_features(&bytes);
        let _ = FlatIndex::from_bytes(&bytes);
    }

    #[test]
    fn index_round_trips(images in binary_images(16)) {
        let index = FlatIndex::build(&images, FeatureKind::ORB_CODE).unwrap();
        let bytes = index.to_bytes();
        prop_assert_eq!(FlatIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn knn_distances_match_brute_force(images in binary_images(16), q in prop::collection::vec(any::<u8>(), 16), k in 1usize..12) {
        let index = FlatIndex::build(&images, FeatureKind::ORB_CODE).unwrap();
        let query = DescriptorSet::from_binary_rows(128, &[&q]);
        let got: Vec<f64> = index.knn_features(query.feature(0), k).unwrap().iter().map(|n| n.distance).collect();
        let mut all: Vec<f64> = images
            .iter()
            .flat_map(|(_, set)| (0..set.len()).map(|i| set.binary_row(i).to_vec()).collect::<Vec<_>>())
            .map(|row| row.iter().zip(&q).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>() as f64)
            .collect();
        all.sort_by(f64::total_cmp);
        all.truncate(k);
        prop_assert_eq!(got, all);
    }

    #[test]
    fn phash_distance_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (a, b, c) = (PerceptualHash(a), PerceptualHash(b), PerceptualHash(c));
        prop_assert_eq!(a.distance(b), b.distance(a));
        prop_assert_eq!(a.distance(a), 0);
        prop_assert!(a.distance(c) <= a.distance(b) + b.distance(c));
        prop_assert_eq!(a.distance(PerceptualHash(!a.0)), 64);
    }

    #[test]
    fn intervals_bracket_the_mean(n in 1usize..2000, frac in 0.0f64..=1.0) {
        let hits = (n as f64 * frac) as usize;
        for method in [CiMethod::BinomialPercentile, CiMethod::Normal] {
            let p = proportion(hits, n, method);
            prop_assert!(0.0 <= p.ci_low && p.ci_low <= p.mean + 1e-12);
            prop_assert!(p.mean <= p.ci_high + 1e-12 && p.ci_high <= 1.0);
        }
    }

    #[test]
    fn auc_matches_pairwise_count(
        data in prop::collection::vec((0u8..8, any::<bool>()), 2..40)
            .prop_filter("both classes", |d| d.iter().any(|x| x.1) && d.iter().any(|x| !x.1))
    ) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let auc = auc_from_scores(&scores, &labels).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
    }
}
