use std::collections::HashSet;

use proptest::prelude::*;
use segkit::dataset::{
    class_histogram, class_pixel_frequencies, diverse_subset, generate_toy, load_dir, split, IngestMode, ToySpec,
};
use segkit::mask_codec::PixelOrder;

fn toy(count: usize, size: usize, seed: u64) -> segkit::dataset::ToyDataset {
    generate_toy(&ToySpec {
        count,
        width: size,
        height: size,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn spawn_probabilities_set_the_imbalance() {
    let data = toy(2000, 24, 11);
    let hist = class_histogram(&data.index).unwrap();
    let probs: Vec<f64> = data.spec.classes.iter().map(|c| c.probability).collect();
    // occlusion by later shapes can only hide a class, never add one
    for (a, b) in [(0, 2), (1, 2), (0, 3)] {
        let want = probs[a] / probs[b];
        let got = hist.image_counts[a + 1] as f64 / hist.image_counts[b + 1] as f64;
        assert!(
            (got / want - 1.0).abs() < 0.2,
            "classes {} vs {}: ratio {got}, want {want}",
            a + 1,
            b + 1
        );
    }
}

#[test]
fn annotations_reproduce_the_drawn_targets() {
    let data = toy(12, 40, 3);
    for s in &data.samples {
        let entry = data.index.get(&s.image_id).unwrap();
        assert_eq!(
            entry.class_map(PixelOrder::ColumnMajor).unwrap(),
            s.target,
            "{}",
            s.image_id
        );
    }
}

#[test]
fn pixel_frequencies_match_a_direct_count() {
    let data = toy(15, 32, 5);
    let freq = class_pixel_frequencies(&data.index, PixelOrder::ColumnMajor).unwrap();
    let mut brute = vec![0.0; freq.len()];
    for s in &data.samples {
        for c in 0..freq.len() {
            let n = s.target.labels().iter().filter(|&&l| l as usize == c).count();
            brute[c] += n as f64 / s.target.len() as f64 / data.samples.len() as f64;
        }
    }
    for (c, (a, b)) in freq.iter().zip(&brute).enumerate() {
        assert!((a - b).abs() < 1e-12, "class {c}: {a} vs {b}");
    }
    assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn saved_directories_load_back_at_any_size() {
    let data = toy(6, 48, 9);
    let tmp = tempfile::tempdir().unwrap();
    data.save(tmp.path()).unwrap();
    let (index, samples) = load_dir(tmp.path(), None, IngestMode::Strict).unwrap();
    assert_eq!(index.len(), 6);
    for (a, b) in samples.iter().zip(&data.samples) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.target, b.target);
        assert_eq!(a.image, b.image);
    }
    let (_, small) = load_dir(tmp.path(), Some(16), IngestMode::Strict).unwrap();
    assert!(small.iter().all(|s| s.target.width() == 16 && s.image.width() == 16));
}

#[test]
fn diverse_subset_tracks_common_class_shares() {
    let data = toy(200, 16, 21);
    let report = diverse_subset(&data.index, 100, 1, 0.2).unwrap();
    assert_eq!(report.index.len(), 100);
    assert!(report.feasible, "worst common deviation {}", report.worst_common());
    let full = class_histogram(&data.index).unwrap();
    let sub = class_histogram(&report.index).unwrap();
    for c in 1..=5 {
        if full.image_share(c) >= 0.01 {
            let rel = (sub.image_share(c) - full.image_share(c)).abs() / full.image_share(c);
            assert!(rel <= 0.2 + 1e-12, "class {c} off by {rel}");
        }
    }
    assert!(diverse_subset(&data.index, 201, 1, 0.2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_partitions_the_index(fraction in 0.05f64..0.95, seed in 0u64..1000) {
        let data = toy(10, 8, 2);
        let (train, val) = split(&data.index, fraction, seed).unwrap();
        let a: HashSet<&str> = train.images().iter().map(|e| e.image_id.as_str()).collect();
        let b: HashSet<&str> = val.images().iter().map(|e| e.image_id.as_str()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), 10);
        prop_assert!(!a.is_empty() && !b.is_empty());
        let again = split(&data.index, fraction, seed).unwrap();
        prop_assert_eq!(train.images().len(), again.0.images().len());
    }
}
