use promptforge::data::{encode_idx, gen_shapes, load_idx, shift_domain, split, Dataset, ShiftConfig, SplitTag};
use promptforge::rng::RngStream;
use promptforge::{Error, Image};
use proptest::prelude::*;

#[test]
fn thousand_samples_balance_and_split_ninety_ten() {
    let d = gen_shapes(1000, 16, 16, 4, RngStream::new(1)).unwrap();
    assert_eq!(d.label_histogram(), vec![250; 4]);
    let s = split(&d, [0.9, 0.1, 0.0], RngStream::new(2)).unwrap();
    assert_eq!(s.split_sizes(), [900, 100, 0]);
    // every class shows up in validation
    let val = s.subset(SplitTag::Val);
    assert!(val.label_histogram().iter().all(|&c| c > 0));
    let all = split(&d, [1.0, 0.0, 0.0], RngStream::new(2)).unwrap();
    assert_eq!(all.split_sizes(), [1000, 0, 0]);
}

#[test]
fn idx_round_trip_through_files() {
    let img = |v: u8| Image::from_fn(4, 4, |_, y, x| ((v as usize + y * 4 + x) as f32) / 255.0);
    let d = Dataset::new(vec![img(0), img(100)], vec![3, 7], 10, "fixture").unwrap();
    let (ib, lb) = encode_idx(&d);
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    std::fs::write(&ip, &ib).unwrap();
    std::fs::write(&lp, &lb).unwrap();
    let back = load_idx(&ip, &lp).unwrap();
    assert_eq!(back.labels, vec![3, 7]);
    assert_eq!(back.images[1].get(2, 3, 1), 113.0 / 255.0);
    assert_eq!(back.images, d.images);
}

#[test]
fn missing_idx_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_idx(dir.path().join("nope"), dir.path().join("nada")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_images_stay_in_range(seed in any::<u64>(), k in 2usize..=8) {
        let d = gen_shapes(3 * k, 12, 14, k, RngStream::new(seed)).unwrap();
        for img in &d.images {
            prop_assert_eq!((img.height(), img.width()), (12, 14));
            prop_assert!(img.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
        prop_assert!(d.labels.iter().all(|&l| l < k));
    }

    #[test]
    fn splits_partition_indices(seed in any::<u64>(), n in 12usize..80, a in 0.2f64..0.7) {
        let d = gen_shapes(n, 8, 8, 3, RngStream::new(seed)).unwrap();
        let b = (1.0 - a) / 2.0;
        let s = split(&d, [a, b, 1.0 - a - b], RngStream::new(seed ^ 1)).unwrap();
        let mut all: Vec<usize> = [SplitTag::Train, SplitTag::Val, SplitTag::Test]
            .iter()
            .flat_map(|&t| s.indices(t))
            .collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn shift_keeps_labels_and_range(seed in any::<u64>(), hue in -180f32..180.0, lift in 0f32..0.5) {
        let d = gen_shapes(6, 16, 16, 3, RngStream::new(seed)).unwrap();
        let cfg = ShiftConfig { hue_degrees: hue, background_delta: lift, translate: (1, -2), noise_std: 0.02, seed };
        let s = shift_domain(&d, &cfg).unwrap();
        prop_assert_eq!(&s.labels, &d.labels);
        prop_assert_eq!(&s.splits, &d.splits);
        prop_assert!(s.images.iter().all(|i| i.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
