use promptforge::augment::CorruptionKind;
use promptforge::data::{split, Dataset, SplitTag};
use promptforge::eval::{bench_timing, corruption_eval, evaluate};
use promptforge::model::{FrozenModel, ModelWeights};
use promptforge::pipeline::{Prompt, PromptInit, Variant};
use promptforge::rng::{Rng, RngStream};
use promptforge::{Error, Image};

/// Classifies red (class 0) against green (class 1) through the real
/// architecture: centre taps carry R-G and G-R through both convolutions.
fn colour_oracle() -> FrozenModel {
    let mut w = ModelWeights::zeros(2);
    let tap1 = |o: usize, c: usize| ((o * 3 + c) * 3 + 1) * 3 + 1;
    w.conv1_w[tap1(0, 0)] = 1.0;
    w.conv1_w[tap1(0, 1)] = -1.0;
    w.conv1_w[tap1(1, 1)] = 1.0;
    w.conv1_w[tap1(1, 0)] = -1.0;
    let tap2 = |o: usize, c: usize| ((o * 8 + c) * 3 + 1) * 3 + 1;
    w.conv2_w[tap2(0, 0)] = 1.0;
    w.conv2_w[tap2(1, 1)] = 1.0;
    w.fc_w[0] = 1.0;
    w.fc_w[16 + 1] = 1.0;
    FrozenModel::new(w).unwrap()
}

fn colour_set(n: usize) -> Dataset {
    let images = (0..n)
        .map(|i| Image::from_fn(16, 16, |c, _, _| if c == i % 2 { 0.9 } else { 0.1 }))
        .collect();
    let labels = (0..n).map(|i| i % 2).collect();
    let d = Dataset::new(images, labels, 2, "colours").unwrap();
    split(&d, [0.5, 0.0, 0.5], RngStream::new(0)).unwrap()
}

fn noise_set(n: usize, k: usize, seed: u64) -> Dataset {
    let mut r = RngStream::new(seed).rng();
    let images = (0..n).map(|_| Image::from_fn(16, 16, |_, _, _| r.random::<f32>())).collect();
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    let d = Dataset::new(images, labels, k, "noise").unwrap();
    split(&d, [0.0, 0.0, 1.0], RngStream::new(seed)).unwrap()
}

#[test]
fn oracle_model_is_perfect_and_robust() {
    let (m, d) = (colour_oracle(), colour_set(40));
    let r = evaluate(&m, None, &d, SplitTag::Test).unwrap();
    assert_eq!(r.accuracy, 1.0);
    let c = corruption_eval(&m, None, &d, SplitTag::Test, &CorruptionKind::ALL, RngStream::new(5)).unwrap();
    assert!(c.accuracy.iter().flatten().all(|&a| a == 1.0));
    assert_eq!(c.mean, 1.0);
}

#[test]
fn random_model_is_near_chance() {
    let (n, k) = (2000usize, 4usize);
    let d = noise_set(n, k, 11);
    let m = FrozenModel::new(ModelWeights::random(k, RngStream::new(11))).unwrap();
    let r = evaluate(&m, None, &d, SplitTag::Test).unwrap();
    // labels are independent of the images, so hits are Binomial(n, 1/k)
    let p = 1.0 / k as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((r.accuracy - p).abs() <= 3.0 * sd, "{}", r.accuracy);
    let weighted: f64 = r.per_class.iter().zip(&r.class_counts).map(|(a, &c)| a * c as f64).sum();
    assert!((weighted / n as f64 - r.accuracy).abs() < 1e-12);
}

#[test]
fn identity_prompt_equals_no_prompt() {
    let d = noise_set(200, 4, 2);
    let m = FrozenModel::new(ModelWeights::random(4, RngStream::new(2))).unwrap();
    let bare = evaluate(&m, None, &d, SplitTag::Test).unwrap();
    // a freshly initialised VP has a zero additive pattern
    let p = Prompt::init(Variant::Vp, 16, 16, &PromptInit::default());
    assert_eq!(evaluate(&m, Some(&p), &d, SplitTag::Test).unwrap(), bare);
}

#[test]
fn accuracy_ignores_sample_order() {
    let d = noise_set(300, 3, 4);
    let m = FrozenModel::new(ModelWeights::random(3, RngStream::new(4))).unwrap();
    let mut rev = d.clone();
    rev.images.reverse();
    rev.labels.reverse();
    rev.splits.reverse();
    let a = evaluate(&m, None, &d, SplitTag::Test).unwrap();
    let b = evaluate(&m, None, &rev, SplitTag::Test).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corruption_report_shape_and_mean() {
    let d = noise_set(60, 4, 8);
    let m = FrozenModel::new(ModelWeights::random(4, RngStream::new(8))).unwrap();
    let only = [CorruptionKind::GaussianNoise];
    let r = corruption_eval(&m, None, &d, SplitTag::Test, &only, RngStream::new(1)).unwrap();
    assert_eq!(r.to_csv().lines().count(), 1 + 5);
    let again = corruption_eval(&m, None, &d, SplitTag::Test, &only, RngStream::new(1)).unwrap();
    assert_eq!(r, again);
    assert_eq!(r.mean, r.accuracy[0].iter().sum::<f64>() / 5.0);
    assert!(matches!(
        corruption_eval(&m, None, &d, SplitTag::Test, &[], RngStream::new(1)),
        Err(Error::EmptyKinds)
    ));
}

#[test]
fn empty_split_and_class_mismatch() {
    let d = noise_set(10, 4, 3);
    let m = FrozenModel::new(ModelWeights::random(4, RngStream::new(3))).unwrap();
    assert!(matches!(evaluate(&m, None, &d, SplitTag::Val), Err(Error::EmptySplit(_))));
    let m3 = FrozenModel::new(ModelWeights::random(3, RngStream::new(3))).unwrap();
    assert!(matches!(evaluate(&m3, None, &d, SplitTag::Test), Err(Error::ClassMismatch { .. })));
}

#[test]
fn bench_covers_all_variants() {
    let m = FrozenModel::new(ModelWeights::random(4, RngStream::new(1))).unwrap();
    let r = bench_timing(&[], &m, 32, 32, 4, 5, RngStream::new(1)).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert_eq!(r.to_csv().lines().next(), Some("variant,prompt_s,model_s,relative"));
    for row in &r.rows {
        assert!(row.prompt_s > 0.0 && row.model_s > 0.0);
        assert_eq!(row.relative, row.prompt_s / row.model_s);
        assert!(row.prompt_min_s <= row.prompt_s);
    }
    assert!(bench_timing(&[], &m, 32, 32, 4, 4, RngStream::new(1)).is_err());
}

#[test]
fn embedding_check_passes_and_detects_perturbation() {
    use promptforge::eval::embedding_check;
    let ok = embedding_check(3, 2, 32, RngStream::new(1), 0.0).unwrap();
    assert_eq!(ok.cases, 12);
    assert!(ok.max_deviation <= 1e-5, "{ok:?}");
    let bad = embedding_check(3, 2, 32, RngStream::new(1), 0.5).unwrap();
    assert!(bad.max_deviation > 1e-3, "{bad:?}");
    assert!(embedding_check(0, 2, 32, RngStream::new(1), 0.0).is_err());
}
