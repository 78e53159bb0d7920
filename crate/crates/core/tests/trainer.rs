use promptforge::data::{gen_shapes, split, Dataset};
use promptforge::model::{cross_entropy, FrozenModel, ModelWeights};
use promptforge::pipeline::{Prompt, PromptGrads, PromptInit, Variant};
use promptforge::rng::{Rng, RngStream};
use promptforge::trainer::{
    clip_grads, compute_loss, cosine_lr, normalize_grads, sgd_momentum_step, train_prompt, Augment, TrainConfig,
    TrainState,
};
use promptforge::Image;

fn tiny_task() -> (FrozenModel, Dataset) {
    let d = gen_shapes(96, 16, 16, 4, RngStream::new(3).derive("data")).unwrap();
    let d = split(&d, [0.5, 0.25, 0.25], RngStream::new(3).derive("split")).unwrap();
    let m = FrozenModel::new(ModelWeights::random(4, RngStream::new(3).derive("model"))).unwrap();
    (m, d)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn cosine_schedule_points() {
    assert_eq!(cosine_lr(0, 200, 40.0), 40.0);
    assert!(cosine_lr(200, 200, 40.0).abs() < 1e-6);
    assert!((cosine_lr(100, 200, 40.0) - 20.0).abs() < 1e-5);
    let mut prev = f32::INFINITY;
    for s in 0..=200 {
        let lr = cosine_lr(s, 200, 40.0);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn loss_matches_scalar_oracle() {
    let mut r = RngStream::new(1).rng();
    let logits: Vec<f32> = (0..5).map(|_| r.random_range(-4.0..4.0)).collect();
    let x = Image::from_fn(8, 8, |_, _, _| r.random::<f32>());
    let xt = Image::from_fn(8, 8, |_, _, _| r.random::<f32>());
    let loss = compute_loss(&logits, 2, &x, &xt, 0.7).unwrap();

    let z: f64 = logits.iter().map(|&l| (l as f64).exp()).sum();
    let ce = z.ln() - logits[2] as f64;
    let mut sq = 0.0;
    for (a, b) in x.data().iter().zip(xt.data()) {
        sq += (*b as f64 - *a as f64).powi(2);
    }
    let want = ce + 0.7 * sq / x.data().len() as f64;
    assert!((loss.value - want).abs() < 1e-6, "{} vs {want}", loss.value);

    let uniform = compute_loss(&[0.0; 4], 1, &x, &x, 1.0).unwrap();
    assert!((uniform.value - 4f64.ln()).abs() < 1e-9);
    assert!(compute_loss(&logits, 2, &x, &x, 1.0).unwrap().value >= cross_entropy(&logits, 2).unwrap().0 - 1e-12);
}

#[test]
fn clip_and_normalize() {
    let p = Prompt::init(Variant::Acavp, 4, 4, &PromptInit::default());
    let mut g = PromptGrads::zeros_like(&p);
    g.affine[0] = 5.0;
    g.affine[1] = -5.0;
    g.affine[2] = 0.0005;
    clip_grads(&mut g, 0.001);
    assert_eq!(&g.affine[..3], &[0.001, -0.001, 0.0005]);

    let mut g = PromptGrads::zeros_like(&p);
    g.color[3] = 2.0;
    let mut r = RngStream::new(4).rng();
    g.additive.iter_mut().for_each(|v| *v = r.random_range(-3.0..3.0));
    normalize_grads(&mut g);
    assert!(g.affine.iter().all(|&v| v == 0.0));
    assert!((g.color[3] - 1.0).abs() < 1e-6);
    let n: f64 = g.additive.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-6);
}

#[test]
fn momentum_two_step_recurrence() {
    let p = Prompt::init(Variant::Vp, 4, 4, &PromptInit::default());
    let theta0 = p.groups()[2].to_vec();
    let mut state = TrainState::new(p, 0.0);
    let mut g = PromptGrads::zeros_like(&state.prompt);
    g.additive.iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * (i as f32 - 20.0));
    let (lr, m, wd) = (0.5f32, 0.9f32, 0.01f32);
    sgd_momentum_step(&mut state, &g, lr, m, wd).unwrap();
    sgd_momentum_step(&mut state, &g, lr, m, wd).unwrap();
    for (i, &t0) in theta0.iter().enumerate() {
        let gi = g.additive[i] as f64;
        let (lr, m, wd) = (lr as f64, m as f64, wd as f64);
        let v1 = gi + wd * t0 as f64;
        let t1 = t0 as f64 - lr * v1;
        let v2 = m * v1 + gi + wd * t1;
        let t2 = t1 - lr * v2;
        assert!((state.prompt.groups()[2][i] as f64 - t2).abs() < 1e-7, "{i}");
    }

    // no gradient, no decay, no velocity: nothing moves
    let p = Prompt::init(Variant::Acavp, 4, 4, &PromptInit::default());
    let before = p.clone();
    let mut state = TrainState::new(p, 0.0);
    let zero = PromptGrads::zeros_like(&state.prompt);
    sgd_momentum_step(&mut state, &zero, 1.0, 0.9, 0.0).unwrap();
    assert_eq!(state.prompt, before);
}

#[test]
fn zero_epochs_returns_initialisation() {
    let (m, d) = tiny_task();
    let cfg = quick(0);
    let out = train_prompt(&cfg, &m, &d, Variant::Acavp).unwrap();
    assert_eq!(out.best.prompt, Prompt::init(Variant::Acavp, 16, 16, &cfg.init));
    assert_eq!(out.best.epoch, 0);
    assert_eq!(out.log.rows.len(), 1);
    assert_eq!(out.log.rows[0].val_acc, out.best.val_accuracy);
}

#[test]
fn zero_learning_rate_keeps_parameters_and_model() {
    let (m, d) = tiny_task();
    let sum = m.checksum();
    let cfg = TrainConfig { lr0: 0.0, ..quick(3) };
    let out = train_prompt(&cfg, &m, &d, Variant::Acavp).unwrap();
    let init = Prompt::init(Variant::Acavp, 16, 16, &cfg.init);
    assert_eq!(out.last, init);
    assert_eq!(out.best.prompt, init);
    assert_eq!(m.checksum(), sum);
}

#[test]
fn runs_are_reproducible_and_best_is_max() {
    let (m, d) = tiny_task();
    for variant in [Variant::Acavp, Variant::AutoVp, Variant::Vp] {
        let cfg = TrainConfig { augment: Augment::Trivial, ..quick(4) };
        let a = train_prompt(&cfg, &m, &d, variant).unwrap();
        let b = train_prompt(&cfg, &m, &d, variant).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.best.prompt, b.best.prompt);
        let max = a.log.rows.iter().map(|r| r.val_acc).fold(0.0, f64::max);
        assert_eq!(a.best.val_accuracy, max);
        let first = a.log.rows.iter().find(|r| r.val_acc == max).unwrap();
        assert_eq!(a.best.epoch, first.epoch);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let (m, d) = tiny_task();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_prompt(&quick(2), &m, &d, Variant::Acavp).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.last, b.last);
}

#[test]
fn metrics_csv_layout() {
    let (m, d) = tiny_task();
    let out = train_prompt(&quick(2), &m, &d, Variant::Vp).unwrap();
    let csv = out.log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,val_acc");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0,"));
    assert!(lines[2].starts_with("1,40,"));
}
