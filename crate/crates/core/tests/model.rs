mod common;

use common::{central, cross_entropy, random_image, ref_model, rel_err, to_f64};
use promptforge::model::{self, model_forward, model_input_grad, FrozenModel, ModelWeights};
use promptforge::rng::{Rng, RngStream};

fn random_model(seed: u64, k: usize) -> FrozenModel {
    FrozenModel::new(ModelWeights::random(k, RngStream::new(seed).derive("model"))).unwrap()
}

#[test]
fn logits_match_reference() {
    for seed in 0..5 {
        let m = random_model(seed, 4);
        let x = random_image(20, 18, RngStream::new(seed).derive("x"));
        let (logits, _) = model_forward(&x, &m).unwrap();
        let (want, _) = ref_model(&m).forward(&to_f64(x.data()), 20, 18);
        for (a, b) in logits.iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let (side, h) = (16, 1e-3);
    for seed in 0..10 {
        let m = random_model(seed, 4);
        let rm = ref_model(&m);
        let x = random_image(side, side, RngStream::new(seed).derive("x"));
        let label = seed as usize % 4;
        let (logits, tape) = model_forward(&x, &m).unwrap();
        let (_, gl) = model::cross_entropy(&logits, label).unwrap();
        let gx = model_input_grad(&tape, &gl, &m).unwrap();

        let xr = to_f64(x.data());
        let mut pick = RngStream::new(seed).derive("pick").rng();
        let mut checked = 0;
        for _ in 0..200 {
            let i = pick.random_range(0..xr.len());
            let at = |e: f64| {
                let mut xx = xr.clone();
                xx[i] += e;
                rm.forward(&xx, side, side)
            };
            // a ReLU switching inside the bracket makes the difference meaningless
            if at(h).1 != at(-h).1 {
                continue;
            }
            let fd = central(|e| cross_entropy(&at(e).0, label), h);
            let err = rel_err(gx.data()[i] as f64, fd);
            assert!(err <= 1e-3, "seed {seed} pixel {i}: {} vs {fd} ({err})", gx.data()[i]);
            checked += 1;
        }
        assert!(checked >= 150, "seed {seed}: only {checked} smooth pixels");
    }
}
