mod common;

use common::prompt_gradient_check;

#[test]
fn prompt_gradients_match_finite_differences() {
    for seed in 0..10 {
        let c = prompt_gradient_check(seed, 16, 200);
        println!("seed {seed}: {c:?}");
        assert!(c.worst() <= 1e-3, "seed {seed}: {c:?}");
    }
}

#[test]
fn chained_loss_gradient_matches_reference() {
    use common::{central_kink_aware, cross_entropy, random_image, random_params, ref_forward, ref_model, ref_prompt, rel_err, to_f64};
    use promptforge::color::MaskMode;
    use promptforge::model::{model_forward, model_input_grad, FrozenModel, ModelWeights};
    use promptforge::pipeline::{acavp_backward, acavp_forward};
    use promptforge::rng::RngStream;
    use promptforge::trainer::compute_loss;

    let side = 16;
    for seed in 0..5 {
        let base = RngStream::new(seed).derive("chain");
        let m = FrozenModel::new(ModelWeights::random(4, base.derive("model"))).unwrap();
        let rm = ref_model(&m);
        let x = random_image(side, side, base.derive("x"));
        let params = random_params(side, side, base.derive("params"));
        let label = 1;

        let (y, tape) = acavp_forward(&x, &params, MaskMode::Geometric).unwrap();
        let (logits, mt) = model_forward(&y, &m).unwrap();
        let loss = compute_loss(&logits, label, &x, &y, 0.0).unwrap();
        let gy = model_input_grad(&mt, &loss.grad_logits, &m).unwrap();
        let (grads, _) = acavp_backward(&tape, &gy).unwrap();

        let rp = ref_prompt(&params);
        let xr = to_f64(x.data());
        let eval = |k: usize, e: f64| {
            let mut p = rp.clone();
            p.affine[k] += e;
            let (out, sig) = ref_forward(&xr, &p);
            let (lg, gates) = rm.forward(&out, side, side);
            (cross_entropy(&lg, label), (sig, gates))
        };
        for k in 0..7 {
            let (fd, h) = central_kink_aware(|e| eval(k, e).0, |e| eval(k, e).1, 1e-3);
            if h < 1e-6 {
                // no smooth bracket found; the derivative is undefined here
                continue;
            }
            let err = rel_err(grads.affine[k] as f64, fd);
            assert!(err <= 1e-3, "seed {seed} affine {k}: {} vs {fd}", grads.affine[k]);
        }
    }
}
