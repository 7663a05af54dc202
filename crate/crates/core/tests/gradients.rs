//! Central-difference checks for every trainable layer type and op.

use gendaug_core::numerics::layers::{Conv2d, Dense, Embedding, GroupNorm};
use gendaug_core::diffusion::{build_schedule, Architecture, training_loss, Conditioning, Denoiser, DenoiserConfig, ScheduleKind};
use gendaug_core::numerics::{grad_check, Graph, ParamSet, SeededRng, Var};

const TOL: f64 = 1e-4;

/// Runs `build` inside a fresh graph over `params` (flattened) and checks
/// the resulting scalar's gradient.
fn check(mut ps: ParamSet<f64>, build: impl for<'a> Fn(&mut Graph<'a, f64>, &'a ParamSet<f64>) -> Var) -> f64 {
    let theta = ps.flatten();
    let template = ps.clone();
    let err = grad_check(
        |p| {
            let mut local = template.clone();
            local.load_flat(p).unwrap();
            let mut g = Graph::new();
            let loss = build(&mut g, &local);
            let value = g.value(loss)[0];
            let grads = g.backward(loss, &local);
            Ok((value, grads.flatten(&local)))
        },
        &theta,
        1e-6,
    )
    .unwrap();
    ps.load_flat(&theta).unwrap();
    err
}

fn random_input(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Weighted sum with fixed random weights so no gradient is trivially
/// symmetric.
fn probe(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Var {
    let len = g.value(x).len();
    let mut rng = SeededRng::new(seed, 99);
    let w: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
    let shape = g.shape(x).to_vec();
    let wv = g.input(shape, w);
    let prod = g.add(x, wv);
    g.sum_squares(prod)
}

#[test]
fn dense_layer() {
    let mut rng = SeededRng::new(1, 0);
    let mut ps = ParamSet::new();
    let fc = Dense::new(&mut ps, "fc", 4, 3, &mut rng);
    let x = random_input(&mut rng, 5 * 4);
    let err = check(ps, |g, p| {
        let xi = g.input([5, 4], x.clone());
        let y = fc.forward(g, p, xi);
        probe(g, y, 1)
    });
    assert!(err <= TOL, "dense grad error {err}");
}

#[test]
fn convolution_layers() {
    for k in [1, 3] {
        let mut rng = SeededRng::new(2, k as u64);
        let mut ps = ParamSet::new();
        let conv = Conv2d::new(&mut ps, "conv", 2, 3, k, &mut rng);
        let x = random_input(&mut rng, 2 * 4 * 4 * 2);
        let err = check(ps, |g, p| {
            let xi = g.input([2, 4, 4, 2], x.clone());
            let y = conv.forward(g, p, xi);
            probe(g, y, 2)
        });
        assert!(err <= TOL, "conv k={k} grad error {err}");
    }
}

#[test]
fn convolution_input_gradient() {
    // Gradient w.r.t. a parameterised input exercises col2im.
    let mut rng = SeededRng::new(3, 0);
    let mut ps = ParamSet::new();
    let conv = Conv2d::new(&mut ps, "conv", 2, 2, 3, &mut rng);
    let xin = ps.add("x", gendaug_core::numerics::Tensor::from_fn([1, 3, 3, 2], |_| rng.normal()));
    let err = check(ps, |g, p| {
        let xi = g.param(p, xin);
        let y = conv.forward(g, p, xi);
        probe(g, y, 3)
    });
    assert!(err <= TOL, "conv input grad error {err}");
}

#[test]
fn group_norm_layer() {
    let mut rng = SeededRng::new(4, 0);
    let mut ps = ParamSet::new();
    let norm = GroupNorm::new(&mut ps, "gn", 4, 2);
    let xin = ps.add("x", gendaug_core::numerics::Tensor::from_fn([2, 2, 2, 4], |_| rng.normal()));
    let err = check(ps, |g, p| {
        let xi = g.param(p, xin);
        let y = norm.forward(g, p, xi);
        probe(g, y, 4)
    });
    assert!(err <= TOL, "group norm grad error {err}");
}

#[test]
fn embedding_lookup() {
    let mut rng = SeededRng::new(5, 0);
    let mut ps = ParamSet::new();
    let emb = Embedding::new(&mut ps, "emb", 4, 3, &mut rng);
    let err = check(ps, |g, p| {
        let y = emb.forward(g, p, &[0, 2, 2, 3]);
        probe(g, y, 5)
    });
    assert!(err <= TOL, "embedding grad error {err}");
}

#[test]
fn pooling_activation_and_broadcast_ops() {
    let mut rng = SeededRng::new(6, 0);
    let mut ps = ParamSet::new();
    let xin = ps.add("x", gendaug_core::numerics::Tensor::from_fn([2, 4, 4, 3], |_| rng.normal()));
    let vin = ps.add("v", gendaug_core::numerics::Tensor::from_fn([2, 3], |_| rng.normal()));
    let err = check(ps, |g, p| {
        let x = g.param(p, xin);
        let v = g.param(p, vin);
        let a = g.silu(x);
        let b = g.avg_pool2(a);
        let c = g.upsample2(b);
        let d = g.add_rows(c, v);
        let e = g.add(d, x);
        let f = g.scale(e, 0.7);
        let pooled = g.global_avg_pool(f);
        let r = g.reshape(pooled, [6]);
        probe(g, r, 6)
    });
    assert!(err <= TOL, "composite op grad error {err}");
}

#[test]
fn losses() {
    let mut rng = SeededRng::new(7, 0);
    let mut ps = ParamSet::new();
    let lin = ps.add("logits", gendaug_core::numerics::Tensor::from_fn([4, 5], |_| rng.normal()));
    let targets = [0usize, 3, 4, 1];
    let err = check(ps.clone(), |g, p| {
        let l = g.param(p, lin);
        g.cross_entropy(l, &targets, 0.1)
    });
    assert!(err <= TOL, "cross entropy grad error {err}");

    let target: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
    let err = check(ps, |g, p| {
        let l = g.param(p, lin);
        g.squared_error(l, target.clone())
    });
    assert!(err <= TOL, "squared error grad error {err}");
}

#[test]
fn dropout_with_fixed_mask() {
    let mut rng = SeededRng::new(8, 0);
    let mut ps = ParamSet::new();
    let xin = ps.add("x", gendaug_core::numerics::Tensor::from_fn([3, 4], |_| rng.normal()));
    let keep: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    let err = check(ps, |g, p| {
        let x = g.param(p, xin);
        let y = g.dropout(x, &keep, 0.25);
        probe(g, y, 8)
    });
    assert!(err <= TOL, "dropout grad error {err}");
}

fn denoiser_loss_check(config: DenoiserConfig, lowres: bool) -> f64 {
    let model = Denoiser::<f64>::new(config.clone(), &mut SeededRng::new(10, 0)).unwrap();
    let schedule = build_schedule(&ScheduleKind::cosine(), 50).unwrap();
    let n = 3;
    let d = config.item_shape.len();
    let mut rng = SeededRng::new(11, 0);
    let x0: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut cond = Conditioning::classes(&[0, 1, 2]);
    if lowres {
        let low: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        cond = cond.with_lowres(low, vec![0.0, 0.2, 0.45]);
    }
    let theta = model.params().flatten();
    grad_check(
        |p| {
            let mut local = model.clone();
            local.params_mut().load_flat(p).unwrap();
            let (loss, grads) =
                training_loss(&local, &x0, &cond, &schedule, 0.3, &mut SeededRng::new(12, 0)).unwrap();
            Ok((loss, grads.flatten(local.params())))
        },
        &theta,
        1e-4,
    )
    .unwrap()
}

/// The end-to-end losses sum many terms, so the difference step is larger
/// than in the per-layer checks to keep round-off below the tolerance.
#[test]
fn training_loss_end_to_end() {
    let err = denoiser_loss_check(DenoiserConfig::mlp(3, 3, 8), false);
    assert!(err <= TOL, "mlp denoiser grad error {err}");
    let mut unet = DenoiserConfig::unet(8, 2, 3, [4, 8]);
    unet.architecture = Architecture::UNet { widths: [4, 8], groups: 2 };
    unet.embed_dim = 6;
    let err = denoiser_loss_check(unet.clone(), false);
    assert!(err <= TOL, "u-net denoiser grad error {err}");
    unet.lowres_conditioning = true;
    let err = denoiser_loss_check(unet, true);
    assert!(err <= TOL, "super-resolution denoiser grad error {err}");
}
