//! Finite-difference checks of every analytic backward pass.
//!
//! Checks run on the `f64` instantiation of the layers so central differences
//! with eps = 1e-3 resolve the gradient to well below the 1e-3 tolerance.

use devgan::gradcheck::{finite_diff_grad, max_relative_error};
use devgan::kernels::Padding;
use devgan::nn::activation::{apply_activation, Activation};
use devgan::nn::loss::{fused_logit_grad, loss, LossKind, Target};
use devgan::nn::{LayerSpec, Mode, Network};
use devgan::{Rng, Tensor};

pub const EPS: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// Inputs in [-2, 2] kept at least 0.05 away from zero (activation kinks).
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform_range(0.05, 2.0);
        if rng.bernoulli(0.5) {
            v
        } else {
            -v
        }
    })
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the input gradient and every parameter
/// gradient of `net`, for the scalar `sum(r * net(x))` with random `r`.
pub fn check_network(mut net: Network<f64>, x: Tensor<f64>, seed: u64) -> f64 {
    let dropout_seed = seed ^ 0xD0;
    let mut rng = Rng::new(seed);
    let out_shape = {
        let mut s = vec![x.batch()];
        s.extend_from_slice(net.output_shape());
        s
    };
    let r = uniform(&mut rng, &out_shape, -1.0, 1.0);

    let y = net
        .forward(&x, Mode::Train, &mut Rng::new(dropout_seed))
        .unwrap();
    assert_eq!(y.shape(), r.shape());
    let dx = net.backward(&r).unwrap();

    let eval = |net: &Network<f64>, x: &Tensor<f64>| {
        let mut probe = net.clone();
        let y = probe
            .forward(x, Mode::Train, &mut Rng::new(dropout_seed))
            .unwrap();
        project(&y, &r)
    };

    let numeric = finite_diff_grad(|xp| eval(&net, xp), &x, EPS).unwrap();
    let mut worst = max_relative_error(&dx, &numeric);

    for li in 0..net.layers().len() {
        for pi in 0..net.layers()[li].params().len() {
            let analytic = net.layers()[li].grads()[pi].clone();
            let p0 = net.layers()[li].params()[pi].clone();
            let numeric = finite_diff_grad(
                |pp| {
                    let mut probe = net.clone();
                    probe.layers_mut()[li].params_mut()[pi] = pp.clone();
                    eval(&probe, &x)
                },
                &p0,
                EPS,
            )
            .unwrap();
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
    }
    worst
}

fn single(input: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Network<f64> {
    Network::new(input, specs, rng).unwrap()
}

/// Randomize batchnorm gamma/beta so the check does not sit at gamma = 1.
fn jitter_params(net: &mut Network<f64>, rng: &mut Rng) {
    for layer in net.layers_mut() {
        if matches!(layer.spec(), LayerSpec::BatchNorm { .. }) {
            for p in layer.params_mut() {
                *p = uniform(rng, p.shape(), 0.5, 1.5);
            }
        }
    }
}

pub fn dense(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let net = single(&[8], vec![LayerSpec::dense(5)], &mut rng);
    let x = uniform(&mut rng, &[4, 8], -2.0, 2.0);
    check_network(net, x, seed)
}

pub fn conv2d(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for (padding, stride, k) in [
        (Padding::Same, (1, 1), 3),
        (Padding::Valid, (1, 1), 3),
        (Padding::Same, (2, 2), 2),
        (Padding::Valid, (2, 1), 2),
    ] {
        let net = single(
            &[5, 6, 2],
            vec![LayerSpec::Conv2d {
                filters: 3,
                kernel: (k, k),
                padding,
                stride,
            }],
            &mut rng,
        );
        let x = uniform(&mut rng, &[2, 5, 6, 2], -2.0, 2.0);
        worst = worst.max(check_network(net, x, seed));
    }
    worst
}

pub fn maxpool(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let net = single(&[4, 6, 2], vec![LayerSpec::maxpool(2, 2)], &mut rng);
    // Distinct values 0.01 apart so no window has a near tie.
    let mut values: Vec<f64> = (0..4 * 4 * 6 * 2).map(|i| -1.9 + 0.01 * i as f64).collect();
    rng.shuffle(&mut values);
    let x = Tensor::new(&[4, 4, 6, 2], values).unwrap();
    check_network(net, x, seed)
}

pub fn batchnorm(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    // dense features and conv channels
    for shape in [vec![6usize], vec![3, 3, 2]] {
        let mut net = single(&shape, vec![LayerSpec::batchnorm(0.8)], &mut rng);
        jitter_params(&mut net, &mut rng);
        let mut batch_shape = vec![4];
        batch_shape.extend(&shape);
        let x = uniform(&mut rng, &batch_shape, -2.0, 2.0);
        worst = worst.max(check_network(net, x, seed));
    }
    worst
}

pub fn dropout(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let net = single(&[8], vec![LayerSpec::dropout(0.25)], &mut rng);
    let x = uniform(&mut rng, &[4, 8], -2.0, 2.0);
    check_network(net, x, seed)
}

pub fn activations(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for act in [
        Activation::Relu,
        Activation::LeakyRelu { alpha: 0.2 },
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softmax,
    ] {
        let net = single(&[8], vec![LayerSpec::act(act)], &mut rng);
        let x = off_kink(&mut rng, &[4, 8]);
        worst = worst.max(check_network(net, x, seed));
    }
    worst
}

pub fn losses(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;

    // binary CE w.r.t. probabilities
    let p = uniform(&mut rng, &[4, 2], 0.05, 0.95);
    let y = Tensor::from_fn(&[4, 2], |_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
    let (_, g) = loss(LossKind::BinaryCe, &p, &Target::Dense(&y)).unwrap();
    let n = finite_diff_grad(|pp| loss(LossKind::BinaryCe, pp, &Target::Dense(&y)).unwrap().0, &p, EPS)
        .unwrap();
    worst = worst.max(max_relative_error(&g, &n));

    // categorical and sparse CE w.r.t. probabilities
    let logits = uniform(&mut rng, &[4, 5], -2.0, 2.0);
    let probs = apply_activation(Activation::Softmax, &logits);
    let labels: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
    let onehot = Tensor::from_fn(&[4, 5], |i| if labels[i / 5] == i % 5 { 1.0 } else { 0.0 });
    for (kind, target) in [
        (LossKind::CategoricalCe, Target::Dense(&onehot)),
        (LossKind::SparseCategoricalCe, Target::Sparse(&labels)),
    ] {
        // Central differences of ln p lose ~eps²/3p² relative accuracy, so
        // the probability-space check stays on p >= 0.1.
        let bounded = uniform(&mut rng, &[4, 5], 0.1, 0.9);
        let (_, g) = loss(kind, &bounded, &target).unwrap();
        let n = finite_diff_grad(|pp| loss(kind, pp, &target).unwrap().0, &bounded, EPS).unwrap();
        worst = worst.max(max_relative_error(&g, &n));

        // fused softmax + CE w.r.t. logits
        let fused = fused_logit_grad(kind, &probs, &target).unwrap();
        let n = finite_diff_grad(
            |lg| loss(kind, &apply_activation(Activation::Softmax, lg), &target).unwrap().0,
            &logits,
            EPS,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&fused, &n));
    }

    // fused sigmoid + binary CE w.r.t. logits
    let logits = uniform(&mut rng, &[4, 1], -2.0, 2.0);
    let y = Tensor::from_fn(&[4, 1], |_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
    let probs = apply_activation(Activation::Sigmoid, &logits);
    let fused = fused_logit_grad(LossKind::BinaryCe, &probs, &Target::Dense(&y)).unwrap();
    let n = finite_diff_grad(
        |lg| {
            loss(LossKind::BinaryCe, &apply_activation(Activation::Sigmoid, lg), &Target::Dense(&y))
                .unwrap()
                .0
        },
        &logits,
        EPS,
    )
    .unwrap();
    worst.max(max_relative_error(&fused, &n))
}

/// Two dense layers with batchnorm and a sigmoid head, differentiated end to
/// end through `backward_loss` (fused sigmoid + binary CE).
pub fn full_network(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut net = single(
        &[6],
        vec![
            LayerSpec::dense(5),
            LayerSpec::leaky_relu(0.2),
            LayerSpec::batchnorm(0.8),
            LayerSpec::dense(1),
            LayerSpec::act(Activation::Sigmoid),
        ],
        &mut rng,
    );
    jitter_params(&mut net, &mut rng);
    net.compile(
        devgan::nn::OptimizerConfig::Adam(devgan::nn::Adam::default()),
        LossKind::BinaryCe,
    )
    .unwrap();
    let x = uniform(&mut rng, &[4, 6], -2.0, 2.0);
    let y = Tensor::from_fn(&[4, 1], |i| (i % 2) as f64);

    let loss_at = |net: &Network<f64>, x: &Tensor<f64>| {
        let mut probe = net.clone();
        let p = probe.forward(x, Mode::Train, &mut Rng::new(0)).unwrap();
        loss(LossKind::BinaryCe, &p, &Target::Dense(&y)).unwrap().0
    };

    net.forward(&x, Mode::Train, &mut Rng::new(0)).unwrap();
    let (_, dx) = net.backward_loss(&Target::Dense(&y)).unwrap();
    let numeric = finite_diff_grad(|xp| loss_at(&net, xp), &x, EPS).unwrap();
    let mut worst = max_relative_error(&dx, &numeric);
    for li in 0..net.layers().len() {
        for pi in 0..net.layers()[li].params().len() {
            let analytic = net.layers()[li].grads()[pi].clone();
            let p0 = net.layers()[li].params()[pi].clone();
            let numeric = finite_diff_grad(
                |pp| {
                    let mut probe = net.clone();
                    probe.layers_mut()[li].params_mut()[pi] = pp.clone();
                    loss_at(&probe, &x)
                },
                &p0,
                EPS,
            )
            .unwrap();
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// Every check, as `(name, worst relative error)`.
pub fn suite(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("dense", dense(seed)),
        ("conv2d", conv2d(seed)),
        ("maxpool", maxpool(seed)),
        ("batchnorm", batchnorm(seed)),
        ("dropout", dropout(seed)),
        ("activations", activations(seed)),
        ("losses", losses(seed)),
        ("network", full_network(seed)),
    ]
}
