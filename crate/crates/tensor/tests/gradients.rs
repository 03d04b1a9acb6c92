//! Central finite differences against the analytic backward pass.
//!
//! The networks are piecewise linear, so with a squared-error loss each
//! parameter slice is piecewise quadratic and a central difference is exact
//! as long as no ReLU or pooling decision flips inside `±h`. The oracle
//! checks the activation pattern at both probes and shrinks `h` when it
//! changes.

use depthgaze_tensor::{Layer, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

fn loss(net: &Network, x: &Tensor, target: &Tensor) -> (f64, (Vec<bool>, Vec<usize>)) {
    let (y, trace) = net.forward_traced(x).unwrap();
    let l = y
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    (l, trace.activation_pattern())
}

fn analytic(net: &Network, x: &Tensor, target: &Tensor) -> (Vec<Tensor>, Tensor) {
    let (y, trace) = net.forward_traced(x).unwrap();
    let n = y.len() as f64;
    let up = Tensor::from_fn(y.shape(), |i| 2.0 * (y.data()[i] - target.data()[i]) / n);
    let (g, gx) = net.backward(&trace, &up).unwrap();
    (g.0, gx)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central difference of `f` at `v`, shrinking `h` until the activation
/// pattern is the same at both probes.
fn central(mut f: impl FnMut(f64) -> (f64, (Vec<bool>, Vec<usize>)), v: f64) -> f64 {
    let base = f(v).1;
    let mut h = 1e-5;
    loop {
        let (lp, pp) = f(v + h);
        let (lm, pm) = f(v - h);
        if (pp == base && pm == base) || h < 1e-10 {
            return (lp - lm) / (2.0 * h);
        }
        h /= 10.0;
    }
}

fn check(net: &Network, input_shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(input_shape, |_| rng.random_range(-1.0..1.0));
    let out_shape = net.forward(&x).unwrap().shape().to_vec();
    let target = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let (grads, gx) = analytic(net, &x, &target);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (pi, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.parameters().nth(pi).unwrap().data()[i];
            let num = central(
                |v| {
                    probe.parameters_mut().nth(pi).unwrap().data_mut()[i] = v;
                    loss(&probe, &x, &target)
                },
                orig,
            );
            probe.parameters_mut().nth(pi).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        let num = central(
            |v| {
                xp.data_mut()[i] = v;
                loss(net, &xp, &target)
            },
            x.data()[i],
        );
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    worst
}

fn nets() -> Vec<(&'static str, Network, Vec<usize>)> {
    vec![
        ("conv3", Network::new(vec![Layer::conv(2, 3, 3)]), vec![2, 5, 4]),
        ("conv5", Network::new(vec![Layer::conv(3, 2, 5)]), vec![3, 6, 6]),
        ("dense", Network::new(vec![Layer::dense(12, 5)]), vec![3, 2, 2]),
        ("relu", Network::new(vec![Layer::conv(1, 2, 3), Layer::Relu]), vec![1, 4, 4]),
        (
            "maxpool",
            Network::new(vec![Layer::conv(2, 2, 3), Layer::MaxPool2x2]),
            vec![2, 4, 6],
        ),
        (
            "unpool",
            Network::new(vec![Layer::Unpool2x2, Layer::conv(2, 1, 3)]),
            vec![2, 3, 2],
        ),
        (
            "encoder-decoder",
            Network::new(vec![
                Layer::conv(3, 2, 5),
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::conv(2, 3, 3),
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::conv(3, 3, 3),
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Reshape(vec![3 * 2 * 1]),
                Layer::dense(6, 8),
                Layer::Relu,
                Layer::dense(8, 6),
                Layer::Relu,
                Layer::Reshape(vec![3, 2, 1]),
                Layer::Unpool2x2,
                Layer::conv(3, 3, 3),
                Layer::Relu,
                Layer::Unpool2x2,
                Layer::conv(3, 2, 3),
                Layer::Relu,
                Layer::Unpool2x2,
                Layer::conv(2, 1, 5),
            ]),
            vec![3, 16, 8],
        ),
    ]
}

#[test]
fn every_layer_matches_finite_differences() {
    for (name, mut net, shape) in nets() {
        for seed in 0..5u64 {
            net.init_glorot(seed * 31 + 1);
            // non-zero biases so bias gradients are exercised away from 0
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for p in net.parameters_mut().filter(|p| p.shape().len() == 1) {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
            let worst = check(&net, &shape, seed);
            assert!(worst < REL_TOL, "{name} seed {seed}: relative error {worst:e}");
        }
    }
}
