use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central-difference check of `build` (which maps the given leaves to a
/// scalar) against the analytic gradient of every leaf.
fn check<F>(inputs: Vec<Tensor<f64>>, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let root = build(&mut g, &vars);
    g.backward(root).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect();
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|x| g.constant(x.clone())).collect();
        let r = build(&mut g, &vars);
        g.value(r).item()
    };
    let eps = 1e-6;
    let mut worst = 0f64;
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let an = analytic[k].data()[j];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn conv_identity_kernel() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]));
    let w = g.constant(t(&[1, 1, 1, 1], &[1.]));
    let b = g.constant(t(&[1], &[0.]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn conv_overlap_counts() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, b, 1, 1).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[0], 4.0);
    assert_eq!(v[3], 4.0);
    assert_eq!(v[5], 9.0);
    assert_eq!(v[1], 6.0);
}

#[test]
fn conv_shape_errors_name_dimension() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    let err = g.conv2d(x, w, b, 1, 1).unwrap_err();
    assert!(alloc::format!("{err}").contains("channels"));
    let w2 = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(g.conv2d(x, w2, b, 1, 1).is_err());
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
        let ins = vec![rand_t(&mut rng, &[2, 3, 5, 5]), rand_t(&mut rng, &[4, 3, 3, 3]), rand_t(&mut rng, &[4])];
        let err = check(ins, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
            let s = g_slope(g, 4);
            let z = g.prelu(y, s).unwrap();
            g.sum(z).unwrap()
        });
        assert!(err < 1e-6, "stride {stride} pad {pad}: {err}");
    }
}

fn g_slope(g: &mut Graph<f64>, c: usize) -> Var {
    g.constant(Tensor::full(&[c], 0.3))
}

#[test]
fn prelu_definition_and_identity() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![2], vec![-2.0, 3.0]).unwrap());
    let s = g.constant(Tensor::new(vec![1], vec![0.25]).unwrap());
    let y = g.prelu(x, s).unwrap();
    assert_eq!(g.value(y).data(), &[-0.5, 3.0]);
    let one = g.constant(Tensor::new(vec![1], vec![1.0]).unwrap());
    let z = g.prelu(x, one).unwrap();
    assert_eq!(g.value(z).data(), g.value(x).data());
    let bad = g.constant(Tensor::zeros(&[2]));
    assert!(g.prelu(x, bad).is_err());
}

#[test]
fn prelu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&[2, 3, 4, 4], |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    });
    let err = check(vec![x, rand_t(&mut rng, &[3])], |g, v| {
        let y = g.prelu(v[0], v[1]).unwrap();
        let y2 = g.add(y, y).unwrap();
        let c = g.constant(Tensor::full(&[2, 3, 4, 4], 0.1));
        g.mse_loss(y2, c).unwrap()
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn depth_to_space_layout() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![1, 4, 1, 1], vec![1., 2., 3., 4.]).unwrap());
    let y = g.depth_to_space(x, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
    let id = g.depth_to_space(x, 1).unwrap();
    assert_eq!(g.value(id).data(), g.value(x).data());
    let odd = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
    assert!(g.depth_to_space(odd, 2).is_err());
}

#[test]
fn depth_to_space_round_trip_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_t(&mut rng, &[2, 8, 3, 2]);
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let y = g.depth_to_space(v, 2).unwrap();
    let back = space_to_depth(g.value(y), 2).unwrap();
    assert_eq!(back, x);
    let w = rand_t(&mut rng, &[2, 2, 6, 4]);
    let err = check(vec![x], move |g, v| {
        let y = g.depth_to_space(v[0], 2).unwrap();
        let c = g.constant(w.clone());
        g.mse_loss(y, c).unwrap()
    });
    assert!(err < 1e-6);
}

#[test]
fn concat_shapes_and_gradient() {
    let mut g = Graph::<f32>::new();
    let a = g.param(Tensor::full(&[1, 2, 4, 4], 1.0));
    let b = g.param(Tensor::full(&[1, 2, 4, 4], 2.0));
    let c = g.concat_channels(&[a, b]).unwrap();
    assert_eq!(g.value(c).shape(), &[1, 4, 4, 4]);
    let single = g.concat_channels(&[a]).unwrap();
    assert_eq!(g.value(single), g.value(a));
    let s = g.sum(c).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(a).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(g.grad(b).unwrap().data().iter().all(|&v| v == 1.0));
    let bad = g.constant(Tensor::zeros(&[1, 2, 3, 4]));
    assert!(g.concat_channels(&[a, bad]).is_err());
}

#[test]
fn mse_values() {
    let mut g = Graph::<f32>::new();
    let p = g.constant(Tensor::new(vec![2], vec![0., 0.]).unwrap());
    let q = g.constant(Tensor::new(vec![2], vec![1., 1.]).unwrap());
    let l = g.mse_loss(p, q).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    let z = g.mse_loss(p, p).unwrap();
    assert_eq!(g.value(z).item(), 0.0);
    let r = g.constant(Tensor::zeros(&[3]));
    assert!(g.mse_loss(p, r).is_err());
}

#[test]
fn softmax_ce_values() {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::zeros(&[3, 5]));
    let loss = g.softmax_cross_entropy(l, &[0, 2, 4]).unwrap();
    assert!((g.value(loss).item() - 5f64.ln()).abs() < 1e-12);
    let big = g.constant(t(&[1, 2], &[1000.0, -1000.0]));
    let loss = g.softmax_cross_entropy(big, &[0]).unwrap();
    assert!(g.value(loss).item().abs() < 1e-12);
    assert_eq!(
        g.softmax_cross_entropy(l, &[0, 1, 5]).unwrap_err(),
        Error::LabelOutOfRange { label: 5, classes: 5 }
    );
}

#[test]
fn softmax_ce_gradient_rows_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits = rand_t(&mut rng, &[4, 5]);
    let mut g = Graph::<f64>::new();
    let v = g.param(logits.clone());
    let l = g.softmax_cross_entropy(v, &[1, 0, 4, 2]).unwrap();
    g.backward(l).unwrap();
    for row in g.grad(v).unwrap().data().chunks(5) {
        assert!(row.iter().sum::<f64>().abs() < 1e-15);
    }
    let err = check(vec![logits], |g, v| g.softmax_cross_entropy(v[0], &[1, 0, 4, 2]).unwrap());
    assert!(err < 1e-6);
}

#[test]
fn pooling_dense_norm_upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ins = vec![
        rand_t(&mut rng, &[2, 4, 4, 6]),
        rand_t(&mut rng, &[4]),
        rand_t(&mut rng, &[4]),
        rand_t(&mut rng, &[3, 4]),
        rand_t(&mut rng, &[3]),
    ];
    let err = check(ins, |g, v| {
        let n = g.group_norm(v[0], v[1], v[2], 2).unwrap();
        let r = g.relu(n).unwrap();
        let u = g.upsample_bicubic(r, 8, 12).unwrap();
        let p = g.avg_pool(u, 2).unwrap();
        let q = g.global_avg_pool(p).unwrap();
        let d = g.dense(q, v[3], v[4]).unwrap();
        g.softmax_cross_entropy(d, &[2, 0]).unwrap()
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_basics() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::full(&[2, 3], 0.7));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::full(&[4], 0.25));
    let c = g.constant(Tensor::full(&[4], 0.25));
    let l = g.mse_loss(x, c).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));

    assert_eq!(g.backward(x).unwrap_err(), Error::NonScalarRoot(vec![4]));
}

#[test]
fn non_finite_rejected() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[2], f32::MAX));
    let err = g.add(x, x).unwrap_err();
    assert_eq!(err, Error::NonFinite { op: "add" });
}

#[test]
fn backward_is_replay_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[2, 2, 6, 6], |_| rng.random_range(-1.0..1.0)));
        let w = g.param(Tensor::from_fn(&[3, 2, 3, 3], |_| rng.random_range(-1.0..1.0)));
        let b = g.param(Tensor::zeros(&[3]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        g.grad(w).unwrap().clone()
    };
    assert_eq!(run(), run());
}
