use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{self, STEP};
use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.2..2.0))
}

/// Weighted sum with fixed random weights so every output element matters.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn assert_grad<F>(inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = gradcheck::check(inputs, STEP, f).unwrap();
    assert!(r.worst() < 1e-3, "relative errors {:?}", r.rel_err);
}

#[test]
fn tensor_shape_invariant() {
    assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
    assert!(matches!(
        Tensor::<f32>::new(&[2, 3], vec![0.0; 5]),
        Err(Error::Dimension { .. })
    ));
    assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::<f32>::new();
    let i2 = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let x = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = g.matmul(i2, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 1]);
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Dimension { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        assert_grad(&[a, b], |g, v| {
            let c = g.matmul(v[0], v[1])?;
            Ok(g.sum(c))
        });
    }
}

#[test]
fn conv2d_identity_kernel() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f32 - 4.0));
    let w = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv2d_all_ones() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn conv2d_output_extent_and_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 7, 5]));
    let w = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
    let y = g.conv2d(x, w, 2, 1).unwrap();
    // floor((7 + 2 - 3)/2) + 1 = 4, floor((5 + 2 - 3)/2) + 1 = 3
    assert_eq!(g.value(y).shape(), &[2, 4, 4, 3]);

    let big = g.constant(Tensor::zeros(&[1, 3, 9, 9]));
    assert!(matches!(g.conv2d(x, big, 1, 0), Err(Error::Dimension { .. })));
    assert!(matches!(g.conv2d(x, w, 0, 0), Err(Error::Contract(_))));
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for point in 0..10 {
        let x = rand_tensor(&mut rng, &[2, 3, 5, 5]);
        let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let (stride, pad) = if point % 2 == 0 { (1, 1) } else { (2, 0) };
        assert_grad(&[x, w], move |g, v| {
            let y = g.conv2d(v[0], v[1], stride, pad)?;
            probe(g, y, 99)
        });
    }
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

    let m = g.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let mean = g.mean(m);
    assert_eq!(g.value(mean).item(), 2.0);
    assert!(g.value(mean).shape().is_empty());
}

#[test]
fn sum_of_squares_gradient_is_two_x() {
    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let s = g.square(x);
    let root = g.sum(s);
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn broadcasting_only_against_scalars() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    let s = g.constant(Tensor::scalar(2.0));
    let y = g.add(a, s).unwrap();
    assert_eq!(g.value(y).data(), &[2.0; 6]);
}

#[test]
fn log_clamps_non_positive_inputs() {
    let mut g = Graph::<f64>::new();
    let x = g.param(&Tensor::new(&[3], vec![0.0, -1.0, 1.0]).unwrap());
    let y = g.log(x);
    let v = g.value(y).data().to_vec();
    assert_eq!(v[0], EPS_LOG.ln());
    assert_eq!(v[1], EPS_LOG.ln());
    assert_eq!(v[2], 0.0);
    assert!(v.iter().all(|x| x.is_finite()));
    let root = g.sum(y);
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, &[2, 3, 4, 4]);
        let b = rand_tensor(&mut rng, &[2, 3, 4, 4]);
        let p = positive_tensor(&mut rng, &[2, 3, 4, 4]);
        let s = Tensor::scalar(rng.gen_range(0.5..1.5));

        assert_grad(&[a.clone(), b.clone()], |g, v| {
            let x = g.add(v[0], v[1])?;
            let y = g.sub(x, v[1])?;
            let z = g.mul(y, v[1])?;
            probe(g, z, 1)
        });
        assert_grad(&[a.clone(), p.clone()], |g, v| {
            let y = g.div(v[0], v[1])?;
            probe(g, y, 2)
        });
        assert_grad(&[a.clone(), s.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            let z = g.add(v[1], y)?;
            probe(g, z, 3)
        });
        assert_grad(std::slice::from_ref(&a), |g, v| {
            let y = g.scale(v[0], -1.7);
            let y = g.add_scalar(y, 0.3);
            let y = g.relu(y);
            let y = g.exp(y);
            let y = g.square(y);
            probe(g, y, 4)
        });
        assert_grad(std::slice::from_ref(&p), |g, v| {
            let y = g.log(v[0]);
            let z = g.powf(v[0], 2.5);
            let w = g.add(y, z)?;
            probe(g, w, 5)
        });
        assert_grad(std::slice::from_ref(&a), |g, v| {
            let y = g.sigmoid_t(v[0], 2.0)?;
            let m = g.mean(y);
            let s = g.sum_per_sample(y)?;
            let t = g.sum(s);
            let u = g.mul(m, t)?;
            Ok(u)
        });
        assert_grad(std::slice::from_ref(&a), |g, v| {
            let y = g.max_pool2d(v[0], 2)?;
            let y = g.upsample_nearest2d(y, 2)?;
            let y = g.mean_spatial(y)?;
            probe(g, y, 6)
        });
        assert_grad(&[a.clone(), b.clone()], |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            let y = g.reshape(y, &[2, 6 * 16])?;
            let y = g.softmax(y, 2.0)?;
            probe(g, y, 7)
        });
        let bias_c = rand_tensor(&mut rng, &[3]);
        let m = rand_tensor(&mut rng, &[4, 5]);
        let bias_r = rand_tensor(&mut rng, &[5]);
        assert_grad(&[a.clone(), bias_c, m, bias_r], |g, v| {
            let y = g.add_channel_bias(v[0], v[1])?;
            let z = g.add_row_bias(v[2], v[3])?;
            let (py, pz) = (probe(g, y, 8)?, probe(g, z, 9)?);
            g.add(py, pz)
        });
    }
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::zeros(&[4]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_linearity_and_accumulation() {
    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::from_fn(&[4], |i| i as f32));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::from_fn(&[4], |i| i as f32));
    let s = g.sum(x);
    let s3 = g.scale(s, 3.0);
    g.backward(s3).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0; 4]);
    g.backward(s3).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0; 4]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn every_reachable_trainable_node_gets_a_grad() {
    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::full(&[3], 0.5));
    let c = g.constant(Tensor::full(&[3], 2.0));
    let y = g.mul(x, c).unwrap();
    let z = g.exp(y);
    let root = g.sum(z);
    g.backward(root).unwrap();
    for v in [x, y, z, root] {
        assert!(g.grad(v).is_some());
    }
    assert!(g.grad(c).is_none());
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::<f32>::new();
    let x = g.param(&Tensor::full(&[2], 1.0));
    let y = g.square(x);
    let d = g.detach(y);
    let p = g.mul(d, x).unwrap();
    let root = g.sum(p);
    g.backward(root).unwrap();
    // d/dx [stop(x²) · x] = x² = 1, not 3x² = 3
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 8, 8], |_| rng.gen_range(-1.0..1.0)));
        let w = g.param(&Tensor::from_fn(&[4, 3, 3, 3], |_| rng.gen_range(-1.0..1.0)));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        let y = g.relu(y);
        let y = g.max_pool2d(y, 2).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn three_layer_net_chain_rule_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let x = rand_tensor(&mut rng, &[2, 2, 6, 6]);
        let w1 = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b1 = rand_tensor(&mut rng, &[3]);
        let w2 = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let w3 = rand_tensor(&mut rng, &[4, 2]);
        assert_grad(&[x, w1, b1, w2, w3], |g, v| {
            let h = g.conv2d(v[0], v[1], 1, 1)?;
            let h = g.add_channel_bias(h, v[2])?;
            let h = g.relu(h);
            let h = g.max_pool2d(h, 2)?;
            let h = g.conv2d(h, v[3], 1, 1)?;
            let h = g.relu(h);
            let h = g.mean_spatial(h)?;
            let z = g.matmul(h, v[4])?;
            let p = g.softmax(z, 1.0)?;
            let l = g.log(p);
            probe(g, l, 10)
        });
    }
}
