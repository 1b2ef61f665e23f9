use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{self, STEP};

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn zero_weights_give_zero_logits() {
    let mut net = Network::build_classifier("t", Capacity::Teacher, [3, 16, 16], 2, 1).unwrap();
    for t in net.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::<f32>::new();
    let p = net.bind(&mut g, false);
    let x = g.constant(random_input(&[2, 3, 16, 16], 0));
    let out = net.forward(&mut g, &p, x).unwrap();
    assert!(g.value(out.logits).data().iter().all(|&v| v == 0.0));
}

#[test]
fn classifier_output_and_tap_shapes() {
    for (cap, tap) in [(Capacity::Teacher, [64, 4, 4]), (Capacity::Student, [16, 4, 4])] {
        let net = Network::build_classifier("n", cap, [3, 16, 16], 2, 1).unwrap();
        let (probs, taps) = net.forward_with_taps(&random_input(&[8, 3, 16, 16], 1)).unwrap();
        assert_eq!(probs.shape(), &[8, 2]);
        let ft = net.feature_tap();
        assert_eq!(ft.shape, tap);
        let mut want = vec![8];
        want.extend(tap);
        assert_eq!(taps[&ft.layer].shape(), want.as_slice());
    }
}

#[test]
fn classifier_rejects_single_class() {
    assert!(matches!(
        Network::build_classifier("n", Capacity::Student, [3, 16, 16], 1, 0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn teacher_student_parameter_ratio() {
    let t = Network::build_classifier("t", Capacity::Teacher, [3, 16, 16], 2, 0).unwrap();
    let s = Network::build_classifier("s", Capacity::Student, [3, 16, 16], 2, 0).unwrap();
    // teacher: 3·16·9+16 + 16·32·9+32 + 32·64·9+64 + 64·64·9+64 + 64·2+2
    assert_eq!(t.param_count(), 448 + 4640 + 18496 + 36928 + 130);
    // student: 3·8·9+8 + 8·16·9+16 + 16·2+2
    assert_eq!(s.param_count(), 224 + 1168 + 34);
    assert!(t.param_count() as f64 / s.param_count() as f64 >= 3.0);

    let ts = Network::build_segmenter("t", Capacity::Teacher, [1, 32, 32], 0).unwrap();
    let ss = Network::build_segmenter("s", Capacity::Student, [1, 32, 32], 0).unwrap();
    assert!(ss.param_count() < ts.param_count());
}

#[test]
fn segmenter_shapes_range_and_tap() {
    let net = Network::build_segmenter("s", Capacity::Teacher, [1, 16, 16], 3).unwrap();
    let (probs, taps) = net.forward_with_taps(&random_input(&[4, 1, 16, 16], 2)).unwrap();
    assert_eq!(probs.shape(), &[4, 1, 16, 16]);
    assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    assert_eq!(taps["dec1"].shape(), &[4, 16, 8, 8]);
    assert_eq!(net.feature_tap().shape, [16, 8, 8]);
}

#[test]
fn segmenter_rejects_indivisible_resolution() {
    assert!(Network::build_segmenter("s", Capacity::Student, [1, 18, 16], 0).is_err());
    assert!(Network::build_segmenter("s", Capacity::Student, [1, 16, 14], 0).is_err());
}

#[test]
fn segmenter_gradient_reaches_first_encoder_conv() {
    let net = Network::build_segmenter("s", Capacity::Student, [1, 16, 16], 4).unwrap();
    let mut g = Graph::<f32>::new();
    let p = net.bind(&mut g, true);
    let x = g.constant(random_input(&[2, 1, 16, 16], 3));
    let out = net.forward(&mut g, &p, x).unwrap();
    let probs = net.probabilities(&mut g, out.logits, 1.0).unwrap();
    let root = g.mean(probs);
    g.backward(root).unwrap();
    let grad = g.grad(p.get("enc1.w").unwrap()).unwrap();
    assert!(grad.iter().any(|&v| v != 0.0));
}

#[test]
fn taps_are_deterministic_and_do_not_perturb_output() {
    let net = Network::build_classifier("s", Capacity::Student, [3, 16, 16], 2, 5).unwrap();
    let x = random_input(&[3, 3, 16, 16], 4);
    let (p1, t1) = net.forward_with_taps(&x).unwrap();
    let (p2, t2) = net.forward_with_taps(&x).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(p1, p2);
    let plain = net.predict(&x).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&plain), bits(&p1));
}

#[test]
fn same_capacity_and_seed_give_identical_parameters() {
    let a = Network::build_classifier("s1", Capacity::Student, [3, 16, 16], 2, 42).unwrap();
    let b = Network::build_classifier("s2", Capacity::Student, [3, 16, 16], 2, 42).unwrap();
    assert!(a.params().bit_equal(b.params()));
    let c = Network::build_classifier("s3", Capacity::Student, [3, 16, 16], 2, 43).unwrap();
    assert!(!a.params().bit_equal(c.params()));
}

#[test]
fn unknown_tap_is_a_configuration_error() {
    let net = Network::build_segmenter("s", Capacity::Student, [1, 16, 16], 0).unwrap();
    assert!(net.tap("dec1").is_ok());
    assert!(matches!(net.tap("enc9"), Err(Error::Config(_))));
}

#[test]
fn forward_rejects_wrong_input_shape() {
    let net = Network::build_classifier("s", Capacity::Student, [3, 16, 16], 2, 0).unwrap();
    assert!(matches!(
        net.forward_with_taps(&Tensor::zeros(&[1, 1, 16, 16])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn adapter_maps_teacher_tap_to_student_shape() {
    let t = Network::build_classifier("t", Capacity::Teacher, [3, 16, 16], 2, 0).unwrap();
    let s = Network::build_classifier("s", Capacity::Student, [3, 16, 16], 2, 0).unwrap();
    let ad = AdapterBlock::new(&t.feature_tap(), &s.feature_tap(), 9).unwrap();
    let y = ad.adapt(&random_input(&[2, 64, 4, 4], 5)).unwrap();
    assert_eq!(y.shape(), &[2, 16, 4, 4]);
    assert!(matches!(
        ad.adapt(&Tensor::zeros(&[2, 32, 4, 4])),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn adapter_resamples_spatially() {
    let from = FeatureTap { network: "t".into(), layer: "x".into(), shape: [8, 8, 8] };
    let to = FeatureTap { network: "s".into(), layer: "y".into(), shape: [4, 4, 4] };
    let ad = AdapterBlock::new(&from, &to, 1).unwrap();
    assert_eq!(ad.adapt(&random_input(&[1, 8, 8, 8], 6)).unwrap().shape(), &[1, 4, 4, 4]);
    let up = AdapterBlock::new(&to, &from, 1).unwrap();
    assert_eq!(up.adapt(&random_input(&[1, 4, 4, 4], 6)).unwrap().shape(), &[1, 8, 8, 8]);
    let odd = FeatureTap { network: "s".into(), layer: "y".into(), shape: [4, 3, 3] };
    assert!(matches!(AdapterBlock::new(&from, &odd, 1), Err(Error::Config(_))));
}

#[test]
fn identity_adapter_is_identity() {
    let ad = AdapterBlock::identity([16, 4, 4]);
    let x = random_input(&[2, 16, 4, 4], 7);
    let y = ad.adapt(&x).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn adapter_gradient_matches_finite_differences() {
    let from = FeatureTap { network: "t".into(), layer: "x".into(), shape: [6, 4, 4] };
    let to = FeatureTap { network: "s".into(), layer: "y".into(), shape: [3, 2, 2] };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let ad = AdapterBlock::new(&from, &to, seed).unwrap();
        let x: Tensor<f64> = Tensor::from_fn(&[2, 6, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let w = ad.params().get("adapter.w").unwrap().cast::<f64>();
        let b: Tensor<f64> = Tensor::from_fn(&[3], |_| rng.gen_range(-0.5..0.5));
        let r = gradcheck::check(&[x, w, b], STEP, |g, v| {
            let p = Bound::from_vars(ad.params(), vec![v[1], v[2]])?;
            let y = ad.forward(g, &p, v[0])?;
            let y = g.square(y);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(r.worst() < 1e-3, "{:?}", r.rel_err);
    }
}

#[test]
fn network_checkpoint_roundtrip() {
    let net = Network::build_segmenter("s", Capacity::Student, [1, 16, 16], 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    checkpoint::save(net.params(), &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert!(net.params().bit_equal(&loaded));
    let mut other = Network::build_segmenter("s", Capacity::Student, [1, 16, 16], 12).unwrap();
    other.params_mut().load_from(&loaded).unwrap();
    assert!(other.params().bit_equal(net.params()));
    let teacher = Network::build_segmenter("t", Capacity::Teacher, [1, 16, 16], 0).unwrap();
    assert!(other.params_mut().load_from(teacher.params()).is_err());
}
