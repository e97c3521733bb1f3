use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varleak::compute::{Adam, Graph, LayerSpec, Mode, Tensor};
use varleak::gauss::{kl_to_standard_normal, standard_normal};
use varleak::models::{decode_bundle, encode_bundle, mine_ref, ArchConfig, ModelBundle, Preset};

fn desk(d_in: usize, d_z: usize) -> ModelBundle {
    ModelBundle::init(ArchConfig::new(Preset::DeskMlp, vec![d_in], d_z, 10, 3).unwrap(), 1)
}

fn random_x(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn fresh_encoder_is_the_prior() {
    let b = desk(12, 4);
    let x = random_x(5, 12, 0);
    let post = b.encode_mean(&x).unwrap();
    assert_eq!(post.z, post.mu);
    for i in 0..5 {
        let g = post.gaussian(i);
        assert!(g.mu().iter().all(|&m| m == 0.0) && g.sigma().iter().all(|&s| s == 1.0));
        assert_eq!(kl_to_standard_normal(&g), 0.0);
    }
}

#[test]
fn noise_changes_z_but_not_posterior() {
    let mut b = desk(12, 4);
    for name in b.phi.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>() {
        b.phi.value_mut(&name).unwrap().data_mut().iter_mut().for_each(|w| *w += 0.01);
    }
    let x = random_x(3, 12, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = b.encode(&x, &standard_normal(&[3, 4], &mut rng)).unwrap();
    let c = b.encode(&x, &standard_normal(&[3, 4], &mut rng)).unwrap();
    assert_eq!((&a.mu, &a.sigma), (&c.mu, &c.sigma));
    assert_ne!(a.z, c.z);
    assert!(b.encode(&x, &Tensor::zeros(&[3, 5])).is_err());
}

#[test]
fn decoder_outputs_distributions() {
    let mut b = desk(12, 4);
    let z = random_x(7, 4, 3).map(|v| 4.0 * v - 2.0);
    let p = b.decode_utility(&z).unwrap();
    for i in 0..7 {
        assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    b.arch.decoder.clone().zero_last_layer(&mut b.theta);
    let p = b.decode_utility(&z).unwrap();
    assert!(p.data().iter().all(|&q| (q - 0.1).abs() < 1e-15));
    assert!(b.decode_utility(&Tensor::zeros(&[2, 5])).is_err());
}

#[test]
fn discriminators_are_probabilities() {
    let mut b = desk(12, 4);
    let z = random_x(6, 4, 4).map(|v| 20.0 * v - 10.0);
    let d = b.discriminate_latent(&z).unwrap();
    assert!(d.data().iter().all(|&p| p > 0.0 && p < 1.0));
    b.arch.latent_disc.clone().zero_last_layer(&mut b.eta);
    assert!(b.discriminate_latent(&z).unwrap().data().iter().all(|&p| p == 0.5));
    b.arch.attr_disc.clone().zero_last_layer(&mut b.omega);
    let u = random_x(6, 10, 5);
    assert!(b.discriminate_attribute(&u).unwrap().data().iter().all(|&p| p == 0.5));
    assert!(b.discriminate_attribute(&Tensor::zeros(&[1, 3])).is_err());
}

fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn latent_discriminator_separates_clouds() {
    let mut b = desk(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = |rng: &mut ChaCha8Rng, shift: f64, n: usize| standard_normal(&[n, 2], rng).map(|v| 0.5 * v + shift);
    let adam = Adam::new(1e-3);
    for _ in 0..500 {
        let (pos, neg) = (cloud(&mut rng, 2.0, 64), cloud(&mut rng, -2.0, 64));
        let mut g = Graph::new();
        g.track(&b.eta);
        let (p, n) = (g.input(pos), g.input(neg));
        let lp = b.latent_disc_logits(&mut g, p, Mode::Train).unwrap();
        let ln_ = b.latent_disc_logits(&mut g, n, Mode::Train).unwrap();
        let a = g.log_sigmoid(lp);
        let neg_ln = g.scale(ln_, -1.0);
        let c = g.log_sigmoid(neg_ln);
        let (ma, mc) = (g.mean(a), g.mean(c));
        let sum = g.add(ma, mc).unwrap();
        let loss = g.scale(sum, -1.0);
        let grads = g.backward(loss).unwrap().for_set(&b.eta);
        adam.step(&mut b.eta, &grads).unwrap();
    }
    let pos = b.discriminate_latent(&cloud(&mut rng, 2.0, 500)).unwrap();
    let neg = b.discriminate_latent(&cloud(&mut rng, -2.0, 500)).unwrap();
    assert!(auc(pos.data(), neg.data()) >= 0.99);
}

#[test]
fn mine_ref_has_four_affine_layers() {
    let net = mine_ref(8, 3).unwrap();
    let widths: Vec<usize> = net
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Affine { fan_out, .. } => Some(*fan_out),
            _ => None,
        })
        .collect();
    assert_eq!(widths, vec![100, 100, 100, 1]);
    assert_eq!(net.input_shape, vec![11]);
    assert_eq!(net.layers.iter().filter(|l| matches!(l, LayerSpec::Elu { .. })).count(), 3);
}

#[test]
fn outputs_stay_finite_over_random_draws() {
    let x = random_x(4, 16, 6).map(|v| 10.0 * v - 5.0);
    let eps = standard_normal(&[4, 3], &mut ChaCha8Rng::seed_from_u64(0));
    for seed in 0..1000 {
        let mut b = ModelBundle::init(ArchConfig::new(Preset::DeskMlp, vec![16], 3, 10, 3).unwrap(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in b.phi.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>() {
            b.phi.value_mut(&name).unwrap().data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-3.0..3.0));
        }
        let post = b.encode(&x, &eps).unwrap();
        assert!(post.z.is_finite() && post.sigma.is_finite());
        assert!(b.decode_utility(&post.z).unwrap().is_finite());
        assert!(b.discriminate_latent(&post.z).unwrap().is_finite());
    }
}

#[test]
fn reference_presets_follow_tables() {
    let m = ArchConfig::new(Preset::MnistRef, vec![3, 28, 28], 8, 10, 3).unwrap();
    assert_eq!(m.trunk.output_shape().unwrap(), vec![32]);
    let kinds: Vec<&str> = m.trunk.layers.iter().map(|l| l.kind()).collect();
    assert_eq!(
        kinds,
        ["conv2d", "batch-norm", "leaky-relu", "conv2d", "batch-norm", "leaky-relu", "flatten", "affine", "batch-norm", "tanh"]
    );
    let b = ModelBundle::init(m, 0);
    let x = random_x(2, 3 * 28 * 28, 1).reshape(vec![2, 3, 28, 28]).unwrap();
    assert_eq!(b.encode_mean(&x).unwrap().mu.shape(), &[2, 8]);

    let c = ArchConfig::new(Preset::CelebaRef, vec![3, 64, 64], 16, 2, 2).unwrap();
    assert_eq!(c.trunk.layers.iter().filter(|l| l.kind() == "conv2d").count(), 5);
    assert_eq!(c.attr_disc.output_width().unwrap(), 1);
    let b = ModelBundle::init(c, 0);
    let x = random_x(2, 3 * 64 * 64, 2).reshape(vec![2, 3, 64, 64]).unwrap();
    assert_eq!(b.encode_mean(&x).unwrap().z.shape(), &[2, 16]);

    assert!(ArchConfig::new(Preset::MnistRef, vec![784], 8, 10, 3).is_err());
    assert!(ArchConfig::new(Preset::DeskMlp, vec![784], 0, 10, 3).is_err());
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let b = desk(12, 4);
    let bytes = encode_bundle(&b);
    assert_eq!(decode_bundle(&bytes).unwrap(), b);
    assert!(matches!(decode_bundle(&bytes[..bytes.len() - 3]), Err(varleak::Error::Truncated(_))));
    assert!(matches!(decode_bundle(b"VLDS...."), Err(varleak::Error::UnrecognizedFormat(_))));
    let mut v2 = bytes.clone();
    v2[4] = 9;
    assert!(matches!(decode_bundle(&v2), Err(varleak::Error::VersionMismatch { found: 9, .. })));
}
