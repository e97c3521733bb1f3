use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use varleak::compute::{LayerSpec, Network, Tensor};
use varleak::data::{DiscreteJoint, Features, LabeledDataset};
use varleak::leakage::*;
use varleak::models::{adversary_net, one_hot, ArchConfig, ModelBundle, Preset};

fn gaussian_column(n: usize, mean: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![n, 1], (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn draw_labels(n: usize, probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let w = WeightedIndex::new(probs).unwrap();
    (0..n).map(|_| w.sample(rng)).collect()
}

fn noise_codes(labels: Vec<usize>, d: usize, rng: &mut ChaCha8Rng) -> Codes {
    let n = labels.len();
    let z = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    Codes::deterministic(z, labels)
}

#[test]
fn adversary_reads_a_copied_attribute() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let make = |n, rng: &mut ChaCha8Rng| {
        let s = draw_labels(n, &[1.0; 3], rng);
        Codes::deterministic(one_hot(&s, 3), s)
    };
    let (tr, te) = (make(3000, &mut rng), make(1000, &mut rng));
    let rep = fit_adversary(adversary_net(3, 3).unwrap(), &tr, &te, 3, &AttackConfig::default()).unwrap();
    assert!(rep.accuracy >= 0.99, "{}", rep.accuracy);
    assert!(rep.cross_entropy < 0.05);
}

#[test]
fn adversary_on_independent_codes_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tr = noise_codes(draw_labels(10_000, &[1.0; 3], &mut rng), 4, &mut rng);
    let te = noise_codes(draw_labels(10_000, &[1.0; 3], &mut rng), 4, &mut rng);
    let cfg = AttackConfig { epochs: 5, ..Default::default() };
    let rep = fit_adversary(adversary_net(4, 3).unwrap(), &tr, &te, 3, &cfg).unwrap();
    assert!((rep.accuracy - 1.0 / 3.0).abs() <= 0.05, "{}", rep.accuracy);
    // Conditional entropy cannot beat H(S) = ln 3 by much on independent codes.
    assert!(rep.cross_entropy > 3f64.ln() - 0.05);
}

#[test]
fn adversary_on_biased_independent_codes_finds_the_majority() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let biased = [0.5, 1.0 / 6.0, 1.0 / 3.0];
    let tr = noise_codes(draw_labels(10_000, &biased, &mut rng), 4, &mut rng);
    let te = noise_codes(draw_labels(10_000, &biased, &mut rng), 4, &mut rng);
    let cfg = AttackConfig { epochs: 5, ..Default::default() };
    let rep = fit_adversary(adversary_net(4, 3).unwrap(), &tr, &te, 3, &cfg).unwrap();
    assert!((rep.accuracy - 0.5).abs() <= 0.05, "{}", rep.accuracy);
}

#[test]
fn data_ratio_limits_the_pool_and_is_validated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tr = noise_codes(draw_labels(200, &[1.0; 3], &mut rng), 2, &mut rng);
    let te = noise_codes(draw_labels(50, &[1.0; 3], &mut rng), 2, &mut rng);
    let cfg = AttackConfig { data_ratio: 0.1, epochs: 1, ..Default::default() };
    let rep = fit_adversary(adversary_net(2, 3).unwrap(), &tr, &te, 3, &cfg).unwrap();
    assert_eq!(rep.train_examples, 20);
    // A pool of one example lacks classes; the attack still runs.
    let tiny = AttackConfig { data_ratio: 0.001, epochs: 1, ..Default::default() };
    assert_eq!(fit_adversary(adversary_net(2, 3).unwrap(), &tr, &te, 3, &tiny).unwrap().train_examples, 1);
    for bad in [0.0, -0.5, 1.5] {
        let cfg = AttackConfig { data_ratio: bad, ..Default::default() };
        assert!(fit_adversary(adversary_net(2, 3).unwrap(), &tr, &te, 3, &cfg).is_err());
    }
    assert!(fit_adversary(adversary_net(3, 3).unwrap(), &tr, &te, 3, &AttackConfig::default()).is_err());
}

#[test]
fn attack_leaves_the_encoder_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 60;
    let values = (0..n * 5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ds = LabeledDataset::new(Features::Vector { dim: 5, values }, vec![0; n], draw_labels(n, &[1.0; 3], &mut rng), 2, 3)
        .unwrap();
    let b = ModelBundle::init(ArchConfig::new(Preset::DeskMlp, vec![5], 4, 2, 3).unwrap(), 5);
    let before = b.clone();
    let cfg = AttackConfig { epochs: 2, ..Default::default() };
    train_adversary(&b, &ds, &ds, &cfg).unwrap();
    assert!(b.phi.values_identical(&before.phi));
}

fn quick_mine(seed: u64, steps: usize) -> MineConfig {
    MineConfig { steps, seed, ..Default::default() }
}

#[test]
fn mine_on_independent_pairs_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = gaussian_column(10_000, 0.0, &mut rng);
    let a = draw_labels(10_000, &[1.0; 4], &mut rng);
    let est = mine_estimate_labels(&z, &a, 4, &quick_mine(6, 1500)).unwrap();
    assert!(est.value.abs() <= 0.05, "{}", est.value);
    assert_eq!((est.estimator, est.samples, est.steps), (EstimatorTag::Mine, 10_000, 1500));
}

#[test]
fn mine_on_a_deterministic_label_reaches_its_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = Tensor::new(vec![10_000, 1], (0..10_000).map(|_| rng.gen_range(0.0..4.0)).collect()).unwrap();
    let a: Vec<usize> = z.data().iter().map(|v| *v as usize).collect();
    let est = mine_estimate_labels(&z, &a, 4, &quick_mine(7, 3000)).unwrap();
    assert!((est.value - 4f64.ln()).abs() <= 0.10, "{}", est.value);
}

#[test]
fn mine_degenerate_and_invalid_inputs() {
    let z = Tensor::zeros(&[10, 2]);
    let est = mine_estimate_labels(&z, &[1; 10], 3, &quick_mine(0, 10)).unwrap();
    assert_eq!(est.value, 0.0);
    assert!(mine_estimate_labels(&z, &[0; 9], 3, &quick_mine(0, 10)).is_err());
    assert!(mine_estimate_labels(&z, &[5; 10], 3, &quick_mine(0, 10)).is_err());
    assert!(mine_estimate(&Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1]), &quick_mine(0, 10)).is_err());
}

#[test]
fn uninformed_discriminator_gives_zero() {
    let r = density_ratio_kl(&[0.5; 17]).unwrap();
    assert_eq!((r.value, r.clamped), (0.0, 0));
    let r = density_ratio_kl(&[0.0, 1.0]).unwrap();
    assert_eq!(r.clamped, 2);
    assert!(r.value.abs() < 1e-9);
    assert!(density_ratio_kl(&[]).is_err());
}

fn logistic_net(d: usize) -> Network {
    Network::new(
        "d",
        vec![d],
        vec![LayerSpec::affine(d, 16), LayerSpec::Tanh, LayerSpec::affine(16, 1), LayerSpec::Sigmoid],
    )
    .unwrap()
}

#[test]
fn trained_discriminator_recovers_gaussian_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = gaussian_column(10_000, 1.0, &mut rng);
    let q = gaussian_column(10_000, 0.0, &mut rng);
    let net = logistic_net(1);
    let params = fit_discriminator(&net, &p, &q, DiscriminatorConfig { seed: 8, ..Default::default() }).unwrap();
    let d = net.eval(&params, &p).unwrap();
    let est = density_ratio_kl(d.data()).unwrap().value;
    assert!((est - 0.5).abs() <= 0.1, "{est}");
}

fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|v| v / t).collect()
}

#[test]
fn discrete_surrogate_complexity_matches_exact_information() {
    let (nx, nz, n) = (6, 5, 20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let channel: Vec<Vec<f64>> = (0..nx).map(|_| random_simplex(nz, &mut rng)).collect();
    let px = vec![1.0 / nx as f64; nx];
    let q = vec![1.0 / nz as f64; nz];
    let kl_upper: f64 = channel.iter().zip(&px).map(|(row, w)| w * kl_discrete(row, &q).unwrap()).sum();

    let weights: Vec<f64> = px.iter().zip(&channel).flat_map(|(w, row)| row.iter().map(move |c| w * c)).collect();
    let joint = DiscreteJoint::new(vec![nx, nz], weights).unwrap();
    let exact = exact_mi(&joint, &[0], &[1]).unwrap().nats;

    let posterior: Vec<usize> = (0..n)
        .map(|_| {
            let x = rng.gen_range(0..nx);
            WeightedIndex::new(&channel[x]).unwrap().sample(&mut rng)
        })
        .collect();
    let prior: Vec<usize> = (0..n).map(|_| rng.gen_range(0..nz)).collect();
    let net = Network::new("d", vec![nz], vec![LayerSpec::affine(nz, 1), LayerSpec::Sigmoid]).unwrap();
    let pos = one_hot(&posterior, nz);
    let cfg = DiscriminatorConfig { steps: 3000, lr: 1e-2, seed: 9, ..Default::default() };
    let params = fit_discriminator(&net, &pos, &one_hot(&prior, nz), cfg).unwrap();
    let correction = density_ratio_kl(net.eval(&params, &pos).unwrap().data()).unwrap().value;
    let corrected = kl_upper - correction;
    assert!((corrected - exact).abs() <= 0.05, "{corrected} vs {exact}");
}

#[test]
fn prior_encoder_has_zero_complexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 40;
    let values = (0..n * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ds = LabeledDataset::new(Features::Vector { dim: 6, values }, vec![0; n], vec![1; n], 2, 2).unwrap();
    let mut b = ModelBundle::init(ArchConfig::new(Preset::DeskMlp, vec![6], 3, 2, 2).unwrap(), 10);
    b.arch.latent_disc.clone().zero_last_layer(&mut b.eta);
    let c = complexity_estimate(&b, &ds, 1).unwrap();
    assert_eq!((c.kl_upper, c.correction, c.corrected), (0.0, 0.0, 0.0));
}

#[test]
fn sharper_posteriors_cost_more() {
    use varleak::gauss::{kl_to_standard_normal, DiagonalGaussian};
    let kl = |s: f64| kl_to_standard_normal(&DiagonalGaussian::new(vec![0.2; 4], vec![s; 4]).unwrap());
    assert!(kl(1e-3) > kl(1e-2));
    assert!(kl(1e-2) > kl(1e-1));
}

#[test]
fn markov_identity_over_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (ns, nx, nz) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let p_sx = DiscreteJoint::new(vec![ns, nx], random_simplex(ns * nx, &mut rng)).unwrap();
        let channel: Vec<Vec<f64>> = (0..nx).map(|_| random_simplex(nz, &mut rng)).collect();
        let r = markov_identity_check(&p_sx, &channel).unwrap();
        assert!(r.residual.abs() <= 1e-10, "{r:?}");
        assert!(r.dpi_margin >= -1e-10, "{r:?}");
    }
}

#[test]
fn identity_channel_preserves_information() {
    let p_sx = DiscreteJoint::new(vec![2, 3], vec![0.3, 0.1, 0.1, 0.05, 0.2, 0.25]).unwrap();
    let channel: Vec<Vec<f64>> = (0..3).map(|x| (0..3).map(|z| f64::from(u8::from(x == z))).collect()).collect();
    let r = markov_identity_check(&p_sx, &channel).unwrap();
    let i_sx = exact_mi(&p_sx, &[0], &[1]).unwrap().nats;
    assert!((r.i_sz - i_sx).abs() < 1e-12);
    assert!(markov_identity_check(&p_sx, &[vec![0.5, 0.6], vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
    assert!(markov_identity_check(&p_sx, &channel[..2]).is_err());
}

fn joint_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(a, b)| {
        (Just(a), Just(b), prop::collection::vec(0.0f64..1.0, a * b)).prop_filter("mass", |(_, _, w)| w.iter().sum::<f64>() > 1e-3)
    })
}

proptest! {
    #[test]
    fn exact_mi_is_symmetric_and_bounded((a, b, w) in joint_strategy()) {
        let joint = DiscreteJoint::from_weights(vec![a, b], w).unwrap();
        let ab = exact_mi(&joint, &[0], &[1]).unwrap();
        let ba = exact_mi(&joint, &[1], &[0]).unwrap();
        prop_assert!((ab.nats - ba.nats).abs() <= 1e-12);
        prop_assert!((ab.bits - ab.nats / 2f64.ln()).abs() <= 1e-12);
        let ha = joint.marginal(&[0]).unwrap().entropy();
        let hb = joint.marginal(&[1]).unwrap().entropy();
        prop_assert!(ab.nats >= -1e-12);
        prop_assert!(ab.nats <= ha.min(hb) + 1e-12);
    }

    #[test]
    fn bayes_discriminator_reproduces_discrete_kl(
        raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..12)
    ) {
        let tp: f64 = raw.iter().map(|r| r.0).sum();
        let tq: f64 = raw.iter().map(|r| r.1).sum();
        let p: Vec<f64> = raw.iter().map(|r| r.0 / tp).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1 / tq).collect();
        let d = bayes_discriminator(&p, &q);
        let est = density_ratio_kl_expected(&d, &p).unwrap().value;
        prop_assert!((est - kl_discrete(&p, &q).unwrap()).abs() <= 1e-10);
    }
}
