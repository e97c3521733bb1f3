use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varleak::compute::{Graph, Tensor};
use varleak::gauss::*;

fn random_gaussian(rng: &mut ChaCha8Rng) -> DiagonalGaussian {
    let d = rng.gen_range(1..=16);
    let mu = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let sigma = (0..d).map(|_| rng.gen_range(0.3..2.0)).collect();
    DiagonalGaussian::new(mu, sigma).unwrap()
}

#[test]
fn closed_form_kl_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 20 {
        let p = random_gaussian(&mut rng);
        let closed = kl_to_standard_normal(&p);
        // Near-zero divergences make a relative tolerance meaningless.
        if closed < 0.05 {
            continue;
        }
        let prior = PriorSpec::new(p.dim());
        let mc = mc_kl(|r| p.sample(r), |z| p.log_density(z), |z| prior.log_density(z), 1_000_000, &mut rng).unwrap();
        assert!((mc - closed).abs() <= 0.02 * closed, "dim {}: mc {mc} closed {closed}", p.dim());
        checked += 1;
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..20 {
        let p = random_gaussian(&mut rng);
        let (gm, gs) = kl_to_standard_normal_grad(&p);
        for i in 0..p.dim() {
            let nudge = |dm: f64, ds: f64| {
                let mut mu = p.mu().to_vec();
                let mut sigma = p.sigma().to_vec();
                mu[i] += dm;
                sigma[i] += ds;
                kl_to_standard_normal(&DiagonalGaussian::new(mu, sigma).unwrap())
            };
            let num_m = (nudge(h, 0.0) - nudge(-h, 0.0)) / (2.0 * h);
            let num_s = (nudge(0.0, h) - nudge(0.0, -h)) / (2.0 * h);
            assert!((num_m - gm[i]).abs() <= 1e-6 * gm[i].abs().max(1.0));
            assert!((num_s - gs[i]).abs() <= 1e-6 * gs[i].abs().max(1.0));
        }
    }
}

#[test]
fn graph_kl_gradient_matches_analytic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_gaussian(&mut rng);
    let d = p.dim();
    let mut set = varleak::compute::ParamSet::new("post");
    set.insert("mu", Tensor::new(vec![1, d], p.mu().to_vec()).unwrap(), true);
    set.insert("ls", Tensor::new(vec![1, d], p.sigma().iter().map(|s| s.ln()).collect()).unwrap(), true);
    let mut g = Graph::new();
    g.track(&set);
    let mu = g.param(&set, "mu").unwrap();
    let ls = g.param(&set, "ls").unwrap();
    let rows = kl_graph(&mut g, mu, ls).unwrap();
    let loss = g.mean(rows);
    assert!((g.value(loss).item() - kl_to_standard_normal(&p)).abs() < 1e-12);
    let grads = g.backward(loss).unwrap().for_set(&set);
    let (gm, gs) = kl_to_standard_normal_grad(&p);
    for i in 0..d {
        assert!((grads.get("mu").unwrap().data()[i] - gm[i]).abs() < 1e-12);
        // d/d(ln σ) = σ · d/dσ.
        let want = p.sigma()[i] * gs[i];
        assert!((grads.get("ls").unwrap().data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn graph_reparameterization_matches_scalar_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_gaussian(&mut rng);
    let d = p.dim();
    let eps = standard_normal(&[1, d], &mut rng);
    let mut g = Graph::inference();
    let mu = g.input(Tensor::new(vec![1, d], p.mu().to_vec()).unwrap());
    let ls = g.input(Tensor::new(vec![1, d], p.sigma().iter().map(|s| s.ln()).collect()).unwrap());
    let lv = reparam_graph(&mut g, mu, ls, &eps).unwrap();
    let want = reparam_sample(&p, eps.data()).unwrap();
    for (a, b) in g.value(lv.z).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(reparam_graph(&mut g, mu, ls, &Tensor::zeros(&[2, d])).is_err());
}

#[test]
fn log_sigma_is_clamped() {
    let mut g = Graph::inference();
    let mu = g.input(Tensor::zeros(&[1, 2]));
    let ls = g.input(Tensor::new(vec![1, 2], vec![-50.0, 50.0]).unwrap());
    let lv = reparam_graph(&mut g, mu, ls, &Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(g.value(lv.log_sigma).data(), &[LOG_SIGMA_MIN, LOG_SIGMA_MAX]);
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-5.0f64..5.0, 1..16),
        log_sigma in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
        let at_prior = mu.iter().all(|m| *m == 0.0) && sigma.iter().all(|s| *s == 1.0);
        let kl = kl_to_standard_normal(&DiagonalGaussian::new(mu, sigma).unwrap());
        prop_assert!(kl >= 0.0);
        if !at_prior {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn zero_noise_returns_the_mean(mu in prop::collection::vec(-5.0f64..5.0, 1..16), s in 0.01f64..10.0) {
        let sigma = vec![s; mu.len()];
        let g = DiagonalGaussian::new(mu.clone(), sigma).unwrap();
        prop_assert_eq!(reparam_sample(&g, &vec![0.0; mu.len()]).unwrap(), mu);
    }
}
