use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{Adam, Graph, Mode, Network, ParamSet, Tensor};
use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::gauss::{self, kl_to_standard_normal};
use crate::models::ModelBundle;

/// Discriminator outputs are clamped to `[D_CLAMP, 1 − D_CLAMP]`.
pub const D_CLAMP: f64 = 1e-7;

/// Mean log-odds of a discriminator, with the number of clamped outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityRatioKl {
    pub value: f64,
    pub clamped: usize,
}

fn log_odds(d: f64, clamped: &mut usize) -> f64 {
    let c = d.clamp(D_CLAMP, 1.0 - D_CLAMP);
    if c != d {
        *clamped += 1;
    }
    (c / (1.0 - c)).ln()
}

/// `(1/M) Σ log(D(z_m) / (1 − D(z_m)))` over discriminator outputs on
/// samples from the numerator distribution (label 1).
pub fn density_ratio_kl(d: &[f64]) -> Result<DensityRatioKl> {
    if d.is_empty() {
        return Err(invalid("density-ratio estimate needs at least one sample"));
    }
    let mut clamped = 0;
    let value = d.iter().map(|&v| log_odds(v, &mut clamped)).sum::<f64>() / d.len() as f64;
    if clamped > 0 {
        log::warn!("{clamped} discriminator outputs clamped to [{D_CLAMP}, {}]", 1.0 - D_CLAMP);
    }
    Ok(DensityRatioKl { value, clamped })
}

/// The same estimator as an expectation over an enumerable support with
/// numerator probabilities `p`.
pub fn density_ratio_kl_expected(d: &[f64], p: &[f64]) -> Result<DensityRatioKl> {
    if d.len() != p.len() || d.is_empty() {
        return Err(invalid("discriminator outputs and probabilities must align"));
    }
    let mut clamped = 0;
    let value = d.iter().zip(p).filter(|(_, &w)| w > 0.0).map(|(&v, &w)| w * log_odds(v, &mut clamped)).sum();
    Ok(DensityRatioKl { value, clamped })
}

/// Optimal discriminator `p / (p + q)` between two distributions on a
/// common support.
pub fn bayes_discriminator(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.5 }).collect()
}

/// `KL(P ‖ Q)` on a finite support by direct summation.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("distributions must share a support"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { steps: 2000, batch: 256, lr: 1e-3, seed: 0 }
    }
}

/// Trains `net` (ending in a sigmoid) to output 1 on rows of `pos` and 0 on
/// rows of `neg` with the logistic loss.
pub fn fit_discriminator(net: &Network, pos: &Tensor, neg: &Tensor, cfg: DiscriminatorConfig) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new("disc");
    net.init_params(&mut params, &mut rng);
    let adam = Adam::new(cfg.lr);
    let (np, nn) = (pos.rows(), neg.rows());
    for _ in 0..cfg.steps {
        let ip: Vec<usize> = (0..cfg.batch).map(|_| rand::Rng::gen_range(&mut rng, 0..np)).collect();
        let ineg: Vec<usize> = (0..cfg.batch).map(|_| rand::Rng::gen_range(&mut rng, 0..nn)).collect();
        let mut g = Graph::new();
        g.track(&params);
        let (p, n) = (g.input(pos.select_rows(&ip)), g.input(neg.select_rows(&ineg)));
        let lp = net.forward_logits(&mut g, &params, p, Mode::Train)?;
        let ln = net.forward_logits(&mut g, &params, n, Mode::Train)?;
        let a = g.log_sigmoid(lp);
        let flipped = g.scale(ln, -1.0);
        let b = g.log_sigmoid(flipped);
        let (ma, mb) = (g.mean(a), g.mean(b));
        let sum = g.add(ma, mb)?;
        let loss = g.scale(sum, -1.0);
        let grads = g.backward(loss)?.for_set(&params);
        adam.step(&mut params, &grads)?;
        params.commit_running_stats(&g)?;
    }
    Ok(params)
}

/// Complexity estimate: mean per-sample KL to the prior, the
/// aggregated-posterior correction from `D_η`, and their difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complexity {
    pub kl_upper: f64,
    pub correction: f64,
    pub corrected: f64,
    pub clamped: usize,
}

/// Encodes `ds` with noise drawn from `seed` and assembles the complexity
/// estimate with the bundle's latent discriminator.
pub fn complexity_estimate(bundle: &ModelBundle, ds: &LabeledDataset, seed: u64) -> Result<Complexity> {
    if ds.is_empty() {
        return Err(invalid("complexity estimate needs examples"));
    }
    let layout = bundle.arch.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kl_total, mut d_values) = (0.0, Vec::with_capacity(ds.len()));
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    for chunk in order.chunks(1024) {
        let eps = gauss::standard_normal(&[chunk.len(), bundle.arch.d_z], &mut rng);
        let post = bundle.encode(&ds.batch_x(chunk, layout), &eps)?;
        kl_total += (0..chunk.len()).map(|i| kl_to_standard_normal(&post.gaussian(i))).sum::<f64>();
        d_values.extend_from_slice(bundle.discriminate_latent(&post.z)?.data());
    }
    let kl_upper = kl_total / ds.len() as f64;
    let ratio = density_ratio_kl(&d_values)?;
    Ok(Complexity { kl_upper, correction: ratio.value, corrected: kl_upper - ratio.value, clamped: ratio.clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uninformed_discriminator_gives_zero() {
        assert_eq!(density_ratio_kl(&[0.5; 10]).unwrap().value, 0.0);
        assert!(density_ratio_kl(&[]).is_err());
    }

    #[test]
    fn saturated_outputs_are_clamped_and_counted() {
        let r = density_ratio_kl(&[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(r.clamped, 2);
        assert!(r.value.abs() < 1e-9);
    }

    #[test]
    fn bayes_discriminator_recovers_kl() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let q = [0.25; 4];
        let d = bayes_discriminator(&p, &q);
        let est = density_ratio_kl_expected(&d, &p).unwrap().value;
        assert!((est - kl_discrete(&p, &q).unwrap()).abs() < 1e-12);
    }
}
