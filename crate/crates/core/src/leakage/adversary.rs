use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{argmax, Adam, Graph, Mode, Network, Tensor};
use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::gauss;
use crate::models::{AdversaryModel, ModelBundle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Fraction of the adversary's labeled pool it may train on.
    pub data_ratio: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { data_ratio: 1.0, epochs: 20, batch: 128, lr: 1e-3, seed: 0 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return Err(invalid(format!("data ratio must lie in (0, 1], got {}", self.data_ratio)));
        }
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(invalid("attack batch and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Posterior parameters of a set of examples with the labels to infer.
/// The adversary draws fresh codes `μ + σ ⊙ ε` from these every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Codes {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub labels: Vec<usize>,
}

impl Codes {
    /// Encodes every example of `ds` with the (frozen) encoder, keeping the
    /// sensitive labels.
    pub fn from_bundle(bundle: &ModelBundle, ds: &LabeledDataset) -> Result<Self> {
        let layout = bundle.arch.layout();
        let (mut mu, mut sigma) = (Vec::new(), Vec::new());
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(1024) {
            let post = bundle.encode_mean(&ds.batch_x(chunk, layout))?;
            mu.extend_from_slice(post.mu.data());
            sigma.extend_from_slice(post.sigma.data());
        }
        let d = bundle.arch.d_z;
        Ok(Self {
            mu: Tensor::new(vec![ds.len(), d], mu)?,
            sigma: Tensor::new(vec![ds.len(), d], sigma)?,
            labels: ds.s.clone(),
        })
    }

    /// Codes with zero spread, e.g. a deterministic feature map.
    pub fn deterministic(z: Tensor, labels: Vec<usize>) -> Self {
        let sigma = Tensor::zeros(z.shape());
        Self { mu: z, sigma, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let mu = self.mu.select_rows(idx);
        let sigma = self.sigma.select_rows(idx);
        let eps = gauss::standard_normal(mu.shape(), rng);
        let data = mu.data().iter().zip(sigma.data()).zip(eps.data()).map(|((m, s), e)| m + s * e).collect();
        Tensor::new(mu.shape().to_vec(), data).expect("shape")
    }
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub model: AdversaryModel,
    /// Accuracy on the held-out codes.
    pub accuracy: f64,
    /// Mean cross-entropy `H_ξ(S | Z)` on the held-out codes, in nats.
    pub cross_entropy: f64,
    pub train_examples: usize,
}

/// Trains the inference network `net` on a `data_ratio` share of `train`
/// and scores it on `test`.
pub fn fit_adversary(net: Network, train: &Codes, test: &Codes, n_s: usize, cfg: &AttackConfig) -> Result<AttackReport> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(invalid("adversary needs training and test codes"));
    }
    if net.output_width()? != n_s || net.input_shape != [train.mu.shape()[1]] {
        return Err(Error::Shape(format!("adversary network does not map {} codes to {n_s} classes", train.mu.shape()[1])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..train.len()).collect();
    pool.shuffle(&mut rng);
    pool.truncate(((cfg.data_ratio * train.len() as f64).ceil() as usize).max(1));
    let mut present = vec![false; n_s];
    pool.iter().for_each(|&i| present[train.labels[i]] = true);
    if present.contains(&false) {
        log::warn!("adversary pool of {} examples lacks some sensitive classes", pool.len());
    }

    let mut model = AdversaryModel::init(net, cfg.seed);
    let adam = Adam::new(cfg.lr);
    for _ in 0..cfg.epochs {
        pool.shuffle(&mut rng);
        for chunk in pool.chunks(cfg.batch) {
            let z = train.sample(chunk, &mut rng);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            g.track(&model.params);
            let zv = g.input(z);
            let probs = model.net.forward(&mut g, &model.params, zv, Mode::Train)?;
            let picked = g.pick_cols(probs, &labels)?;
            let logp = g.ln(picked, 1e-12);
            let mean = g.mean(logp);
            let loss = g.scale(mean, -1.0);
            let grads = g.backward(loss)?.for_set(&model.params);
            adam.step(&mut model.params, &grads)?;
            model.params.commit_running_stats(&g)?;
        }
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (mut correct, mut xent) = (0usize, 0.0);
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(1024) {
        let probs = model.predict(&test.sample(chunk, &mut eval_rng))?;
        for (r, &i) in chunk.iter().enumerate() {
            let row = probs.row(r);
            correct += (argmax(row) == test.labels[i]) as usize;
            xent -= row[test.labels[i]].max(1e-12).ln();
        }
    }
    let n = test.len() as f64;
    Ok(AttackReport { model, accuracy: correct as f64 / n, cross_entropy: xent / n, train_examples: pool.len() })
}

/// Attacks a trained encoder: codes of `train` feed the adversary, codes
/// of `test` score it. The bundle is only read.
pub fn train_adversary(bundle: &ModelBundle, train: &LabeledDataset, test: &LabeledDataset, cfg: &AttackConfig) -> Result<AttackReport> {
    let tr = Codes::from_bundle(bundle, train)?;
    let te = Codes::from_bundle(bundle, test)?;
    fit_adversary(bundle.arch.adversary.clone(), &tr, &te, bundle.arch.n_s, cfg)
}
