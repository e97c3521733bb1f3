use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::ArchConfig;
use crate::compute::{Graph, Mode, Network, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::gauss::{self, DiagonalGaussian, LatentVars};

/// Parameter sets of the four trained networks plus their architecture.
/// The encoder set `phi` holds the trunk and both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchConfig,
    pub phi: ParamSet,
    pub theta: ParamSet,
    pub eta: ParamSet,
    pub omega: ParamSet,
}

/// Batched posterior parameters and samples, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub z: Tensor,
}

impl Posterior {
    pub fn gaussian(&self, i: usize) -> DiagonalGaussian {
        DiagonalGaussian::new(self.mu.row(i).to_vec(), self.sigma.row(i).to_vec()).expect("clamped sigma is positive")
    }
}

impl ModelBundle {
    /// Fresh parameters: fan-in scaled uniform weights, zero biases, and
    /// zero encoder heads so the initial posterior is the prior.
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = ParamSet::new("phi");
        for net in [&arch.trunk, &arch.mu_head, &arch.log_sigma_head] {
            net.init_params(&mut phi, &mut rng);
        }
        arch.mu_head.zero_last_layer(&mut phi);
        arch.log_sigma_head.zero_last_layer(&mut phi);
        let mut set = |tag: &str, net: &Network| {
            let mut p = ParamSet::new(tag);
            net.init_params(&mut p, &mut rng);
            p
        };
        let theta = set("theta", &arch.decoder);
        let eta = set("eta", &arch.latent_disc);
        let omega = set("omega", &arch.attr_disc);
        Self { arch, phi, theta, eta, omega }
    }

    /// Records the encoder and the reparameterized sample `z = μ + σ ⊙ ε`.
    pub fn encode_graph(&self, g: &mut Graph, x: Var, eps: &Tensor, mode: Mode) -> Result<LatentVars> {
        let h = self.arch.trunk.forward(g, &self.phi, x, mode)?;
        let mu = self.arch.mu_head.forward(g, &self.phi, h, mode)?;
        let raw = self.arch.log_sigma_head.forward(g, &self.phi, h, mode)?;
        gauss::reparam_graph(g, mu, raw, eps)
    }

    pub fn decoder_logits(&self, g: &mut Graph, z: Var, mode: Mode) -> Result<Var> {
        self.arch.decoder.forward_logits(g, &self.theta, z, mode)
    }

    pub fn latent_disc_logits(&self, g: &mut Graph, z: Var, mode: Mode) -> Result<Var> {
        self.arch.latent_disc.forward_logits(g, &self.eta, z, mode)
    }

    pub fn attr_disc_logits(&self, g: &mut Graph, u: Var, mode: Mode) -> Result<Var> {
        self.arch.attr_disc.forward_logits(g, &self.omega, u, mode)
    }

    /// Evaluation-mode encoding of a batch with the given noise.
    pub fn encode(&self, x: &Tensor, eps: &Tensor) -> Result<Posterior> {
        let mut g = Graph::inference();
        let xv = g.input(x.clone());
        let lv = self.encode_graph(&mut g, xv, eps, Mode::Eval)?;
        let sigma = g.value(lv.log_sigma).map(f64::exp);
        Ok(Posterior { mu: g.value(lv.mu).clone(), sigma, z: g.value(lv.z).clone() })
    }

    /// Posterior parameters with no noise; `z` equals `μ`.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Posterior> {
        self.encode(x, &Tensor::zeros(&[x.rows(), self.arch.d_z]))
    }

    /// Utility label probabilities, one row per latent code.
    pub fn decode_utility(&self, z: &Tensor) -> Result<Tensor> {
        check_width(z, self.arch.d_z, "latent code")?;
        self.arch.decoder.eval(&self.theta, z)
    }

    /// Probability that each latent code came from the aggregated posterior
    /// (label 1) rather than the prior (label 0).
    pub fn discriminate_latent(&self, z: &Tensor) -> Result<Tensor> {
        check_width(z, self.arch.d_z, "latent code")?;
        self.arch.latent_disc.eval(&self.eta, z)
    }

    /// Probability that each attribute vector is a real label.
    pub fn discriminate_attribute(&self, u: &Tensor) -> Result<Tensor> {
        check_width(u, self.arch.n_u, "attribute vector")?;
        self.arch.attr_disc.eval(&self.omega, u)
    }
}

pub(crate) fn check_width(t: &Tensor, width: usize, what: &str) -> Result<()> {
    if t.shape().len() != 2 || t.shape()[1] != width {
        return Err(Error::Shape(format!("{what} batch must be N×{width}, got {:?}", t.shape())));
    }
    Ok(())
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], n: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * n];
    for (i, &l) in labels.iter().enumerate() {
        data[i * n + l] = 1.0;
    }
    Tensor::new(vec![labels.len().max(1), n], data).expect("one-hot shape")
}

/// The adversary's inference network `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryModel {
    pub net: Network,
    pub params: ParamSet,
}

impl AdversaryModel {
    pub fn init(net: Network, seed: u64) -> Self {
        let mut params = ParamSet::new("xi");
        net.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Self { net, params }
    }

    pub fn predict(&self, z: &Tensor) -> Result<Tensor> {
        self.net.eval(&self.params, z)
    }
}

/// The MINE statistic network over concatenated `(z, one-hot a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MineNet {
    pub net: Network,
    pub params: ParamSet,
}

impl MineNet {
    pub fn init(net: Network, seed: u64) -> Self {
        let mut params = ParamSet::new("mine");
        net.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Self { net, params }
    }

    /// Statistic values `T(z, a)` as an `N × 1` column.
    pub fn statistic(&self, za: &Tensor) -> Result<Tensor> {
        self.net.eval(&self.params, za)
    }
}
