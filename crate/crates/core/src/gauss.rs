//! Diagonal-Gaussian latent machinery: reparameterized sampling, the
//! closed-form KL divergence to a standard-normal prior, and a Monte-Carlo
//! KL estimator used as an oracle.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::compute::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Lower and upper clamp applied to `ln σ` emitted by an encoder head.
pub const LOG_SIGMA_MIN: f64 = -9.210340371976182; // ln 1e-4
pub const LOG_SIGMA_MAX: f64 = 9.210340371976184; // ln 1e4

/// A posterior `N(μ, diag(σ²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::Shape(format!("mu has {} entries, sigma {}", mu.len(), sigma.len())));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(invalid(format!("sigma must be positive and finite, got {s}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mu: vec![0.0; dim], sigma: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), x)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * ln2pi)
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        reparam_sample(self, &eps).expect("matching dimension")
    }
}

/// The fixed isotropic standard-normal prior over the latent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriorSpec {
    pub dim: usize,
}

impl PriorSpec {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// `n × dim` matrix of prior draws.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Tensor {
        standard_normal(&[n, self.dim], rng)
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        DiagonalGaussian::standard(self.dim).log_density(z)
    }
}

/// Tensor of i.i.d. standard-normal draws.
pub fn standard_normal<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `z = μ + σ ⊙ ε`.
pub fn reparam_sample(g: &DiagonalGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::Shape(format!("eps has {} entries, latent dimension is {}", eps.len(), g.dim())));
    }
    Ok(g.mu.iter().zip(&g.sigma).zip(eps).map(|((m, s), e)| m + s * e).collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` in nats: `½ Σ (σ² + μ² − 1 − ln σ²)`.
pub fn kl_to_standard_normal(g: &DiagonalGaussian) -> f64 {
    0.5 * g
        .mu
        .iter()
        .zip(&g.sigma)
        .map(|(m, s)| {
            let s2 = s * s;
            s2 + m * m - 1.0 - s2.ln()
        })
        .sum::<f64>()
}

/// Analytic gradient of [`kl_to_standard_normal`] with respect to `(μ, σ)`.
pub fn kl_to_standard_normal_grad(g: &DiagonalGaussian) -> (Vec<f64>, Vec<f64>) {
    (g.mu.clone(), g.sigma.iter().map(|s| s - 1.0 / s).collect())
}

/// Monte-Carlo estimate of `KL(P ‖ Q)` as the sample mean of
/// `log p(z) − log q(z)` over `n` draws from `P`.
pub fn mc_kl<R, S, LP, LQ>(mut sample_p: S, log_p: LP, log_q: LQ, n: usize, rng: &mut R) -> Result<f64>
where
    R: Rng,
    S: FnMut(&mut R) -> Vec<f64>,
    LP: Fn(&[f64]) -> f64,
    LQ: Fn(&[f64]) -> f64,
{
    if n == 0 {
        return Err(invalid("mc_kl needs at least one sample"));
    }
    let mut total = 0.0;
    for _ in 0..n {
        let z = sample_p(rng);
        total += log_p(&z) - log_q(&z);
    }
    Ok(total / n as f64)
}

/// Batched posterior recorded in a graph: `μ`, clamped `ln σ`, and the sample `z`.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub mu: Var,
    pub log_sigma: Var,
    pub z: Var,
}

/// Records `z = μ + exp(clamp(ln σ)) ⊙ ε` for an `N × d` batch.
pub fn reparam_graph(g: &mut Graph, mu: Var, raw_log_sigma: Var, eps: &Tensor) -> Result<LatentVars> {
    if g.shape(mu) != eps.shape() {
        return Err(Error::Shape(format!("eps {:?} vs posterior {:?}", eps.shape(), g.shape(mu))));
    }
    let log_sigma = g.clamp(raw_log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = g.exp(log_sigma);
    let e = g.input(eps.clone());
    let noise = g.mul(sigma, e)?;
    let z = g.add(mu, noise)?;
    Ok(LatentVars { mu, log_sigma, z })
}

/// Per-row closed-form KL to the standard normal, as an `N × 1` column.
pub fn kl_graph(g: &mut Graph, mu: Var, log_sigma: Var) -> Result<Var> {
    let two_ls = g.scale(log_sigma, 2.0);
    let var = g.exp(two_ls);
    let mu2 = g.mul(mu, mu)?;
    let a = g.add(var, mu2)?;
    let b = g.sub(a, two_ls)?;
    let c = g.add_scalar(b, -1.0);
    let rows = g.row_sum(c);
    Ok(g.scale(rows, 0.5))
}
