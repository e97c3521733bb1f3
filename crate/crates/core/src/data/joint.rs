use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const MAX_ALPHABET: usize = 64;

/// A probability table over a few small discrete variables, stored
/// row-major with the first variable varying slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    /// Takes an already normalized table; sums off by more than `1e-9` are
    /// rejected.
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        check_dims(&dims, probs.len())?;
        check_entries(&probs)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("table sums to {total}, not 1")));
        }
        Ok(Self { dims, probs })
    }

    /// Normalizes nonnegative weights into a table.
    pub fn from_weights(dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        check_dims(&dims, weights.len())?;
        check_entries(&weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        Ok(Self { dims, probs: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Product of the given marginals.
    pub fn independent(marginals: &[Vec<f64>]) -> Result<Self> {
        let dims = marginals.iter().map(Vec::len).collect();
        let mut probs = vec![1.0];
        for m in marginals {
            probs = probs.iter().flat_map(|p| m.iter().map(move |q| p * q)).collect();
        }
        Self::new(dims, probs)
    }

    /// Two-variable table with the second variable a copy of the first.
    pub fn copy(marginal: &[f64]) -> Result<Self> {
        let n = marginal.len();
        let mut probs = vec![0.0; n * n];
        for (i, p) in marginal.iter().enumerate() {
            probs[i * n + i] = *p;
        }
        Self::new(vec![n, n], probs)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    /// Multi-index of a flat cell position.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (k, s) in self.strides().iter().enumerate() {
            idx[k] = flat / s;
            flat %= s;
        }
        idx
    }

    pub fn prob(&self, idx: &[usize]) -> f64 {
        let flat: usize = idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.probs[flat]
    }

    /// Marginal over the listed axes, in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&a| a >= self.dims.len()) {
            return Err(invalid(format!("axes {axes:?} invalid for a {}-way table", self.dims.len())));
        }
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut out = Self { dims, probs: vec![0.0; axes.iter().map(|&a| self.dims[a]).product()] };
        let strides = out.strides();
        for (flat, &p) in self.probs.iter().enumerate() {
            let idx = self.unravel(flat);
            let target: usize = axes.iter().zip(&strides).map(|(&a, s)| idx[a] * s).sum();
            out.probs[target] += p;
        }
        Ok(out)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// A seeded i.i.d. sampler over multi-indices.
    pub fn sampler(&self, seed: u64) -> JointSampler<'_> {
        JointSampler {
            joint: self,
            index: WeightedIndex::new(&self.probs).expect("normalized table has positive mass"),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

pub struct JointSampler<'a> {
    joint: &'a DiscreteJoint,
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl Iterator for JointSampler<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.joint.unravel(self.index.sample(&mut self.rng)))
    }
}

fn check_dims(dims: &[usize], cells: usize) -> Result<()> {
    if dims.is_empty() || dims.iter().any(|&d| d == 0 || d > MAX_ALPHABET) {
        return Err(invalid(format!("alphabet sizes must lie in 1..={MAX_ALPHABET}, got {dims:?}")));
    }
    if dims.iter().product::<usize>() != cells {
        return Err(invalid(format!("dims {dims:?} need {} cells, got {cells}", dims.iter().product::<usize>())));
    }
    Ok(())
}

fn check_entries(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(v) => Err(invalid(format!("table entries must be nonnegative and finite, got {v}"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_by_summation() {
        let j = DiscreteJoint::new(vec![2, 3], vec![0.1, 0.2, 0.1, 0.3, 0.2, 0.1]).unwrap();
        let a = j.marginal(&[0]).unwrap();
        assert!((a.probs()[0] - 0.4).abs() < 1e-15);
        let b = j.marginal(&[1]).unwrap();
        assert!((b.probs()[1] - 0.4).abs() < 1e-15);
        let t = j.marginal(&[1, 0]).unwrap();
        assert_eq!(t.prob(&[2, 0]), j.prob(&[0, 2]));
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DiscreteJoint::from_weights(vec![2], vec![1.0, -0.5]).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::from_weights(vec![65], vec![1.0; 65]).is_err());
        assert!(DiscreteJoint::from_weights(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn uniform_cells_are_quarter() {
        let j = DiscreteJoint::from_weights(vec![2, 2], vec![1.0; 4]).unwrap();
        let mut counts = [0usize; 4];
        for idx in j.sampler(3).take(100_000) {
            counts[idx[0] * 2 + idx[1]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn copy_channel_entropy() {
        let j = DiscreteJoint::copy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((j.entropy() - j.marginal(&[0]).unwrap().entropy()).abs() < 1e-15);
    }
}
