use crate::data::DiscreteJoint;
use crate::error::{invalid, Result};

/// A mutual-information value in both units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiValue {
    pub nats: f64,
    pub bits: f64,
}

impl MiValue {
    fn from_nats(nats: f64) -> Self {
        Self { nats, bits: nats / std::f64::consts::LN_2 }
    }
}

fn check_normalized(joint: &DiscreteJoint) -> Result<()> {
    let total: f64 = joint.probs().iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("table sums to {total}, not 1")));
    }
    Ok(())
}

fn check_axes(joint: &DiscreteJoint, groups: &[&[usize]]) -> Result<()> {
    let mut seen = vec![false; joint.dims().len()];
    for &axis in groups.iter().flat_map(|g| g.iter()) {
        if axis >= seen.len() || std::mem::replace(&mut seen[axis], true) {
            return Err(invalid(format!("axis groups {groups:?} must be disjoint and in range")));
        }
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(invalid("axis groups must be non-empty"));
    }
    Ok(())
}

/// `I(A; B)` by direct summation, where `A` and `B` are groups of axes of
/// the joint table.
pub fn exact_mi(joint: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<MiValue> {
    check_normalized(joint)?;
    check_axes(joint, &[a, b])?;
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    let pab = joint.marginal(&ab)?;
    let (pa, pb) = (joint.marginal(a)?, joint.marginal(b)?);
    let nb = pb.probs().len();
    let mut total = 0.0;
    for (flat, &p) in pab.probs().iter().enumerate() {
        if p > 0.0 {
            total += p * (p / (pa.probs()[flat / nb] * pb.probs()[flat % nb])).ln();
        }
    }
    Ok(MiValue::from_nats(total))
}

/// `I(A; B | C)` by direct summation.
pub fn conditional_mi(joint: &DiscreteJoint, a: &[usize], b: &[usize], c: &[usize]) -> Result<MiValue> {
    check_normalized(joint)?;
    check_axes(joint, &[a, b, c])?;
    let cat = |xs: &[&[usize]]| xs.iter().flat_map(|x| x.iter()).copied().collect::<Vec<_>>();
    let pabc = joint.marginal(&cat(&[a, b, c]))?;
    let pac = joint.marginal(&cat(&[a, c]))?;
    let pbc = joint.marginal(&cat(&[b, c]))?;
    let pc = joint.marginal(c)?;
    let nc = pc.probs().len();
    let nb = pbc.probs().len() / nc;
    let mut total = 0.0;
    for (flat, &p) in pabc.probs().iter().enumerate() {
        if p > 0.0 {
            let ci = flat % nc;
            let bi = (flat / nc) % nb;
            let ai = flat / (nc * nb);
            total += p * (p * pc.probs()[ci] / (pac.probs()[ai * nc + ci] * pbc.probs()[bi * nc + ci])).ln();
        }
    }
    Ok(MiValue::from_nats(total))
}

/// Outcome of checking `I(S;Z) = I(X;Z) − I(X;Z|S)` on a Markov chain
/// `S – X – Z`. All values in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkovReport {
    pub i_sz: f64,
    pub i_xz: f64,
    pub i_xz_given_s: f64,
    /// `I(S;Z) − I(X;Z) + I(X;Z|S)`; zero up to rounding.
    pub residual: f64,
    /// `I(X;Z) − I(S;Z)`; nonnegative by data processing.
    pub dpi_margin: f64,
}

pub const MAX_MARKOV_ALPHABET: usize = 32;

/// Builds the joint `P(s, x, z) = P(s, x) P(z | x)` and evaluates the
/// identity. `channel[x]` is the row `P(· | x)`.
pub fn markov_identity_check(p_sx: &DiscreteJoint, channel: &[Vec<f64>]) -> Result<MarkovReport> {
    let &[ns, nx] = p_sx.dims() else {
        return Err(invalid("P(S,X) must be a two-way table"));
    };
    let nz = channel.first().map_or(0, Vec::len);
    if channel.len() != nx {
        return Err(invalid(format!("channel has {} rows, |X| = {nx}", channel.len())));
    }
    if [ns, nx, nz].iter().any(|&d| d == 0 || d > MAX_MARKOV_ALPHABET) {
        return Err(invalid(format!("alphabets must lie in 1..={MAX_MARKOV_ALPHABET}")));
    }
    for (x, row) in channel.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if row.len() != nz || row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("channel row {x} is not a probability vector")));
        }
    }
    let mut probs = Vec::with_capacity(ns * nx * nz);
    for s in 0..ns {
        for (x, row) in channel.iter().enumerate() {
            let p = p_sx.prob(&[s, x]);
            probs.extend(row.iter().map(|q| p * q));
        }
    }
    let joint = DiscreteJoint::from_weights(vec![ns, nx, nz], probs)?;
    let i_sz = exact_mi(&joint, &[0], &[2])?.nats;
    let i_xz = exact_mi(&joint, &[1], &[2])?.nats;
    let i_xz_given_s = conditional_mi(&joint, &[1], &[2], &[0])?.nats;
    Ok(MarkovReport { i_sz, i_xz, i_xz_given_s, residual: i_sz - i_xz + i_xz_given_s, dpi_margin: i_xz - i_sz })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let ind = DiscreteJoint::independent(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        assert!(exact_mi(&ind, &[0], &[1]).unwrap().nats.abs() < 1e-15);
        let copy = DiscreteJoint::copy(&[0.5, 0.5]).unwrap();
        assert!((exact_mi(&copy, &[0], &[1]).unwrap().bits - 1.0).abs() < 1e-12);
        let t = DiscreteJoint::new(vec![2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        let hb = -(0.2f64 * 0.2f64.log2() + 0.8 * 0.8f64.log2());
        assert!((exact_mi(&t, &[0], &[1]).unwrap().bits - (1.0 - hb)).abs() < 1e-12);
        assert!((1.0 - hb - 0.2781).abs() < 1e-4);
    }

    #[test]
    fn identity_channel_keeps_information() {
        let p = DiscreteJoint::new(vec![2, 3], vec![0.2, 0.1, 0.1, 0.05, 0.25, 0.3]).unwrap();
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let r = markov_identity_check(&p, &eye).unwrap();
        let i_sx = exact_mi(&p, &[0], &[1]).unwrap().nats;
        assert!((r.i_sz - i_sx).abs() < 1e-15);
        assert!(r.residual.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_channels_and_axes() {
        let p = DiscreteJoint::new(vec![2, 2], vec![0.25; 4]).unwrap();
        assert!(markov_identity_check(&p, &[vec![0.5, 0.5]]).is_err());
        assert!(markov_identity_check(&p, &[vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(exact_mi(&p, &[0], &[0]).is_err());
        assert!(exact_mi(&p, &[0], &[2]).is_err());
    }
}
