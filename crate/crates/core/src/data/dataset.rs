use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::Tensor;
use crate::error::{invalid, Error, Result};

/// Example features: `u8` images stored height × width × channels, or
/// real-valued vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Image { height: usize, width: usize, channels: usize, pixels: Vec<u8> },
    Vector { dim: usize, values: Vec<f64> },
}

impl Features {
    fn per_example(&self) -> usize {
        match self {
            Features::Image { height, width, channels, .. } => height * width * channels,
            Features::Vector { dim, .. } => *dim,
        }
    }

    fn stored(&self) -> usize {
        match self {
            Features::Image { pixels, .. } => pixels.len(),
            Features::Vector { values, .. } => values.len(),
        }
    }
}

/// How example features are laid out in a batch tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputLayout {
    /// One row per example.
    Flat,
    /// `N × C × H × W`, for convolutional stacks.
    Chw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

/// Examples `(x, u, s)` with utility alphabet `0..n_u` and sensitive
/// alphabet `0..n_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Features,
    pub u: Vec<usize>,
    pub s: Vec<usize>,
    pub n_u: usize,
    pub n_s: usize,
    pub split: SplitTag,
}

impl LabeledDataset {
    pub fn new(features: Features, u: Vec<usize>, s: Vec<usize>, n_u: usize, n_s: usize) -> Result<Self> {
        if n_u < 2 || n_s < 2 {
            return Err(invalid(format!("alphabets need at least two symbols, got |U|={n_u}, |S|={n_s}")));
        }
        if u.len() != s.len() {
            return Err(Error::Shape(format!("{} utility labels, {} sensitive labels", u.len(), s.len())));
        }
        if features.per_example() == 0 || features.stored() != u.len() * features.per_example() {
            return Err(Error::Shape(format!("{} feature values for {} examples", features.stored(), u.len())));
        }
        if let Some(v) = u.iter().find(|&&v| v >= n_u) {
            return Err(invalid(format!("utility label {v} outside alphabet of size {n_u}")));
        }
        if let Some(v) = s.iter().find(|&&v| v >= n_s) {
            return Err(invalid(format!("sensitive label {v} outside alphabet of size {n_s}")));
        }
        Ok(Self { features, u, s, n_u, n_s, split: SplitTag::Full })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Per-example input shape for the given layout.
    pub fn input_shape(&self, layout: InputLayout) -> Vec<usize> {
        match (&self.features, layout) {
            (Features::Image { height, width, channels, .. }, InputLayout::Chw) => vec![*channels, *height, *width],
            (f, _) => vec![f.per_example()],
        }
    }

    /// Feature tensor for the given examples; pixels are scaled to `[0, 1]`.
    pub fn batch_x(&self, idx: &[usize], layout: InputLayout) -> Tensor {
        let per = self.features.per_example();
        let mut data = Vec::with_capacity(idx.len() * per);
        match &self.features {
            Features::Vector { values, .. } => {
                for &i in idx {
                    data.extend_from_slice(&values[i * per..(i + 1) * per]);
                }
            }
            Features::Image { height, width, channels, pixels } => {
                for &i in idx {
                    let img = &pixels[i * per..(i + 1) * per];
                    match layout {
                        InputLayout::Flat => data.extend(img.iter().map(|&p| p as f64 / 255.0)),
                        InputLayout::Chw => {
                            for c in 0..*channels {
                                for p in 0..height * width {
                                    data.push(img[p * channels + c] as f64 / 255.0);
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut shape = vec![idx.len()];
        shape.extend(self.input_shape(layout));
        Tensor::new(shape, data).expect("batch shape")
    }

    pub fn all_x(&self, layout: InputLayout) -> Tensor {
        self.batch_x(&(0..self.len()).collect::<Vec<_>>(), layout)
    }

    /// Copies the listed examples into a new dataset carrying `tag`.
    pub fn subset(&self, idx: &[usize], tag: SplitTag) -> Self {
        let per = self.features.per_example();
        let features = match &self.features {
            Features::Image { height, width, channels, pixels } => Features::Image {
                height: *height,
                width: *width,
                channels: *channels,
                pixels: idx.iter().flat_map(|&i| pixels[i * per..(i + 1) * per].iter().copied()).collect(),
            },
            Features::Vector { dim, values } => Features::Vector {
                dim: *dim,
                values: idx.iter().flat_map(|&i| values[i * per..(i + 1) * per].iter().copied()).collect(),
            },
        };
        Self {
            features,
            u: idx.iter().map(|&i| self.u[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            n_u: self.n_u,
            n_s: self.n_s,
            split: tag,
        }
    }

    /// Exchanges the utility and sensitive roles.
    pub fn swap_roles(mut self) -> Self {
        std::mem::swap(&mut self.u, &mut self.s);
        std::mem::swap(&mut self.n_u, &mut self.n_s);
        self
    }

    /// Relative frequency of each utility label.
    pub fn u_frequencies(&self) -> Vec<f64> {
        frequencies(&self.u, self.n_u)
    }

    /// Relative frequency of each sensitive label.
    pub fn s_frequencies(&self) -> Vec<f64> {
        frequencies(&self.s, self.n_s)
    }
}

pub fn frequencies(labels: &[usize], n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for &l in labels {
        counts[l] += 1.0;
    }
    let total = labels.len().max(1) as f64;
    counts.into_iter().map(|c| c / total).collect()
}

/// Splits `n` items into parts proportional to `fractions` with exact
/// integer counts (largest-remainder rounding).
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seeded train/validation/test partition stratified on `(u, s)`.
///
/// Global counts follow [`apportion`]; within each `(u, s)` stratum the
/// examples are shuffled and spread evenly over the three parts.
pub fn split(ds: &LabeledDataset, fractions: [f64; 3], seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(invalid(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions sum to {total}, not 1")));
    }
    let counts = apportion(ds.len(), &fractions);
    if counts.contains(&0) {
        return Err(invalid(format!("split of {} examples leaves an empty part: {counts:?}", ds.len())));
    }

    let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        strata.entry((ds.u[i], ds.s[i])).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Each example gets a key in (0, 1) equal to its rank within its
    // shuffled stratum; sorting by key interleaves strata proportionally.
    let mut keyed: Vec<(f64, u64, usize)> = Vec::with_capacity(ds.len());
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let offset: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
        for (rank, &i) in members.iter().enumerate() {
            keyed.push(((rank as f64 + offset) / n, rand::Rng::gen(&mut rng), i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|k| k.2).collect();
    let (a, rest) = order.split_at(counts[0]);
    let (b, c) = rest.split_at(counts[1]);
    Ok((ds.subset(a, SplitTag::Train), ds.subset(b, SplitTag::Val), ds.subset(c, SplitTag::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledDataset {
        let values = (0..n).map(|i| i as f64).collect();
        let u = (0..n).map(|i| i % 3).collect();
        let s = (0..n).map(|i| (i / 3) % 2).collect();
        LabeledDataset::new(Features::Vector { dim: 1, values }, u, s, 3, 2).unwrap()
    }

    #[test]
    fn apportion_matches_reference_counts() {
        let f = [6.0 / 7.0 * 0.9, 6.0 / 7.0 * 0.1, 1.0 / 7.0];
        assert_eq!(apportion(70_000, &f), vec![54_000, 6_000, 10_000]);
        assert_eq!(apportion(10, &[1.0 / 3.0; 3]).iter().sum::<usize>(), 10);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy(301);
        let (a, b, c) = split(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        let mut seen: Vec<f64> = [&a, &b, &c]
            .iter()
            .flat_map(|d| match &d.features {
                Features::Vector { values, .. } => values.clone(),
                _ => unreachable!(),
            })
            .collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..301).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!((a.split, b.split, c.split), (SplitTag::Train, SplitTag::Val, SplitTag::Test));
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = toy(30);
        assert!(split(&ds, [1.0, 0.0, 0.0], 0).is_err());
        assert!(split(&ds, [0.5, 0.3, 0.3], 0).is_err());
        assert!(split(&toy(2), [0.8, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn rejects_out_of_alphabet_labels() {
        let f = Features::Vector { dim: 1, values: vec![0.0, 1.0] };
        assert!(LabeledDataset::new(f.clone(), vec![0, 3], vec![0, 1], 3, 2).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 1], vec![0, 1], 1, 2).is_err());
        assert!(LabeledDataset::new(f, vec![0], vec![0], 2, 2).is_err());
    }

    #[test]
    fn chw_layout_transposes_channels() {
        let f = Features::Image { height: 1, width: 2, channels: 3, pixels: vec![0, 51, 102, 153, 204, 255] };
        let ds = LabeledDataset::new(f, vec![0], vec![1], 2, 2).unwrap();
        let x = ds.batch_x(&[0], InputLayout::Chw);
        assert_eq!(x.shape(), &[1, 3, 1, 2]);
        assert_eq!(x.data(), &[0.0, 0.6, 0.2, 0.8, 0.4, 1.0]);
        assert_eq!(ds.batch_x(&[0], InputLayout::Flat).shape(), &[1, 6]);
    }
}
