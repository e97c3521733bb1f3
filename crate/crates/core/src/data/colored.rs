use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Features, LabeledDataset};
use super::digits::GrayDigits;
use crate::error::{invalid, Result};

pub const COLOR_NAMES: [&str; 3] = ["red", "green", "blue"];

/// Marginal distribution of the tint color over (red, green, blue).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ColorDistribution {
    probs: [f64; 3],
}

impl ColorDistribution {
    pub fn new(probs: [f64; 3]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(format!("color probabilities must be nonnegative, got {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("color probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn balanced() -> Self {
        Self { probs: [1.0 / 3.0; 3] }
    }

    /// Red 1/2, green 1/6, blue 1/3.
    pub fn biased() -> Self {
        Self { probs: [0.5, 1.0 / 6.0, 1.0 / 3.0] }
    }

    /// Parses `"r,g,b"` where each entry is a decimal or a fraction such as
    /// `1/6`. Decimal input rounded to four places (e.g. `0.1667`) is
    /// accepted when the entries sum to one within `1e-3`; the values are
    /// then renormalized.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(invalid(format!("expected three comma-separated probabilities, got `{text}`")));
        }
        let mut probs = [0.0; 3];
        for (p, part) in probs.iter_mut().zip(&parts) {
            *p = parse_number(part)?;
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(format!("color probabilities must be nonnegative, got `{text}`")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-3 {
            return Err(invalid(format!("color probabilities sum to {total}, not 1")));
        }
        Self::new(probs.map(|p| p / total)).or_else(|_| {
            // Renormalizing can leave a last-bit residue; fold it into the largest entry.
            let mut fixed = probs.map(|p| p / total);
            let i = crate::compute::argmax(&fixed);
            fixed[i] += 1.0 - fixed.iter().sum::<f64>();
            Self::new(fixed)
        })
    }

    pub fn probs(&self) -> [f64; 3] {
        self.probs
    }

    /// Maps a uniform draw in `[0, 1)` to a color index, never returning a
    /// zero-probability color.
    fn pick(&self, draw: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if draw < acc {
                return i;
            }
        }
        last
    }
}

impl TryFrom<[f64; 3]> for ColorDistribution {
    type Error = crate::Error;
    fn try_from(p: [f64; 3]) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ColorDistribution> for [f64; 3] {
    fn from(d: ColorDistribution) -> Self {
        d.probs
    }
}

fn parse_number(s: &str) -> Result<f64> {
    let bad = || invalid(format!("`{s}` is not a probability"));
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b == 0.0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

/// Which attribute plays the utility role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Roles {
    /// `u` = digit, `s` = color.
    #[default]
    DigitUtility,
    /// `u` = color, `s` = digit.
    ColorUtility,
}

/// Color index for example `i`: a uniform draw from a ChaCha stream keyed by
/// `(seed, i)`, so any subset of indices can be generated independently.
pub fn color_of(dist: &ColorDistribution, seed: u64, i: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    dist.pick(rng.gen::<f64>())
}

/// Tints every source digit with a color drawn independently of its label.
/// The grayscale intensity goes into the chosen channel; the other two
/// channels stay zero.
pub fn generate_colored_mnist(source: &GrayDigits, dist: &ColorDistribution, roles: Roles, seed: u64) -> Result<LabeledDataset> {
    if source.is_empty() {
        return Err(crate::Error::MalformedSource("digit source is empty".into()));
    }
    let (h, w) = (source.height(), source.width());
    let mut pixels = vec![0u8; source.len() * h * w * 3];
    let mut colors = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let color = color_of(dist, seed, i);
        let out = &mut pixels[i * h * w * 3..(i + 1) * h * w * 3];
        for (p, &v) in source.image(i).iter().enumerate() {
            out[p * 3 + color] = v;
        }
        colors.push(color);
    }
    let digits: Vec<usize> = source.labels().iter().map(|&d| d as usize).collect();
    let features = Features::Image { height: h, width: w, channels: 3, pixels };
    let ds = LabeledDataset::new(features, digits, colors, 10, 3)?;
    Ok(match roles {
        Roles::DigitUtility => ds,
        Roles::ColorUtility => ds.swap_roles(),
    })
}
