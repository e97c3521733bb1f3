//! Dataset and sweep specifications shared by several subcommands.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use varleak::data::{generate_colored_mnist, ColorDistribution, GrayDigits, LabeledDataset, Roles};
use varleak::leakage::{AttackConfig, MineConfig};
use varleak::train::TrainConfig;

use crate::error::{CliError, CliResult, Validate};

pub const SCHEMA_VERSION: u32 = 1;

// Keeps the label shuffle of `decouple_sensitive` apart from the color draws.
const DECOUPLE_STREAM: u64 = 0xdec0_u64;

/// Where the grayscale digits come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    /// Directory with the four standard MNIST files (train and t10k).
    MnistDir { path: PathBuf },
    /// One IDX image file with its label file.
    Idx { images: PathBuf, labels: PathBuf },
    /// Stroke-rendered stand-in digits.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: Source,
    /// Color distribution as `r,g,b`, e.g. `1/2,1/6,1/3`.
    pub colors: String,
    #[serde(default)]
    pub roles: Roles,
    /// Keep only the first `limit` digits.
    #[serde(default)]
    pub limit: Option<usize>,
    /// Shuffle the sensitive labels so they carry no information about the image.
    #[serde(default)]
    pub decouple_sensitive: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> CliResult<ColorDistribution> {
        if self.limit == Some(0) {
            return Err(CliError::Validation("dataset limit must be positive".into()));
        }
        if let Source::Synthetic { count: 0, .. } = self.source {
            return Err(CliError::Validation("synthetic source needs a positive count".into()));
        }
        ColorDistribution::parse(&self.colors).invalid("bad --colors")
    }

    /// Resolves relative source paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        match &mut self.source {
            Source::MnistDir { path } => *path = base.join(&*path),
            Source::Idx { images, labels } => {
                *images = base.join(&*images);
                *labels = base.join(&*labels);
            }
            Source::Synthetic { .. } => {}
        }
    }

    pub fn load_digits(&self) -> CliResult<GrayDigits> {
        let digits = match &self.source {
            Source::MnistDir { path } => GrayDigits::from_mnist_dir(path).invalid("cannot read digit source")?,
            Source::Idx { images, labels } => GrayDigits::from_idx(images, labels).invalid("cannot read digit source")?,
            Source::Synthetic { count, seed } => GrayDigits::synthetic(*count, *seed),
        };
        Ok(match self.limit {
            Some(n) => digits.take(n),
            None => digits,
        })
    }

    /// Builds the colored dataset; every random choice derives from `seed`.
    pub fn build(&self, digits: &GrayDigits, seed: u64) -> CliResult<LabeledDataset> {
        let dist = self.validate()?;
        let mut ds = generate_colored_mnist(digits, &dist, self.roles, seed).invalid("cannot generate dataset")?;
        if self.decouple_sensitive {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DECOUPLE_STREAM);
            ds.s.shuffle(&mut rng);
        }
        Ok(ds)
    }
}

/// Parses `a,b,c` into numbers.
pub fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Validation(format!("bad {what} entry `{t}`: {e}"))))
        .collect()
}

pub fn parse_fractions(text: &str) -> CliResult<[f64; 3]> {
    let v = parse_list(text, "split")?;
    let arr: [f64; 3] = v.try_into().map_err(|_| CliError::Validation("split needs three fractions".into()))?;
    check_fractions(arr)
}

pub fn check_fractions(arr: [f64; 3]) -> CliResult<[f64; 3]> {
    let total: f64 = arr.iter().sum();
    if arr.iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(CliError::Validation(format!("split fractions must be positive and sum to 1, got {arr:?}")));
    }
    Ok(arr)
}

pub fn validate_ratios(ratios: &[f64]) -> CliResult<()> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(CliError::Validation(format!("data ratios must lie in (0, 1], got {ratios:?}")));
    }
    Ok(())
}

/// Optional overrides of a training preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub iterations: Option<usize>,
    pub batch: Option<usize>,
    pub warmup_iterations: Option<usize>,
    pub warmup_batch: Option<usize>,
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.batch, self.batch);
        set(&mut cfg.warmup.iterations, self.warmup_iterations);
        set(&mut cfg.warmup.batch, self.warmup_batch);
        set(&mut cfg.eval_every, self.eval_every);
        set(&mut cfg.patience, self.patience);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let d = AttackConfig::default();
        Self { epochs: d.epochs, batch: d.batch, lr: d.lr }
    }
}

impl AttackSpec {
    pub fn config(&self, data_ratio: f64, seed: u64) -> AttackConfig {
        AttackConfig { data_ratio, epochs: self.epochs, batch: self.batch, lr: self.lr, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSpec {
    pub steps: usize,
    /// Number of encoded examples handed to the estimator.
    pub samples: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for MineSpec {
    fn default() -> Self {
        let d = MineConfig::default();
        Self { steps: d.steps, samples: 10_000, batch: d.batch, lr: d.lr }
    }
}

impl MineSpec {
    pub fn config(&self, seed: u64) -> MineConfig {
        MineConfig { steps: self.steps, batch: self.batch, lr: self.lr, seed, ..Default::default() }
    }
}

fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_ratios() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// A β × d_z × seed grid over one dataset, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema: u32,
    pub preset: String,
    pub betas: Vec<f64>,
    pub dzs: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ratios")]
    pub data_ratios: Vec<f64>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    pub output: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub mine: MineSpec,
}

impl SweepSpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).invalid(&format!("cannot read {}", path.display()))?;
        let mut spec: SweepSpec = toml::from_str(&text).invalid("bad sweep spec")?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.dataset.rebase(base);
        spec.output = base.join(&spec.output);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("sweep schema {} is not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.betas.is_empty() || self.dzs.is_empty() || self.seeds.is_empty() {
            return bad("beta, d_z and seed grids must be non-empty".into());
        }
        if self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad(format!("beta values must lie in [0, 1], got {:?}", self.betas));
        }
        if self.dzs.contains(&0) {
            return bad("d_z values must be positive".into());
        }
        validate_ratios(&self.data_ratios)?;
        check_fractions(self.split)?;
        self.dataset.validate()?;
        for &beta in &self.betas {
            for &dz in &self.dzs {
                self.train_config(beta, dz, self.seeds[0])?.validate().invalid("bad training settings")?;
            }
        }
        self.attack.config(1.0, 0).validate().invalid("bad attack settings")?;
        if self.mine.steps == 0 || self.mine.samples < 2 {
            return bad("MINE needs at least one step and two samples".into());
        }
        Ok(())
    }

    pub fn train_config(&self, beta: f64, dz: usize, seed: u64) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig::preset(&self.preset, beta, dz, seed).invalid("bad preset")?;
        self.train.apply(&mut cfg);
        Ok(cfg)
    }
}
