use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{block_step, Block, BlockBatch, BlockParams};
use super::config::{IterationUnit, TrainConfig};
use crate::compute::{argmax, Tensor};
use crate::data::{InputLayout, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::gauss;
use crate::leakage::complexity_estimate;
use crate::models::{ArchConfig, ModelBundle};

const EVAL_CHUNK: usize = 1024;
// Stream offsets keep the independent random sources of a run apart.
const EVAL_STREAM: u64 = 0x5eed_e7a1;
const WARMUP_STREAM: u64 = 0x3a7e_0001;

/// Train, validation and test parts of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// One evaluation of a training run, as written to the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub block1_loss: f64,
    pub block2_loss: f64,
    pub block3_loss: f64,
    pub block4_loss: f64,
    pub block5_loss: f64,
    pub util_acc_train: f64,
    pub util_acc_val: f64,
    pub util_acc_test: f64,
    pub kl_upper: f64,
    pub kl_correction: f64,
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffled pass over a dataset's indices; reshuffles when exhausted.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    at: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), at: n, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_batch(&mut self, m: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            if self.at == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.at = 0;
            }
            let take = (m - out.len()).min(self.order.len() - self.at);
            out.extend_from_slice(&self.order[self.at..self.at + take]);
            self.at += take;
        }
        out
    }
}

/// Builds the architecture a configuration asks for on a dataset.
pub fn arch_for(cfg: &TrainConfig, ds: &LabeledDataset) -> Result<ArchConfig> {
    let arch = ArchConfig::new(cfg.preset, ds.input_shape(cfg.preset.layout()), cfg.d_z, ds.n_u, ds.n_s)?;
    Ok(if cfg.batch_norm { arch } else { arch.without_batch_norm() })
}

fn passes(unit: IterationUnit, iterations: usize, n: usize, batch: usize) -> usize {
    match unit {
        IterationUnit::Pass => iterations,
        IterationUnit::Epoch => iterations * n.div_ceil(batch),
    }
}

/// Warm-up: block (1) alone at the warm-up rate, batch size and β.
/// Returns the per-step losses.
pub fn pretrain(bundle: &mut ModelBundle, train: &LabeledDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(invalid("warm-up needs a non-empty training split"));
    }
    let layout = bundle.arch.layout();
    let mut stream = BatchStream::new(train.len(), cfg.seed ^ WARMUP_STREAM);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ WARMUP_STREAM);
    rng.set_stream(1);
    let params = BlockParams { beta: cfg.warmup_beta(), temperature: cfg.gumbel_temperature, lr: cfg.warmup.lr };
    let steps = passes(cfg.iteration_unit, cfg.warmup.iterations, train.len(), cfg.warmup.batch);
    let mut losses = Vec::with_capacity(steps);
    for it in 0..steps {
        let idx = stream.next_batch(cfg.warmup.batch);
        let batch = BlockBatch::draw(train, &idx, layout, bundle.arch.d_z, &mut rng);
        losses.push(block_step(bundle, Block::EncoderDecoder, &batch, params, it)?);
    }
    Ok(losses)
}

/// Fraction of examples whose decoded utility label is correct, using
/// sampled codes with noise drawn from `seed`.
pub fn utility_accuracy(bundle: &ModelBundle, ds: &LabeledDataset, seed: u64) -> Result<f64> {
    let layout = bundle.arch.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len())).collect();
        let eps = gauss::standard_normal(&[idx.len(), bundle.arch.d_z], &mut rng);
        let post = bundle.encode(&ds.batch_x(&idx, layout), &eps)?;
        let probs = bundle.decode_utility(&post.z)?;
        correct += idx.iter().enumerate().filter(|(r, &i)| argmax(probs.row(*r)) == ds.u[i]).count();
    }
    Ok(correct as f64 / ds.len().max(1) as f64)
}

/// Training state: the bundle, counters and append-only histories.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub bundle: ModelBundle,
    pub splits: &'a Splits,
    pub iteration: usize,
    pub losses: Vec<[f64; 5]>,
    pub history: Vec<MetricRow>,
    layout: InputLayout,
    stream: BatchStream,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, bundle: ModelBundle, splits: &'a Splits) -> Result<Self> {
        cfg.validate()?;
        if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
            return Err(invalid("training needs non-empty train, validation and test splits"));
        }
        let layout = bundle.arch.layout();
        Ok(Self {
            stream: BatchStream::new(splits.train.len(), cfg.seed),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
            cfg,
            bundle,
            splits,
            iteration: 0,
            losses: Vec::new(),
            history: Vec::new(),
            layout,
        })
    }

    /// Draws a fresh mini-batch and applies one block.
    pub fn run_block(&mut self, block: Block) -> Result<f64> {
        let idx = self.stream.next_batch(self.cfg.batch);
        let batch = BlockBatch::draw(&self.splits.train, &idx, self.layout, self.cfg.d_z, &mut self.rng);
        let lr = if block == Block::EncoderDecoder { self.cfg.block1_lr } else { self.cfg.lr };
        let params = BlockParams { beta: self.cfg.beta, temperature: self.cfg.gumbel_temperature, lr };
        block_step(&mut self.bundle, block, &batch, params, self.iteration)
    }

    /// One pass through blocks (1) to (5).
    pub fn iterate(&mut self) -> Result<[f64; 5]> {
        let mut out = [0.0; 5];
        for (k, block) in Block::ALL.into_iter().enumerate() {
            out[k] = self.run_block(block)?;
        }
        self.losses.push(out);
        self.iteration += 1;
        Ok(out)
    }

    /// Accuracies on all three splits and the complexity estimate on the
    /// test split, all with fixed evaluation noise.
    pub fn evaluate(&mut self) -> Result<MetricRow> {
        let seed = self.cfg.seed ^ EVAL_STREAM;
        let last = self.losses.last().copied().unwrap_or([f64::NAN; 5]);
        let complexity = complexity_estimate(&self.bundle, &self.splits.test, seed)?;
        let row = MetricRow {
            iter: self.iteration,
            block1_loss: last[0],
            block2_loss: last[1],
            block3_loss: last[2],
            block4_loss: last[3],
            block5_loss: last[4],
            util_acc_train: utility_accuracy(&self.bundle, &self.splits.train, seed)?,
            util_acc_val: utility_accuracy(&self.bundle, &self.splits.val, seed.wrapping_add(1))?,
            util_acc_test: utility_accuracy(&self.bundle, &self.splits.test, seed.wrapping_add(2))?,
            kl_upper: complexity.kl_upper,
            kl_correction: complexity.correction,
        };
        self.history.push(row.clone());
        Ok(row)
    }

    /// Iterates until the budget is spent or validation accuracy has not
    /// improved for `patience` evaluations.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// [`Trainer::run`] with a hook called after every evaluation, e.g. to
    /// write periodic checkpoints.
    pub fn run_with(&mut self, mut on_eval: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        let total = passes(self.cfg.iteration_unit, self.cfg.iterations, self.splits.train.len(), self.cfg.batch);
        let (mut best, mut stale) = (f64::NEG_INFINITY, 0);
        while self.iteration < total {
            self.iterate()?;
            if self.iteration % self.cfg.eval_every == 0 || self.iteration == total {
                let row = self.evaluate()?;
                on_eval(self)?;
                log::debug!("iter {} val acc {:.4} kl {:.4}", row.iter, row.util_acc_val, row.kl_upper);
                if row.util_acc_val > best {
                    best = row.util_acc_val;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.cfg.patience {
                        log::info!("early stop at iteration {}", self.iteration);
                        break;
                    }
                }
            }
        }
        if self.history.last().map_or(true, |r| r.iter != self.iteration) {
            self.evaluate()?;
            on_eval(self)?;
        }
        Ok(())
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub warmup_losses: Vec<f64>,
    pub history: Vec<MetricRow>,
}

/// Initializes a bundle, warms it up, then runs the alternating loop.
pub fn train(cfg: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut bundle = ModelBundle::init(arch_for(cfg, &splits.train)?, cfg.seed);
    let warmup_losses = pretrain(&mut bundle, &splits.train, cfg)?;
    let mut trainer = Trainer::new(cfg.clone(), bundle, splits)?;
    trainer.run()?;
    Ok(TrainOutcome { bundle: trainer.bundle, warmup_losses, history: trainer.history })
}

/// Mean cross-entropy of a batch under the decoder applied to sampled codes;
/// handy for checking the block-(1) loss at β = 0.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    labels.iter().enumerate().map(|(i, &u)| -probs.row(i)[u].max(super::blocks::NLL_FLOOR).ln()).sum::<f64>() / n
}
