use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{Adam, Graph, Mode, Tensor};
use crate::error::{invalid, Error, Result};
use crate::models::{mine_ref, one_hot, MineNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    Mine,
    DensityRatio,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    pub estimator: EstimatorTag,
    pub samples: usize,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Rate of the moving average of `E[exp T]` used in the gradient.
    pub ema_rate: f64,
    /// Share of the samples held out for the reported bound.
    pub holdout: f64,
    /// Independent shuffles averaged in the reported bound.
    pub eval_shuffles: usize,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self { steps: 5000, batch: 128, lr: 3e-3, ema_rate: 0.99, holdout: 0.2, eval_shuffles: 5, seed: 0 }
    }
}

fn concat_rows(x: &Tensor, y: &Tensor, xi: &[usize], yi: &[usize]) -> Tensor {
    let (dx, dy) = (x.row_len(), y.row_len());
    let mut data = Vec::with_capacity(xi.len() * (dx + dy));
    for (&a, &b) in xi.iter().zip(yi) {
        data.extend_from_slice(x.row(a));
        data.extend_from_slice(y.row(b));
    }
    Tensor::new(vec![xi.len(), dx + dy], data).expect("shape")
}

/// Donsker–Varadhan bound `mean T(joint) − ln mean exp T(shuffled)` on the
/// given indices, averaged over `shuffles` permutations.
fn dv_bound(net: &MineNet, x: &Tensor, y: &Tensor, idx: &[usize], shuffles: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let tj = net.statistic(&concat_rows(x, y, idx, idx))?;
    let joint = tj.data().iter().sum::<f64>() / idx.len() as f64;
    let mut total = 0.0;
    for _ in 0..shuffles {
        let mut perm = idx.to_vec();
        perm.shuffle(rng);
        let tm = net.statistic(&concat_rows(x, y, idx, &perm))?;
        let max = tm.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lme = max + (tm.data().iter().map(|t| (t - max).exp()).sum::<f64>() / idx.len() as f64).ln();
        total += joint - lme;
    }
    Ok(total / shuffles as f64)
}

/// MINE estimate of `I(X; Y)` in nats from paired rows of `x` and `y`.
pub fn mine_estimate(x: &Tensor, y: &Tensor, cfg: &MineConfig) -> Result<MiEstimate> {
    let n = x.rows();
    if n < 2 || y.rows() != n {
        return Err(invalid(format!("MINE needs at least two aligned pairs, got {n} and {}", y.rows())));
    }
    if !(cfg.holdout > 0.0 && cfg.holdout < 1.0) || cfg.batch == 0 || cfg.eval_shuffles == 0 {
        return Err(invalid("MINE holdout must lie in (0, 1) and batch and shuffles must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_eval = ((n as f64 * cfg.holdout).round() as usize).clamp(1, n - 1);
    let (eval_idx, train_idx) = order.split_at(n_eval);

    let mut net = MineNet::init(mine_ref(x.row_len(), y.row_len())?, cfg.seed);
    let adam = Adam::new(cfg.lr);
    let mut ema: Option<f64> = None;
    let m = cfg.batch.min(train_idx.len());
    for step in 0..cfg.steps {
        let bi: Vec<usize> = (0..m).map(|_| train_idx[rng.gen_range(0..train_idx.len())]).collect();
        let bm: Vec<usize> = (0..m).map(|_| train_idx[rng.gen_range(0..train_idx.len())]).collect();
        let mut g = Graph::new();
        g.track(&net.params);
        let joint = g.input(concat_rows(x, y, &bi, &bi));
        let marg = g.input(concat_rows(x, y, &bi, &bm));
        let tj = net.net.forward(&mut g, &net.params, joint, Mode::Train)?;
        let tm = net.net.forward(&mut g, &net.params, marg, Mode::Train)?;
        let et = g.exp(tm);
        let mean_et = g.mean(et);
        let batch_et = g.value(mean_et).item();
        if !batch_et.is_finite() {
            return Err(Error::NonFiniteLoss { stage: "MINE".into(), iteration: step });
        }
        let avg = match ema {
            None => batch_et,
            Some(prev) => cfg.ema_rate * prev + (1.0 - cfg.ema_rate) * batch_et,
        };
        ema = Some(avg);
        // Gradient of ln E[exp T] with the denominator replaced by its
        // moving average.
        let partition = g.scale(mean_et, 1.0 / avg);
        let mean_tj = g.mean(tj);
        let bound = g.sub(mean_tj, partition)?;
        let loss = g.scale(bound, -1.0);
        let grads = g.backward(loss)?.for_set(&net.params);
        adam.step(&mut net.params, &grads)?;
    }
    let value = dv_bound(&net, x, y, eval_idx, cfg.eval_shuffles, &mut rng)?;
    Ok(MiEstimate { value, estimator: EstimatorTag::Mine, samples: n, steps: cfg.steps })
}

/// MINE estimate of `I(Z; A)` for a discrete attribute, one-hot encoded.
/// A single-class attribute carries no information and yields 0.
pub fn mine_estimate_labels(z: &Tensor, labels: &[usize], n_classes: usize, cfg: &MineConfig) -> Result<MiEstimate> {
    if labels.len() != z.rows() {
        return Err(Error::Shape(format!("{} codes but {} labels", z.rows(), labels.len())));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(invalid("attribute label outside its alphabet"));
    }
    if labels.windows(2).all(|w| w[0] == w[1]) {
        log::warn!("attribute takes a single value; reporting zero information");
        return Ok(MiEstimate { value: 0.0, estimator: EstimatorTag::Mine, samples: labels.len(), steps: 0 });
    }
    mine_estimate(z, &one_hot(labels, n_classes), cfg)
}
