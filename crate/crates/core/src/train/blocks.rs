//! The five block losses of the alternating training loop and the
//! single-block update that applies one of them.

use rand::Rng;

use crate::compute::{Adam, Graph, Mode, Tensor, Var};
use crate::data::{InputLayout, LabeledDataset};
use crate::error::{Error, Result};
use crate::gauss;
use crate::models::{one_hot, ModelBundle};

/// Floor applied to decoder probabilities inside the log-likelihood.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    /// Encoder and utility decoder on likelihood plus β·KL.
    EncoderDecoder,
    /// Latent discriminator `D_η`, posterior versus prior codes.
    LatentDisc,
    /// Encoder against `D_η`.
    EncoderAdversarial,
    /// Attribute discriminator `D_ω`, real labels versus decoded prior codes.
    AttrDisc,
    /// Utility decoder against `D_ω`.
    DecoderAdversarial,
}

impl Block {
    pub const ALL: [Block; 5] =
        [Block::EncoderDecoder, Block::LatentDisc, Block::EncoderAdversarial, Block::AttrDisc, Block::DecoderAdversarial];

    /// 1-based position in the loop.
    pub fn number(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).unwrap() + 1
    }

    /// Tags of the parameter sets this block updates.
    pub fn updates(self) -> &'static [&'static str] {
        match self {
            Block::EncoderDecoder => &["phi", "theta"],
            Block::LatentDisc => &["eta"],
            Block::EncoderAdversarial => &["phi"],
            Block::AttrDisc => &["omega"],
            Block::DecoderAdversarial => &["theta"],
        }
    }
}

/// Everything any block may consume: a data batch with its labels and
/// encoder noise, prior codes, and Gumbel noise for the relaxed sample.
#[derive(Clone, Debug)]
pub struct BlockBatch {
    pub x: Tensor,
    pub u: Vec<usize>,
    pub eps: Tensor,
    pub prior: Tensor,
    pub gumbel: Tensor,
}

impl BlockBatch {
    pub fn draw<R: Rng>(ds: &LabeledDataset, idx: &[usize], layout: InputLayout, d_z: usize, rng: &mut R) -> Self {
        let m = idx.len();
        let eps = gauss::standard_normal(&[m, d_z], rng);
        let prior = gauss::standard_normal(&[m, d_z], rng);
        let gumbel = Tensor::new(vec![m, ds.n_u], (0..m * ds.n_u).map(|_| gumbel_noise(rng)).collect()).expect("shape");
        Self { x: ds.batch_x(idx, layout), u: idx.iter().map(|&i| ds.u[i]).collect(), eps, prior, gumbel }
    }
}

fn gumbel_noise<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Weights of one block update.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub beta: f64,
    pub temperature: f64,
    /// Learning rate of the block being run.
    pub lr: f64,
}

/// Mean negative log-likelihood of `u` under the decoder probabilities.
fn nll(g: &mut Graph, logits: Var, u: &[usize]) -> Result<Var> {
    let probs = g.softmax(logits)?;
    let picked = g.pick_cols(probs, u)?;
    let logp = g.ln(picked, NLL_FLOOR);
    let mean = g.mean(logp);
    Ok(g.scale(mean, -1.0))
}

/// `mean(log σ(a))` on one set of logits plus `mean(log(1 − σ(b)))` on another.
fn log_odds_terms(g: &mut Graph, pos: Var, neg: Var) -> Result<Var> {
    let lp = g.log_sigmoid(pos);
    let flipped = g.scale(neg, -1.0);
    let ln = g.log_sigmoid(flipped);
    let (a, b) = (g.mean(lp), g.mean(ln));
    g.add(a, b)
}

fn relaxed_labels(g: &mut Graph, logits: Var, gumbel: &Tensor, temperature: f64) -> Result<Var> {
    let noise = g.input(gumbel.clone());
    let perturbed = g.add(logits, noise)?;
    let scaled = g.scale(perturbed, 1.0 / temperature);
    g.softmax(scaled)
}

/// Records the loss of `block` on `batch`. With `record` the graph tracks
/// exactly the parameter sets the block updates.
pub fn block_graph(bundle: &ModelBundle, block: Block, batch: &BlockBatch, beta: f64, temperature: f64, record: bool) -> Result<(Graph, Var)> {
    let mut g = if record { Graph::new() } else { Graph::inference() };
    if record {
        for tag in block.updates() {
            let set = match *tag {
                "phi" => &bundle.phi,
                "theta" => &bundle.theta,
                "eta" => &bundle.eta,
                _ => &bundle.omega,
            };
            g.track(set);
        }
    }
    let frozen = Mode::TrainFrozenStats;
    let loss = match block {
        Block::EncoderDecoder => {
            let x = g.input(batch.x.clone());
            let lv = bundle.encode_graph(&mut g, x, &batch.eps, Mode::Train)?;
            let logits = bundle.decoder_logits(&mut g, lv.z, Mode::Train)?;
            let nll = nll(&mut g, logits, &batch.u)?;
            let kl_rows = gauss::kl_graph(&mut g, lv.mu, lv.log_sigma)?;
            let kl = g.mean(kl_rows);
            let weighted = g.scale(kl, beta);
            g.add(nll, weighted)?
        }
        Block::LatentDisc => {
            let x = g.input(batch.x.clone());
            let lv = bundle.encode_graph(&mut g, x, &batch.eps, frozen)?;
            let prior = g.input(batch.prior.clone());
            let lz = bundle.latent_disc_logits(&mut g, lv.z, Mode::Train)?;
            let lp = bundle.latent_disc_logits(&mut g, prior, Mode::Train)?;
            let terms = log_odds_terms(&mut g, lz, lp)?;
            g.scale(terms, -beta)
        }
        Block::EncoderAdversarial => {
            let x = g.input(batch.x.clone());
            let lv = bundle.encode_graph(&mut g, x, &batch.eps, frozen)?;
            let lz = bundle.latent_disc_logits(&mut g, lv.z, frozen)?;
            let log_d = g.log_sigmoid(lz);
            let mean = g.mean(log_d);
            g.scale(mean, beta)
        }
        Block::AttrDisc => {
            let prior = g.input(batch.prior.clone());
            let logits = bundle.decoder_logits(&mut g, prior, frozen)?;
            let fake = relaxed_labels(&mut g, logits, &batch.gumbel, temperature)?;
            let real = g.input(one_hot(&batch.u, bundle.arch.n_u));
            let lr = bundle.attr_disc_logits(&mut g, real, Mode::Train)?;
            let lf = bundle.attr_disc_logits(&mut g, fake, Mode::Train)?;
            let terms = log_odds_terms(&mut g, lr, lf)?;
            g.scale(terms, -1.0)
        }
        Block::DecoderAdversarial => {
            let prior = g.input(batch.prior.clone());
            let logits = bundle.decoder_logits(&mut g, prior, frozen)?;
            let fake = relaxed_labels(&mut g, logits, &batch.gumbel, temperature)?;
            let lf = bundle.attr_disc_logits(&mut g, fake, frozen)?;
            let flipped = g.scale(lf, -1.0);
            let log_one_minus = g.log_sigmoid(flipped);
            g.mean(log_one_minus)
        }
    };
    Ok((g, loss))
}

/// Value of the block loss without touching any parameter.
pub fn block_loss(bundle: &ModelBundle, block: Block, batch: &BlockBatch, beta: f64, temperature: f64) -> Result<f64> {
    let (g, loss) = block_graph(bundle, block, batch, beta, temperature, false)?;
    Ok(g.value(loss).item())
}

/// Runs one Adam update of the sets named by `block` and returns the loss
/// before the update. Running batch-norm statistics move only for
/// networks in their own training block.
pub fn block_step(bundle: &mut ModelBundle, block: Block, batch: &BlockBatch, p: BlockParams, iteration: usize) -> Result<f64> {
    let (g, loss) = block_graph(bundle, block, batch, p.beta, p.temperature, true)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { stage: format!("block ({})", block.number()), iteration });
    }
    // β multiplies both latent-discriminator losses; at β = 0 they are
    // identically zero and the update is a no-op.
    let inert = p.beta == 0.0 && matches!(block, Block::LatentDisc | Block::EncoderAdversarial);
    if inert {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    let adam = Adam::new(p.lr);
    for tag in block.updates() {
        let set = match *tag {
            "phi" => &mut bundle.phi,
            "theta" => &mut bundle.theta,
            "eta" => &mut bundle.eta,
            _ => &mut bundle.omega,
        };
        let gm = grads.for_set(set);
        adam.step(set, &gm)?;
        set.commit_running_stats(&g)?;
    }
    Ok(value)
}

