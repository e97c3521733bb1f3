use serde::{Deserialize, Serialize};

use crate::compute::{LayerSpec, Network};
use crate::data::InputLayout;
use crate::error::{invalid, Result};

/// LeakyReLU slope used by every preset.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Convolutional stacks for 28×28×3 inputs.
    MnistRef,
    /// Convolutional stacks for 64×64×3 inputs.
    CelebaRef,
    /// Small affine stacks for CPU-scale runs on any flat input.
    DeskMlp,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mnist-ref" => Ok(Self::MnistRef),
            "celeba-ref" => Ok(Self::CelebaRef),
            "desk-mlp" => Ok(Self::DeskMlp),
            _ => Err(invalid(format!("unknown architecture preset `{name}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MnistRef => "mnist-ref",
            Self::CelebaRef => "celeba-ref",
            Self::DeskMlp => "desk-mlp",
        }
    }

    pub fn layout(self) -> InputLayout {
        match self {
            Self::DeskMlp => InputLayout::Flat,
            _ => InputLayout::Chw,
        }
    }
}

/// Every network of the framework for one preset and problem size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub preset: Preset,
    pub d_z: usize,
    pub n_u: usize,
    pub n_s: usize,
    /// Encoder trunk ending in the `4·d_z`-wide tanh layer.
    pub trunk: Network,
    pub mu_head: Network,
    pub log_sigma_head: Network,
    /// Utility decoder `g_θ`, ending in a softmax over `|U|`.
    pub decoder: Network,
    /// Latent discriminator `D_η`.
    pub latent_disc: Network,
    /// Attribute discriminator `D_ω` over `|U|`-dimensional label vectors.
    pub attr_disc: Network,
    /// Inference network of the adversary, `z → |S|` probabilities.
    pub adversary: Network,
}

fn lrelu() -> LayerSpec {
    LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }
}

/// Affine layer, optional batch norm, activation.
fn fc(fan_in: usize, fan_out: usize, bn: bool, act: LayerSpec) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::affine(fan_in, fan_out)];
    if bn {
        v.push(LayerSpec::batch_norm(fan_out));
    }
    v.push(act);
    v
}

fn conv_block(c_in: usize, c_out: usize, kernel: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::conv(c_in, c_out, kernel, 2), LayerSpec::batch_norm(c_out), lrelu()]
}

impl ArchConfig {
    /// Builds the networks of `preset` for per-example inputs of shape
    /// `input` (as produced by the preset's [`InputLayout`]).
    pub fn new(preset: Preset, input: Vec<usize>, d_z: usize, n_u: usize, n_s: usize) -> Result<Self> {
        if d_z == 0 || n_u < 2 || n_s < 2 {
            return Err(invalid(format!("need d_z ≥ 1 and alphabets ≥ 2, got d_z={d_z}, |U|={n_u}, |S|={n_s}")));
        }
        let h = 4 * d_z;
        let (trunk_layers, dec_hidden, dec_bn, disc_bn, attr_widths) = match preset {
            Preset::MnistRef => {
                expect_input(preset, &input, &[3, 28, 28])?;
                let mut l = conv_block(3, 64, 5);
                l.extend(conv_block(64, 128, 5));
                l.push(LayerSpec::Flatten);
                l.extend(fc(128 * 7 * 7, h, true, LayerSpec::Tanh));
                (l, h, true, true, (8 * n_u, 8 * n_u))
            }
            Preset::CelebaRef => {
                expect_input(preset, &input, &[3, 64, 64])?;
                let mut l = Vec::new();
                for (c_in, c_out) in [(3, 16), (16, 32), (32, 64), (64, 128), (128, 256)] {
                    l.extend(conv_block(c_in, c_out, 3));
                }
                l.push(LayerSpec::Flatten);
                l.extend(fc(256 * 2 * 2, h, true, LayerSpec::Tanh));
                (l, d_z, true, true, (4 * n_u, n_u))
            }
            Preset::DeskMlp => {
                let width: usize = input.iter().product();
                let mut l = vec![LayerSpec::Flatten];
                l.extend(fc(width, 256, false, lrelu()));
                l.extend(fc(256, h, false, LayerSpec::Tanh));
                (l, h, false, false, (8 * n_u, 8 * n_u))
            }
        };
        let trunk = Network::new("enc", input, trunk_layers)?;
        let mu_head = Network::new("mu", vec![h], vec![LayerSpec::affine(h, d_z)])?;
        let log_sigma_head = Network::new("logsig", vec![h], vec![LayerSpec::affine(h, d_z)])?;

        let mut dec = fc(d_z, dec_hidden, dec_bn, lrelu());
        dec.extend([LayerSpec::affine(dec_hidden, n_u), LayerSpec::Softmax]);
        let decoder = Network::new("dec", vec![d_z], dec)?;

        let (w1, w2) = if preset == Preset::DeskMlp { (128, 64) } else { (512, 256) };
        let mut dl = fc(d_z, w1, disc_bn, lrelu());
        dl.extend(fc(w1, w2, disc_bn, lrelu()));
        dl.extend([LayerSpec::affine(w2, 1), LayerSpec::Sigmoid]);
        let latent_disc = Network::new("dlat", vec![d_z], dl)?;

        let mut da = fc(n_u, attr_widths.0, disc_bn, lrelu());
        da.extend(fc(attr_widths.0, attr_widths.1, disc_bn, lrelu()));
        da.extend([LayerSpec::affine(attr_widths.1, 1), LayerSpec::Sigmoid]);
        let attr_disc = Network::new("dattr", vec![n_u], da)?;

        let adversary = adversary_net(d_z, n_s)?;
        Ok(Self { preset, d_z, n_u, n_s, trunk, mu_head, log_sigma_head, decoder, latent_disc, attr_disc, adversary })
    }

    pub fn layout(&self) -> InputLayout {
        self.preset.layout()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.trunk.input_shape
    }
}

fn expect_input(preset: Preset, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(invalid(format!("preset {} expects inputs {want:?}, got {got:?}", preset.name())));
    }
    Ok(())
}

/// `z → FC(64) → LeakyReLU → FC(64) → LeakyReLU → FC(|S|) → softmax`.
pub fn adversary_net(d_z: usize, n_s: usize) -> Result<Network> {
    let mut l = fc(d_z, 64, false, lrelu());
    l.extend(fc(64, 64, false, lrelu()));
    l.extend([LayerSpec::affine(64, n_s), LayerSpec::Softmax]);
    Network::new("adv", vec![d_z], l)
}

/// The MINE statistic network: concatenated `(z, one-hot a)` through three
/// FC(100)+ELU layers to one real output.
pub fn mine_ref(d_z: usize, n_a: usize) -> Result<Network> {
    let mut l = Vec::new();
    let mut width = d_z + n_a;
    for _ in 0..3 {
        l.extend([LayerSpec::affine(width, 100), LayerSpec::Elu { alpha: 1.0 }]);
        width = 100;
    }
    l.push(LayerSpec::affine(100, 1));
    Network::new("mine", vec![d_z + n_a], l)
}

impl ArchConfig {
    /// Drops every batch-norm layer from every stack.
    pub fn without_batch_norm(mut self) -> Self {
        for net in [
            &mut self.trunk,
            &mut self.mu_head,
            &mut self.log_sigma_head,
            &mut self.decoder,
            &mut self.latent_disc,
            &mut self.attr_disc,
            &mut self.adversary,
        ] {
            net.layers.retain(|l| !matches!(l, LayerSpec::BatchNorm { .. }));
        }
        self
    }
}
