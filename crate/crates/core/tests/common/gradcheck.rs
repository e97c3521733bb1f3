//! Central finite-difference oracle over randomly generated small networks.

use rand::seq::SliceRandom;
use rand::Rng;
use varleak::compute::{Graph, LayerSpec, Mode, Network, ParamSet, Tensor};

pub const STEP: f64 = 1e-5;

pub struct Case {
    pub net: Network,
    pub params: ParamSet,
    pub input: Tensor,
    pub loss_weights: Tensor,
}

fn activation<R: Rng>(rng: &mut R) -> LayerSpec {
    match rng.gen_range(0..4) {
        0 => LayerSpec::LeakyRelu { slope: 0.2 },
        1 => LayerSpec::Tanh,
        2 => LayerSpec::Elu { alpha: 1.0 },
        _ => LayerSpec::Sigmoid,
    }
}

fn head<R: Rng>(rng: &mut R, out: usize, layers: &mut Vec<LayerSpec>) {
    match rng.gen_range(0..3) {
        0 => layers.push(LayerSpec::Sigmoid),
        1 if out >= 2 => layers.push(LayerSpec::Softmax),
        _ => {}
    }
}

/// Draws a network of at most three parameterized layers and at most 64
/// trainable scalars. `family` rotates through dense, convolutional and
/// batch-normalized stacks so every layer kind is exercised.
pub fn random_case<R: Rng>(rng: &mut R, family: usize) -> Case {
    loop {
        let batch = rng.gen_range(3..6);
        let (input_shape, layers) = match family % 4 {
            0 => {
                let (d, h, o) = (rng.gen_range(2..5), rng.gen_range(2..7), rng.gen_range(1..4));
                let mut l = vec![LayerSpec::affine(d, h), activation(rng), LayerSpec::affine(h, o)];
                head(rng, o, &mut l);
                (vec![d], l)
            }
            1 => {
                let (c, hw) = (rng.gen_range(1..3), rng.gen_range(3..6));
                let (oc, k, s) = (rng.gen_range(1..3), *[1, 3].choose(rng).unwrap(), rng.gen_range(1..3));
                let pad = (k - 1) / 2;
                let side = (hw + 2 * pad - k) / s + 1;
                let o = rng.gen_range(1..3);
                let mut l = vec![
                    LayerSpec::conv(c, oc, k, s),
                    activation(rng),
                    LayerSpec::Flatten,
                    LayerSpec::affine(oc * side * side, o),
                ];
                head(rng, o, &mut l);
                (vec![c, hw, hw], l)
            }
            2 => {
                let (d, h, o) = (rng.gen_range(2..5), rng.gen_range(2..6), rng.gen_range(1..3));
                let mut l = vec![LayerSpec::affine(d, h), LayerSpec::batch_norm(h), activation(rng), LayerSpec::affine(h, o)];
                head(rng, o, &mut l);
                (vec![d], l)
            }
            _ => {
                let (c, hw, oc): (usize, usize, usize) = (rng.gen_range(1..3), rng.gen_range(3..5), rng.gen_range(1..3));
                let l = vec![
                    LayerSpec::conv(c, oc, 3, 2),
                    LayerSpec::batch_norm(oc),
                    activation(rng),
                    LayerSpec::Flatten,
                    LayerSpec::affine(oc * ((hw - 1) / 2 + 1).pow(2), 1),
                ];
                (vec![c, hw, hw], l)
            }
        };
        let net = Network::new("net", input_shape.clone(), layers).expect("generated stack is consistent");
        let mut params = ParamSet::new("p");
        net.init_params(&mut params, rng);
        if params.trainable_count() > 64 {
            continue;
        }
        // Perturb batch-norm affine terms and biases away from their init.
        for name in params.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>() {
            if params.get(&name).unwrap().trainable {
                for v in params.value_mut(&name).unwrap().data_mut() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
        let mut shape = vec![batch];
        shape.extend(&input_shape);
        let n: usize = shape.iter().product();
        let input = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap();
        let out = net.output_width().unwrap();
        let loss_weights =
            Tensor::new(vec![batch, out], (0..batch * out).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        return Case { net, params, input, loss_weights };
    }
}

fn loss_graph(case: &Case, params: &ParamSet, record: bool) -> (Graph, varleak::compute::Var) {
    let mut g = if record { Graph::new() } else { Graph::inference() };
    g.track(params);
    let x = g.input(case.input.clone());
    let y = case.net.forward(&mut g, params, x, Mode::TrainFrozenStats).unwrap();
    let w = g.input(case.loss_weights.clone());
    let wy = g.mul(y, w).unwrap();
    let loss = g.sum(wy);
    (g, loss)
}

pub fn loss_value(case: &Case, params: &ParamSet) -> f64 {
    let (g, loss) = loss_graph(case, params, false);
    g.value(loss).item()
}

/// Largest relative discrepancy between analytic and central-difference
/// gradients over every trainable scalar of the case.
pub fn max_relative_error(case: &Case) -> f64 {
    let (g, loss) = loss_graph(case, &case.params, true);
    let grads = g.backward(loss).unwrap().for_set(&case.params);
    let mut worst = 0.0f64;
    for (name, analytic) in grads.iter() {
        for i in 0..analytic.len() {
            let mut plus = case.params.clone();
            plus.value_mut(name).unwrap().data_mut()[i] += STEP;
            let mut minus = case.params.clone();
            minus.value_mut(name).unwrap().data_mut()[i] -= STEP;
            let numeric = (loss_value(case, &plus) - loss_value(case, &minus)) / (2.0 * STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
