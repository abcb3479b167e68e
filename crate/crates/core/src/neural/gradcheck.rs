//! Central finite-difference checks of the differentiable layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor4;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv2d,
    MaxPool2,
    UpConv2,
    Relu,
    Sigmoid,
    Bce,
}

impl Layer {
    pub const ALL: [Layer; 6] = [Layer::Conv2d, Layer::MaxPool2, Layer::UpConv2, Layer::Relu, Layer::Sigmoid, Layer::Bce];
}

const STEP: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Result of one check: the input shape and worst relative error over all inputs.
#[derive(Debug, Clone)]
pub struct Check {
    pub layer: Layer,
    pub input_shape: [usize; 4],
    pub rel_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4 {
    Tensor4::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Checks `layer` on random shapes and values drawn from `seed`.
///
/// The scalar objective is `Σ r ⊙ layer(inputs)` for a fixed random `r`.
pub fn check_layer(layer: Layer, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    // even sizes serve the pooling layer; others get an odd bump
    let mut h = 2 * rng.random_range(1..=4);
    let mut w = 2 * rng.random_range(1..=4);
    if !matches!(layer, Layer::MaxPool2 | Layer::UpConv2) {
        h += rng.random_range(0..=1);
        w += rng.random_range(0..=1);
    }
    let xs = [n, c, h, w];
    let leaves: Vec<Tensor4> = match layer {
        Layer::Conv2d => {
            let co = rng.random_range(1..=3);
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            vec![uniform(&mut rng, xs, -1.0, 1.0), uniform(&mut rng, [co, c, k, k], -1.0, 1.0), uniform(&mut rng, [co, 1, 1, 1], -1.0, 1.0)]
        }
        Layer::UpConv2 => {
            let co = rng.random_range(1..=3);
            vec![uniform(&mut rng, xs, -1.0, 1.0), uniform(&mut rng, [c, co, 2, 2], -1.0, 1.0), uniform(&mut rng, [co, 1, 1, 1], -1.0, 1.0)]
        }
        Layer::Bce => vec![uniform(&mut rng, xs, 0.05, 0.95)],
        _ => vec![uniform(&mut rng, xs, -3.0, 3.0)],
    };
    let label = Tensor4::from_fn(xs, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let kernel_pad = leaves.get(1).map_or(0, |k| k.shape[2] / 2);
    let build = |tape: &mut Tape, v: &[Var]| -> Result<Var> {
        match layer {
            Layer::Conv2d => tape.conv2d(v[0], v[1], v[2], kernel_pad),
            Layer::MaxPool2 => tape.maxpool2(v[0]),
            Layer::UpConv2 => tape.upconv2(v[0], v[1], v[2]),
            Layer::Relu => Ok(tape.relu(v[0])),
            Layer::Sigmoid => Ok(tape.sigmoid(v[0])),
            Layer::Bce => tape.bce(v[0], label.clone()),
        }
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let r = uniform(&mut rng, tape.value(out).shape, -1.0, 1.0);
    let grads = tape.backward_with(out, r.clone())?;
    let eval = |ls: &[Tensor4]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ls.iter().map(|x| t.leaf(x.clone())).collect();
        let o = build(&mut t, &vs)?;
        Ok(t.value(o).dot(&r))
    };
    let mut worst = 0.0f64;
    let mut work = leaves.clone();
    for (li, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map_or_else(|| vec![0.0; leaves[li].len()], |g| g.data.clone());
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = work[li].data[k];
            work[li].data[k] = orig + STEP;
            let plus = eval(&work)?;
            work[li].data[k] = orig - STEP;
            let minus = eval(&work)?;
            work[li].data[k] = orig;
            *slot = (plus - minus) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(Check { layer, input_shape: xs, rel_error: worst })
}
