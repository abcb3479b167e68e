use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor4;
use super::{input_tensor, tensor_to_grid};
use crate::encoding::{Grid, GridStack};
use crate::error::{Error, Result};

pub const INPUT_CHANNELS: usize = 3;

/// U-Net weights.
///
/// `tensors` is ordered: for each encode level `0..depth` the two 3×3 convs
/// (kernel, bias, kernel, bias); the bottleneck's two convs; for each decode
/// level `depth-1..=0` the 2×2 up-convolution (kernel, bias) followed by two
/// convs; finally the 1×1 output conv (kernel, bias). Level `l` has
/// `base_channels · 2^l` channels and the bottleneck `base_channels · 2^depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub depth: usize,
    pub base_channels: usize,
    pub tensors: Vec<Tensor4>,
}

impl UNetParams {
    /// Parameter shapes in storage order.
    pub fn layout(depth: usize, base_channels: usize) -> Vec<[usize; 4]> {
        let ch = |l: usize| base_channels << l;
        let mut shapes = Vec::new();
        let conv = |shapes: &mut Vec<[usize; 4]>, ci: usize, co: usize, k: usize| {
            shapes.push([co, ci, k, k]);
            shapes.push([co, 1, 1, 1]);
        };
        for l in 0..depth {
            let ci = if l == 0 { INPUT_CHANNELS } else { ch(l - 1) };
            conv(&mut shapes, ci, ch(l), 3);
            conv(&mut shapes, ch(l), ch(l), 3);
        }
        let bottom_in = if depth == 0 { INPUT_CHANNELS } else { ch(depth - 1) };
        conv(&mut shapes, bottom_in, ch(depth), 3);
        conv(&mut shapes, ch(depth), ch(depth), 3);
        for l in (0..depth).rev() {
            shapes.push([ch(l + 1), ch(l), 2, 2]);
            shapes.push([ch(l), 1, 1, 1]);
            conv(&mut shapes, 2 * ch(l), ch(l), 3);
            conv(&mut shapes, ch(l), ch(l), 3);
        }
        conv(&mut shapes, ch(0), 1, 1);
        shapes
    }

    /// Kaiming-uniform kernels (bound `√(6 / fan_in)`), zero biases.
    pub fn init(depth: usize, base_channels: usize, seed: u64) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::InvalidParameter("base_channels must be positive".into()));
        }
        if depth > 8 || (base_channels << depth) > 1 << 16 {
            return Err(Error::InvalidParameter(format!("depth {depth} with {base_channels} base channels is too large")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Self::layout(depth, base_channels)
            .into_iter()
            .map(|shape| {
                if shape[1..] == [1, 1, 1] {
                    return Tensor4::zeros(shape);
                }
                // conv kernels are [co, ci, k, k]; up-conv kernels are [ci, co, 2, 2]
                // and each output pixel sees exactly ci inputs
                let is_up = shape[2] == 2;
                let fan_in = if is_up { shape[0] } else { shape[1] * shape[2] * shape[3] };
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor4::from_fn(shape, |_| rng.random_range(-bound..bound))
            })
            .collect();
        Ok(UNetParams { depth, base_channels, tensors })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor4::len).sum()
    }

    /// Confirms the tensors match the declared architecture.
    pub fn validate(&self) -> Result<()> {
        let layout = Self::layout(self.depth, self.base_channels);
        if layout.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors for depth {} (expected {})",
                self.tensors.len(),
                self.depth,
                layout.len()
            )));
        }
        for (k, (shape, t)) in layout.iter().zip(&self.tensors).enumerate() {
            if *shape != t.shape || t.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!("tensor {k} has shape {:?}, expected {shape:?}", t.shape)));
            }
        }
        Ok(())
    }

    /// Records every parameter as a tape leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let m = 1usize << self.depth;
        if shape[1] != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch(format!("expected {INPUT_CHANNELS} input channels, got {}", shape[1])));
        }
        if shape[2] == 0 || shape[3] == 0 || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims {}x{} not divisible by 2^{}",
                shape[2], shape[3], self.depth
            )));
        }
        Ok(())
    }
}

/// Records the forward pass on `tape`; `p` are the parameter leaves from
/// [`UNetParams::leaves`]. Returns the post-sigmoid output.
pub fn forward_on_tape(tape: &mut Tape, depth: usize, p: &[Var], x: Var) -> Result<Var> {
    let mut k = 0;
    let mut next = || {
        let v = p[k];
        k += 1;
        v
    };
    let block = |tape: &mut Tape, next: &mut dyn FnMut() -> Var, x: Var| -> Result<Var> {
        let (w1, b1, w2, b2) = (next(), next(), next(), next());
        let h = tape.conv2d(x, w1, b1, 1)?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, w2, b2, 1)?;
        Ok(tape.relu(h))
    };
    let mut skips = Vec::with_capacity(depth);
    let mut h = x;
    for _ in 0..depth {
        let s = block(tape, &mut next, h)?;
        skips.push(s);
        h = tape.maxpool2(s)?;
    }
    h = block(tape, &mut next, h)?;
    for skip in skips.into_iter().rev() {
        let (uw, ub) = (next(), next());
        let up = tape.upconv2(h, uw, ub)?;
        let cat = tape.concat(up, skip)?;
        h = block(tape, &mut next, cat)?;
    }
    let (fw, fb) = (next(), next());
    let logits = tape.conv2d(h, fw, fb, 0)?;
    Ok(tape.sigmoid(logits))
}

/// Predicted density in `(0, 1)` of shape `(n, 1, H, W)` for a `(n, 3, H, W)` input.
pub fn unet_forward(params: &UNetParams, input: &Tensor4) -> Result<Tensor4> {
    params.check_input(input.shape)?;
    let mut tape = Tape::new();
    let p = params.leaves(&mut tape);
    let x = tape.leaf(input.clone());
    let y = forward_on_tape(&mut tape, params.depth, &p, x)?;
    Ok(tape.value(y).clone())
}

/// Predicted path density for one encoded scenario.
pub fn predict(params: &UNetParams, stack: &GridStack) -> Result<Grid> {
    let out = unet_forward(params, &input_tensor(&[stack])?)?;
    tensor_to_grid(&out, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_| rng.random_range(-10.0..10.0))
    }

    #[test]
    fn channels_double_and_mirror() {
        let shapes = UNetParams::layout(2, 4);
        // enc0 conv1, enc1 conv1, bottleneck conv1
        assert_eq!(shapes[0], [4, 3, 3, 3]);
        assert_eq!(shapes[4], [8, 4, 3, 3]);
        assert_eq!(shapes[8], [16, 8, 3, 3]);
        // first decode level upsamples 16 → 8 and merges with the 8-channel skip
        assert_eq!(shapes[12], [16, 8, 2, 2]);
        assert_eq!(shapes[14], [8, 16, 3, 3]);
        assert_eq!(*shapes.last().unwrap(), [1, 1, 1, 1]);
        assert_eq!(shapes[shapes.len() - 2], [1, 4, 1, 1]);
    }

    #[test]
    fn output_shape_and_range() {
        let params = UNetParams::init(2, 4, 1).unwrap();
        let x = random_input([2, 3, 8, 12], 3);
        let y = unet_forward(&params, &x).unwrap();
        assert_eq!(y.shape, [2, 1, 8, 12]);
        assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn reproducible() {
        let a = UNetParams::init(2, 4, 11).unwrap();
        let b = UNetParams::init(2, 4, 11).unwrap();
        assert_eq!(a, b);
        let x = random_input([1, 3, 8, 8], 5);
        let ya = unet_forward(&a, &x).unwrap();
        let yb = unet_forward(&b, &x).unwrap();
        assert!(ya.data.iter().zip(&yb.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn indivisible_input_rejected() {
        let params = UNetParams::init(3, 2, 0).unwrap();
        assert!(unet_forward(&params, &Tensor4::zeros([1, 3, 12, 16])).is_err());
        assert!(unet_forward(&params, &Tensor4::zeros([1, 2, 16, 16])).is_err());
    }

    #[test]
    fn validate_detects_wrong_shapes() {
        let mut params = UNetParams::init(1, 2, 0).unwrap();
        params.validate().unwrap();
        params.tensors[0] = Tensor4::zeros([1, 1, 1, 1]);
        assert!(params.validate().is_err());
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        for seed in 0..5 {
            let params = UNetParams::init(2, 4, seed).unwrap();
            let y = unet_forward(&params, &random_input([1, 3, 16, 16], 100 + seed)).unwrap();
            assert!(y.all_finite());
            assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
