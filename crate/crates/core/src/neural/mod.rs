//! Tensor math, reverse-mode differentiation and the path-density U-Net.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod unet;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use tape::{Tape, Var};
pub use tensor::Tensor4;
pub use train::{train, TrainConfig, TrainReport};
pub use unet::{predict, unet_forward, UNetParams};

use crate::encoding::{Grid, GridStack};
use crate::error::{Error, Result};

/// Stacks `(O, T, I)` channels of each grid stack into a `(n, 3, n1, n2)` input.
pub fn input_tensor(stacks: &[&GridStack]) -> Result<Tensor4> {
    let first = stacks.first().ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let (n1, n2) = first.dims();
    let mut data = Vec::with_capacity(stacks.len() * 3 * n1 * n2);
    for s in stacks {
        if s.dims() != (n1, n2) {
            return Err(Error::ShapeMismatch(format!("grid {:?} in a batch of {:?}", s.dims(), (n1, n2))));
        }
        for g in [&s.obstacles, &s.target, &s.start] {
            data.extend(g.values.iter().map(|&v| v as f64));
        }
    }
    Tensor4::from_vec([stacks.len(), 3, n1, n2], data)
}

/// Stacks the labels into a `(n, 1, n1, n2)` tensor; every stack must be labeled.
pub fn label_tensor(stacks: &[&GridStack]) -> Result<Tensor4> {
    let first = stacks.first().ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let (n1, n2) = first.dims();
    let mut data = Vec::with_capacity(stacks.len() * n1 * n2);
    for s in stacks {
        let label = s.label.as_ref().ok_or_else(|| Error::InvalidParameter("record has no label".into()))?;
        if s.dims() != (n1, n2) {
            return Err(Error::ShapeMismatch(format!("grid {:?} in a batch of {:?}", s.dims(), (n1, n2))));
        }
        data.extend(label.values.iter().map(|&v| v as f64));
    }
    Tensor4::from_vec([stacks.len(), 1, n1, n2], data)
}

/// Batch item `n`, channel 0 of `t` as a grid.
pub fn tensor_to_grid(t: &Tensor4, n: usize) -> Result<Grid> {
    let plane = t.h() * t.w();
    let item = t.item(n);
    Grid::from_values(t.h(), t.w(), item[..plane].iter().map(|&v| v as f32).collect())
}
