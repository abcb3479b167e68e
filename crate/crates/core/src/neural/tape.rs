//! Reverse-mode differentiation over a recorded sequence of operations.

use super::ops;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, kernel: Var, bias: Var, pad: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    UpConv2 { x: Var, kernel: Var, bias: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { a: Var, b: Var },
    Bce { pred: Var, label: Tensor4 },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, pad: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(kernel), self.value(bias), pad)?;
        Ok(self.push(y, Op::Conv2d { x, kernel, bias, pad }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::maxpool2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool2 { x, argmax }))
    }

    pub fn upconv2(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let y = ops::upconv2(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(y, Op::UpConv2 { x, kernel, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat { a, b }))
    }

    /// Scalar BCE loss, stored as a `1×1×1×1` tensor.
    pub fn bce(&mut self, pred: Var, label: Tensor4) -> Result<Var> {
        let loss = ops::bce_loss(self.value(pred), &label)?;
        Ok(self.push(Tensor4::full([1, 1, 1, 1], loss), Op::Bce { pred, label }))
    }

    /// Gradients of the scalar `output` with respect to every recorded value.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar output".into()));
        }
        self.backward_with(output, Tensor4::full(self.value(output).shape, 1.0))
    }

    /// Backpropagates a given output cotangent `seed`.
    pub fn backward_with(&self, output: Var, seed: Tensor4) -> Result<Gradients> {
        if seed.shape != self.value(output).shape {
            return Err(Error::ShapeMismatch("seed does not match output".into()));
        }
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut acc = |v: Var, t: Tensor4| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, kernel, bias, pad } => {
                    let (dx, dk, db) =
                        ops::conv2d_backward(self.value(*x), self.value(*kernel), self.value(*bias), *pad, &g)?;
                    acc(*x, dx);
                    acc(*kernel, dk);
                    acc(*bias, db);
                }
                Op::MaxPool2 { x, argmax } => acc(*x, ops::maxpool2_backward(self.value(*x).shape, argmax, &g)),
                Op::UpConv2 { x, kernel, bias } => {
                    let (dx, dk, db) = ops::upconv2_backward(self.value(*x), self.value(*kernel), self.value(*bias), &g)?;
                    acc(*x, dx);
                    acc(*kernel, dk);
                    acc(*bias, db);
                }
                Op::Relu { x } => acc(*x, ops::relu_backward(self.value(*x), &g)),
                Op::Sigmoid { x } => acc(*x, ops::sigmoid_backward(&node.value, &g)),
                Op::Concat { a, b } => {
                    let (da, db) = ops::concat_backward(self.value(*a).shape, self.value(*b).shape, &g);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Bce { pred, label } => acc(*pred, ops::bce_backward(self.value(*pred), label, g.data[0])?),
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    /// Gradient of `v`, if `v` influences the output.
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    /// Builds `Σ r ⊙ f(leaves)` on a fresh tape and returns it with the leaves.
    fn check<F>(leaves: Vec<Tensor4>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().cloned().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r = Tensor4::from_fn(tape.value(out).shape, |_| rng.random_range(-1.0..1.0));
        let grads = tape.backward_with(out, r.clone()).unwrap();
        let eval = |ls: &[Tensor4]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ls.iter().cloned().map(|x| t.leaf(x)).collect();
            let o = f(&mut t, &vs);
            t.value(o).dot(&r)
        };
        let h = 1e-6;
        for (li, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).unwrap().data.clone();
            let mut numeric = vec![0.0; analytic.len()];
            for k in 0..analytic.len() {
                let mut plus = leaves.clone();
                plus[li].data[k] += h;
                let mut minus = leaves.clone();
                minus[li].data[k] -= h;
                numeric[k] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            let e = rel_err(&analytic, &numeric);
            assert!(e < 1e-4, "leaf {li}: relative error {e}");
        }
    }

    #[test]
    fn composite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = |s: [usize; 4]| Tensor4::from_fn(s, |_| rng.random_range(-1.0..1.0));
        let leaves = vec![t([2, 2, 4, 6]), t([3, 2, 3, 3]), t([3, 1, 1, 1]), t([3, 2, 2, 2]), t([2, 1, 1, 1])];
        check(leaves, |tape, v| {
            let c = tape.conv2d(v[0], v[1], v[2], 1).unwrap();
            let p = tape.maxpool2(c).unwrap();
            let u = tape.upconv2(p, v[3], v[4]).unwrap();
            let cat = tape.concat(u, v[0]).unwrap();
            tape.sigmoid(cat)
        });
    }

    #[test]
    fn reused_value_accumulates() {
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![0.3, -0.2]).unwrap();
        check(vec![x], |tape, v| tape.concat(v[0], v[0]).unwrap());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::zeros([1, 1, 2, 2]));
        assert!(tape.backward(x).is_err());
    }
}
