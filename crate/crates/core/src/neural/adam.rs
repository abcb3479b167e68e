use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Adam moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor4>,
    pub v: Vec<Tensor4>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor4]) -> Self {
        let zeros = || params.iter().map(|p| Tensor4::zeros(p.shape)).collect();
        AdamState { m: zeros(), v: zeros(), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor4], grads: &[Tensor4], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape != g.shape || p.shape != m.shape {
            return Err(Error::ShapeMismatch(format!("param {:?} vs grad {:?}", p.shape, g.shape)));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..p.data.len() {
            let gk = g.data[k];
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            let mhat = m.data[k] / c1;
            let vhat = v.data[k] / c2;
            p.data[k] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor4::from_vec([1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor4::zeros([1, 1, 1, 3])], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + ε)
        let mut p = vec![Tensor4::zeros([1, 1, 1, 3])];
        let g = vec![Tensor4::from_vec([1, 1, 1, 3], vec![3.0, -0.01, 0.0]).unwrap()];
        let mut st = AdamState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut st, lr).unwrap();
        let expect = [-lr * 3.0 / (3.0 + 1e-8), lr * 0.01 / (0.01 + 1e-8), 0.0];
        for (a, b) in p[0].data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let p0 = vec![Tensor4::full([2, 1, 1, 2], 0.3)];
        let g = vec![Tensor4::from_vec([2, 1, 1, 2], vec![0.1, 0.2, -0.3, 0.4]).unwrap()];
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(&p);
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut st, 0.01).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
        let mut p = p0.clone();
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor4::zeros([1, 1, 1, 1])], &mut st, 0.1).is_err());
    }
}
