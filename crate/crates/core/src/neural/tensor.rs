use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], v: f64) -> Self {
        Tensor4 { shape, data: vec![v; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor4 { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn add_assign(&mut self, o: &Tensor4) {
        debug_assert_eq!(self.shape, o.shape);
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn dot(&self, o: &Tensor4) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped batch items along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items.first().ok_or_else(|| Error::ShapeMismatch("nothing to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(Error::ShapeMismatch(format!("cannot stack {:?} with {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Ok(Tensor4 { shape: [n, c, h, w], data })
    }
}
