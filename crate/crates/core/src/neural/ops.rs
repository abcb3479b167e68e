//! Forward and backward kernels. Convolutions go through im2col and a
//! blocked GEMM; loops over the batch run in index order so results are
//! bitwise reproducible.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Clamp applied to predictions before the log in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// `c = a · b + beta · c` for strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= span(m, k, rsa, csa) && b.len() >= span(k, n, rsb, csb));
    }
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output columns `[lo, hi)` for kernel column `kx`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo).max(lo);
        (lo, hi)
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (hw, p) = (self.h * self.w, self.cols());
        for c in 0..self.ci {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let (lo, hi) = self.ox_range(kx);
                    for oy in 0..self.ho {
                        let dst = &mut col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        match self.iy(oy, ky) {
                            None => dst.fill(0.0),
                            Some(iy) => {
                                dst[..lo].fill(0.0);
                                dst[hi..].fill(0.0);
                                if hi > lo {
                                    let src = c * hw + iy * self.w + lo + kx - self.pad;
                                    dst[lo..hi].copy_from_slice(&x[src..src + hi - lo]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (hw, p) = (self.h * self.w, self.cols());
        for c in 0..self.ci {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    let (lo, hi) = self.ox_range(kx);
                    for oy in 0..self.ho {
                        if let (Some(iy), true) = (self.iy(oy, ky), hi > lo) {
                            let src = &col[row + oy * self.wo + lo..row + oy * self.wo + hi];
                            let base = c * hw + iy * self.w + lo + kx - self.pad;
                            for (d, s) in dx[base..base + hi - lo].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &Tensor4, kernel: &Tensor4, bias: &Tensor4, pad: usize) -> Result<ConvGeom> {
    let [_, ci, h, w] = x.shape;
    let [co, kci, kh, kw] = kernel.shape;
    if kci != ci || bias.len() != co {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input {:?}, kernel {:?}, bias {:?}",
            x.shape, kernel.shape, bias.shape
        )));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::ShapeMismatch(format!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")));
    }
    Ok(ConvGeom { ci, h, w, kh, kw, pad, ho: h + 2 * pad + 1 - kh, wo: w + 2 * pad + 1 - kw })
}

/// Stride-1 cross-correlation with zero padding. `kernel` is
/// `(out, in, kh, kw)`, `bias` holds `out` values.
pub fn conv2d(x: &Tensor4, kernel: &Tensor4, bias: &Tensor4, pad: usize) -> Result<Tensor4> {
    let g = conv_geom(x, kernel, bias, pad)?;
    let co = kernel.shape[0];
    let (k, p) = (g.rows(), g.cols());
    let mut y = Tensor4::zeros([x.n(), co, g.ho, g.wo]);
    let mut col = vec![0.0; k * p];
    for n in 0..x.n() {
        g.im2col(x.item(n), &mut col);
        let out = y.item_mut(n);
        for (c, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(bias.data[c]);
        }
        gemm(co, k, p, &kernel.data, (k, 1), &col, (p, 1), 1.0, out);
    }
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor4,
    kernel: &Tensor4,
    bias: &Tensor4,
    pad: usize,
    dy: &Tensor4,
) -> Result<(Tensor4, Tensor4, Tensor4)> {
    let g = conv_geom(x, kernel, bias, pad)?;
    let co = kernel.shape[0];
    let (k, p) = (g.rows(), g.cols());
    if dy.shape != [x.n(), co, g.ho, g.wo] {
        return Err(Error::ShapeMismatch(format!("conv2d backward: dy {:?}", dy.shape)));
    }
    let mut dx = Tensor4::zeros(x.shape);
    let mut dk = Tensor4::zeros(kernel.shape);
    let mut db = Tensor4::zeros(bias.shape);
    let mut col = vec![0.0; k * p];
    let mut dcol = vec![0.0; k * p];
    for n in 0..x.n() {
        let dyn_ = dy.item(n);
        for (c, row) in dyn_.chunks_exact(p).enumerate() {
            db.data[c] += row.iter().sum::<f64>();
        }
        g.im2col(x.item(n), &mut col);
        // dK += dY · colᵀ
        gemm(co, p, k, dyn_, (p, 1), &col, (1, p), 1.0, &mut dk.data);
        // dcol = Kᵀ · dY
        gemm(k, co, p, &kernel.data, (1, k), dyn_, (p, 1), 0.0, &mut dcol);
        g.col2im(&dcol, dx.item_mut(n));
    }
    Ok((dx, dk, db))
}

/// 2×2 stride-2 max pooling. Also returns, per output, the flat index of the
/// winning input within its batch item; ties go to the first maximum in
/// row-major window order.
pub fn maxpool2(x: &Tensor4) -> Result<(Tensor4, Vec<u32>)> {
    let [n, c, h, w] = x.shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; y.len()];
    let mut o = 0;
    for b in 0..n {
        let item = x.item(b);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if item[cand] > item[best] {
                            best = cand;
                        }
                    }
                    y.data[o] = item[best];
                    arg[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward(x_shape: [usize; 4], argmax: &[u32], dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(x_shape);
    let per = dy.item_len();
    for b in 0..dy.n() {
        let dst = dx.item_mut(b);
        for (g, &a) in dy.item(b).iter().zip(&argmax[b * per..(b + 1) * per]) {
            dst[a as usize] += g;
        }
    }
    dx
}

fn upconv_check(x: &Tensor4, kernel: &Tensor4, bias: &Tensor4) -> Result<usize> {
    let [kci, co, kh, kw] = kernel.shape;
    if kci != x.c() || kh != 2 || kw != 2 || bias.len() != co {
        return Err(Error::ShapeMismatch(format!(
            "upconv2: input {:?}, kernel {:?}, bias {:?}",
            x.shape, kernel.shape, bias.shape
        )));
    }
    Ok(co)
}

/// 2×2 stride-2 transposed convolution. `kernel` is `(in, out, 2, 2)`;
/// output pixel `(2i+a, 2j+b)` receives `Σ_c x[c,i,j] · kernel[c,o,a,b]`.
pub fn upconv2(x: &Tensor4, kernel: &Tensor4, bias: &Tensor4) -> Result<Tensor4> {
    let co = upconv_check(x, kernel, bias)?;
    let [n, ci, h, w] = x.shape;
    let (p, r) = (h * w, co * 4);
    let mut y = Tensor4::zeros([n, co, 2 * h, 2 * w]);
    let mut t = vec![0.0; r * p];
    for b in 0..n {
        gemm(r, ci, p, &kernel.data, (1, r), x.item(b), (p, 1), 0.0, &mut t);
        let out = y.item_mut(b);
        for o in 0..co {
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &t[(o * 4 + a * 2 + bb) * p..][..p];
                    for i in 0..h {
                        let row = (o * 2 * h + 2 * i + a) * 2 * w;
                        for j in 0..w {
                            out[row + 2 * j + bb] = src[i * w + j] + bias.data[o];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn upconv2_backward(x: &Tensor4, kernel: &Tensor4, bias: &Tensor4, dy: &Tensor4) -> Result<(Tensor4, Tensor4, Tensor4)> {
    let co = upconv_check(x, kernel, bias)?;
    let [n, ci, h, w] = x.shape;
    if dy.shape != [n, co, 2 * h, 2 * w] {
        return Err(Error::ShapeMismatch(format!("upconv2 backward: dy {:?}", dy.shape)));
    }
    let (p, r) = (h * w, co * 4);
    let mut dx = Tensor4::zeros(x.shape);
    let mut dk = Tensor4::zeros(kernel.shape);
    let mut db = Tensor4::zeros(bias.shape);
    let mut dt = vec![0.0; r * p];
    for b in 0..n {
        let g = dy.item(b);
        for o in 0..co {
            db.data[o] += g[o * 4 * p..(o + 1) * 4 * p].iter().sum::<f64>();
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut dt[(o * 4 + a * 2 + bb) * p..][..p];
                    for i in 0..h {
                        let row = (o * 2 * h + 2 * i + a) * 2 * w;
                        for j in 0..w {
                            dst[i * w + j] = g[row + 2 * j + bb];
                        }
                    }
                }
            }
        }
        // dK += X · dTᵀ
        gemm(ci, p, r, x.item(b), (p, 1), &dt, (1, p), 1.0, &mut dk.data);
        // dX = K · dT
        gemm(ci, r, p, &kernel.data, (r, 1), &dt, (p, 1), 0.0, dx.item_mut(b));
    }
    Ok((dx, dk, db))
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    Tensor4 { shape: x.shape, data: x.data.iter().map(|&v| v.max(0.0)).collect() }
}

pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let data = x.data.iter().zip(&dy.data).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor4 { shape: x.shape, data }
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    Tensor4 { shape: x.shape, data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect() }
}

/// Takes the forward output `y = σ(x)`.
pub fn sigmoid_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let data = y.data.iter().zip(&dy.data).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Tensor4 { shape: y.shape, data }
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.shape;
    if b.n() != n || b.h() != h || b.w() != w {
        return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", a.shape, b.shape)));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Ok(Tensor4 { shape: [n, ca + b.c(), h, w], data })
}

pub fn concat_backward(a_shape: [usize; 4], b_shape: [usize; 4], dy: &Tensor4) -> (Tensor4, Tensor4) {
    let mut da = Tensor4::zeros(a_shape);
    let mut db = Tensor4::zeros(b_shape);
    let la = da.item_len();
    for i in 0..dy.n() {
        let g = dy.item(i);
        da.item_mut(i).copy_from_slice(&g[..la]);
        db.item_mut(i).copy_from_slice(&g[la..]);
    }
    (da, db)
}

fn bce_check(pred: &Tensor4, label: &Tensor4) -> Result<()> {
    if pred.shape != label.shape || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("bce: pred {:?}, label {:?}", pred.shape, label.shape)));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &Tensor4, label: &Tensor4) -> Result<f64> {
    bce_check(pred, label)?;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&label.data)
        .map(|(&x, &y)| {
            let x = x.clamp(BCE_EPS, 1.0 - BCE_EPS);
            y * x.ln() + (1.0 - y) * (1.0 - x).ln()
        })
        .sum();
    Ok(-sum / pred.len() as f64)
}

pub fn bce_backward(pred: &Tensor4, label: &Tensor4, dloss: f64) -> Result<Tensor4> {
    bce_check(pred, label)?;
    let scale = -dloss / pred.len() as f64;
    let data = pred
        .data
        .iter()
        .zip(&label.data)
        .map(|(&x, &y)| {
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&x) {
                0.0
            } else {
                scale * (y / x - (1.0 - y) / (1.0 - x))
            }
        })
        .collect();
    Ok(Tensor4 { shape: pred.shape, data })
}
