//! 2-D convolution via im2col and a single GEMM per image.

use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// A 1x1 stride-1 convolution reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }
}

/// Unfolds one `c x h x w` image into a `(c*k*k) x (oh*ow)` matrix.
fn im2col<F: Scalar>(x: &[F], h: usize, w: usize, g: &ConvGeom, cols: &mut [F]) {
    let (oh, ow) = g.out_size(h, w);
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s) as isize - p + ky as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s) as isize - p + kx as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<F: Scalar>(cols: &[F], h: usize, w: usize, g: &ConvGeom, dx: &mut [F]) {
    let (oh, ow) = g.out_size(h, w);
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s) as isize - p + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s) as isize - p + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<F: Scalar>(
    x: &Tensor<F>,
    weight: &[F],
    bias: &[F],
    g: &ConvGeom,
) -> Tensor<F> {
    let [n, c, h, w] = x.shape;
    assert_eq!(c, g.c_in, "conv2d: channel mismatch");
    let (oh, ow) = g.out_size(h, w);
    let ckk = g.c_in * g.k * g.k;
    let mut out = Tensor::zeros([n, g.c_out, oh, ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); ckk * oh * ow]
    };
    for i in 0..n {
        let y = out.item_mut(i);
        for (o, b) in bias.iter().enumerate() {
            y[o * oh * ow..(o + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v = *b);
        }
        let src: &[F] = if g.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), h, w, g, &mut cols);
            &cols
        };
        let m = oh * ow;
        F::gemm(
            g.c_out,
            ckk,
            m,
            F::one(),
            weight,
            ckk as isize,
            1,
            src,
            m as isize,
            1,
            F::one(),
            y,
            m as isize,
            1,
        );
    }
    out
}

/// Accumulates weight/bias gradients and, if requested, returns the input gradient.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &[F],
    dy: &Tensor<F>,
    g: &ConvGeom,
    dweight: &mut [F],
    dbias: &mut [F],
    need_dx: bool,
) -> Option<Tensor<F>> {
    let [n, _, h, w] = x.shape;
    let (oh, ow) = g.out_size(h, w);
    let m = oh * ow;
    let ckk = g.c_in * g.k * g.k;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); ckk * m]
    };
    let mut dcols = if need_dx && !g.is_pointwise() {
        vec![F::zero(); ckk * m]
    } else {
        Vec::new()
    };
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
    for i in 0..n {
        let dyi = dy.item(i);
        for (o, db) in dbias.iter_mut().enumerate() {
            *db += dyi[o * m..(o + 1) * m].iter().copied().sum::<F>();
        }
        let src: &[F] = if g.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), h, w, g, &mut cols);
            &cols
        };
        // dW (c_out x ckk) += dY (c_out x m) * cols^T (m x ckk)
        F::gemm(
            g.c_out,
            m,
            ckk,
            F::one(),
            dyi,
            m as isize,
            1,
            src,
            1,
            m as isize,
            F::one(),
            dweight,
            ckk as isize,
            1,
        );
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                // dX (ckk x m) = W^T (ckk x c_out) * dY (c_out x m)
                F::gemm(
                    ckk,
                    g.c_out,
                    m,
                    F::one(),
                    weight,
                    1,
                    ckk as isize,
                    dyi,
                    m as isize,
                    1,
                    F::zero(),
                    dx.item_mut(i),
                    m as isize,
                    1,
                );
            } else {
                F::gemm(
                    ckk,
                    g.c_out,
                    m,
                    F::one(),
                    weight,
                    1,
                    ckk as isize,
                    dyi,
                    m as isize,
                    1,
                    F::zero(),
                    &mut dcols,
                    m as isize,
                    1,
                );
                col2im(&dcols, h, w, g, dx.item_mut(i));
            }
        }
    }
    dx
}
