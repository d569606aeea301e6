//! 2-D convolution over `(B, H, W, C)` activations via im2col + GEMM.

use ndarray::{s, Array1, Array2, Array4};
use rand_distr::{Distribution, Normal};

use super::param::{join_name, Param, ParamKind, ParamTensor};
use super::{Batch4, Scalar};
use crate::error::{Error, Result};

/// Convolution with square kernel, zero padding and uniform stride.
///
/// The kernel is stored as a `(k*k*c_in, c_out)` matrix so forward and both
/// backward products are single GEMMs. Batches are processed in chunks to
/// bound the size of the patch matrix.
#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub w: Param<S, ndarray::Ix2>,
    pub b: Option<Param<S, ndarray::Ix1>>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub c_in: usize,
    pub c_out: usize,
}

/// Largest patch-matrix footprint per chunk, in elements.
const CHUNK_BUDGET: usize = 16 * 1024 * 1024;

impl<S: Scalar> Conv2d<S> {
    /// Fan-in-scaled normal initialization (He).
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let fan_in = kernel * kernel * c_in;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = Array2::from_shape_fn((fan_in, c_out), |_| S::sc(normal.sample(rng)));
        Conv2d {
            w: Param::new(w),
            b: bias.then(|| Param::new(Array1::zeros(c_out))),
            kernel,
            stride,
            pad,
            c_in,
            c_out,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn chunk_len(&self, oh: usize, ow: usize) -> usize {
        let per_image = oh * ow * self.kernel * self.kernel * self.c_in;
        (CHUNK_BUDGET / per_image.max(1)).max(1)
    }

    /// Gather patches of `x[b0..b0+n]` into a `(n*oh*ow, k*k*c_in)` matrix.
    fn im2col(&self, x: &Batch4<S>, b0: usize, n: usize, oh: usize, ow: usize) -> Array2<S> {
        let (_, h, w, c) = x.dim();
        let k = self.kernel;
        let mut cols = Array2::<S>::zeros((n * oh * ow, k * k * c));
        let x_slice = x.as_slice().expect("standard layout");
        let cols_slice = cols.as_slice_mut().expect("standard layout");
        let row_len = k * k * c;
        for bi in 0..n {
            let b = b0 + bi;
            for oy in 0..oh {
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                for ox in 0..ow {
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    let row = ((bi * oh + oy) * ow + ox) * row_len;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((b * h + iy as usize) * w + ix as usize) * c;
                            let dst = row + (ky * k + kx) * c;
                            cols_slice[dst..dst + c].copy_from_slice(&x_slice[src..src + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add a patch matrix back onto an input-shaped gradient.
    fn col2im(&self, cols: &Array2<S>, dx: &mut Batch4<S>, b0: usize, n: usize, oh: usize, ow: usize) {
        let (_, h, w, c) = dx.dim();
        let k = self.kernel;
        let cols_slice = cols.as_slice().expect("standard layout");
        let dx_slice = dx.as_slice_mut().expect("standard layout");
        let row_len = k * k * c;
        for bi in 0..n {
            let b = b0 + bi;
            for oy in 0..oh {
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                for ox in 0..ow {
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    let row = ((bi * oh + oy) * ow + ox) * row_len;
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                            let src = row + (ky * k + kx) * c;
                            for ci in 0..c {
                                dx_slice[dst + ci] = dx_slice[dst + ci] + cols_slice[src + ci];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Batch4<S>) -> Result<Batch4<S>> {
        let (batch, h, w, c) = x.dim();
        if c != self.c_in {
            return Err(Error::Contract(format!(
                "conv expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Array4::<S>::zeros((batch, oh, ow, self.c_out));
        let chunk = self.chunk_len(oh, ow);
        let mut b0 = 0;
        while b0 < batch {
            let n = chunk.min(batch - b0);
            let cols = self.im2col(x, b0, n, oh, ow);
            let prod = cols.dot(&self.w.value);
            let mut dst = y.slice_mut(s![b0..b0 + n, .., .., ..]);
            dst.assign(
                &prod
                    .into_shape_with_order((n, oh, ow, self.c_out))
                    .expect("shape product matches"),
            );
            b0 += n;
        }
        if let Some(b) = &self.b {
            y += &b.value;
        }
        Ok(y)
    }

    /// Backward pass: accumulates weight/bias gradients, returns `d loss / d x`.
    pub fn backward(&mut self, x: &Batch4<S>, dy: &Batch4<S>) -> Result<Batch4<S>> {
        let (batch, h, w, _) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        if dy.dim() != (batch, oh, ow, self.c_out) {
            return Err(Error::Contract(format!(
                "conv backward: dy shape {:?}, expected {:?}",
                dy.dim(),
                (batch, oh, ow, self.c_out)
            )));
        }
        let mut dx = Array4::<S>::zeros(x.raw_dim());
        let mut dw = Array2::<S>::zeros(self.w.value.raw_dim());
        let chunk = self.chunk_len(oh, ow);
        let mut b0 = 0;
        while b0 < batch {
            let n = chunk.min(batch - b0);
            let dy_chunk = dy
                .slice(s![b0..b0 + n, .., .., ..])
                .to_owned()
                .into_shape_with_order((n * oh * ow, self.c_out))
                .expect("contiguous chunk");
            let cols = self.im2col(x, b0, n, oh, ow);
            dw += &cols.t().dot(&dy_chunk);
            let dcols = dy_chunk.dot(&self.w.value.t());
            self.col2im(&dcols, &mut dx, b0, n, oh, ow);
            b0 += n;
        }
        self.w.accumulate(&dw);
        if let Some(b) = &mut self.b {
            let db = dy
                .view()
                .into_shape_with_order((batch * oh * ow, self.c_out))
                .expect("contiguous")
                .sum_axis(ndarray::Axis(0));
            b.accumulate(&db);
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        f(join_name(prefix, "w"), ParamKind::Trainable, &mut self.w);
        if let Some(b) = &mut self.b {
            f(join_name(prefix, "b"), ParamKind::Trainable, b);
        }
    }
}
