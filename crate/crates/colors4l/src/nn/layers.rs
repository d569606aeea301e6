//! Pointwise and structural layers: ReLU, max-pool, dropout, global average
//! pool, nearest-neighbor upsampling, sigmoid and the fully-connected layer.

use ndarray::{Array1, Array2, Array4, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::param::{join_name, Param, ParamKind, ParamTensor};
use super::{Batch4, Scalar};
use crate::error::{Error, Result};

pub fn relu<S: Scalar>(x: &Batch4<S>) -> Batch4<S> {
    x.mapv(|v| v.max(S::zero()))
}

/// `dy` masked by the forward activation (`y > 0`).
pub fn relu_backward<S: Scalar>(y: &Batch4<S>, dy: &Batch4<S>) -> Batch4<S> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= S::zero() {
            *d = S::zero();
        }
    });
    dx
}

pub fn sigmoid<S: Scalar>(x: &Batch4<S>) -> Batch4<S> {
    x.mapv(|v| S::one() / (S::one() + (-v).exp()))
}

pub fn sigmoid_backward<S: Scalar>(y: &Batch4<S>, dy: &Batch4<S>) -> Batch4<S> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| *d = *d * v * (S::one() - v));
    dx
}

/// 2x2 max pooling with stride 2. Requires even spatial dims.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2;

impl MaxPool2 {
    /// Returns the pooled batch and the flat argmax index per output cell.
    pub fn forward<S: Scalar>(&self, x: &Batch4<S>) -> Result<(Batch4<S>, Vec<u32>)> {
        let (b, h, w, c) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Contract(format!("max-pool needs even dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::<S>::zeros((b, oh, ow, c));
        let mut arg = vec![0u32; b * oh * ow * c];
        let xs = x.as_slice().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let mut best = S::neg_infinity();
                        let mut best_ix = 0u32;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let iy = oy * 2 + ky;
                                let ix = ox * 2 + kx;
                                let src = ((bi * h + iy) * w + ix) * c + ci;
                                if xs[src] > best {
                                    best = xs[src];
                                    best_ix = src as u32;
                                }
                            }
                        }
                        let dst = ((bi * oh + oy) * ow + ox) * c + ci;
                        ys[dst] = best;
                        arg[dst] = best_ix;
                    }
                }
            }
        }
        Ok((y, arg))
    }

    pub fn backward<S: Scalar>(&self, input_dim: (usize, usize, usize, usize), arg: &[u32], dy: &Batch4<S>) -> Batch4<S> {
        let mut dx = Array4::<S>::zeros(input_dim);
        let dxs = dx.as_slice_mut().expect("standard layout");
        let dys = dy.as_slice().expect("standard layout");
        for (i, &src) in arg.iter().enumerate() {
            dxs[src as usize] = dxs[src as usize] + dys[i];
        }
        dx
    }
}

/// Inverted dropout: scales kept activations by `1/(1-p)` during training.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    /// Returns the dropped batch and the applied mask (`0` or `1/(1-p)`).
    pub fn forward<S: Scalar>(&self, x: &Batch4<S>, rng: &mut impl Rng) -> (Batch4<S>, Batch4<S>) {
        let keep = 1.0 - self.p;
        let scale = S::sc(1.0 / keep);
        let mask = Array4::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                S::zero()
            }
        });
        (x * &mask, mask)
    }

    pub fn backward<S: Scalar>(&self, mask: &Batch4<S>, dy: &Batch4<S>) -> Batch4<S> {
        dy * mask
    }
}

/// Mean over the spatial dims: `(B, H, W, C) -> (B, C)`.
pub fn global_avg_pool<S: Scalar>(x: &Batch4<S>) -> Array2<S> {
    let (b, h, w, c) = x.dim();
    let scale = S::one() / S::usz(h * w);
    let flat = x
        .view()
        .into_shape_with_order((b, h * w, c))
        .expect("contiguous");
    flat.sum_axis(ndarray::Axis(1)) * scale
}

pub fn global_avg_pool_backward<S: Scalar>(input_dim: (usize, usize, usize, usize), dy: &Array2<S>) -> Batch4<S> {
    let (b, h, w, c) = input_dim;
    let scale = S::one() / S::usz(h * w);
    let mut dx = Array4::<S>::zeros(input_dim);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    dx[(bi, y, x, ci)] = dy[(bi, ci)] * scale;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
#[derive(Debug, Clone, Copy)]
pub struct UpsampleNearest2;

impl UpsampleNearest2 {
    pub fn forward<S: Scalar>(&self, x: &Batch4<S>) -> Batch4<S> {
        let (b, h, w, c) = x.dim();
        Array4::from_shape_fn((b, h * 2, w * 2, c), |(bi, y, xx, ci)| x[(bi, y / 2, xx / 2, ci)])
    }

    pub fn backward<S: Scalar>(&self, input_dim: (usize, usize, usize, usize), dy: &Batch4<S>) -> Batch4<S> {
        let mut dx = Array4::<S>::zeros(input_dim);
        let (b, h2, w2, c) = dy.dim();
        debug_assert_eq!((input_dim.1 * 2, input_dim.2 * 2), (h2, w2));
        for bi in 0..b {
            for y in 0..h2 {
                for x in 0..w2 {
                    for ci in 0..c {
                        dx[(bi, y / 2, x / 2, ci)] = dx[(bi, y / 2, x / 2, ci)] + dy[(bi, y, x, ci)];
                    }
                }
            }
        }
        dx
    }
}

/// Fully-connected layer `y = x w + b` on `(B, F)` features.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub w: Param<S, ndarray::Ix2>,
    pub b: Param<S, ndarray::Ix1>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / f_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Linear {
            w: Param::new(Array2::from_shape_fn((f_in, f_out), |_| S::sc(normal.sample(rng)))),
            b: Param::new(Array1::zeros(f_out)),
        }
    }

    pub fn forward(&self, x: &ArrayView2<S>) -> Array2<S> {
        x.dot(&self.w.value) + &self.b.value
    }

    pub fn backward(&mut self, x: &ArrayView2<S>, dy: &Array2<S>) -> Array2<S> {
        self.w.accumulate(&x.t().dot(dy));
        self.b.accumulate(&dy.sum_axis(ndarray::Axis(0)));
        dy.dot(&self.w.value.t())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        f(join_name(prefix, "w"), ParamKind::Trainable, &mut self.w);
        f(join_name(prefix, "b"), ParamKind::Trainable, &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_picks_maxima_and_routes_gradient() {
        let x = Array4::from_shape_vec(
            (1, 2, 2, 1),
            vec![1.0f32, 3.0, 2.0, -1.0],
        )
        .unwrap();
        let (y, arg) = MaxPool2.forward(&x).unwrap();
        assert_eq!(y[(0, 0, 0, 0)], 3.0);
        let dy = Array4::from_elem((1, 1, 1, 1), 5.0f32);
        let dx = MaxPool2.backward(x.dim(), &arg, &dy);
        assert_eq!(dx[(0, 0, 1, 0)], 5.0);
        assert_eq!(dx.sum(), 5.0);
    }

    #[test]
    fn gap_is_mean_and_backward_spreads() {
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, y, xx, c)| (y * 2 + xx + c * 10) as f64);
        let y = global_avg_pool(&x);
        assert_eq!(y[(0, 0)], 1.5);
        assert_eq!(y[(0, 1)], 11.5);
        let dy = arr2(&[[4.0, 8.0]]);
        let dx = global_avg_pool_backward(x.dim(), &dy);
        assert_eq!(dx[(0, 1, 1, 0)], 1.0);
        assert_eq!(dx[(0, 0, 0, 1)], 2.0);
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = Array4::from_shape_fn((2, 3, 3, 4), |(b, y, xx, c)| (b + y + xx + c) as f32);
        let y = UpsampleNearest2.forward(&x);
        assert_eq!(y.dim(), (2, 6, 6, 4));
        assert_eq!(y[(1, 5, 4, 2)], x[(1, 2, 2, 2)]);
        let dx = UpsampleNearest2.backward(x.dim(), &y);
        // each input cell receives its value four times
        assert_eq!(dx[(1, 2, 2, 2)], 4.0 * x[(1, 2, 2, 2)]);
    }

    #[test]
    fn dropout_eval_identity_is_callers_choice_train_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array4::<f64>::ones((1, 8, 8, 4));
        let d = Dropout { p: 0.5 };
        let (y, mask) = d.forward(&x, &mut rng);
        for (&yv, &mv) in y.iter().zip(mask.iter()) {
            assert!(yv == 0.0 || (yv - 2.0).abs() < 1e-12);
            assert_eq!(yv, mv);
        }
        // roughly half survive
        let kept = y.iter().filter(|&&v| v > 0.0).count();
        assert!((64..192).contains(&(kept as i32)), "kept={kept}");
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut l = Linear::<f64>::new(2, 2, &mut ChaCha8Rng::seed_from_u64(1));
        l.w.value = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        l.b.value = ndarray::arr1(&[0.5, -0.5]);
        let x = arr2(&[[1.0, 1.0]]);
        let y = l.forward(&x.view());
        assert_eq!(y, arr2(&[[4.5, 5.5]]));
        let dy = arr2(&[[1.0, 1.0]]);
        let dx = l.backward(&x.view(), &dy);
        assert_eq!(dx, arr2(&[[3.0, 7.0]]));
        assert_eq!(l.w.grad, arr2(&[[1.0, 1.0], [1.0, 1.0]]));
    }
}
