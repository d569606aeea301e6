//! Per-channel batch normalization over `(B, H, W, C)` activations.

use ndarray::{Array1, Axis};

use super::param::{join_name, Param, ParamKind, ParamTensor};
use super::{Batch4, Scalar};

/// Batch norm with affine parameters and running statistics.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; evaluation mode normalizes with the running estimates only,
/// so inference is batch-independent.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<S: Scalar> {
    pub gamma: Param<S, ndarray::Ix1>,
    pub beta: Param<S, ndarray::Ix1>,
    pub running_mean: Param<S, ndarray::Ix1>,
    pub running_var: Param<S, ndarray::Ix1>,
    pub momentum: S,
    pub eps: S,
}

/// Cache for the training-mode backward pass.
#[derive(Debug)]
pub struct BnCache<S> {
    pub x_hat: Batch4<S>,
    pub inv_std: Array1<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Param::new(Array1::zeros(channels)),
            running_var: Param::new(Array1::ones(channels)),
            momentum: S::sc(0.1),
            eps: S::sc(1e-5),
        }
    }

    /// Training forward: batch statistics, running-stat update, cache.
    pub fn forward_train(&mut self, x: &Batch4<S>) -> (Batch4<S>, BnCache<S>) {
        let (b, h, w, c) = x.dim();
        let n = S::usz(b * h * w);
        let flat = x.view().into_shape_with_order((b * h * w, c)).expect("contiguous");
        let mean = flat.sum_axis(Axis(0)) / n;
        let mut var = Array1::<S>::zeros(c);
        for row in flat.rows() {
            for (ci, (&v, m)) in row.iter().zip(mean.iter()).enumerate() {
                let d = v - *m;
                var[ci] = var[ci] + d * d;
            }
        }
        var.mapv_inplace(|v| v / n);
        let inv_std = var.mapv(|v| S::one() / (v + self.eps).sqrt());

        let mut x_hat = x.clone();
        for ci in 0..c {
            let m = mean[ci];
            let is = inv_std[ci];
            x_hat.index_axis_mut(Axis(3), ci).mapv_inplace(|v| (v - m) * is);
        }
        let mut y = x_hat.clone();
        for ci in 0..c {
            let g = self.gamma.value[ci];
            let bta = self.beta.value[ci];
            y.index_axis_mut(Axis(3), ci).mapv_inplace(|v| v * g + bta);
        }

        let mom = self.momentum;
        let one_m = S::one() - mom;
        for ci in 0..c {
            self.running_mean.value[ci] = one_m * self.running_mean.value[ci] + mom * mean[ci];
            self.running_var.value[ci] = one_m * self.running_var.value[ci] + mom * var[ci];
        }

        (y, BnCache { x_hat, inv_std })
    }

    /// Evaluation forward: running statistics, no state change.
    pub fn forward_eval(&self, x: &Batch4<S>) -> Batch4<S> {
        let c = x.dim().3;
        let mut y = x.clone();
        for ci in 0..c {
            let m = self.running_mean.value[ci];
            let is = S::one() / (self.running_var.value[ci] + self.eps).sqrt();
            let g = self.gamma.value[ci];
            let bta = self.beta.value[ci];
            y.index_axis_mut(Axis(3), ci).mapv_inplace(|v| (v - m) * is * g + bta);
        }
        y
    }

    /// Training backward through the batch statistics.
    pub fn backward(&mut self, cache: &BnCache<S>, dy: &Batch4<S>) -> Batch4<S> {
        let (b, h, w, c) = dy.dim();
        let n = S::usz(b * h * w);
        let dy_flat = dy.view().into_shape_with_order((b * h * w, c)).expect("contiguous");
        let xh_flat = cache
            .x_hat
            .view()
            .into_shape_with_order((b * h * w, c))
            .expect("contiguous");

        let dbeta = dy_flat.sum_axis(Axis(0));
        let mut dgamma = Array1::<S>::zeros(c);
        for (dy_row, xh_row) in dy_flat.rows().into_iter().zip(xh_flat.rows()) {
            for ci in 0..c {
                dgamma[ci] = dgamma[ci] + dy_row[ci] * xh_row[ci];
            }
        }

        // dx = gamma * inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))
        let mean_dy = dbeta.mapv(|v| v / n);
        let mean_dy_xh = dgamma.mapv(|v| v / n);
        let mut dx = dy.clone();
        for ci in 0..c {
            let g = self.gamma.value[ci];
            let is = cache.inv_std[ci];
            let md = mean_dy[ci];
            let mdx = mean_dy_xh[ci];
            let mut dx_c = dx.index_axis_mut(Axis(3), ci);
            let xh_c = cache.x_hat.index_axis(Axis(3), ci);
            dx_c.zip_mut_with(&xh_c, |d, &xh| {
                *d = g * is * (*d - md - xh * mdx);
            });
        }

        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        f(join_name(prefix, "gamma"), ParamKind::Trainable, &mut self.gamma);
        f(join_name(prefix, "beta"), ParamKind::Trainable, &mut self.beta);
        f(join_name(prefix, "running_mean"), ParamKind::State, &mut self.running_mean);
        f(join_name(prefix, "running_var"), ParamKind::State, &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_forward_standardizes_batch() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array4::from_shape_fn((4, 3, 3, 2), |_| rng.gen_range(-2.0..5.0));
        let (y, _) = bn.forward_train(&x);
        for ci in 0..2 {
            let ch = y.index_axis(Axis(3), ci);
            let mean: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_is_batch_independent() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // push some statistics into the running buffers
        for _ in 0..10 {
            let x = Array4::from_shape_fn((8, 2, 2, 1), |_| rng.gen_range(0.0..3.0));
            bn.forward_train(&x);
        }
        let a = Array4::from_shape_fn((1, 2, 2, 1), |_| rng.gen_range(0.0..3.0));
        let mut b = Array4::from_shape_fn((4, 2, 2, 1), |_| rng.gen_range(0.0..3.0));
        b.index_axis_mut(Axis(0), 0).assign(&a.index_axis(Axis(0), 0));
        let ya = bn.forward_eval(&a);
        let yb = bn.forward_eval(&b);
        assert_eq!(ya.index_axis(Axis(0), 0), yb.index_axis(Axis(0), 0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array4::from_shape_fn((3, 2, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let make = || {
            let mut bn = BatchNorm2d::<f64>::new(2);
            bn.gamma.value = ndarray::arr1(&[1.3, 0.7]);
            bn.beta.value = ndarray::arr1(&[0.1, -0.2]);
            bn
        };
        // objective: sum of squares of the training-mode output
        let loss = |bn: &BatchNorm2d<f64>, x: &Array4<f64>| -> f64 {
            let mut b = bn.clone();
            let (y, _) = b.forward_train(x);
            y.iter().map(|v| v * v).sum()
        };
        let mut bn = make();
        let (y, cache) = bn.forward_train(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = bn.backward(&cache, &dy);

        let h = 1e-6;
        // input gradient
        let mut xp = x.clone();
        for idx in [(0usize, 0usize, 0usize, 0usize), (2, 1, 1, 1), (1, 0, 1, 0)] {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let lp = loss(&make(), &xp);
            xp[idx] = orig - h;
            let lm = loss(&make(), &xp);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - dx[idx]).abs() / fd.abs().max(1.0) < 1e-5,
                "dx{idx:?} fd={fd} an={}",
                dx[idx]
            );
        }
        // gamma gradient
        for ci in 0..2 {
            let mut bnp = make();
            bnp.gamma.value[ci] += h;
            let lp = loss(&bnp, &x);
            let mut bnm = make();
            bnm.gamma.value[ci] -= h;
            let lm = loss(&bnm, &x);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - bn.gamma.grad[ci]).abs() / fd.abs().max(1.0) < 1e-6);
        }
    }
}
