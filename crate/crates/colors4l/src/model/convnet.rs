//! 13-layer max-pooling convolutional backbone.
//!
//! Three stages of three rectified 3x3 convolutions (128, 256, 512
//! channels at full width), each stage closed by 2x2 max-pooling, with
//! 0.5 dropout after the first two pools, then a global average pool.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::param::join_name;
use crate::nn::{
    ensure_finite, global_avg_pool, global_avg_pool_backward, relu, relu_backward, Batch4, Conv2d, Dropout, MaxPool2,
    ParamKind, ParamTensor, Scalar, VisitParams,
};

pub const CONVNET13_WIDTHS: [usize; 3] = [128, 256, 512];

#[derive(Clone)]
struct Stage<S: Scalar> {
    convs: Vec<Conv2d<S>>,
    dropout: Option<Dropout>,
}

#[derive(Clone)]
pub struct ConvNet13<S: Scalar> {
    stages: Vec<Stage<S>>,
    feature_dim: usize,
}

pub struct ConvNetTrace<S: Scalar> {
    // per stage: conv inputs (first entry is the stage input, the rest are
    // rectified outputs), pool argmax and pre-pool dims, dropout mask
    stages: Vec<StageTrace<S>>,
    gap_in_dim: (usize, usize, usize, usize),
}

struct StageTrace<S: Scalar> {
    acts: Vec<Batch4<S>>,
    pool_arg: Vec<u32>,
    pre_pool_dim: (usize, usize, usize, usize),
    drop_mask: Option<Batch4<S>>,
}

impl<S: Scalar> ConvNet13<S> {
    pub fn with_widths(in_channels: usize, widths: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut c_in = in_channels;
        for (si, &width) in widths.iter().enumerate() {
            let mut convs = Vec::with_capacity(3);
            for _ in 0..3 {
                convs.push(Conv2d::new(c_in, width, 3, 1, 1, true, rng));
                c_in = width;
            }
            stages.push(Stage {
                convs,
                dropout: (si < 2).then_some(Dropout { p: 0.5 }),
            });
        }
        ConvNet13 {
            stages,
            feature_dim: widths[2],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Inference features: dropout off.
    pub fn forward_eval(&self, x: &Batch4<S>) -> Result<Array2<S>> {
        let mut act = x.clone();
        for (si, stage) in self.stages.iter().enumerate() {
            for (ci, conv) in stage.convs.iter().enumerate() {
                act = relu(&conv.forward(&act)?);
                ensure_finite(act.iter(), &format!("stage{si}.conv{ci}"))?;
            }
            let (pooled, _) = MaxPool2.forward(&act)?;
            act = pooled;
        }
        Ok(global_avg_pool(&act))
    }

    /// Training features with everything backward needs.
    pub fn forward_train(&self, x: &Batch4<S>, rng: &mut ChaCha8Rng) -> Result<(Array2<S>, ConvNetTrace<S>)> {
        let mut act = x.clone();
        let mut traces = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter().enumerate() {
            let mut acts = vec![act.clone()];
            for (ci, conv) in stage.convs.iter().enumerate() {
                act = relu(&conv.forward(&act)?);
                ensure_finite(act.iter(), &format!("stage{si}.conv{ci}"))?;
                acts.push(act.clone());
            }
            let pre_pool_dim = act.dim();
            let (pooled, pool_arg) = MaxPool2.forward(&act)?;
            act = pooled;
            let drop_mask = stage.dropout.map(|d| {
                let (dropped, mask) = d.forward(&act, rng);
                act = dropped;
                mask
            });
            traces.push(StageTrace {
                acts,
                pool_arg,
                pre_pool_dim,
                drop_mask,
            });
        }
        let gap_in_dim = act.dim();
        Ok((global_avg_pool(&act), ConvNetTrace { stages: traces, gap_in_dim }))
    }

    /// Backpropagate feature gradients; accumulates into parameter grads.
    pub fn backward(&mut self, trace: &ConvNetTrace<S>, dfeat: &Array2<S>) -> Result<()> {
        let mut d = global_avg_pool_backward(trace.gap_in_dim, dfeat);
        for (stage, st) in self.stages.iter_mut().zip(&trace.stages).rev() {
            if let (Some(dropout), Some(mask)) = (&stage.dropout, &st.drop_mask) {
                d = dropout.backward(mask, &d);
            }
            d = MaxPool2.backward(st.pre_pool_dim, &st.pool_arg, &d);
            for (ci, conv) in stage.convs.iter_mut().enumerate().rev() {
                d = relu_backward(&st.acts[ci + 1], &d);
                d = conv.backward(&st.acts[ci], &d)?;
            }
            ensure_finite(d.iter(), "convnet backward")?;
        }
        Ok(())
    }
}

impl<S: Scalar> VisitParams<S> for ConvNet13<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (ci, conv) in stage.convs.iter_mut().enumerate() {
                conv.visit_params(&join_name(prefix, &format!("stage{si}.conv{ci}")), f);
            }
        }
    }
}
