//! Wide residual network, depth 28, pre-activation basic blocks.
//!
//! Layout for depth 28: an initial 3x3 convolution to 16 channels, three
//! groups of four blocks at widths `16k, 32k, 64k` (stride 2 entering
//! groups two and three), a final batch-norm + ReLU, then global average
//! pooling. Convolutions carry no bias; batch norm provides the shift.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::batchnorm::BnCache;
use crate::nn::param::join_name;
use crate::nn::{
    ensure_finite, global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm2d, Batch4, Conv2d,
    ParamKind, ParamTensor, Scalar, VisitParams,
};

#[derive(Clone)]
struct Block<S: Scalar> {
    bn1: BatchNorm2d<S>,
    conv1: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    conv2: Conv2d<S>,
    shortcut: Option<Conv2d<S>>,
}

#[derive(Clone)]
pub struct Wrn<S: Scalar> {
    conv0: Conv2d<S>,
    blocks: Vec<Block<S>>,
    bn_final: BatchNorm2d<S>,
    feature_dim: usize,
}

struct BlockTrace<S: Scalar> {
    bn1_cache: BnCache<S>,
    h: Batch4<S>,
    bn2_cache: BnCache<S>,
    a2: Batch4<S>,
}

pub struct WrnTrace<S: Scalar> {
    x0: Batch4<S>,
    blocks: Vec<BlockTrace<S>>,
    bn_final_cache: BnCache<S>,
    final_act: Batch4<S>,
}

impl<S: Scalar> Block<S> {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Block {
            bn1: BatchNorm2d::new(c_in),
            conv1: Conv2d::new(c_in, c_out, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(c_out),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, false, rng),
            shortcut: (c_in != c_out || stride != 1).then(|| Conv2d::new(c_in, c_out, 1, stride, 0, false, rng)),
        }
    }

    fn forward_eval(&self, x: &Batch4<S>) -> Result<Batch4<S>> {
        let h = relu(&self.bn1.forward_eval(x));
        let mid = relu(&self.bn2.forward_eval(&self.conv1.forward(&h)?));
        let main = self.conv2.forward(&mid)?;
        let skip = match &self.shortcut {
            Some(sc) => sc.forward(&h)?,
            None => x.clone(),
        };
        Ok(main + skip)
    }

    fn forward_train(&mut self, x: &Batch4<S>) -> Result<(Batch4<S>, BlockTrace<S>)> {
        let (bn1_out, bn1_cache) = self.bn1.forward_train(x);
        let h = relu(&bn1_out);
        let conv1_out = self.conv1.forward(&h)?;
        let (bn2_out, bn2_cache) = self.bn2.forward_train(&conv1_out);
        drop(conv1_out);
        let a2 = relu(&bn2_out);
        let main = self.conv2.forward(&a2)?;
        let skip = match &self.shortcut {
            Some(sc) => sc.forward(&h)?,
            None => x.clone(),
        };
        let y = main + skip;
        ensure_finite(y.iter(), "wrn block")?;
        Ok((
            y,
            BlockTrace {
                bn1_cache,
                h,
                bn2_cache,
                a2,
            },
        ))
    }

    fn backward(&mut self, t: &BlockTrace<S>, dy: &Batch4<S>) -> Result<Batch4<S>> {
        // main path
        let da2 = self.conv2.backward(&t.a2, dy)?;
        let dbn2_out = relu_backward(&t.a2, &da2);
        let dconv1_out = self.bn2.backward(&t.bn2_cache, &dbn2_out);
        let mut dh = self.conv1.backward(&t.h, &dconv1_out)?;
        // skip path
        let mut dx_extra = None;
        match &mut self.shortcut {
            Some(sc) => {
                dh = dh + sc.backward(&t.h, dy)?;
            }
            None => dx_extra = Some(dy.clone()),
        }
        let dbn1_out = relu_backward(&t.h, &dh);
        let mut dx = self.bn1.backward(&t.bn1_cache, &dbn1_out);
        if let Some(extra) = dx_extra {
            dx = dx + extra;
        }
        Ok(dx)
    }
}

impl<S: Scalar> Wrn<S> {
    /// Depth-28 network at the given widening factor.
    pub fn new(widen: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = 4; // (28 - 4) / 6 blocks per group
        let widths = [16, 16 * widen, 32 * widen, 64 * widen];
        let conv0 = Conv2d::new(3, widths[0], 3, 1, 1, false, rng);
        let mut blocks = Vec::with_capacity(3 * n);
        let mut c_in = widths[0];
        for g in 0..3 {
            let c_out = widths[g + 1];
            for b in 0..n {
                let stride = if b == 0 && g > 0 { 2 } else { 1 };
                blocks.push(Block::new(c_in, c_out, stride, rng));
                c_in = c_out;
            }
        }
        Wrn {
            conv0,
            blocks,
            bn_final: BatchNorm2d::new(widths[3]),
            feature_dim: widths[3],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward_eval(&self, x: &Batch4<S>) -> Result<Array2<S>> {
        let mut act = self.conv0.forward(x)?;
        for block in &self.blocks {
            act = block.forward_eval(&act)?;
        }
        let act = relu(&self.bn_final.forward_eval(&act));
        Ok(global_avg_pool(&act))
    }

    pub fn forward_train(&mut self, x: &Batch4<S>) -> Result<(Array2<S>, WrnTrace<S>)> {
        let x0 = x.clone();
        let mut act = self.conv0.forward(&x0)?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (next, t) = block.forward_train(&act)?;
            traces.push(t);
            act = next;
        }
        let (bn_out, bn_final_cache) = self.bn_final.forward_train(&act);
        let final_act = relu(&bn_out);
        Ok((
            global_avg_pool(&final_act),
            WrnTrace {
                x0,
                blocks: traces,
                bn_final_cache,
                final_act,
            },
        ))
    }

    pub fn backward(&mut self, trace: &WrnTrace<S>, dfeat: &Array2<S>) -> Result<()> {
        let mut d = global_avg_pool_backward(trace.final_act.dim(), dfeat);
        d = relu_backward(&trace.final_act, &d);
        d = self.bn_final.backward(&trace.bn_final_cache, &d);
        for (block, t) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            d = block.backward(t, &d)?;
        }
        ensure_finite(d.iter(), "wrn backward")?;
        self.conv0.backward(&trace.x0, &d)?;
        Ok(())
    }
}

impl<S: Scalar> VisitParams<S> for Wrn<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        self.conv0.visit_params(&join_name(prefix, "conv0"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = join_name(prefix, &format!("block{i}"));
            block.bn1.visit_params(&join_name(&p, "bn1"), f);
            block.conv1.visit_params(&join_name(&p, "conv1"), f);
            block.bn2.visit_params(&join_name(&p, "bn2"), f);
            block.conv2.visit_params(&join_name(&p, "conv2"), f);
            if let Some(sc) = &mut block.shortcut {
                sc.visit_params(&join_name(&p, "shortcut"), f);
            }
        }
        self.bn_final.visit_params(&join_name(prefix, "bn_final"), f);
    }
}
