//! Encoder-decoder recolorization network.
//!
//! Pretrained standalone as grayscale-to-RGB regression on a dataset's own
//! images, then frozen; the proxy sampler runs unlabeled images through it
//! to produce the recolorized proxy class.
//!
//! Encoder: three stride-2 3x3 convolutions (1 -> 32 -> 64 -> 128), each
//! rectified. Decoder: three stages of nearest-neighbor 2x upsampling plus
//! a rectified 3x3 convolution (128 -> 64 -> 32 -> 32), then a 1x1
//! convolution to 3 channels under a sigmoid, so outputs live in (0, 1).

use std::path::Path;

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::model::optim::Adam;
use crate::nn::layers::{sigmoid, sigmoid_backward};
use crate::nn::loss::mse;
use crate::nn::{
    ensure_finite, relu, relu_backward, Batch4, Conv2d, ParamKind, ParamTensor, Scalar, UpsampleNearest2, VisitParams,
};
use crate::rng::{stream, Domain};
use crate::trainer::checkpoint::{assign_tensors, collect_tensors, read_checkpoint, write_checkpoint};

/// Luminance weights (ITU-R 601).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Collapse a 3-channel batch to luminance.
pub fn grayscale_batch<S: Scalar>(batch: &Batch4<S>) -> Result<Batch4<S>> {
    let (b, h, w, c) = batch.dim();
    if c != 3 {
        return Err(Error::Contract(format!("grayscale expects 3 channels, got {c}")));
    }
    let wr = S::sc(LUMA[0]);
    let wg = S::sc(LUMA[1]);
    let wb = S::sc(LUMA[2]);
    let mut out = Array4::<S>::zeros((b, h, w, 1));
    ndarray::Zip::from(out.index_axis_mut(Axis(3), 0))
        .and(batch.index_axis(Axis(3), 0))
        .and(batch.index_axis(Axis(3), 1))
        .and(batch.index_axis(Axis(3), 2))
        .for_each(|o, &r, &g, &bl| *o = wr * r + wg * g + wb * bl);
    Ok(out)
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorizerConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ColorizerConfig {
    fn default() -> Self {
        ColorizerConfig {
            epochs: 100,
            batch: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Provenance carried with trained parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColorizerMeta {
    pub dataset: String,
    pub epochs: usize,
}

#[derive(Clone)]
pub struct Colorizer<S: Scalar = f32> {
    pub(crate) enc: [Conv2d<S>; 3],
    pub(crate) dec: [Conv2d<S>; 3],
    pub(crate) head: Conv2d<S>,
    up: UpsampleNearest2,
    pub meta: ColorizerMeta,
}

struct ColorizerTrace<S: Scalar> {
    x0: Batch4<S>,
    enc_out: [Batch4<S>; 3],
    up_in: [Batch4<S>; 3],
    dec_out: [Batch4<S>; 3],
    y: Batch4<S>,
}

impl<S: Scalar> Colorizer<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, &[u64::from(u32::MAX)]);
        let conv = |ci, co, stride, k, pad, rng: &mut rand_chacha::ChaCha8Rng| {
            Conv2d::new(ci, co, k, stride, pad, true, rng)
        };
        Colorizer {
            enc: [
                conv(1, 32, 2, 3, 1, &mut rng),
                conv(32, 64, 2, 3, 1, &mut rng),
                conv(64, 128, 2, 3, 1, &mut rng),
            ],
            dec: [
                conv(128, 64, 1, 3, 1, &mut rng),
                conv(64, 32, 1, 3, 1, &mut rng),
                conv(32, 32, 1, 3, 1, &mut rng),
            ],
            head: conv(32, 3, 1, 1, 0, &mut rng),
            up: UpsampleNearest2,
            meta: ColorizerMeta::default(),
        }
    }

    /// Map a grayscale batch `(B, H, W, 1)` to RGB in `(0, 1)`.
    pub fn forward(&self, gray: &Batch4<S>) -> Result<Batch4<S>> {
        Ok(self.forward_traced(gray)?.y)
    }

    fn forward_traced(&self, gray: &Batch4<S>) -> Result<ColorizerTrace<S>> {
        let c = gray.dim().3;
        if c != 1 {
            return Err(Error::Contract(format!("colorizer expects 1 input channel, got {c}")));
        }
        let x0 = gray.clone();
        let e1 = relu(&self.enc[0].forward(&x0)?);
        let e2 = relu(&self.enc[1].forward(&e1)?);
        let e3 = relu(&self.enc[2].forward(&e2)?);
        let u1 = self.up.forward(&e3);
        let d1 = relu(&self.dec[0].forward(&u1)?);
        let u2 = self.up.forward(&d1);
        let d2 = relu(&self.dec[1].forward(&u2)?);
        let u3 = self.up.forward(&d2);
        let d3 = relu(&self.dec[2].forward(&u3)?);
        let y = sigmoid(&self.head.forward(&d3)?);
        ensure_finite(y.iter(), "colorizer output")?;
        Ok(ColorizerTrace {
            x0,
            enc_out: [e1, e2, e3],
            up_in: [u1, u2, u3],
            dec_out: [d1, d2, d3],
            y,
        })
    }

    /// Accumulate gradients for `d loss / d output`; returns nothing useful
    /// for the input since pretraining never needs it.
    fn backward(&mut self, trace: &ColorizerTrace<S>, dy: &Batch4<S>) -> Result<()> {
        let d_head_in = sigmoid_backward(&trace.y, dy);
        let mut d = self.head.backward(&trace.dec_out[2], &d_head_in)?;
        for i in (0..3).rev() {
            d = relu_backward(&trace.dec_out[i], &d);
            d = self.dec[i].backward(&trace.up_in[i], &d)?;
            let below = if i == 0 { trace.enc_out[2].dim() } else { trace.dec_out[i - 1].dim() };
            d = self.up.backward(below, &d);
        }
        for i in (0..3).rev() {
            d = relu_backward(&trace.enc_out[i], &d);
            let input = if i == 0 { &trace.x0 } else { &trace.enc_out[i - 1] };
            d = self.enc[i].backward(input, &d)?;
        }
        Ok(())
    }
}

impl<S: Scalar> VisitParams<S> for Colorizer<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            c.visit_params(&crate::nn::param::join_name(prefix, &format!("enc{i}")), f);
        }
        for (i, c) in self.dec.iter_mut().enumerate() {
            c.visit_params(&crate::nn::param::join_name(prefix, &format!("dec{i}")), f);
        }
        self.head.visit_params(&crate::nn::param::join_name(prefix, "head"), f);
    }
}

/// Train a colorizer on a dataset's own images: inputs are their luminance,
/// targets the original RGB. Returns the trained network and the mean
/// training loss per epoch.
pub fn train_colorizer(
    images: &[Image<u8>],
    config: &ColorizerConfig,
    dataset: &str,
) -> Result<(Colorizer<f32>, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::Config("colorizer training needs at least one image".into()));
    }
    if images[0].channels() != 3 {
        return Err(Error::Contract("colorizer training expects 3-channel images".into()));
    }
    if config.epochs == 0 || config.batch == 0 {
        return Err(Error::Config("colorizer epochs and batch must be positive".into()));
    }
    let mut net = Colorizer::<f32>::new(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let n = images.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(config.seed, Domain::ColorizerEpoch, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch) {
            let target = crate::data::stack_f32(images.iter(), chunk.iter().copied());
            let gray = grayscale_batch(&target)?;
            net.zero_grads();
            let trace = net.forward_traced(&gray)?;
            let (loss, dy) = mse(&trace.y, &target)?;
            net.backward(&trace, &dy)?;
            adam.apply(&mut net);
            loss_sum += f64::from(loss) * chunk.len() as f64;
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    net.meta = ColorizerMeta {
        dataset: dataset.to_string(),
        epochs: config.epochs,
    };
    Ok((net, epoch_losses))
}

/// Mean reconstruction error of the frozen network over held-out images.
pub fn reconstruction_mse(net: &Colorizer<f32>, images: &[Image<u8>], batch: usize) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let mut sum = 0.0f64;
    let idx: Vec<usize> = (0..images.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let target = crate::data::stack_f32(images.iter(), chunk.iter().copied());
        let gray = grayscale_batch(&target)?;
        let pred = net.forward(&gray)?;
        let (loss, _) = mse(&pred, &target)?;
        sum += f64::from(loss) * chunk.len() as f64;
    }
    Ok(sum / images.len() as f64)
}

const SNAPSHOT_FORMAT: &str = "colorizer";

#[derive(Serialize, Deserialize)]
struct ColorizerSnapshot {
    format: String,
    meta: ColorizerMeta,
}

pub fn save_colorizer(net: &mut Colorizer<f32>, path: &Path) -> Result<()> {
    let snapshot = serde_json::to_string(&ColorizerSnapshot {
        format: SNAPSHOT_FORMAT.into(),
        meta: net.meta.clone(),
    })
    .expect("snapshot serializes");
    let tensors = collect_tensors(net, "colorizer");
    write_checkpoint(path, &snapshot, &tensors)
}

pub fn load_colorizer(path: &Path) -> Result<Colorizer<f32>> {
    let (snapshot, tensors) = read_checkpoint(path)?;
    let snap: ColorizerSnapshot = serde_json::from_str(&snapshot)
        .map_err(|e| Error::data(path, format!("snapshot is not colorizer JSON: {e}")))?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint holds a '{}' model, expected '{SNAPSHOT_FORMAT}'",
            snap.format
        )));
    }
    let mut net = Colorizer::<f32>::new(0);
    assign_tensors(&mut net, "colorizer", &tensors)?;
    net.meta = snap.meta;
    Ok(net)
}
