//! Backbone networks with a K-way supervised head and a 7-way
//! self-supervised head sharing one feature extractor.

pub mod convnet;
pub mod optim;
pub mod wrn;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::loss::{softmax, softmax_cross_entropy};
use crate::nn::param::join_name;
use crate::nn::{Batch4, Linear, ParamKind, ParamTensor, Scalar, VisitParams};
use crate::pretext::ProxyClass;
use crate::rng::{stream, Domain};

pub use convnet::{ConvNet13, CONVNET13_WIDTHS};
pub use optim::{Adam, Sgd, SgdConfig};
pub use wrn::Wrn;

/// Which classification head a forward pass feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Super,
    SelfSup,
}

enum Backbone<S: Scalar> {
    ConvNet(ConvNet13<S>),
    Wrn(Wrn<S>),
}

enum BackboneTrace<S: Scalar> {
    ConvNet(convnet::ConvNetTrace<S>),
    Wrn(wrn::WrnTrace<S>),
}

/// Shared backbone plus the two linear heads.
pub struct DualHeadModel<S: Scalar = f32> {
    pub arch: String,
    pub num_classes: usize,
    backbone: Backbone<S>,
    head_super: Linear<S>,
    head_self: Linear<S>,
}

impl<S: Scalar> std::fmt::Debug for DualHeadModel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualHeadModel")
            .field("arch", &self.arch)
            .field("num_classes", &self.num_classes)
            .finish()
    }
}

/// Construct a model for a supported architecture tag.
pub fn build_model(arch: &str, num_classes: usize, seed: u64) -> Result<DualHeadModel> {
    let mut rng = stream(seed, Domain::Init, &[]);
    match arch {
        "convnet13" => Ok(DualHeadModel::from_backbone(
            arch,
            num_classes,
            Backbone::ConvNet(ConvNet13::with_widths(3, CONVNET13_WIDTHS, &mut rng)),
            &mut rng,
        )),
        "wrn_28_4" => Ok(DualHeadModel::from_backbone(
            arch,
            num_classes,
            Backbone::Wrn(Wrn::new(4, &mut rng)),
            &mut rng,
        )),
        other => Err(Error::Config(format!(
            "unknown architecture tag '{other}' (expected convnet13 or wrn_28_4)"
        ))),
    }
}

impl<S: Scalar> DualHeadModel<S> {
    fn from_backbone(arch: &str, num_classes: usize, backbone: Backbone<S>, rng: &mut ChaCha8Rng) -> Self {
        let feat = match &backbone {
            Backbone::ConvNet(b) => b.feature_dim(),
            Backbone::Wrn(b) => b.feature_dim(),
        };
        DualHeadModel {
            arch: arch.to_string(),
            num_classes,
            backbone,
            head_super: Linear::new(feat, num_classes, rng),
            head_self: Linear::new(feat, ProxyClass::COUNT, rng),
        }
    }

    /// Width-scaled 13-layer variant for cheap experiments and tests; the
    /// tag records the widths so checkpoints cannot be cross-loaded.
    pub fn convnet_scaled(widths: [usize; 3], num_classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Init, &[]);
        let tag = format!("convnet13-w{}-{}-{}", widths[0], widths[1], widths[2]);
        Self::from_backbone(
            &tag,
            num_classes,
            Backbone::ConvNet(ConvNet13::with_widths(3, widths, &mut rng)),
            &mut rng,
        )
    }

    fn head(&self, head: Head) -> &Linear<S> {
        match head {
            Head::Super => &self.head_super,
            Head::SelfSup => &self.head_self,
        }
    }

    /// Inference-mode logits (dropout off, batch norm on running stats).
    pub fn forward(&self, images: &Batch4<S>, head: Head) -> Result<Array2<S>> {
        let features = match &self.backbone {
            Backbone::ConvNet(b) => b.forward_eval(images)?,
            Backbone::Wrn(b) => b.forward_eval(images)?,
        };
        Ok(self.head(head).forward(&features.view()))
    }

    /// Inference-mode softmax prediction vectors (rows sum to one).
    pub fn predict(&self, images: &Batch4<S>, head: Head) -> Result<Array2<S>> {
        Ok(softmax(&self.forward(images, head)?.view()))
    }

    /// One training-mode branch pass: forward, cross-entropy, backward.
    ///
    /// Gradients are scaled by `grad_scale` and accumulated, so calling this
    /// once per branch realizes the weighted-sum objective in a single
    /// optimizer step. Returns the unscaled loss.
    pub fn train_branch(
        &mut self,
        images: &Batch4<S>,
        targets: &[usize],
        head: Head,
        grad_scale: S,
        rng: &mut ChaCha8Rng,
    ) -> Result<S> {
        let (features, trace) = match &mut self.backbone {
            Backbone::ConvNet(b) => {
                let (f, t) = b.forward_train(images, rng)?;
                (f, BackboneTrace::ConvNet(t))
            }
            Backbone::Wrn(b) => {
                let (f, t) = b.forward_train(images)?;
                (f, BackboneTrace::Wrn(t))
            }
        };
        let head_layer = match head {
            Head::Super => &mut self.head_super,
            Head::SelfSup => &mut self.head_self,
        };
        let logits = head_layer.forward(&features.view());
        let (loss, mut dlogits) = softmax_cross_entropy(&logits.view(), targets)?;
        if grad_scale != S::one() {
            dlogits.mapv_inplace(|v| v * grad_scale);
        }
        let dfeat = head_layer.backward(&features.view(), &dlogits);
        match (&mut self.backbone, trace) {
            (Backbone::ConvNet(b), BackboneTrace::ConvNet(t)) => b.backward(&t, &dfeat)?,
            (Backbone::Wrn(b), BackboneTrace::Wrn(t)) => b.backward(&t, &dfeat)?,
            _ => unreachable!(),
        }
        Ok(loss)
    }
}

impl<S: Scalar> VisitParams<S> for DualHeadModel<S> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, &mut dyn ParamTensor<S>)) {
        match &mut self.backbone {
            Backbone::ConvNet(b) => b.visit_params(&join_name(prefix, "backbone"), f),
            Backbone::Wrn(b) => b.visit_params(&join_name(prefix, "backbone"), f),
        }
        self.head_super.visit_params(&join_name(prefix, "head_super"), f);
        self.head_self.visit_params(&join_name(prefix, "head_self"), f);
    }
}

#[cfg(test)]
mod tests;
