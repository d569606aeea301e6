//! Paired-batch training loop minimizing the weighted-sum objective
//! `L = L_super + omega * L_self`, with evaluation, multi-seed
//! aggregation and checkpoint/resume.

pub mod checkpoint;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::colorizer::Colorizer;
use crate::data::{
    augment_labeled, channel_stats, normalize_batch, BatchPair, ChannelStats, DatasetSplit, LabeledCycler,
    LabeledExample, PermutationStream,
};
use crate::error::{Error, Result};
use crate::model::{build_model, DualHeadModel, Head, Sgd, SgdConfig};
use crate::nn::VisitParams;
use crate::pretext::{sample_proxy_batch, ProxyBatch};
use crate::rng::{stream, Domain};
use checkpoint::{assign_tensors, collect_tensors, read_checkpoint, write_checkpoint, TensorRecord};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: String,
    pub arch: String,
    /// Labeled-example budget used when the split was built.
    pub budget: usize,
    /// Weight of the self-supervised loss.
    pub omega: f32,
    pub batch: usize,
    /// Epochs are passes over the unlabeled stream (the larger one).
    pub epochs: usize,
    pub seed: u64,
    pub colorizer: Option<PathBuf>,
    // optimizer overrides
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: "cifar10".into(),
            arch: "convnet13".into(),
            budget: 1000,
            omega: 1.0,
            batch: 128,
            epochs: 30,
            seed: 0,
            colorizer: None,
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 0.0 {
            return Err(Error::Config("omega must be non-negative".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Digit orientation is class identity; never mirror those images.
    pub fn allow_flip(&self) -> bool {
        self.dataset != "svhn"
    }
}

/// Per-step losses. `total = l_super + omega * l_self` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l_super: f32,
    pub l_self: f32,
    pub total: f32,
}

/// One composite optimization step on a labeled/proxy batch pair.
///
/// Both branches backpropagate into the shared backbone before a single
/// optimizer update. With `omega == 0` the self-supervised branch is not
/// evaluated at all: the step reduces to plain supervised training and the
/// self head stays bitwise untouched.
pub fn train_step(
    model: &mut DualHeadModel,
    pair: &BatchPair,
    proxy: Option<&ProxyBatch>,
    config: &TrainConfig,
    optim: &mut Sgd<f32>,
) -> Result<LossReport> {
    pair.check()?;
    let step = optim.step;
    model.zero_grads();
    let mut super_rng = stream(config.seed, Domain::Dropout, &[step, 0]);
    let l_super = model.train_branch(&pair.labeled_images, &pair.labels, Head::Super, 1.0, &mut super_rng)?;
    let l_self = if config.omega > 0.0 {
        let proxy = proxy.ok_or_else(|| Error::Contract("omega > 0 requires a proxy batch".into()))?;
        if proxy.images.dim().0 != pair.labeled_images.dim().0 {
            return Err(Error::Contract(format!(
                "batch sizes differ: {} labeled vs {} proxy",
                pair.labeled_images.dim().0,
                proxy.images.dim().0
            )));
        }
        let targets: Vec<usize> = proxy.labels.iter().map(|c| c.code() as usize).collect();
        let mut self_rng = stream(config.seed, Domain::Dropout, &[step, 1]);
        model.train_branch(&proxy.images, &targets, Head::SelfSup, config.omega, &mut self_rng)?
    } else {
        0.0
    };
    optim.apply(model);
    let total = l_super + config.omega * l_self;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at step {step}")));
    }
    Ok(LossReport {
        step,
        l_super,
        l_self,
        total,
    })
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DualHeadModel,
    pub trace: Vec<LossReport>,
    pub stats: ChannelStats,
}

/// Steps per epoch: one pass of the unlabeled stream, batch-rounded up.
pub fn steps_per_epoch(unlabeled: usize, batch: usize) -> u64 {
    (unlabeled.div_ceil(batch)) as u64
}

/// Train from a freshly built model for `config.arch`.
pub fn train_loop(
    split: &DatasetSplit,
    config: &TrainConfig,
    colorizer: Option<&Colorizer>,
    checkpoint_dir: Option<&Path>,
    resume_from: Option<&Path>,
    observer: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome> {
    let model = build_model(&config.arch, split.num_classes, config.seed)?;
    train_loop_from(model, split, config, colorizer, checkpoint_dir, resume_from, observer)
}

/// Train a caller-supplied model (scaled variants, tests).
pub fn train_loop_from(
    mut model: DualHeadModel,
    split: &DatasetSplit,
    config: &TrainConfig,
    colorizer: Option<&Colorizer>,
    checkpoint_dir: Option<&Path>,
    resume_from: Option<&Path>,
    observer: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.omega > 0.0 && colorizer.is_none() {
        return Err(Error::Config(
            "self-supervised branch can draw the recolorized class; a colorizer is required".into(),
        ));
    }
    let stats = channel_stats(&split.unlabeled)?;
    let n_unlabeled = split.unlabeled.len();
    let per_epoch = steps_per_epoch(n_unlabeled, config.batch);
    let total_steps = per_epoch * config.epochs as u64;

    let mut optim = Sgd::new(SgdConfig {
        lr0: config.lr0,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        total_steps,
    });
    let mut trace = Vec::new();
    let mut start_step = 0u64;
    if let Some(path) = resume_from {
        start_step = load_trainer_checkpoint(path, &mut model, &mut optim, config)?;
    }

    let mut cycler = LabeledCycler::at_step(&split.labeled, config.batch, config.seed, start_step)?;
    let mut unlabeled = PermutationStream::at_position(
        n_unlabeled,
        config.seed,
        Domain::UnlabeledPass,
        start_step * config.batch as u64,
    )?;
    let allow_flip = config.allow_flip();

    for step in start_step..total_steps {
        // labeled branch: crop/flip augmentation then normalization
        let (mut labeled_images, labels) = cycler.next_batch();
        let mut aug_rng = stream(config.seed, Domain::Augment, &[step]);
        for mut img in labeled_images.outer_iter_mut() {
            let augmented = augment_labeled(&img.to_owned(), &mut aug_rng, allow_flip);
            img.assign(&augmented);
        }
        normalize_batch(&mut labeled_images, &stats);

        // self-supervised branch: proxy transform on raw pixels, then normalize
        let idx = unlabeled.draw(config.batch);
        let raw = crate::data::stack_f32(split.unlabeled.iter(), idx.into_iter());
        let proxy = if config.omega > 0.0 {
            let mut proxy_rng = stream(config.seed, Domain::Proxy, &[step]);
            let mut pb = sample_proxy_batch(&raw, &mut proxy_rng, colorizer)?;
            normalize_batch(&mut pb.images, &stats);
            Some(pb)
        } else {
            None
        };

        let pair = BatchPair {
            unlabeled_images: raw,
            labeled_images,
            labels,
        };
        let report = train_step(&mut model, &pair, proxy.as_ref(), config, &mut optim)?;
        observer(&report);
        trace.push(report);

        if (step + 1) % per_epoch == 0 {
            if let Some(dir) = checkpoint_dir {
                save_trainer_checkpoint(&dir.join("last.ckpt"), &mut model, &optim, config, step + 1)?;
            }
        }
    }
    Ok(TrainOutcome { model, trace, stats })
}

/// Lowest-index argmax: deterministic under ties.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of test examples the supervised head misclassifies.
pub fn evaluate(model: &DualHeadModel, test: &[LabeledExample], stats: &ChannelStats) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let chunk = 256;
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..test.len()).collect();
    for block in idx.chunks(chunk) {
        let mut images = crate::data::stack_f32(test.iter().map(|e| &e.image), block.iter().copied());
        normalize_batch(&mut images, stats);
        let logits = model.forward(&images, Head::Super)?;
        for (row, &i) in logits.rows().into_iter().zip(block) {
            let pred = argmax_lowest(row.as_slice().expect("contiguous row"));
            if pred != test[i].label as usize {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / test.len() as f64)
}

/// Mean and population standard deviation over per-seed error rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate_runs(errors: &[f64]) -> Result<EvalReport> {
    if errors.is_empty() {
        return Err(Error::Config("no runs to aggregate".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(EvalReport {
        per_seed: errors.to_vec(),
        mean,
        std: var.sqrt(),
    })
}

#[derive(Serialize, Deserialize)]
struct TrainerSnapshot {
    format: String,
    config: TrainConfig,
    step: u64,
    num_classes: usize,
}

const SNAPSHOT_FORMAT: &str = "trainer";

/// Persist model, optimizer state and position under one container.
pub fn save_trainer_checkpoint(
    path: &Path,
    model: &mut DualHeadModel,
    optim: &Sgd<f32>,
    config: &TrainConfig,
    step: u64,
) -> Result<()> {
    let snapshot = serde_json::to_string(&TrainerSnapshot {
        format: SNAPSHOT_FORMAT.into(),
        config: config.clone(),
        step,
        num_classes: model.num_classes,
    })
    .expect("snapshot serializes");
    let mut tensors = collect_tensors(model, "model");
    for (name, data) in optim.velocity_tensors() {
        tensors.push(TensorRecord::new(format!("optim.{name}"), vec![data.len()], data.clone()));
    }
    write_checkpoint(path, &snapshot, &tensors)
}

/// Restore a checkpoint into `model`/`optim`; returns the step to resume at.
///
/// The stored configuration must equal the current one, otherwise the
/// resumed trace could silently diverge from the uninterrupted run.
pub fn load_trainer_checkpoint(
    path: &Path,
    model: &mut DualHeadModel,
    optim: &mut Sgd<f32>,
    config: &TrainConfig,
) -> Result<u64> {
    let (snapshot, tensors) = read_checkpoint(path)?;
    let snap: TrainerSnapshot = serde_json::from_str(&snapshot)
        .map_err(|e| Error::data(path, format!("snapshot is not trainer JSON: {e}")))?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint holds a '{}' model, expected '{SNAPSHOT_FORMAT}'",
            snap.format
        )));
    }
    if snap.config.arch != config.arch {
        return Err(Error::IncompatibleCheckpoint(format!(
            "architecture '{}' in checkpoint, run wants '{}'",
            snap.config.arch, config.arch
        )));
    }
    if snap.config != *config {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint was written under a different configuration".into(),
        ));
    }
    let model_tensors: Vec<TensorRecord> = tensors
        .iter()
        .filter(|t| t.name.starts_with("model."))
        .cloned()
        .collect();
    assign_tensors(model, "model", &model_tensors)?;
    for t in tensors.iter().filter(|t| t.name.starts_with("optim.")) {
        optim.restore_velocity(t.name["optim.".len()..].to_string(), t.data.clone());
    }
    optim.step = snap.step;
    Ok(snap.step)
}
