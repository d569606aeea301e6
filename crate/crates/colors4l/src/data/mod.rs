//! Dataset ingestion, label-budget splits and mini-batch streams.

pub mod cifar;
pub mod container;

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// A single `H x W x C` image. `u8` pixels are storage at rest
/// (`0..=255`); `f32` pixels are the in-pipeline form in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    pub pixels: Array3<T>,
}

impl<T: Clone> Image<T> {
    pub fn new(pixels: Array3<T>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::Contract(format!("bad image dims {h}x{w}x{c}")));
        }
        Ok(Image { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }
    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }
}

impl Image<u8> {
    /// Pipeline form: pixels scaled to `[0, 1]`.
    pub fn to_f32(&self) -> Image<f32> {
        Image {
            pixels: self.pixels.mapv(|v| f32::from(v) / 255.0),
        }
    }
}

/// An image with its ground-truth class index.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub image: Image<u8>,
    pub label: u8,
}

/// The `(labeled, unlabeled, test)` triple induced by a label budget.
///
/// The unlabeled pool contains every training image, including the ones
/// that were granted labels; self-supervision needs no annotations.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<Image<u8>>,
    pub test: Vec<LabeledExample>,
    pub num_classes: usize,
    pub seed: u64,
}

/// One training step's paired mini-batches: `B` labeled and `B` unlabeled.
#[derive(Debug)]
pub struct BatchPair {
    pub labeled_images: Array4<f32>,
    pub labels: Vec<usize>,
    pub unlabeled_images: Array4<f32>,
}

impl BatchPair {
    pub fn check(&self) -> Result<()> {
        let bl = self.labeled_images.dim().0;
        let bu = self.unlabeled_images.dim().0;
        if bl != bu || bl != self.labels.len() {
            return Err(Error::Contract(format!(
                "batch pair sizes differ: {bl} labeled vs {bu} unlabeled vs {} labels",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

/// Build a class-balanced labeled subset of exactly `budget` examples.
///
/// Per-class counts differ by at most one whenever every class holds enough
/// examples; shortfalls in a class are redistributed so the total stays
/// exact. Deterministic in `(train order, budget, seed)`.
pub fn make_split(
    train: &[LabeledExample],
    test: &[LabeledExample],
    num_classes: usize,
    budget: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if budget > train.len() {
        return Err(Error::Config(format!(
            "budget {budget} exceeds train set size {}",
            train.len()
        )));
    }
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let mut rng = stream(seed, Domain::Split, &[]);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, ex) in train.iter().enumerate() {
        let c = ex.label as usize;
        if c >= num_classes {
            return Err(Error::Contract(format!(
                "label {c} out of range for {num_classes} classes"
            )));
        }
        per_class[c].push(i);
    }
    for indices in &mut per_class {
        indices.shuffle(&mut rng);
    }

    // base quota plus remainder spread over a seed-derived class order
    let mut quota = vec![budget / num_classes; num_classes];
    let mut class_order: Vec<usize> = (0..num_classes).collect();
    class_order.shuffle(&mut rng);
    for &c in class_order.iter().take(budget % num_classes) {
        quota[c] += 1;
    }
    // redistribute what scarce classes cannot supply
    let mut deficit = 0usize;
    for c in 0..num_classes {
        if quota[c] > per_class[c].len() {
            deficit += quota[c] - per_class[c].len();
            quota[c] = per_class[c].len();
        }
    }
    while deficit > 0 {
        let mut moved = false;
        for &c in &class_order {
            if deficit == 0 {
                break;
            }
            if quota[c] < per_class[c].len() {
                quota[c] += 1;
                deficit -= 1;
                moved = true;
            }
        }
        if !moved {
            return Err(Error::Config(format!("cannot fill budget {budget}")));
        }
    }

    let mut labeled = Vec::with_capacity(budget);
    for c in 0..num_classes {
        for &i in per_class[c].iter().take(quota[c]) {
            labeled.push(train[i].clone());
        }
    }
    debug_assert_eq!(labeled.len(), budget);

    let unlabeled = train.iter().map(|ex| ex.image.clone()).collect();
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        test: test.to_vec(),
        num_classes,
        seed,
    })
}

/// Index stream that concatenates fresh permutations of `0..n`, one per
/// pass. Over any prefix, per-index appearance counts differ by at most 1.
#[derive(Debug, Clone)]
pub struct PermutationStream {
    n: usize,
    seed: u64,
    domain: Domain,
    pass: u64,
    pos: usize,
    perm: Vec<u32>,
}

impl PermutationStream {
    pub fn new(n: usize, seed: u64, domain: Domain) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("empty index stream".into()));
        }
        let mut s = PermutationStream {
            n,
            seed,
            domain,
            pass: 0,
            pos: 0,
            perm: Vec::new(),
        };
        s.reshuffle();
        Ok(s)
    }

    /// Stream positioned as if `consumed` indices had already been drawn.
    pub fn at_position(n: usize, seed: u64, domain: Domain, consumed: u64) -> Result<Self> {
        let mut s = Self::new(n, seed, domain)?;
        s.pass = consumed / n as u64;
        s.pos = (consumed % n as u64) as usize;
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        let mut rng = stream(self.seed, self.domain, &[self.pass]);
        let mut perm: Vec<u32> = (0..self.n as u32).collect();
        perm.shuffle(&mut rng);
        self.perm = perm;
    }

    /// Draw the next `count` indices.
    pub fn draw(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.n {
                self.pass += 1;
                self.pos = 0;
                self.reshuffle();
            }
            out.push(self.perm[self.pos] as usize);
            self.pos += 1;
        }
        out
    }
}

/// Infinite labeled mini-batch stream with per-pass reshuffling.
#[derive(Debug)]
pub struct LabeledCycler<'a> {
    examples: &'a [LabeledExample],
    batch: usize,
    stream: PermutationStream,
}

impl<'a> LabeledCycler<'a> {
    pub fn new(examples: &'a [LabeledExample], batch: usize, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(LabeledCycler {
            examples,
            batch,
            stream: PermutationStream::new(examples.len(), seed, Domain::LabeledPass)?,
        })
    }

    /// Resume after `steps` batches have already been consumed.
    pub fn at_step(examples: &'a [LabeledExample], batch: usize, seed: u64, steps: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        Ok(LabeledCycler {
            examples,
            batch,
            stream: PermutationStream::at_position(
                examples.len(),
                seed,
                Domain::LabeledPass,
                steps * batch as u64,
            )?,
        })
    }

    /// Next `(images, labels)` batch; images are raw `[0,1]` floats.
    pub fn next_batch(&mut self) -> (Array4<f32>, Vec<usize>) {
        let idx = self.stream.draw(self.batch);
        let images = stack_f32(self.examples.iter().map(|e| &e.image), idx.iter().copied());
        let labels = idx.iter().map(|&i| self.examples[i].label as usize).collect();
        (images, labels)
    }

    /// Index batches only; used by tests that count appearances.
    pub fn next_indices(&mut self) -> Vec<usize> {
        self.stream.draw(self.batch)
    }
}

/// Stack `u8` images selected by `indices` into a `[0,1]` float batch.
pub fn stack_f32<'a>(
    images: impl Iterator<Item = &'a Image<u8>> + Clone,
    indices: impl Iterator<Item = usize>,
) -> Array4<f32> {
    let pool: Vec<&Image<u8>> = images.collect();
    let idx: Vec<usize> = indices.collect();
    let (h, w, c) = pool[idx[0]].pixels.dim();
    let mut out = Array4::<f32>::zeros((idx.len(), h, w, c));
    for (bi, &i) in idx.iter().enumerate() {
        let src = pool[i].pixels.as_slice().expect("standard layout");
        let dst = &mut out.as_slice_mut().expect("standard layout")[bi * h * w * c..(bi + 1) * h * w * c];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f32::from(s) / 255.0;
        }
    }
    out
}

fn reflect_index(i: isize, n: usize) -> usize {
    // numpy-style 'reflect': edge pixel not repeated
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        } else {
            i = 2 * n - 2 - i;
        }
    }
    i as usize
}

/// Pad 4 with reflection, crop back to the original size at `(dy, dx)`
/// (each in `0..=8`; `(4, 4)` recovers the input), optionally mirror
/// left-right.
pub fn augment_deterministic(img: &Array3<f32>, dy: usize, dx: usize, flip: bool) -> Array3<f32> {
    let (h, w, c) = img.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        let sy = reflect_index(y as isize + dy as isize - 4, h);
        for x in 0..w {
            let x_eff = if flip { w - 1 - x } else { x };
            let sx = reflect_index(x_eff as isize + dx as isize - 4, w);
            for ci in 0..c {
                out[(y, x, ci)] = img[(sy, sx, ci)];
            }
        }
    }
    out
}

/// Labeled-branch augmentation: random crop from 4-pixel reflect padding,
/// plus a coin-flip mirror when `allow_flip` (never for digit data).
///
/// Draw order is fixed: `dy`, `dx`, then (only if allowed) the flip bit.
pub fn augment_labeled(img: &Array3<f32>, rng: &mut impl Rng, allow_flip: bool) -> Array3<f32> {
    let dy = rng.gen_range(0..=8);
    let dx = rng.gen_range(0..=8);
    let flip = allow_flip && rng.gen_bool(0.5);
    augment_deterministic(img, dy, dx, flip)
}

/// Per-channel mean and standard deviation of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Population statistics over all pixels of all images, in `[0,1]` scale.
pub fn channel_stats(images: &[Image<u8>]) -> Result<ChannelStats> {
    let first = images.first().ok_or_else(|| Error::Config("no images for statistics".into()))?;
    let c = first.channels();
    let mut sum = vec![0f64; c];
    let mut sum_sq = vec![0f64; c];
    let mut count = 0u64;
    for img in images {
        for px in img.pixels.rows() {
            for (ci, &v) in px.iter().enumerate() {
                let v = f64::from(v) / 255.0;
                sum[ci] += v;
                sum_sq[ci] += v * v;
            }
        }
        count += (img.height() * img.width()) as u64;
    }
    let mean: Vec<f32> = sum.iter().map(|&s| (s / count as f64) as f32).collect();
    let std: Vec<f32> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(&sq, &m)| ((sq / count as f64 - f64::from(m) * f64::from(m)).max(0.0)).sqrt() as f32)
        .collect();
    Ok(ChannelStats { mean, std })
}

/// Z-score one image with train-set statistics.
pub fn normalize(img: &Array3<f32>, stats: &ChannelStats) -> Array3<f32> {
    let mut out = img.clone();
    normalize_inplace(&mut out.view_mut(), stats);
    out
}

pub fn normalize_inplace(img: &mut ndarray::ArrayViewMut3<f32>, stats: &ChannelStats) {
    let c = img.dim().2;
    for ci in 0..c {
        let m = stats.mean[ci];
        let s = stats.std[ci].max(1e-8);
        img.index_axis_mut(ndarray::Axis(2), ci).mapv_inplace(|v| (v - m) / s);
    }
}

/// Z-score a whole `(B, H, W, C)` batch in place.
pub fn normalize_batch(batch: &mut Array4<f32>, stats: &ChannelStats) {
    let c = batch.dim().3;
    for ci in 0..c {
        let m = stats.mean[ci];
        let s = stats.std[ci].max(1e-8);
        batch.index_axis_mut(ndarray::Axis(3), ci).mapv_inplace(|v| (v - m) / s);
    }
}
