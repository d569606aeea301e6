//! Proxy-label generation for the self-supervised branch.
//!
//! Seven classes: four rotations (counterclockwise multiples of 90°), the
//! two axis flips, and recolorization — an image replaced by the frozen
//! colorizer's reconstruction of its own luminance. The codes are the
//! training targets of the self-supervised head and must stay stable.

use ndarray::{s, Array3, Array4};
use rand::Rng;

use crate::colorizer::{grayscale_batch, Colorizer};
use crate::error::{Error, Result};
use crate::nn::Batch4;

/// The 7-way proxy label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ProxyClass {
    Rot0 = 0,
    Rot90 = 1,
    Rot180 = 2,
    Rot270 = 3,
    HFlip = 4,
    VFlip = 5,
    Colorized = 6,
}

impl ProxyClass {
    pub const ALL: [ProxyClass; 7] = [
        ProxyClass::Rot0,
        ProxyClass::Rot90,
        ProxyClass::Rot180,
        ProxyClass::Rot270,
        ProxyClass::HFlip,
        ProxyClass::VFlip,
        ProxyClass::Colorized,
    ];

    pub const COUNT: usize = 7;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ProxyClass> {
        Self::ALL.get(code as usize).copied()
    }
}

/// A transformed mini-batch with its proxy labels.
#[derive(Debug, Clone)]
pub struct ProxyBatch {
    pub images: Batch4<f32>,
    pub labels: Vec<ProxyClass>,
}

/// Rotate `k` quarter-turns counterclockwise. Output dims swap for odd `k`.
/// A pure pixel permutation: exact for every element type.
pub fn rotate90<T: Copy>(img: &Array3<T>, k: usize) -> Array3<T> {
    let (h, w, c) = img.dim();
    match k % 4 {
        0 => img.clone(),
        1 => Array3::from_shape_fn((w, h, c), |(y, x, ci)| img[(x, w - 1 - y, ci)]),
        2 => Array3::from_shape_fn((h, w, c), |(y, x, ci)| img[(h - 1 - y, w - 1 - x, ci)]),
        _ => Array3::from_shape_fn((w, h, c), |(y, x, ci)| img[(h - 1 - x, y, ci)]),
    }
}

/// Mirror left-right (column order reversed).
pub fn hflip<T: Copy>(img: &Array3<T>) -> Array3<T> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ci)| img[(y, w - 1 - x, ci)])
}

/// Mirror top-bottom (row order reversed).
pub fn vflip<T: Copy>(img: &Array3<T>) -> Array3<T> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ci)| img[(h - 1 - y, x, ci)])
}

/// ITU-R 601 luminance of a 3-channel `[0,1]` image.
pub fn grayscale(img: &Array3<f32>) -> Result<Array3<f32>> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Contract(format!("grayscale expects 3 channels, got {c}")));
    }
    let [wr, wg, wb] = crate::colorizer::LUMA.map(|v| v as f32);
    Ok(Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
        wr * img[(y, x, 0)] + wg * img[(y, x, 1)] + wb * img[(y, x, 2)]
    }))
}

/// Apply one proxy transform to a `[0,1]` image. The recolorized class needs
/// the frozen colorizer; requesting it without one is a configuration error.
pub fn apply_proxy(img: &Array3<f32>, cls: ProxyClass, colorizer: Option<&Colorizer>) -> Result<Array3<f32>> {
    match cls {
        ProxyClass::Rot0 => Ok(img.clone()),
        ProxyClass::Rot90 => Ok(rotate90(img, 1)),
        ProxyClass::Rot180 => Ok(rotate90(img, 2)),
        ProxyClass::Rot270 => Ok(rotate90(img, 3)),
        ProxyClass::HFlip => Ok(hflip(img)),
        ProxyClass::VFlip => Ok(vflip(img)),
        ProxyClass::Colorized => {
            let net = colorizer.ok_or_else(|| {
                Error::Config("recolorized proxy class requested but no colorizer is loaded".into())
            })?;
            let (h, w, _) = img.dim();
            let batch = img
                .to_owned()
                .into_shape_with_order((1, h, w, 3))
                .expect("image reshapes to batch");
            let gray = grayscale_batch(&batch)?;
            let out = net.forward(&gray)?;
            Ok(out.into_shape_with_order((h, w, 3)).expect("batch reshapes to image"))
        }
    }
}

/// Assign each image an independent uniform proxy class and transform it.
///
/// Recolorized images are gathered into one colorizer forward pass. Source
/// images must be square so rotations preserve the batch shape.
pub fn sample_proxy_batch(
    images: &Batch4<f32>,
    rng: &mut impl Rng,
    colorizer: Option<&Colorizer>,
) -> Result<ProxyBatch> {
    let (b, h, w, c) = images.dim();
    if b == 0 {
        return Err(Error::Contract("proxy batch needs at least one image".into()));
    }
    if h != w {
        return Err(Error::Contract(format!("proxy sampling needs square images, got {h}x{w}")));
    }
    let labels: Vec<ProxyClass> = (0..b)
        .map(|_| ProxyClass::ALL[rng.gen_range(0..ProxyClass::COUNT)])
        .collect();

    let mut out = Array4::<f32>::zeros((b, h, w, c));
    let mut colorized: Vec<usize> = Vec::new();
    for (i, &cls) in labels.iter().enumerate() {
        if cls == ProxyClass::Colorized {
            colorized.push(i);
            continue;
        }
        let img = images.slice(s![i, .., .., ..]).to_owned();
        let transformed = apply_proxy(&img, cls, None)?;
        out.slice_mut(s![i, .., .., ..]).assign(&transformed);
    }
    if !colorized.is_empty() {
        let net = colorizer.ok_or_else(|| {
            Error::Config("recolorized proxy class requested but no colorizer is loaded".into())
        })?;
        let mut gathered = Array4::<f32>::zeros((colorized.len(), h, w, c));
        for (j, &i) in colorized.iter().enumerate() {
            gathered.slice_mut(s![j, .., .., ..]).assign(&images.slice(s![i, .., .., ..]));
        }
        let gray = grayscale_batch(&gathered)?;
        let recolored = net.forward(&gray)?;
        for (j, &i) in colorized.iter().enumerate() {
            out.slice_mut(s![i, .., .., ..]).assign(&recolored.slice(s![j, .., .., ..]));
        }
    }
    Ok(ProxyBatch { images: out, labels })
}
