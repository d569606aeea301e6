//! Loaders for the official CIFAR-10 / CIFAR-100 binary formats.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 3072 pixel bytes
//! stored channel-planar (1024 R, 1024 G, 1024 B), row-major. CIFAR-100
//! records carry a coarse and a fine label byte; only the fine label is
//! used. Pixels are preserved bit-exactly as `u8`.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::{Image, LabeledExample};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const PIXELS: usize = 3 * PLANE;

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";

fn planar_to_image(pixels: &[u8]) -> Image<u8> {
    debug_assert_eq!(pixels.len(), PIXELS);
    let arr = Array3::from_shape_fn((SIDE, SIDE, 3), |(y, x, c)| pixels[c * PLANE + y * SIDE + x]);
    Image { pixels: arr }
}

pub(crate) fn read_records(
    path: &Path,
    label_bytes: usize,
    expected_records: usize,
    num_classes: usize,
) -> Result<Vec<LabeledExample>> {
    let record = label_bytes + PIXELS;
    let expected_len = expected_records * record;
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() != expected_len {
        return Err(Error::data(
            path,
            format!("expected {expected_len} bytes ({expected_records} records), found {}", data.len()),
        ));
    }
    let mut out = Vec::with_capacity(expected_records);
    for (i, rec) in data.chunks_exact(record).enumerate() {
        // fine label is the last label byte (CIFAR-100 stores coarse first)
        let label = rec[label_bytes - 1];
        if (label as usize) >= num_classes {
            return Err(Error::data(
                path,
                format!("record {i}: label {label} out of range for {num_classes} classes"),
            ));
        }
        out.push(LabeledExample {
            image: planar_to_image(&rec[label_bytes..]),
            label,
        });
    }
    Ok(out)
}

/// Load CIFAR-10 from a directory holding the five train batches and the
/// test batch. Returns `(train, test)` with 50000 and 10000 examples.
pub fn load_cifar10(dir: &Path) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let mut train = Vec::with_capacity(50000);
    for name in CIFAR10_TRAIN_FILES {
        train.extend(read_records(&dir.join(name), 1, 10000, 10)?);
    }
    let test = read_records(&dir.join(CIFAR10_TEST_FILE), 1, 10000, 10)?;
    Ok((train, test))
}

/// Load CIFAR-100 (fine labels) from a directory holding `train.bin` and
/// `test.bin`.
pub fn load_cifar100(dir: &Path) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let train = read_records(&dir.join(CIFAR100_TRAIN_FILE), 2, 50000, 100)?;
    let test = read_records(&dir.join(CIFAR100_TEST_FILE), 2, 10000, 100)?;
    Ok((train, test))
}

/// Load a single CIFAR-10-format batch file with a caller-specified record
/// count; used by the converter and by tests with synthetic files.
pub fn load_cifar10_batch(path: &Path, records: usize) -> Result<Vec<LabeledExample>> {
    read_records(path, 1, records, 10)
}
