//! Portable image container ("CDS1").
//!
//! Layout: magic `43 44 53 31`, little-endian `u32` fields `N, H, W, C`,
//! `u8` has_labels flag, then (if flagged) `N` label bytes, then
//! `N*H*W*C` pixel bytes, example-major, row-major, channel-interleaved.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::Image;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CDS1";
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

/// Write images (and optional labels) to a container file.
pub fn write_container(path: &Path, images: &[Image<u8>], labels: Option<&[u8]>) -> Result<()> {
    let (h, w, c) = if let Some(first) = images.first() {
        first.pixels.dim()
    } else {
        (32, 32, 3)
    };
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(Error::Contract(format!(
                "{} labels for {} images",
                l.len(),
                images.len()
            )));
        }
    }
    let n = images.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + n + n * h * w * c);
    buf.extend_from_slice(MAGIC);
    for v in [n as u32, h as u32, w as u32, c as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(u8::from(labels.is_some()));
    if let Some(l) = labels {
        buf.extend_from_slice(l);
    }
    for img in images {
        if img.pixels.dim() != (h, w, c) {
            return Err(Error::Contract("container images must share one shape".into()));
        }
        buf.extend_from_slice(img.pixels.as_slice().expect("standard layout"));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a container file back into images and optional labels.
pub fn load_container(path: &Path) -> Result<(Vec<Image<u8>>, Option<Vec<u8>>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < HEADER_LEN {
        return Err(Error::data(path, "file shorter than header"));
    }
    if &data[..3] != &MAGIC[..3] {
        return Err(Error::data(path, "bad magic (not a CDS container)"));
    }
    if data[3] != MAGIC[3] {
        return Err(Error::data(path, format!("unknown container version byte 0x{:02x}", data[3])));
    }
    let rd = |i: usize| u32::from_le_bytes(data[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w, c) = (rd(0), rd(1), rd(2), rd(3));
    let has_labels = match data[20] {
        0 => false,
        1 => true,
        other => return Err(Error::data(path, format!("bad has_labels flag 0x{other:02x}"))),
    };
    if n > 0 && (h == 0 || w == 0 || c == 0) {
        return Err(Error::data(path, format!("bad dims {h}x{w}x{c}")));
    }
    let label_len = if has_labels { n } else { 0 };
    let expected = HEADER_LEN + label_len + n * h * w * c;
    if data.len() != expected {
        return Err(Error::data(
            path,
            format!("length {} does not match header (expected {expected})", data.len()),
        ));
    }
    let labels = has_labels.then(|| data[HEADER_LEN..HEADER_LEN + n].to_vec());
    let mut images = Vec::with_capacity(n);
    let px0 = HEADER_LEN + label_len;
    let img_len = h * w * c;
    for i in 0..n {
        let slice = &data[px0 + i * img_len..px0 + (i + 1) * img_len];
        let arr = Array3::from_shape_vec((h, w, c), slice.to_vec()).expect("length checked");
        images.push(Image { pixels: arr });
    }
    Ok((images, labels))
}
