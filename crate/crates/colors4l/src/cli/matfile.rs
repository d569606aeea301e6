//! Narrow MAT-file (level 5) reader for the SVHN cropped-digit archives.
//!
//! Reads exactly what the converter needs: one `uint8` array per variable
//! (`X` is `32x32x3xN`, `y` is `Nx1`), with plain or zlib-compressed
//! elements. MATLAB stores column-major; pixels are re-ordered into
//! row-major `H x W x C` on the way out.

use std::io::Read;
use std::path::Path;

use flate2::read::ZlibDecoder;
use ndarray::Array3;

use crate::data::Image;
use crate::error::{Error, Result};

const MI_UINT8: u32 = 2;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_COMPRESSED: u32 = 15;
const MI_MATRIX: u32 = 14;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

struct Element {
    mtype: u32,
    payload: Vec<u8>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::data(self.path, "truncated MAT file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// One data element, handling the packed small-element format and
    /// 8-byte padding.
    fn element(&mut self) -> Result<Element> {
        let tag = self.u32()?;
        if tag >> 16 != 0 {
            // small element: size in the upper half, payload in the next word
            let size = (tag >> 16) as usize;
            let mtype = tag & 0xFFFF;
            let payload = self.take(4)?[..size].to_vec();
            return Ok(Element { mtype, payload });
        }
        let size = self.u32()? as usize;
        let payload = self.take(size)?.to_vec();
        let pad = (8 - size % 8) % 8;
        self.take(pad.min(self.data.len().saturating_sub(self.pos)))?;
        Ok(Element {
            mtype: tag,
            payload,
        })
    }
}

/// A named uint8 array in MATLAB dimension order.
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    /// column-major payload
    pub data: Vec<u8>,
}

fn parse_matrix(path: &Path, payload: &[u8]) -> Result<MatArray> {
    let mut r = Reader {
        data: payload,
        pos: 0,
        path,
    };
    let flags = r.element()?;
    if flags.mtype != MI_UINT32 || flags.payload.len() < 4 {
        return Err(Error::data(path, "malformed array flags"));
    }
    let class = flags.payload[0];
    if class != 9 {
        return Err(Error::data(path, format!("expected uint8 array (class 9), got class {class}")));
    }
    let dims_el = r.element()?;
    if dims_el.mtype != MI_INT32 {
        return Err(Error::data(path, "malformed dimensions element"));
    }
    let dims: Vec<usize> = dims_el
        .payload
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let name_el = r.element()?;
    let name = String::from_utf8_lossy(&name_el.payload).trim_end_matches('\0').to_string();
    let data_el = r.element()?;
    if data_el.mtype != MI_UINT8 {
        return Err(Error::data(path, format!("expected uint8 data, got type {}", data_el.mtype)));
    }
    let numel: usize = dims.iter().product();
    if data_el.payload.len() != numel {
        return Err(Error::data(
            path,
            format!("array '{name}': {} bytes for {numel} elements", data_el.payload.len()),
        ));
    }
    Ok(MatArray {
        name,
        dims,
        data: data_el.payload,
    })
}

/// All top-level uint8 arrays of a level-5 MAT file.
pub fn read_mat_arrays(path: &Path) -> Result<Vec<MatArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 128 {
        return Err(Error::data(path, "file shorter than MAT header"));
    }
    if &bytes[126..128] != b"IM" {
        return Err(Error::data(path, "not a little-endian level-5 MAT file"));
    }
    let mut r = Reader {
        data: &bytes[128..],
        pos: 0,
        path,
    };
    let mut arrays = Vec::new();
    while r.pos < r.data.len() {
        let el = r.element()?;
        match el.mtype {
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(&el.payload[..])
                    .read_to_end(&mut inflated)
                    .map_err(|e| Error::data(path, format!("zlib: {e}")))?;
                let mut inner = Reader {
                    data: &inflated,
                    pos: 0,
                    path,
                };
                let matrix = inner.element()?;
                if matrix.mtype != MI_MATRIX {
                    return Err(Error::data(path, "compressed element is not a matrix"));
                }
                arrays.push(parse_matrix(path, &matrix.payload)?);
            }
            MI_MATRIX => arrays.push(parse_matrix(path, &el.payload)?),
            other => return Err(Error::data(path, format!("unsupported element type {other}"))),
        }
    }
    Ok(arrays)
}

/// Decode the SVHN cropped-digit layout: `X` of dims `(H, W, 3, N)` and
/// `y` of dims `(N, 1)` with label 10 meaning digit zero.
pub fn read_svhn_mat(path: &Path) -> Result<(Vec<Image<u8>>, Vec<u8>)> {
    let arrays = read_mat_arrays(path)?;
    let x = arrays
        .iter()
        .find(|a| a.name == "X")
        .ok_or_else(|| Error::data(path, "no variable 'X'"))?;
    let y = arrays
        .iter()
        .find(|a| a.name == "y")
        .ok_or_else(|| Error::data(path, "no variable 'y'"))?;
    if x.dims.len() != 4 || x.dims[2] != 3 {
        return Err(Error::data(path, format!("unexpected X dims {:?}", x.dims)));
    }
    let (h, w, n) = (x.dims[0], x.dims[1], x.dims[3]);
    if y.dims.first().copied().unwrap_or(0) != n {
        return Err(Error::data(path, format!("{} labels for {n} images", y.dims[0])));
    }
    let plane = h * w;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        // column-major: offset = y + H*(x + W*(c + 3*i))
        let base = i * plane * 3;
        let pixels = Array3::from_shape_fn((h, w, 3), |(yy, xx, c)| x.data[base + c * plane + xx * h + yy]);
        images.push(Image { pixels });
    }
    let labels: Vec<u8> = y.data.iter().take(n).map(|&v| v % 10).collect();
    Ok((images, labels))
}

#[cfg(test)]
pub(crate) mod test_support {
    //! Writer producing the subset of the format the reader understands,
    //! used to synthesize fixtures.

    use flate2::write::ZlibEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn element(mtype: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&mtype.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        let pad = (8 - payload.len() % 8) % 8;
        out.extend(std::iter::repeat(0u8).take(pad));
        out
    }

    fn matrix(name: &str, dims: &[i32], data: &[u8]) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend(element(6, &[9u8, 0, 0, 0, 0, 0, 0, 0])); // flags: uint8 class
        let dim_bytes: Vec<u8> = dims.iter().flat_map(|d| d.to_le_bytes()).collect();
        body.extend(element(5, &dim_bytes));
        body.extend(element(1, name.as_bytes()));
        body.extend(element(2, data));
        element(14, &body)
    }

    pub fn make_mat(vars: &[(&str, Vec<i32>, Vec<u8>)], compress: bool) -> Vec<u8> {
        let mut out = vec![0u8; 124];
        out[..4].copy_from_slice(b"MATL");
        out.extend_from_slice(&[0x00, 0x01]); // version
        out.extend_from_slice(b"IM"); // little-endian marker
        for (name, dims, data) in vars {
            let m = matrix(name, dims, data);
            if compress {
                let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
                enc.write_all(&m).unwrap();
                let z = enc.finish().unwrap();
                out.extend(element(15, &z));
            } else {
                out.extend(m);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn svhn_fixture(n: usize, compress: bool) -> Vec<u8> {
        // X: (4, 4, 3, n) column-major; y: (n, 1)
        let plane = 16;
        let mut x = vec![0u8; plane * 3 * n];
        for i in 0..n {
            for c in 0..3 {
                for xx in 0..4 {
                    for yy in 0..4 {
                        x[i * plane * 3 + c * plane + xx * 4 + yy] = (i * 50 + c * 10 + xx * 4 + yy) as u8;
                    }
                }
            }
        }
        let y: Vec<u8> = (0..n).map(|i| ((i % 10) + 1) as u8).collect(); // 10 means digit 0
        test_support::make_mat(
            &[("X", vec![4, 4, 3, n as i32], x), ("y", vec![n as i32, 1], y)],
            compress,
        )
    }

    #[test]
    fn reads_plain_and_compressed_fixtures() {
        let dir = TempDir::new().unwrap();
        for compress in [false, true] {
            let path = dir.path().join(format!("svhn_{compress}.mat"));
            std::fs::write(&path, svhn_fixture(12, compress)).unwrap();
            let (images, labels) = read_svhn_mat(&path).unwrap();
            assert_eq!(images.len(), 12);
            assert_eq!(labels.len(), 12);
            // column-major transposition: image 1, channel 2, row 3, col 0
            assert_eq!(images[1].pixels[(3, 0, 2)], (50 + 20 + 3) as u8);
            // label 10 became digit 0
            assert_eq!(labels[9], 0);
            assert_eq!(labels[0], 1);
        }
    }

    #[test]
    fn missing_variable_is_data_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("noy.mat");
        let bytes = test_support::make_mat(&[("X", vec![4, 4, 3, 1], vec![0u8; 48])], false);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_svhn_mat(&path).unwrap_err().to_string().contains("'y'"));
    }

    #[test]
    fn bad_header_is_data_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("junk.mat");
        std::fs::write(&path, vec![7u8; 200]).unwrap();
        assert!(read_svhn_mat(&path).is_err());
    }
}
