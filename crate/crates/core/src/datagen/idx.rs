//! IDX (MNIST-style) image and label files, optionally gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::scalar::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            reason: format!("truncated header, expected 4 bytes at {offset}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Parsed image file: `count` images of `rows x cols` bytes each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated image data, expected {need} bytes"),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated label data, expected {need} bytes"),
        });
    }
    Ok(bytes[8..need].to_vec())
}

/// Loads an image/label file pair; pixels are scaled to `[0, 1]`.
pub fn load_idx<S: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<S>> {
    let images = parse_images(&read_maybe_gz(images.as_ref())?)?;
    let labels = parse_labels(&read_maybe_gz(labels.as_ref())?)?;
    if labels.len() != images.count {
        return Err(Error::Format {
            offset: 4,
            reason: format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.count
            ),
        });
    }
    let scale = S::one() / S::of(255.0);
    let data = images.pixels.iter().map(|&p| S::of(p as f64) * scale).collect();
    let features = Tensor2::from_vec(images.count, images.rows * images.cols, data)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, labels, num_classes)
}

pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || pixels.len() % per != 0 {
        return Err(Error::shape("write_idx_images", format!("multiple of {per}"), pixels.len()));
    }
    let mut f = fs::File::create(path)?;
    for v in [IMAGES_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        let pixels = [0u8, 255, 51, 102, 7, 8, 9, 10];
        write_idx_images(&img, 2, 2, &pixels).unwrap();
        write_idx_labels(&lbl, &[3, 1]).unwrap();
        let ds: Dataset<f64> = load_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features.cols(), 4);
        assert_eq!(ds.labels, vec![3, 1]);
        let expected: Vec<f64> = pixels.iter().map(|&p| p as f64 * (1.0 / 255.0)).collect();
        assert_eq!(ds.features.as_slice(), expected.as_slice());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.push(0);
        match parse_images(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut bytes = IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [3u32, 2, 2] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[1, 2, 3]);
        match parse_images(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_idx_images(&img, 1, 1, &[1, 2]).unwrap();
        write_idx_labels(&lbl, &[0]).unwrap();
        assert!(matches!(load_idx::<f64>(&img, &lbl), Err(Error::Format { .. })));
    }

    #[test]
    fn gzip_input_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl.gz");
        write_idx_images(&img, 1, 2, &[10, 20]).unwrap();
        let mut enc = GzEncoder::new(fs::File::create(&lbl).unwrap(), Compression::default());
        enc.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        enc.write_all(&1u32.to_be_bytes()).unwrap();
        enc.write_all(&[4]).unwrap();
        enc.finish().unwrap();
        let ds: Dataset<f64> = load_idx(&img, &lbl).unwrap();
        assert_eq!(ds.labels, vec![4]);
    }
}
