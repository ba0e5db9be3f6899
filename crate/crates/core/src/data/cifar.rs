//! CIFAR-10 binary batch format: each record is one label byte followed by
//! 3072 pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).

use std::fs;
use std::path::Path;

use super::{Dataset, Image};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * PLANE;

pub fn read_cifar10_bin(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Input(format!(
            "{}: {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            path.display(),
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Input(format!("{}: label {label} out of range", path.display())));
        }
        // the on-disk layout is already planar
        let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Image::from_chw(SIDE, SIDE, 3, data)?);
        labels.push(label);
    }
    let name = path
        .file_stem()
        .map_or_else(|| "cifar10".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, images, Some(labels))
}

/// Inverse of [`read_cifar10_bin`]; pixels are quantized to bytes.
pub fn write_cifar10_bin(path: &Path, dataset: &Dataset) -> Result<()> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Input("CIFAR records need labels".into()))?;
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for (im, &label) in dataset.images().iter().zip(labels) {
        if im.shape() != (SIDE, SIDE, 3) || label > 255 {
            return Err(Error::Input("CIFAR records hold 32x32x3 images with byte labels".into()));
        }
        out.push(label as u8);
        out.extend(im.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_hand_built_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 7] {
            bytes.push(label);
            for c in 0..3u8 {
                bytes.extend(std::iter::repeat(c * 100).take(PLANE));
            }
        }
        fs::write(&path, &bytes).unwrap();
        let ds = read_cifar10_bin(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels().unwrap(), &[3, 7]);
        let im = &ds.images()[1];
        assert_eq!(im.at(0, 5, 5), 0.0);
        assert!((im.at(2, 31, 0) - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.bin");
        fs::write(&path, vec![0u8; CIFAR_RECORD_BYTES + 5]).unwrap();
        assert!(matches!(read_cifar10_bin(&path), Err(Error::Input(_))));
    }
}
