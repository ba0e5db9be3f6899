//! Images, datasets and dataset adapters.

mod cifar;
mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;

pub use cifar::{read_cifar10_bin, write_cifar10_bin, CIFAR_RECORD_BYTES};
pub use synthetic::{Domain, SyntheticShapes, SHAPE_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A float image with pixels in `[0, 1]`, stored planar (CHW).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn from_chw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Input(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Build from interleaved HWC pixels.
    pub fn from_hwc(height: usize, width: usize, channels: usize, hwc: &[f32]) -> Result<Self> {
        if hwc.len() != height * width * channels {
            return Err(Error::Input("HWC buffer size mismatch".into()));
        }
        let mut data = vec![0.0; hwc.len()];
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data[(c * height + y) * width + x] = hwc[(y * width + x) * channels + c];
                }
            }
        }
        Self::from_chw(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    pub fn to_hwc(&self) -> Vec<f32> {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; self.data.len()];
        for c in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    out[(y * w + x) * ch + c] = self.data[(c * h + y) * w + x];
                }
            }
        }
        out
    }

    /// (H, W, C)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

/// Stack images into an `[N, C, H, W]` constant tensor.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("empty image batch".into()))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for im in images {
        if im.shape() != (h, w, c) {
            return Err(Error::Input(format!(
                "mixed image shapes in batch: {:?} vs {:?}",
                im.shape(),
                (h, w, c)
            )));
        }
        data.extend_from_slice(im.data());
    }
    Ok(Tensor::new(data, &[images.len(), c, h, w]))
}

/// An in-memory image collection with optional class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    images: Vec<Image>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != images.len() {
                return Err(Error::Input("label count differs from image count".into()));
            }
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::Input("dataset images must share a shape".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::shape)
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Iterate `(image, label)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&Image, Option<usize>)> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, im)| (im, self.labels.as_ref().map(|l| l[i])))
    }

    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            images: self.images.clone(),
            labels: None,
        }
    }

    pub fn batch_tensor(&self, idx: &[usize]) -> Result<Tensor> {
        let imgs: Vec<Image> = idx.iter().map(|&i| self.images[i].clone()).collect();
        images_to_tensor(&imgs)
    }

    /// `per_class` indices of each class, drawn without replacement.
    pub fn stratified_indices<R: Rng>(&self, per_class: usize, rng: &mut R) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Input(format!("dataset `{}` has no labels", self.name)))?;
        let mut out = Vec::new();
        for c in 0..self.num_classes() {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.len() < per_class {
                return Err(Error::Input(format!(
                    "class {c} has {} samples, {per_class} requested",
                    members.len()
                )));
            }
            members.shuffle(rng);
            out.extend_from_slice(&members[..per_class]);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Split off the listed indices; returns `(selected, rest)`.
    pub fn partition(&self, selected: &[usize]) -> (Dataset, Dataset) {
        let mut mask = vec![false; self.len()];
        selected.iter().for_each(|&i| mask[i] = true);
        let rest: Vec<usize> = (0..self.len()).filter(|&i| !mask[i]).collect();
        (
            self.subset(selected, format!("{}-selected", self.name)),
            self.subset(&rest, format!("{}-rest", self.name)),
        )
    }
}

/// Shuffled minibatch index lists covering `0..n`; a trailing partial batch
/// is kept only when `keep_partial` is set.
pub fn minibatches<R: Rng>(n: usize, batch: usize, rng: &mut R, keep_partial: bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1))
        .filter(|c| keep_partial || c.len() == batch)
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn hwc_round_trip() {
        let hwc: Vec<f32> = (0..2 * 3 * 3).map(|v| v as f32 / 18.0).collect();
        let im = Image::from_hwc(2, 3, 3, &hwc).unwrap();
        assert_eq!(im.to_hwc(), hwc);
        // pixel (y=1, x=2), channel 1
        assert_eq!(im.at(1, 1, 2), hwc[(1 * 3 + 2) * 3 + 1]);
    }

    #[test]
    fn stratified_sampling_balances_classes() {
        let ds = SyntheticShapes::new(Domain::Primary, 16).generate(100, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let idx = ds.stratified_indices(5, &mut rng).unwrap();
        assert_eq!(idx.len(), 50);
        let labels = ds.labels().unwrap();
        for c in 0..10 {
            assert_eq!(idx.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let a = Image::filled(8, 8, 3, 0.0);
        let b = Image::filled(8, 9, 3, 0.0);
        assert!(images_to_tensor(&[a.clone(), b.clone()]).is_err());
        assert!(Dataset::new("x", vec![a, b], None).is_err());
    }
}
