use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{ensure, Result};

/// Random view generation: resized crop, horizontal flip, color jitter,
/// grayscale and Gaussian blur, applied in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    /// Fraction of the image area kept by the crop.
    pub crop_scale: (f32, f32),
    /// Aspect-ratio range of the crop, sampled log-uniformly.
    pub crop_ratio: (f32, f32),
    pub flip_prob: f32,
    pub jitter_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Maximum hue rotation as a fraction of a full turn.
    pub hue: f32,
    pub grayscale_prob: f32,
    pub blur_prob: f32,
    pub blur_sigma: (f32, f32),
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_scale: (0.3, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            flip_prob: 0.5,
            jitter_prob: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_prob: 0.2,
            blur_prob: 0.2,
            blur_sigma: (0.1, 1.0),
        }
    }
}

fn unit(p: f32) -> bool {
    (0.0..=1.0).contains(&p)
}

impl AugmentationPolicy {
    /// Every transform disabled; views equal the input.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        ensure!(lo > 0.0 && lo <= hi && hi <= 1.0, Config, "crop_scale must lie in (0, 1], got {:?}", self.crop_scale);
        let (rlo, rhi) = self.crop_ratio;
        ensure!(rlo > 0.0 && rlo <= rhi, Config, "invalid crop_ratio {:?}", self.crop_ratio);
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ] {
            ensure!(unit(p), Config, "{name} must be a probability, got {p}");
        }
        for (name, s) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            ensure!((0.0..=1.0).contains(&s), Config, "{name} strength must be in [0, 1], got {s}");
        }
        ensure!((0.0..=0.5).contains(&self.hue), Config, "hue must be in [0, 0.5], got {}", self.hue);
        let (slo, shi) = self.blur_sigma;
        ensure!(slo > 0.0 && slo <= shi, Config, "invalid blur_sigma {:?}", self.blur_sigma);
        Ok(())
    }

    /// One random view of `x`.
    pub fn view<R: Rng>(&self, x: &Image, rng: &mut R) -> Image {
        let mut out = self.crop(x, rng);
        if self.flip_prob > 0.0 && rng.gen::<f32>() < self.flip_prob {
            flip(&mut out);
        }
        if out.channels == 3 {
            if self.jitter_prob > 0.0 && rng.gen::<f32>() < self.jitter_prob {
                self.jitter(&mut out, rng);
            }
            if self.grayscale_prob > 0.0 && rng.gen::<f32>() < self.grayscale_prob {
                grayscale(&mut out);
            }
        }
        if self.blur_prob > 0.0 && rng.gen::<f32>() < self.blur_prob {
            let (lo, hi) = self.blur_sigma;
            let sigma = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            blur(&mut out, sigma);
        }
        out.clamp01();
        out
    }

    fn crop<R: Rng>(&self, x: &Image, rng: &mut R) -> Image {
        let (h, w) = (x.height, x.width);
        let (lo, hi) = self.crop_scale;
        let (rlo, rhi) = self.crop_ratio;
        if lo >= 1.0 && rlo == 1.0 && rhi == 1.0 && h == w {
            return x.clone();
        }
        let area = (h * w) as f32 * if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let ratio = if rlo < rhi {
            rng.gen_range(rlo.ln()..=rhi.ln()).exp()
        } else {
            rlo
        };
        let cw = ((area * ratio).sqrt().round() as usize).clamp(1, w);
        let ch = ((area / ratio).sqrt().round() as usize).clamp(1, h);
        let x0 = rng.gen_range(0..=w - cw);
        let y0 = rng.gen_range(0..=h - ch);
        if cw == w && ch == h {
            return x.clone();
        }
        resize_region(x, x0, y0, cw, ch)
    }

    fn jitter<R: Rng>(&self, im: &mut Image, rng: &mut R) {
        let factor = |rng: &mut R, s: f32| if s > 0.0 { rng.gen_range(1.0 - s..=1.0 + s) } else { 1.0 };
        let b = factor(rng, self.brightness);
        let c = factor(rng, self.contrast);
        let s = factor(rng, self.saturation);
        let hue = if self.hue > 0.0 { rng.gen_range(-self.hue..=self.hue) } else { 0.0 };
        let plane = im.height * im.width;
        let d = im.data_mut();
        if b != 1.0 {
            d.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
        }
        if c != 1.0 {
            let mean = (0..plane).map(|i| luma(d, plane, i)).sum::<f32>() / plane as f32;
            d.iter_mut().for_each(|v| *v = ((*v - mean) * c + mean).clamp(0.0, 1.0));
        }
        if s != 1.0 {
            for i in 0..plane {
                let g = luma(d, plane, i);
                for ch in 0..3 {
                    let v = &mut d[ch * plane + i];
                    *v = ((*v - g) * s + g).clamp(0.0, 1.0);
                }
            }
        }
        if hue != 0.0 {
            // rotate chroma in YIQ space
            let (sin, cos) = (hue * std::f32::consts::TAU).sin_cos();
            for i in 0..plane {
                let (r, g, bl) = (d[i], d[plane + i], d[2 * plane + i]);
                let y = 0.299 * r + 0.587 * g + 0.114 * bl;
                let ci = 0.596 * r - 0.274 * g - 0.322 * bl;
                let cq = 0.211 * r - 0.523 * g + 0.312 * bl;
                let (i2, q2) = (ci * cos - cq * sin, ci * sin + cq * cos);
                d[i] = (y + 0.956 * i2 + 0.621 * q2).clamp(0.0, 1.0);
                d[plane + i] = (y - 0.272 * i2 - 0.647 * q2).clamp(0.0, 1.0);
                d[2 * plane + i] = (y - 1.106 * i2 + 1.703 * q2).clamp(0.0, 1.0);
            }
        }
    }
}

fn luma(d: &[f32], plane: usize, i: usize) -> f32 {
    0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i]
}

/// Bilinear resize of the `cw x ch` region at `(x0, y0)` back to full size.
fn resize_region(x: &Image, x0: usize, y0: usize, cw: usize, ch: usize) -> Image {
    let (h, w, c) = x.shape();
    let mut out = vec![0.0f32; c * h * w];
    let sx = cw as f32 / w as f32;
    let sy = ch as f32 / h as f32;
    for oy in 0..h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f32);
        let y0i = fy.floor() as usize;
        let y1i = (y0i + 1).min(ch - 1);
        let ty = fy - y0i as f32;
        for ox in 0..w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f32);
            let x0i = fx.floor() as usize;
            let x1i = (x0i + 1).min(cw - 1);
            let tx = fx - x0i as f32;
            for k in 0..c {
                let p = |yy: usize, xx: usize| x.at(k, y0 + yy, x0 + xx);
                let top = p(y0i, x0i) * (1.0 - tx) + p(y0i, x1i) * tx;
                let bot = p(y1i, x0i) * (1.0 - tx) + p(y1i, x1i) * tx;
                out[(k * h + oy) * w + ox] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    Image::from_chw(h, w, c, out).expect("same shape")
}

fn flip(im: &mut Image) {
    let (h, w, c) = im.shape();
    let d = im.data_mut();
    for k in 0..c {
        for y in 0..h {
            d[(k * h + y) * w..(k * h + y + 1) * w].reverse();
        }
    }
}

fn grayscale(im: &mut Image) {
    let plane = im.height * im.width;
    let d = im.data_mut();
    for i in 0..plane {
        let g = luma(d, plane, i);
        d[i] = g;
        d[plane + i] = g;
        d[2 * plane + i] = g;
    }
}

fn blur(im: &mut Image, sigma: f32) {
    let k = [(-1.0 / (2.0 * sigma * sigma)).exp(), 1.0, (-1.0 / (2.0 * sigma * sigma)).exp()];
    let norm: f32 = k.iter().sum();
    let k = k.map(|v| v / norm);
    let (h, w, c) = im.shape();
    let src = im.data().to_vec();
    let mut tmp = vec![0.0f32; src.len()];
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let s: f32 = (0..3)
                    .map(|j| k[j] * src[(ch * h + y) * w + at(x as isize + j as isize - 1, w)])
                    .sum();
                tmp[(ch * h + y) * w + x] = s;
            }
        }
    }
    let d = im.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                d[(ch * h + y) * w + x] = (0..3)
                    .map(|j| k[j] * tmp[(ch * h + at(y as isize + j as isize - 1, h)) * w + x])
                    .sum();
            }
        }
    }
}

/// Two independent views of one image, drawn sequentially from `rng`.
pub fn augment_pair<R: Rng>(x: &Image, policy: &AugmentationPolicy, rng: &mut R) -> (Image, Image) {
    let a = policy.view(x, rng);
    let b = policy.view(x, rng);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, SyntheticShapes};
    use crate::error::Error;
    use crate::rng::rng_from;

    #[test]
    fn identity_policy_returns_input() {
        let (x, _) = SyntheticShapes::new(Domain::Primary, 32).render(0, 4);
        let mut rng = rng_from(1);
        let (a, b) = augment_pair(&x, &AugmentationPolicy::identity(), &mut rng);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn views_are_reproducible_and_valid() {
        let (x, _) = SyntheticShapes::new(Domain::Primary, 32).render(0, 4);
        let p = AugmentationPolicy::default();
        let pair1 = augment_pair(&x, &p, &mut rng_from(3));
        let pair2 = augment_pair(&x, &p, &mut rng_from(3));
        assert_eq!(pair1, pair2);
        assert_ne!(pair1.0, pair1.1);
        for v in [&pair1.0, &pair1.1] {
            assert_eq!(v.shape(), x.shape());
            assert!(v.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn default_policy_changes_pixels() {
        let ds = SyntheticShapes::new(Domain::Primary, 32).generate(100, 2);
        let p = AugmentationPolicy::default();
        let mut rng = rng_from(5);
        let mut total = 0.0f64;
        for im in ds.images() {
            let v = p.view(im, &mut rng);
            total += v.data().iter().zip(im.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>()
                / im.data().len() as f64;
        }
        let mean = total / 100.0;
        assert!(mean > 0.02, "mean |view - original| = {mean}");
    }

    #[test]
    fn invalid_policies_are_rejected() {
        let mut p = AugmentationPolicy::default();
        p.flip_prob = 1.5;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = AugmentationPolicy::default();
        p.crop_scale = (0.0, 1.0);
        assert!(p.validate().is_err());
        assert!(AugmentationPolicy::identity().validate().is_ok());
    }
}
