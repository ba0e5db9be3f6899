//! Procedural labeled shape corpus.
//!
//! Each image shows one of ten shape classes with random color, position,
//! scale and rotation over a random background. The class depends only on
//! geometry, so color is a nuisance factor an encoder has to learn to ignore.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Image};
use crate::rng::{item_seed, rng_from};

pub const SHAPE_CLASSES: usize = 10;

/// Image distribution. `Shifted` keeps the classes but changes backgrounds,
/// palette and scale, standing in for a related but different corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Primary,
    Shifted,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticShapes {
    pub domain: Domain,
    pub size: usize,
}

fn inside(class: usize, u: f32, v: f32) -> bool {
    let r = (u * u + v * v).sqrt();
    let m = u.abs().max(v.abs());
    match class {
        0 => r <= 1.0,
        1 => m <= 0.85,
        2 => v <= 0.8 && v >= -0.9 + 1.9 * u.abs(),
        3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        4 => (0.55..=1.0).contains(&r),
        5 => u.abs() + v.abs() <= 1.0,
        6 => {
            let (a, b) = ((u - v).abs(), (u + v).abs());
            (a <= 0.4 && b <= 1.5) || (b <= 0.4 && a <= 1.5)
        }
        7 => m <= 0.95 && ((v + 1.0) * 2.5).floor() as i32 % 2 == 0,
        8 => m <= 0.95 && ((u + 1.0) * 2.5).floor() as i32 % 2 == 0,
        9 => m <= 0.92 && m >= 0.55,
        _ => unreachable!("class out of range"),
    }
}

fn rand_color<R: Rng>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

impl SyntheticShapes {
    pub fn new(domain: Domain, size: usize) -> Self {
        Self { domain, size }
    }

    /// Render sample `index`; the class is `index % 10`.
    pub fn render(&self, seed: u64, index: usize) -> (Image, usize) {
        let class = index % SHAPE_CLASSES;
        let mut rng = rng_from(item_seed(seed, "synthetic-shapes", &[self.domain as u64, index as u64]));
        let s = self.size;
        let sf = s as f32;
        let (scale_lo, scale_hi, noise_std) = match self.domain {
            Domain::Primary => (0.24, 0.36, 0.03),
            Domain::Shifted => (0.2, 0.3, 0.06),
        };
        let bg0 = rand_color(&mut rng, 0.0, 0.7);
        let bg1 = rand_color(&mut rng, 0.0, 0.7);
        let period = rng.gen_range(3..7);
        let mut fg = rand_color(&mut rng, 0.0, 1.0);
        let bg_mean: f32 = (bg0.iter().sum::<f32>() + bg1.iter().sum::<f32>()) / 6.0;
        let fg_mean: f32 = fg.iter().sum::<f32>() / 3.0;
        if (fg_mean - bg_mean).abs() < 0.25 {
            // push the shape away from the background brightness
            let shift = if bg_mean < 0.5 { 0.45 } else { -0.45 };
            fg.iter_mut().for_each(|c| *c = (*c + shift).clamp(0.0, 1.0));
        }
        if self.domain == Domain::Shifted {
            // desaturate toward gray
            let g = fg.iter().sum::<f32>() / 3.0;
            fg.iter_mut().for_each(|c| *c = 0.5 * *c + 0.5 * g);
        }
        let radius = rng.gen_range(scale_lo..scale_hi) * sf;
        let cx = rng.gen_range(0.38..0.62) * sf;
        let cy = rng.gen_range(0.38..0.62) * sf;
        let theta: f32 = rng.gen_range(-0.35..0.35);
        let (sin, cos) = theta.sin_cos();
        let noise = Normal::new(0.0, noise_std).expect("valid std");
        let mut data = vec![0.0f32; 3 * s * s];
        for y in 0..s {
            for x in 0..s {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let bg = match self.domain {
                    Domain::Primary => {
                        let t = (px + py) / (2.0 * sf);
                        [0, 1, 2].map(|c| bg0[c] * (1.0 - t) + bg1[c] * t)
                    }
                    Domain::Shifted => {
                        if ((x / period) + (y / period)) % 2 == 0 {
                            bg0
                        } else {
                            bg1
                        }
                    }
                };
                let (dx, dy) = ((px - cx) / radius, (py - cy) / radius);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let on_shape = inside(class, u, v);
                let col = if on_shape { fg } else { bg };
                for c in 0..3 {
                    data[(c * s + y) * s + x] = (col[c] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
        let img = Image::from_chw(s, s, 3, data).expect("consistent buffer");
        (img, class)
    }

    /// `n` samples with balanced labels, reproducible per `(seed, index)`.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let (images, labels): (Vec<_>, Vec<_>) = (0..n).map(|i| self.render(seed, i)).unzip();
        let name = match self.domain {
            Domain::Primary => "shapes",
            Domain::Shifted => "shapes-shifted",
        };
        Dataset::new(name, images, Some(labels)).expect("uniform synthetic images")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_has_visible_area() {
        for class in 0..SHAPE_CLASSES {
            let mut hits = 0;
            for i in 0..40 {
                for j in 0..40 {
                    let (u, v) = (i as f32 / 20.0 - 1.0, j as f32 / 20.0 - 1.0);
                    hits += inside(class, u, v) as usize;
                }
            }
            assert!(hits > 150, "class {class} covers only {hits} cells");
        }
    }

    #[test]
    fn rendering_is_reproducible_and_in_range() {
        let gen = SyntheticShapes::new(Domain::Primary, 32);
        let (a, la) = gen.render(9, 17);
        let (b, lb) = gen.render(9, 17);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la, 7);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (c, _) = gen.render(10, 17);
        assert_ne!(a, c);
    }

    #[test]
    fn domains_differ() {
        let p = SyntheticShapes::new(Domain::Primary, 16).render(1, 3).0;
        let s = SyntheticShapes::new(Domain::Shifted, 16).render(1, 3).0;
        assert_ne!(p, s);
    }
}
