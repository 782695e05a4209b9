//! Training-time augmentation: axis flips, diagonal reflection, scaling and
//! shearing with bilinear resampling and reflected borders. Every draw comes
//! from the caller's RNG, so a fixed seed reproduces the stream exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub reflect: bool,
    pub scale: bool,
    pub shear: bool,
    /// Uniform scale factor range, within [0.5, 1.5].
    pub scale_range: (f64, f64),
    /// Max |shear| in degrees, within [0, 20].
    pub shear_max_deg: f64,
    /// Probability each enabled op applies to a given sample.
    pub prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_horizontal: true,
            flip_vertical: true,
            reflect: true,
            scale: true,
            shear: true,
            scale_range: (0.85, 1.15),
            shear_max_deg: 12.0,
            prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            flip_horizontal: false,
            flip_vertical: false,
            reflect: false,
            scale: false,
            shear: false,
            ..Default::default()
        }
    }

    pub fn clamp_ranges(mut self) -> Self {
        self.scale_range.0 = self.scale_range.0.clamp(0.5, 1.5);
        self.scale_range.1 = self.scale_range.1.clamp(self.scale_range.0, 1.5);
        self.shear_max_deg = self.shear_max_deg.clamp(0.0, 20.0);
        self
    }
}

pub fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let w = t.shape().w();
    Tensor::from_fn(t.shape(), |n, c, y, x| t.at(n, c, y, w - 1 - x))
}

pub fn flip_vertical(t: &Tensor<f32>) -> Tensor<f32> {
    let h = t.shape().h();
    Tensor::from_fn(t.shape(), |n, c, y, x| t.at(n, c, h - 1 - y, x))
}

/// Mirror across the main diagonal (transpose); square images only —
/// non-square inputs pass through unchanged.
pub fn reflect_diagonal(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape().h(), t.shape().w());
    if h != w {
        return t.clone();
    }
    Tensor::from_fn(t.shape(), |n, c, y, x| t.at(n, c, x, y))
}

fn reflect_index(i: f32, n: usize) -> f32 {
    // reflect around borders without repeating the edge pixel
    let n = n as f32;
    let mut v = i;
    if v < 0.0 {
        v = -v;
    }
    if v > n - 1.0 {
        v = 2.0 * (n - 1.0) - v;
    }
    v.clamp(0.0, n - 1.0)
}

fn sample_bilinear(t: &Tensor<f32>, c: usize, fy: f32, fx: f32) -> f32 {
    let (h, w) = (t.shape().h(), t.shape().w());
    let fy = reflect_index(fy, h);
    let fx = reflect_index(fx, w);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (dy, dx) = (fy - y0 as f32, fx - x0 as f32);
    t.at(0, c, y0, x0) * (1.0 - dy) * (1.0 - dx)
        + t.at(0, c, y0, x1) * (1.0 - dy) * dx
        + t.at(0, c, y1, x0) * dy * (1.0 - dx)
        + t.at(0, c, y1, x1) * dy * dx
}

/// Rescale about the image center by `factor` (output keeps the size).
pub fn scale_about_center(t: &Tensor<f32>, factor: f32) -> Tensor<f32> {
    let (h, w) = (t.shape().h(), t.shape().w());
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    Tensor::from_fn(t.shape(), |_, c, oy, ox| {
        let fy = cy + (oy as f32 - cy) / factor;
        let fx = cx + (ox as f32 - cx) / factor;
        sample_bilinear(t, c, fy, fx)
    })
}

/// Horizontal shear by `deg` degrees about the center row.
pub fn shear_horizontal(t: &Tensor<f32>, deg: f32) -> Tensor<f32> {
    let (h, w) = (t.shape().h(), t.shape().w());
    let tan = deg.to_radians().tan();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    Tensor::from_fn(t.shape(), |_, c, oy, ox| {
        let fy = oy as f32;
        let fx = cx + (ox as f32 - cx) - tan * (oy as f32 - cy);
        sample_bilinear(t, c, fy, fx)
    })
}

/// Apply an independently drawn subset of the enabled ops. Deterministic
/// given the RNG state; the label never changes.
pub fn augment_sample(s: &Sample, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Sample {
    let cfg = cfg.clamp_ranges();
    let mut img = s.image.clone();
    if cfg.flip_horizontal && rng.gen_bool(cfg.prob) {
        img = flip_horizontal(&img);
    }
    if cfg.flip_vertical && rng.gen_bool(cfg.prob) {
        img = flip_vertical(&img);
    }
    if cfg.reflect && rng.gen_bool(cfg.prob) {
        img = reflect_diagonal(&img);
    }
    if cfg.scale && rng.gen_bool(cfg.prob) {
        let f = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1) as f32;
        img = scale_about_center(&img, f);
    }
    if cfg.shear && rng.gen_bool(cfg.prob) {
        let deg = rng.gen_range(-cfg.shear_max_deg..=cfg.shear_max_deg) as f32;
        img = shear_horizontal(&img, deg);
    }
    Sample {
        image: img,
        label: s.label,
        source: s.source.clone(),
    }
}

/// Pad minority classes with augmented copies until every class holds at
/// least `target` samples. Originals are always retained; each copy is
/// re-drawn until it differs bitwise from its source.
pub fn balance_classes(
    samples: &[Sample],
    target: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Vec<Sample> {
    use rand::SeedableRng;
    let mut out: Vec<Sample> = samples.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 1 + samples.iter().map(|s| s.label).max().unwrap_or(0);
    for class in 0..classes {
        let members: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut count = members.len();
        let mut cursor = 0usize;
        while count < target {
            let src = &samples[members[cursor % members.len()]];
            cursor += 1;
            let mut copy = augment_sample(src, cfg, &mut rng);
            let mut tries = 0;
            while copy.image.data() == src.image.data() && tries < 8 {
                copy = augment_sample(src, cfg, &mut rng);
                tries += 1;
            }
            out.push(copy);
            count += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use std::path::PathBuf;

    fn sample(seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample {
            image: Tensor::from_fn(Shape::nchw(1, 3, 16, 16), |_, _, _, _| {
                rng.gen_range(-1.0..1.0)
            }),
            label: 2,
            source: PathBuf::new(),
        }
    }

    #[test]
    fn disabled_config_is_identity() {
        let s = sample(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_sample(&s, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out.image.data(), s.image.data());
        assert_eq!(out.label, s.label);
    }

    #[test]
    fn flips_are_involutions_and_compose_to_rotation() {
        let s = sample(2);
        assert_eq!(
            flip_horizontal(&flip_horizontal(&s.image)).data(),
            s.image.data()
        );
        assert_eq!(
            flip_vertical(&flip_vertical(&s.image)).data(),
            s.image.data()
        );
        // flip_h ∘ flip_v = 180° rotation
        let rot = flip_horizontal(&flip_vertical(&s.image));
        let want = Tensor::from_fn(s.image.shape(), |n, c, y, x| {
            s.image.at(n, c, 15 - y, 15 - x)
        });
        assert_eq!(rot.data(), want.data());
    }

    #[test]
    fn identity_transform_resamples_exactly() {
        let s = sample(3);
        let scaled = scale_about_center(&s.image, 1.0);
        for (a, b) in scaled.data().iter().zip(s.image.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let sheared = shear_horizontal(&s.image, 0.0);
        for (a, b) in sheared.data().iter().zip(s.image.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn balance_pads_to_target_and_keeps_originals() {
        let mut samples = Vec::new();
        for i in 0..10 {
            let mut s = sample(i);
            s.label = 0;
            samples.push(s);
        }
        for i in 0..40 {
            let mut s = sample(100 + i);
            s.label = 1;
            samples.push(s);
        }
        let out = balance_classes(&samples, 40, &AugmentConfig::default(), 7);
        let count = |l: usize| out.iter().filter(|s| s.label == l).count();
        assert_eq!(count(0), 40);
        assert_eq!(count(1), 40);
        // originals retained bit-exactly, copies differ from their sources
        for (orig, kept) in samples.iter().zip(out.iter()) {
            assert_eq!(orig.image.data(), kept.image.data());
        }
        for copy in &out[samples.len()..] {
            assert!(samples
                .iter()
                .all(|orig| orig.image.data() != copy.image.data()));
        }
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let mut samples = Vec::new();
        for i in 0..6 {
            let mut s = sample(i);
            s.label = (i % 2) as usize;
            samples.push(s);
        }
        let out = balance_classes(&samples, 3, &AugmentConfig::default(), 1);
        assert_eq!(out.len(), samples.len());
    }
}
