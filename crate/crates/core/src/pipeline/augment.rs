//! Digital augmentations: random resized crop + horizontal flip, and the
//! photometric jitter used by the AE + photometric baseline.
//!
//! Augmentation `n` of a capture draws from its own stream, so the set of
//! views does not depend on the order they are generated in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Image;
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometricParams {
    /// Crop area as a fraction of the image, drawn uniformly.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        GeometricParams {
            crop_scale: (0.5, 1.0),
            flip_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometricParams {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for PhotometricParams {
    fn default() -> Self {
        PhotometricParams {
            brightness: (0.7, 1.3),
            contrast: (0.8, 1.2),
            gamma: (0.8, 1.25),
        }
    }
}

impl PhotometricParams {
    pub fn identity() -> Self {
        PhotometricParams {
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            gamma: (1.0, 1.0),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > min) {
        return Err(Error::InvalidParam(format!(
            "{name} range ({lo}, {hi}) is invalid"
        )));
    }
    Ok(())
}

impl GeometricParams {
    pub fn validate(&self) -> Result<()> {
        check_range("crop_scale", self.crop_scale, 0.0)?;
        if self.crop_scale.1 > 1.0 || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidParam(format!(
                "invalid geometric params {self:?}"
            )));
        }
        Ok(())
    }
}

impl PhotometricParams {
    pub fn validate(&self) -> Result<()> {
        check_range("brightness", self.brightness, 0.0)?;
        check_range("contrast", self.contrast, 0.0)?;
        check_range("gamma", self.gamma, 0.0)
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Crop rectangle in source pixels plus flip flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropFlip {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    pub flip: bool,
}

impl CropFlip {
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        width: usize,
        height: usize,
        p: &GeometricParams,
    ) -> Self {
        let side = draw(rng, p.crop_scale).sqrt();
        let w = ((width as f64 * side).round() as usize).clamp(1, width);
        let h = ((height as f64 * side).round() as usize).clamp(1, height);
        let x0 = rng.random_range(0..=width - w);
        let y0 = rng.random_range(0..=height - h);
        let flip = rng.random::<f64>() < p.flip_prob;
        CropFlip { x0, y0, w, h, flip }
    }

    /// Crop, bilinearly resize back to the input size, then optionally flip.
    pub fn apply(&self, img: &Image) -> Image {
        let (ow, oh) = (img.width(), img.height());
        let mut xs = axis_samples(self.x0, self.w, ow);
        if self.flip {
            xs.reverse();
        }
        let ys = axis_samples(self.y0, self.h, oh);
        let px = img.pixels();
        let mut out = Vec::with_capacity(ow * oh);
        for &(y0, y1, fy) in &ys {
            let (r0, r1) = (&px[y0 * ow..(y0 + 1) * ow], &px[y1 * ow..(y1 + 1) * ow]);
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Image::new(ow, oh, out).expect("same dims")
    }
}

/// Source sample positions for resizing `len` pixels starting at `start` to `out`.
fn axis_samples(start: usize, len: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (start + lo, start + hi, s - lo as f64)
        })
        .collect()
}

pub fn flip_horizontal(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for row in img.pixels().chunks(w.max(1)).take(h) {
        out.extend(row.iter().rev());
    }
    Image::new(w, h, out).expect("same dims")
}

/// Per-channel-less jitter: brightness scale, contrast about the mean, gamma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub gamma: f64,
}

impl Jitter {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, p: &PhotometricParams) -> Self {
        Jitter {
            brightness: draw(rng, p.brightness),
            contrast: draw(rng, p.contrast),
            gamma: draw(rng, p.gamma),
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let mean = img.mean() * self.brightness;
        let data = img
            .pixels()
            .iter()
            .map(|&v| {
                let b = v * self.brightness;
                let c = mean + (b - mean) * self.contrast;
                let c = c.clamp(0.0, 1.0);
                if self.gamma == 1.0 {
                    c
                } else {
                    c.powf(self.gamma)
                }
            })
            .collect();
        Image::new(img.width(), img.height(), data).expect("same dims")
    }
}

/// Stream coordinates of one capture's augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentKey {
    pub seed: u64,
    pub scene_id: u64,
    pub illumination: u64,
    pub config_rank: u16,
    pub shot: u32,
}

impl AugmentKey {
    fn stream(&self, purpose: u64, aug: usize) -> rand_chacha::ChaCha8Rng {
        rng::stream(
            self.seed,
            &[
                purpose,
                self.scene_id,
                self.illumination,
                self.config_rank as u64,
                self.shot as u64,
                aug as u64,
            ],
        )
    }
}

/// `n` geometric views; element 0 is the untouched original.
pub fn augment_geometric(
    img: &Image,
    n: usize,
    key: &AugmentKey,
    p: &GeometricParams,
) -> Vec<Image> {
    (0..n).map(|i| geometric_view(img, i, key, p)).collect()
}

pub fn geometric_view(img: &Image, aug: usize, key: &AugmentKey, p: &GeometricParams) -> Image {
    if aug == 0 {
        return img.clone();
    }
    let mut rng = key.stream(purpose::GEOMETRIC, aug);
    CropFlip::draw(&mut rng, img.width(), img.height(), p).apply(img)
}

/// `n` photometric variants of `img`; element 0 is the untouched original.
pub fn augment_photometric(
    img: &Image,
    n: usize,
    key: &AugmentKey,
    p: &PhotometricParams,
) -> Vec<Image> {
    (0..n).map(|i| photometric_view(img, i, key, p)).collect()
}

pub fn photometric_view(img: &Image, aug: usize, key: &AugmentKey, p: &PhotometricParams) -> Image {
    if aug == 0 {
        return img.clone();
    }
    let mut rng = key.stream(purpose::PHOTOMETRIC, aug);
    Jitter::draw(&mut rng, p).apply(img)
}
