//! Fixed multi-scale feature extractor used as the perceptual distance:
//! a 5×5 binomial pyramid whose levels pass through a seeded bank of 3×3
//! filters with absolute-value activation.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::pixel::sign;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const PYRAMID_LEVELS: usize = 4;
pub const FILTER_COUNT: usize = 8;
const FILTER_SEED: u64 = 42;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// [filter][in_channel][ky][kx]
type FilterBank = [[[[f64; 3]; 3]; 3]; FILTER_COUNT];

fn filter_bank() -> &'static FilterBank {
    static BANK: OnceLock<FilterBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(FILTER_SEED);
        let scale = 1.0 / 27f64.sqrt();
        let mut bank = [[[[0.0; 3]; 3]; 3]; FILTER_COUNT];
        for f in bank.iter_mut() {
            for c in f.iter_mut() {
                for row in c.iter_mut() {
                    for w in row.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *w = z * scale;
                    }
                }
            }
        }
        bank
    })
}

/// Planar multi-channel map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    fn from_image(img: &ImageBuffer) -> Self {
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let mut m = FeatureMap::zeros(w, h, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    m.data[(c * h + y) * w + x] = img.get(x, y, c);
                }
            }
        }
        m
    }

    fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, self.channels, |x, y, c| self.at(c, x, y))
    }

    #[inline]
    fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn at_mut(&mut self, c: usize, x: usize, y: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Binomial blur (clamped borders) followed by taking every other pixel.
fn blur_down(src: &FeatureMap) -> FeatureMap {
    let (w, h) = (src.width, src.height);
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = FeatureMap::zeros(ow, oh, src.channels);
    for c in 0..src.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let (x, y) = (2 * ox as isize, 2 * oy as isize);
                let mut acc = 0.0;
                for (j, wy) in BINOMIAL.iter().enumerate() {
                    let sy = clamp_index(y + j as isize - 2, h);
                    for (i, wx) in BINOMIAL.iter().enumerate() {
                        let sx = clamp_index(x + i as isize - 2, w);
                        acc += wy * wx * src.at(c, sx, sy);
                    }
                }
                *out.at_mut(c, ox, oy) = acc;
            }
        }
    }
    out
}

/// Adjoint of [`blur_down`] for an input of size `w × h`.
fn blur_down_adjoint(grad: &FeatureMap, w: usize, h: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(w, h, grad.channels);
    for c in 0..grad.channels {
        for oy in 0..grad.height {
            for ox in 0..grad.width {
                let g = grad.at(c, ox, oy);
                if g == 0.0 {
                    continue;
                }
                let (x, y) = (2 * ox as isize, 2 * oy as isize);
                for (j, wy) in BINOMIAL.iter().enumerate() {
                    let sy = clamp_index(y + j as isize - 2, h);
                    for (i, wx) in BINOMIAL.iter().enumerate() {
                        let sx = clamp_index(x + i as isize - 2, w);
                        *out.at_mut(c, sx, sy) += wy * wx * g;
                    }
                }
            }
        }
    }
    out
}

/// Pre-activation responses of the filter bank.
fn filter_responses(src: &FeatureMap) -> FeatureMap {
    let bank = filter_bank();
    let (w, h) = (src.width, src.height);
    let mut out = FeatureMap::zeros(w, h, FILTER_COUNT);
    for y in 0..h {
        for x in 0..w {
            let mut patch = [[[0.0; 3]; 3]; 3];
            for (c, pc) in patch.iter_mut().enumerate() {
                for (ky, row) in pc.iter_mut().enumerate() {
                    let sy = clamp_index(y as isize + ky as isize - 1, h);
                    for (kx, v) in row.iter_mut().enumerate() {
                        let sx = clamp_index(x as isize + kx as isize - 1, w);
                        *v = src.at(c, sx, sy);
                    }
                }
            }
            for (f, filt) in bank.iter().enumerate() {
                let mut acc = 0.0;
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            acc += filt[c][ky][kx] * patch[c][ky][kx];
                        }
                    }
                }
                *out.at_mut(f, x, y) = acc;
            }
        }
    }
    out
}

fn filter_responses_adjoint(grad: &FeatureMap) -> FeatureMap {
    let bank = filter_bank();
    let (w, h) = (grad.width, grad.height);
    let mut out = FeatureMap::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            for (f, filt) in bank.iter().enumerate() {
                let g = grad.at(f, x, y);
                if g == 0.0 {
                    continue;
                }
                for (c, fc) in filt.iter().enumerate() {
                    for (ky, row) in fc.iter().enumerate() {
                        let sy = clamp_index(y as isize + ky as isize - 1, h);
                        for (kx, wgt) in row.iter().enumerate() {
                            let sx = clamp_index(x as isize + kx as isize - 1, w);
                            *out.at_mut(c, sx, sy) += wgt * g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Features of one image: level k (1-based) has size ⌈w/2ᵏ⌉ × ⌈h/2ᵏ⌉.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Downsampled images feeding each level.
    bases: Vec<FeatureMap>,
    /// Filter responses before the absolute value.
    responses: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(img: &ImageBuffer) -> Result<Self> {
        if img.channels() != 3 {
            return Err(Error::Dimension("perceptual features need 3 channels".into()));
        }
        let mut bases = Vec::with_capacity(PYRAMID_LEVELS);
        let mut responses = Vec::with_capacity(PYRAMID_LEVELS);
        let mut current = FeatureMap::from_image(img);
        for _ in 0..PYRAMID_LEVELS {
            current = blur_down(&current);
            responses.push(filter_responses(&current));
            bases.push(current.clone());
        }
        Ok(FeaturePyramid { bases, responses })
    }

    /// Activated features of level `k` (0-based), 8 planar channels.
    pub fn level(&self, k: usize) -> FeatureMap {
        let r = &self.responses[k];
        FeatureMap {
            data: r.data.iter().map(|v| v.abs()).collect(),
            ..r.clone()
        }
    }

    pub fn level_dims(&self, k: usize) -> (usize, usize) {
        (self.bases[k].width, self.bases[k].height)
    }
}

/// Σ over levels of the mean absolute feature difference.
pub fn perceptual(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b, "perceptual pair")?;
    let (pa, pb) = (FeaturePyramid::new(a)?, FeaturePyramid::new(b)?);
    Ok((0..PYRAMID_LEVELS)
        .map(|k| {
            let (ra, rb) = (&pa.responses[k], &pb.responses[k]);
            let n = ra.data.len().max(1) as f64;
            ra.data
                .iter()
                .zip(&rb.data)
                .map(|(x, y)| (x.abs() - y.abs()).abs())
                .sum::<f64>()
                / n
        })
        .sum())
}

/// Perceptual distance and its gradient w.r.t. `a`.
pub fn perceptual_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    a.ensure_same_shape(b, "perceptual pair")?;
    let (pa, pb) = (FeaturePyramid::new(a)?, FeaturePyramid::new(b)?);
    let mut value = 0.0;
    // gradient flowing into each level's base image
    let mut base_grads: Vec<FeatureMap> = Vec::with_capacity(PYRAMID_LEVELS);
    for k in 0..PYRAMID_LEVELS {
        let (ra, rb) = (&pa.responses[k], &pb.responses[k]);
        let n = ra.data.len().max(1) as f64;
        let mut g = FeatureMap::zeros(ra.width, ra.height, ra.channels);
        for ((gv, &x), &y) in g.data.iter_mut().zip(&ra.data).zip(&rb.data) {
            let d = x.abs() - y.abs();
            value += d.abs() / n;
            *gv = sign(d) * sign(x) / n;
        }
        base_grads.push(filter_responses_adjoint(&g));
    }
    let mut carry: Option<FeatureMap> = None;
    for k in (0..PYRAMID_LEVELS).rev() {
        let mut g = base_grads[k].clone();
        if let Some(c) = carry.take() {
            for (gv, cv) in g.data.iter_mut().zip(&c.data) {
                *gv += cv;
            }
        }
        let (w, h) = if k == 0 {
            (a.width(), a.height())
        } else {
            pa.level_dims(k - 1)
        };
        carry = Some(blur_down_adjoint(&g, w, h));
    }
    let grad = carry.expect("pyramid has levels").to_image();
    Ok((value, grad))
}
