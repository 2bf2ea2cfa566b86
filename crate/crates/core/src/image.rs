use std::path::Path;

use crate::error::{Error, Result};

/// Row-major float image with 1 or 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("image contains non-finite values".into()));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.empty_like()
        }
    }

    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> ImageBuffer {
        assert!(self.same_shape(other));
        ImageBuffer {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: Vec::new(),
        }
    }

    pub fn clamped(&self) -> ImageBuffer {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Multiplies every channel by a single-channel weight image.
    pub fn multiply_mask(&self, mask: &ImageBuffer) -> Result<ImageBuffer> {
        if mask.channels != 1 || mask.width != self.width || mask.height != self.height {
            return Err(Error::Dimension("mask must be single-channel, same size".into()));
        }
        let mut out = self.clone();
        for (i, px) in out.data.chunks_exact_mut(self.channels).enumerate() {
            for v in px {
                *v *= mask.data[i];
            }
        }
        Ok(out)
    }

    /// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` is
    /// the identity.
    pub fn gaussian_blur(&self, sigma: f64) -> ImageBuffer {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        let tmp = self.convolve_axis(&kernel, radius, true);
        tmp.convolve_axis(&kernel, radius, false)
    }

    fn convolve_axis(&self, kernel: &[f64], radius: isize, horizontal: bool) -> ImageBuffer {
        let (w, h, ch) = (self.width as isize, self.height as isize, self.channels);
        let mut out = ImageBuffer::new(self.width, self.height, self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (k, wk) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += wk * self.get(sx as usize, sy as usize, c);
                    }
                    out.set(x as usize, y as usize, c, acc);
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(path, &self.to_rgb8(), self.width as u32, self.height as u32, color)
            .map_err(|e| image_error(path, e))
    }

    /// Loads an 8-bit PNG as RGB in [0, 1], values mapped linearly.
    pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<ImageBuffer> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        ImageBuffer::from_data(w as usize, h as usize, 3, data)
    }

    pub fn load_png_gray(path: impl AsRef<Path>) -> Result<ImageBuffer> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        ImageBuffer::from_data(w as usize, h as usize, 1, data)
    }

    /// Horizontal concatenation of equally sized images.
    pub fn hstack(images: &[ImageBuffer]) -> Result<ImageBuffer> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("nothing to stack".into()))?;
        for img in images {
            img.ensure_same_shape(first, "hstack")?;
        }
        let (w, h, ch) = (first.width, first.height, first.channels);
        Ok(ImageBuffer::from_fn(w * images.len(), h, ch, |x, y, c| {
            images[x / w].get(x % w, y, c)
        }))
    }
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_of_constant_is_constant() {
        let img = ImageBuffer::filled(9, 7, 3, 0.42);
        let b = img.gaussian_blur(1.5);
        assert!(b.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn blur_preserves_mass_in_interior() {
        let mut img = ImageBuffer::new(21, 21, 1);
        img.set(10, 10, 0, 1.0);
        let b = img.gaussian_blur(1.0);
        let total: f64 = b.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(b.get(10, 10, 0) < 1.0 && b.get(11, 10, 0) > 0.0);
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ImageBuffer::from_fn(5, 4, 3, |x, y, c| ((x * 31 + y * 7 + c * 50) % 256) as f64 / 255.0);
        img.save_png(&p).unwrap();
        assert_eq!(ImageBuffer::load_png_rgb(&p).unwrap(), img);
    }

    #[test]
    fn from_data_validates() {
        assert!(ImageBuffer::from_data(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(ImageBuffer::from_data(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageBuffer::from_data(1, 1, 2, vec![0.0; 2]).is_err());
    }
}
