use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// p ↦ s·R(r)·p + t in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity2D {
    pub translation: Vector2<f64>,
    pub rotation: f64,
    pub scale: f64,
}

impl Similarity2D {
    pub fn identity() -> Self {
        Similarity2D {
            translation: Vector2::zeros(),
            rotation: 0.0,
            scale: 1.0,
        }
    }

    fn linear(&self) -> Matrix2<f64> {
        let (s, c) = self.rotation.sin_cos();
        Matrix2::new(c, -s, s, c) * self.scale
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.linear() * p + self.translation
    }

    pub fn inverse_apply(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.rotation.sin_cos();
        let d = q - self.translation;
        Matrix2::new(c, s, -s, c) * d / self.scale
    }

    /// Root-mean-square distance between transformed `from` and `to`.
    pub fn rmse(&self, from: &[Vector2<f64>], to: &[Vector2<f64>]) -> f64 {
        let sum: f64 = from.iter().zip(to).map(|(p, q)| (self.apply(p) - q).norm_squared()).sum();
        (sum / from.len().max(1) as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Alignment {
    pub transform: Similarity2D,
    pub rmse: f64,
}

/// Least-squares similarity mapping `from` onto `to` (Procrustes with scale).
pub fn align_landmarks(from: &[Vector2<f64>], to: &[Vector2<f64>]) -> Result<Alignment> {
    if from.len() != to.len() || from.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "need two equal landmark sets of at least 2 points, got {} and {}",
            from.len(),
            to.len()
        )));
    }
    let n = from.len() as f64;
    let mu_p = from.iter().sum::<Vector2<f64>>() / n;
    let mu_q = to.iter().sum::<Vector2<f64>>() / n;
    let (mut a, mut b, mut norm) = (0.0, 0.0, 0.0);
    for (p, q) in from.iter().zip(to) {
        let (p, q) = (p - mu_p, q - mu_q);
        a += p.x * q.x + p.y * q.y;
        b += p.x * q.y - p.y * q.x;
        norm += p.norm_squared();
    }
    let spread = from.iter().map(|p| p.norm()).fold(1.0, f64::max);
    if !(norm > 1e-18 * spread * spread * n) {
        return Err(Error::RankDeficient("source landmarks are coincident".into()));
    }
    let (a, b) = (a / norm, b / norm);
    let scale = a.hypot(b);
    if !(scale > 0.0) {
        return Err(Error::RankDeficient("target landmarks are coincident".into()));
    }
    let mut transform = Similarity2D {
        translation: Vector2::zeros(),
        rotation: b.atan2(a),
        scale,
    };
    transform.translation = mu_q - transform.linear() * mu_p;
    Ok(Alignment {
        rmse: transform.rmse(from, to),
        transform,
    })
}

/// Reads `x y` rows; blank lines and `#` comments are skipped.
pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<Vector2<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: &str| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(i + 1, "not a number")))
            .collect::<Result<_>>()?;
        if vals.len() != 2 || !vals.iter().all(|v| v.is_finite()) {
            return Err(parse_err(i + 1, "expected two finite values"));
        }
        points.push(Vector2::new(vals[0], vals[1]));
    }
    Ok(points)
}

pub fn save_landmarks(path: impl AsRef<Path>, points: &[Vector2<f64>]) -> Result<()> {
    let path = path.as_ref();
    let text: String = points.iter().map(|p| format!("{} {}\n", p.x, p.y)).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bilinear sample with pixel centers at i+0.5; `None` outside the image.
fn sample(img: &ImageBuffer, p: &Vector2<f64>, c: usize) -> Option<f64> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h) {
        return None;
    }
    let fx = (p.x - 0.5).clamp(0.0, w - 1.0);
    let fy = (p.y - 0.5).clamp(0.0, h - 1.0);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let top = img.get(x0, y0, c) * (1.0 - tx) + img.get(x1, y0, c) * tx;
    let bot = img.get(x0, y1, c) * (1.0 - tx) + img.get(x1, y1, c) * tx;
    Some(top * (1.0 - ty) + bot * ty)
}

/// Warps the hair image and mask by `xf` onto the body frame and composites
/// hair over body. Returns the composite and the warped hair mask.
pub fn compose_aligned_image(
    hair: &ImageBuffer,
    hair_mask: &ImageBuffer,
    body: &ImageBuffer,
    xf: &Similarity2D,
) -> Result<(ImageBuffer, ImageBuffer)> {
    if hair.channels() != 3 || body.channels() != 3 {
        return Err(Error::Dimension("hair and body images must be RGB".into()));
    }
    if hair_mask.channels() != 1
        || hair_mask.width() != hair.width()
        || hair_mask.height() != hair.height()
    {
        return Err(Error::Dimension("hair mask must match the hair image".into()));
    }
    let (w, h) = (body.width(), body.height());
    let mut mask = ImageBuffer::new(w, h, 1);
    let mut out = body.clone();
    for y in 0..h {
        for x in 0..w {
            let src = xf.inverse_apply(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
            let Some(m) = sample(hair_mask, &src, 0) else {
                continue;
            };
            mask.set(x, y, 0, m);
            for c in 0..3 {
                let v = sample(hair, &src, c).unwrap_or(0.0);
                out.set(x, y, c, v * m + body.get(x, y, c) * (1.0 - m));
            }
        }
    }
    Ok((out, mask))
}
