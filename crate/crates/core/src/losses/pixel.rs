use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::splat::RenderedView;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
const MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad: ImageBuffer,
}

#[derive(Clone, Debug)]
pub struct ReferenceLoss {
    pub value: f64,
    pub d_rgb: ImageBuffer,
    pub d_alpha: ImageBuffer,
}

/// Pixel selection of an optional mask, validated against `img`.
fn selection(img: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<Option<Vec<bool>>> {
    let Some(mask) = mask else {
        return Ok(None);
    };
    if mask.channels() != 1 || mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::Dimension(format!(
            "mask {}x{}x{} for a {}x{} image",
            mask.width(),
            mask.height(),
            mask.channels(),
            img.width(),
            img.height()
        )));
    }
    let sel: Vec<bool> = mask.data().iter().map(|&m| m >= MASK_THRESHOLD).collect();
    if !sel.iter().any(|&s| s) {
        return Err(Error::DegenerateMask);
    }
    Ok(Some(sel))
}

fn masked_mean(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: Option<&ImageBuffer>,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    a.ensure_same_shape(b, "image pair")?;
    let sel = selection(a, mask)?;
    let ch = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data().chunks_exact(ch).zip(b.data().chunks_exact(ch)).enumerate() {
        if sel.as_ref().is_some_and(|s| !s[i]) {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            sum += f(x - y);
        }
        count += ch;
    }
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(sum / count as f64)
}

/// Mean absolute difference over the selected pixels and all channels.
pub fn l1(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    masked_mean(a, b, mask, f64::abs)
}

/// Mean L1 of `a` against `b` with its gradient w.r.t. `a`.
pub fn l1_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<LossWithGrad> {
    a.ensure_same_shape(b, "image pair")?;
    let n = a.data().len().max(1) as f64;
    let value = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    let grad = a.zip_map(b, |x, y| sign(x - y) / n);
    Ok(LossWithGrad { value, grad })
}

/// 10·log10(1 / MSE), capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    let mse = masked_mean(a, b, mask, |d| d * d)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean L1 on RGB plus mean L1 on the alpha mask, with gradients for both
/// rendered channels.
pub fn reference_loss(
    rendered: &RenderedView,
    target_rgb: &ImageBuffer,
    target_mask: &ImageBuffer,
) -> Result<ReferenceLoss> {
    let rgb = l1_with_grad(&rendered.rgb, target_rgb)?;
    let alpha = l1_with_grad(&rendered.alpha, target_mask)?;
    Ok(ReferenceLoss {
        value: rgb.value + alpha.value,
        d_rgb: rgb.grad,
        d_alpha: alpha.grad,
    })
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn view(rgb: ImageBuffer, alpha: ImageBuffer) -> RenderedView {
        let depth = alpha.clone();
        RenderedView {
            rgb,
            alpha,
            depth,
            skipped_singular: 0,
        }
    }

    #[test]
    fn l1_examples() {
        let a = random(6, 5, 3, 1);
        assert_eq!(l1(&a, &a, None).unwrap(), 0.0);
        let z = ImageBuffer::new(4, 4, 3);
        let t = ImageBuffer::filled(4, 4, 3, 0.1);
        assert!((l1(&z, &t, None).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn l1_checkerboard_mask_matches_brute_force() {
        let a = random(8, 6, 3, 2);
        let b = random(8, 6, 3, 3);
        let mask = ImageBuffer::from_fn(8, 6, 1, |x, y, _| ((x + y) % 2) as f64);
        let mut sum = 0.0;
        let mut n = 0;
        for y in 0..6 {
            for x in 0..8 {
                if (x + y) % 2 == 1 {
                    for c in 0..3 {
                        sum += (a.get(x, y, c) - b.get(x, y, c)).abs();
                        n += 1;
                    }
                }
            }
        }
        let got = l1(&a, &b, Some(&mask)).unwrap();
        assert!((got - sum / n as f64).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = random(4, 4, 3, 1);
        let b = random(4, 5, 3, 1);
        assert!(matches!(l1(&a, &b, None), Err(Error::Dimension(_))));
        let empty = ImageBuffer::new(4, 4, 1);
        assert!(matches!(l1(&a, &a, Some(&empty)), Err(Error::DegenerateMask)));
        assert!(matches!(psnr(&a, &a, Some(&empty)), Err(Error::DegenerateMask)));
    }

    #[test]
    fn psnr_examples() {
        let a = random(5, 5, 3, 4);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP_DB);
        let z = ImageBuffer::filled(5, 5, 3, 0.3);
        let t = ImageBuffer::filled(5, 5, 3, 0.4);
        assert!((psnr(&z, &t, None).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_brute_force_and_is_symmetric() {
        let a = random(7, 3, 3, 5);
        let b = random(7, 3, 3, 6);
        let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / a.data().len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, None).unwrap() - want).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
        assert_eq!(l1(&a, &b, None).unwrap(), l1(&b, &a, None).unwrap());
    }

    #[test]
    fn reference_loss_examples() {
        let rgb = random(6, 6, 3, 7);
        let mask = random(6, 6, 1, 8);
        let same = reference_loss(&view(rgb.clone(), mask.clone()), &rgb, &mask).unwrap();
        assert_eq!(same.value, 0.0);
        let shifted = mask.map(|v| v + 0.2);
        let off = reference_loss(&view(rgb.clone(), shifted), &rgb, &mask).unwrap();
        assert!((off.value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reference_loss_matches_oracle_and_finite_differences() {
        let rgb = random(5, 4, 3, 9);
        let alpha = random(5, 4, 1, 10);
        let t_rgb = random(5, 4, 3, 11);
        let t_mask = random(5, 4, 1, 12);
        let got = reference_loss(&view(rgb.clone(), alpha.clone()), &t_rgb, &t_mask).unwrap();

        let mut s_rgb = 0.0;
        let mut s_a = 0.0;
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    s_rgb += (rgb.get(x, y, c) - t_rgb.get(x, y, c)).abs();
                }
                s_a += (alpha.get(x, y, 0) - t_mask.get(x, y, 0)).abs();
            }
        }
        let want = s_rgb / 60.0 + s_a / 20.0;
        assert!((got.value - want).abs() < 1e-12);

        let h = 1e-7;
        for i in 0..rgb.data().len() {
            let mut p = rgb.clone();
            let mut m = rgb.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fp = reference_loss(&view(p, alpha.clone()), &t_rgb, &t_mask).unwrap().value;
            let fm = reference_loss(&view(m, alpha.clone()), &t_rgb, &t_mask).unwrap().value;
            let fd = (fp - fm) / (2.0 * h);
            let an = got.d_rgb.data()[i];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }
}
