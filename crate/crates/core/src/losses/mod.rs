//! Scalar objectives, their image-space gradients, and evaluation metrics.

mod perceptual;
mod pixel;
mod sds;

pub use perceptual::{perceptual, perceptual_with_grad, FeaturePyramid, PYRAMID_LEVELS};
pub use pixel::{l1, l1_with_grad, psnr, reference_loss, LossWithGrad, ReferenceLoss, PSNR_CAP_DB};
pub use sds::{sds_grad, sds_weight};

use crate::error::Result;
use crate::image::ImageBuffer;

/// Masked L1, PSNR and perceptual error of `rendered` against `truth`.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub l1: f64,
    pub psnr_db: f64,
    pub perceptual: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        Metrics {
            l1: items.iter().map(|m| m.l1).sum::<f64>() / n,
            psnr_db: items.iter().map(|m| m.psnr_db).sum::<f64>() / n,
            perceptual: items.iter().map(|m| m.perceptual).sum::<f64>() / n,
        }
    }

    /// `l1=… psnr_db=… perceptual=…`
    pub fn to_kv(&self) -> String {
        format!(
            "l1={:.6} psnr_db={:.4} perceptual={:.6}",
            self.l1, self.psnr_db, self.perceptual
        )
    }
}

/// Metrics restricted to `mask` (threshold 0.5). Perceptual error compares
/// both images with the unmasked region zeroed.
pub fn masked_metrics(
    rendered: &ImageBuffer,
    truth: &ImageBuffer,
    mask: Option<&ImageBuffer>,
) -> Result<Metrics> {
    let l1 = l1(rendered, truth, mask)?;
    let psnr_db = psnr(rendered, truth, mask)?;
    let perceptual = match mask {
        Some(m) => {
            let binary = m.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            perceptual(&rendered.multiply_mask(&binary)?, &truth.multiply_mask(&binary)?)?
        }
        None => perceptual(rendered, truth)?,
    };
    Ok(Metrics {
        l1,
        psnr_db,
        perceptual,
    })
}
