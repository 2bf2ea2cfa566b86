use crate::camera::RelativePose;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::priors::{forward_diffuse, NoiseSchedule, SynthesizerOracle};

/// w(t) = 1 - ᾱ_t.
pub fn sds_weight(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    Ok(1.0 - schedule.alpha_bar(t)?)
}

/// Score-distillation upstream gradient w(t)·(ε̂ - ε) for a rendered RGB
/// image. `seed` is passed through to the oracle.
#[allow(clippy::too_many_arguments)]
pub fn sds_grad(
    rendered_rgb: &ImageBuffer,
    condition: &ImageBuffer,
    rel_pose: &RelativePose,
    t: usize,
    eps: &ImageBuffer,
    oracle: &dyn SynthesizerOracle,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<ImageBuffer> {
    let (lo, hi) = schedule.sds_range();
    if t < lo || t > hi {
        return Err(Error::Range(format!("timestep {t} outside [{lo}, {hi}]")));
    }
    let x_t = forward_diffuse(rendered_rgb, t, eps, schedule)?;
    let eps_hat = oracle.predict_noise(&x_t, t, condition, rel_pose, schedule, seed)?;
    eps_hat.ensure_same_shape(eps, "predicted noise")?;
    let w = sds_weight(schedule, t)?;
    Ok(eps_hat.zip_map(eps, |p, e| w * (p - e)))
}
