use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{mix_seed, NoiseSchedule};
use crate::camera::{Camera, RelativePose};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;
use crate::splat::{render, Color};

/// Novel-view synthesizer contract. `seed` drives any per-call randomness.
pub trait SynthesizerOracle: Send + Sync {
    /// Denoised target for the view `rel_pose` away from the reference, given
    /// an input blended as `gamma * image + (1 - gamma) * noise`.
    fn synthesize(
        &self,
        input: &ImageBuffer,
        gamma: f64,
        condition: &ImageBuffer,
        rel_pose: &RelativePose,
        seed: u64,
    ) -> Result<ImageBuffer>;

    /// One-step noise estimate: the clean estimate comes from `synthesize`
    /// with gamma = √ᾱ_t.
    fn predict_noise(
        &self,
        x_t: &ImageBuffer,
        t: usize,
        condition: &ImageBuffer,
        rel_pose: &RelativePose,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<ImageBuffer> {
        if t == 0 || t > schedule.timesteps {
            return Err(Error::Range(format!(
                "timestep {t} outside [1, {}]",
                schedule.timesteps
            )));
        }
        let ab = schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Err(Error::Range(format!("alpha_bar({t}) = 1, noise undefined")));
        }
        let x0_hat = self.synthesize(x_t, ab.sqrt(), condition, rel_pose, seed)?;
        x_t.ensure_same_shape(&x0_hat, "synthesized view")?;
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x_t.zip_map(&x0_hat, |x, x0| (x - s * x0) / n))
    }
}

/// Per-call corruption applied by the ground-truth synthesizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corruption {
    pub blur_sigma: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Corruption {
    pub fn none() -> Self {
        Corruption {
            blur_sigma: 0.0,
            jitter_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Synthesizer backed by the true scene: renders the requested pose, with
/// camera jitter and blur that fade as gamma approaches 1.
pub struct GroundTruthSynthesizer {
    pub scene: GaussianCloud,
    pub reference_camera: Camera,
    pub corruption: Corruption,
    pub background: Color,
}

impl GroundTruthSynthesizer {
    pub fn new(scene: GaussianCloud, reference_camera: Camera, corruption: Corruption) -> Self {
        GroundTruthSynthesizer {
            scene,
            reference_camera,
            corruption,
            background: Color::repeat(1.0),
        }
    }

    /// Camera for `rel_pose`, rotated about its look-at point by a random
    /// axis-angle with per-axis std `jitter_sigma * (1 - gamma)`.
    pub fn jittered_camera(&self, gamma: f64, rel_pose: &RelativePose, seed: u64) -> Result<Camera> {
        let cam = self.reference_camera.compose(rel_pose)?;
        let sigma = self.corruption.jitter_sigma * (1.0 - gamma);
        if sigma <= 0.0 {
            return Ok(cam);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.corruption.seed, seed));
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Range(e.to_string()))?;
        let axis_angle = Vector3::from_fn(|_, _| normal.sample(&mut rng));
        Ok(rotate_about_target(&cam, &Rotation3::new(axis_angle)))
    }
}

fn rotate_about_target(cam: &Camera, rot: &Rotation3<f64>) -> Camera {
    let offset = rot * (cam.position - cam.look_at);
    let dist = offset.norm();
    Camera {
        position: cam.look_at + offset,
        up: rot * cam.up,
        azimuth: offset.x.atan2(-offset.y),
        elevation: (offset.z / dist).clamp(-1.0, 1.0).asin(),
        radius: dist,
        ..cam.clone()
    }
}

impl SynthesizerOracle for GroundTruthSynthesizer {
    fn synthesize(
        &self,
        input: &ImageBuffer,
        gamma: f64,
        _condition: &ImageBuffer,
        rel_pose: &RelativePose,
        seed: u64,
    ) -> Result<ImageBuffer> {
        check_gamma(gamma)?;
        let cam = &self.reference_camera;
        if input.width() != cam.image_width || input.height() != cam.image_height {
            return Err(Error::Dimension(format!(
                "synthesizer input {}x{} does not match reference camera {}x{}",
                input.width(),
                input.height(),
                cam.image_width,
                cam.image_height
            )));
        }
        let view = self.jittered_camera(gamma, rel_pose, seed)?;
        let rgb = render(&self.scene, &view, self.background).rgb;
        Ok(rgb.gaussian_blur(self.corruption.blur_sigma * (1.0 - gamma)))
    }
}

/// Camera-free synthesizer: rescales the input by 1/gamma, clamps, and blurs
/// more at low gamma. Knows nothing about unseen geometry.
#[derive(Clone, Debug)]
pub struct BlindSynthesizer {
    pub blur_sigma: f64,
}

impl Default for BlindSynthesizer {
    fn default() -> Self {
        BlindSynthesizer { blur_sigma: 2.0 }
    }
}

impl SynthesizerOracle for BlindSynthesizer {
    fn synthesize(
        &self,
        input: &ImageBuffer,
        gamma: f64,
        _condition: &ImageBuffer,
        _rel_pose: &RelativePose,
        _seed: u64,
    ) -> Result<ImageBuffer> {
        check_gamma(gamma)?;
        Ok(input
            .map(|v| (v / gamma).clamp(0.0, 1.0))
            .gaussian_blur(self.blur_sigma * (1.0 - gamma)))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Range(format!("gamma {gamma} outside (0, 1]")))
    }
}
