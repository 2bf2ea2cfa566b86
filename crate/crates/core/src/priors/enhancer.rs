use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;
use crate::splat::{render, Color};

/// Side information available to an enhancer.
#[derive(Clone, Debug, Default)]
pub struct EnhanceContext {
    pub camera: Option<Camera>,
}

impl EnhanceContext {
    pub fn with_camera(camera: Camera) -> Self {
        EnhanceContext {
            camera: Some(camera),
        }
    }
}

pub trait EnhancerOracle: Send + Sync {
    fn enhance(&self, image: &ImageBuffer, context: &EnhanceContext) -> Result<ImageBuffer>;
}

/// Ideal enhancer: returns the true render from the context camera.
pub struct GroundTruthEnhancer {
    pub scene: GaussianCloud,
    pub background: Color,
}

impl GroundTruthEnhancer {
    pub fn new(scene: GaussianCloud) -> Self {
        GroundTruthEnhancer {
            scene,
            background: Color::repeat(1.0),
        }
    }
}

impl EnhancerOracle for GroundTruthEnhancer {
    fn enhance(&self, image: &ImageBuffer, context: &EnhanceContext) -> Result<ImageBuffer> {
        let cam = context.camera.as_ref().ok_or(Error::MissingCamera)?;
        if image.width() != cam.image_width || image.height() != cam.image_height {
            return Err(Error::Dimension(format!(
                "enhancer input {}x{} does not match camera {}x{}",
                image.width(),
                image.height(),
                cam.image_width,
                cam.image_height
            )));
        }
        Ok(render(&self.scene, cam, self.background).rgb)
    }
}

/// Unsharp mask: clamp(image + amount * (image - blur(image, sigma))).
#[derive(Clone, Debug)]
pub struct BlindEnhancer {
    pub amount: f64,
    pub sigma: f64,
}

impl Default for BlindEnhancer {
    fn default() -> Self {
        BlindEnhancer {
            amount: 1.0,
            sigma: 1.5,
        }
    }
}

impl BlindEnhancer {
    pub fn apply(&self, image: &ImageBuffer) -> ImageBuffer {
        let blurred = image.gaussian_blur(self.sigma);
        image.zip_map(&blurred, |v, b| (v + self.amount * (v - b)).clamp(0.0, 1.0))
    }
}

impl EnhancerOracle for BlindEnhancer {
    fn enhance(&self, image: &ImageBuffer, _context: &EnhanceContext) -> Result<ImageBuffer> {
        Ok(self.apply(image))
    }
}

/// Unsharp mask with the default strength.
pub fn enhance_blind(image: &ImageBuffer) -> ImageBuffer {
    BlindEnhancer::default().apply(image)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEnhancer;

impl EnhancerOracle for IdentityEnhancer {
    fn enhance(&self, image: &ImageBuffer, _context: &EnhanceContext) -> Result<ImageBuffer> {
        Ok(image.clone())
    }
}
