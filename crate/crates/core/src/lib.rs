//! Coarse-to-fine single-view reconstruction of strand-like scenes as 3D
//! Gaussian clouds: a differentiable splatting renderer, diffusion-prior
//! oracles, and the three optimization stages that lift one image to a cloud.

pub mod camera;
pub mod cli;
pub mod cloud_io;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod losses;
pub mod math;
pub mod pipeline;
pub mod priors;
pub mod scenegen;
pub mod splat;

pub use camera::{Camera, RelativePose};
pub use cloud_io::{load_cloud, save_cloud};
pub use error::{Error, Result};
pub use gaussian::{GaussianCloud, GaussianPrimitive};
pub use image::ImageBuffer;
