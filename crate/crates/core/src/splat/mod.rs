//! Differentiable Gaussian splatting: EWA projection, front-to-back alpha
//! compositing, and the hand-derived reverse pass.

mod backward;
mod project;
mod raster;

pub use backward::{render_backward, GradientBundle};
pub use project::{project, ProjectedGaussian, Projection};
pub use raster::{render, PreparedView, RenderedView};

use nalgebra::Vector3;

pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass term added to every projected covariance, in px².
pub const COV2D_REGULARIZER: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const SINGULAR_DET: f64 = 1e-12;
/// Squared Mahalanobis radius up to which the kernel is the plain Gaussian.
pub const KERNEL_FLAT_Q: f64 = 9.0;
/// Squared Mahalanobis radius where the tapered kernel reaches zero.
pub const KERNEL_SUPPORT_Q: f64 = 16.0;
pub const TILE_SIZE: usize = 16;

pub type Color = Vector3<f64>;

/// exp(-q/2) inside 3σ, tapered to zero at 4σ by a quintic smoothstep so the
/// image stays C² in every parameter. Returns the value and dK/dq.
#[inline]
pub fn kernel(q: f64) -> (f64, f64) {
    let e = (-0.5 * q).exp();
    if q <= KERNEL_FLAT_Q {
        (e, -0.5 * e)
    } else if q >= KERNEL_SUPPORT_Q {
        (0.0, 0.0)
    } else {
        let span = KERNEL_SUPPORT_Q - KERNEL_FLAT_Q;
        let s = (q - KERNEL_FLAT_Q) / span;
        let w = 1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0);
        let dw = -30.0 * s * s * (1.0 - s) * (1.0 - s) / span;
        (e * w, -0.5 * e * w + e * dw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_continuous_and_differentiable() {
        for q in [0.0, 1.0, 8.999, 9.0, 9.001, 12.0, 15.999, 16.0] {
            let h = 1e-6;
            let fd = (kernel(q + h).0 - kernel(q - h).0) / (2.0 * h);
            assert!((fd - kernel(q).1).abs() < 1e-6, "q={q}");
        }
        assert_eq!(kernel(0.0).0, 1.0);
        assert_eq!(kernel(20.0), (0.0, 0.0));
    }
}
