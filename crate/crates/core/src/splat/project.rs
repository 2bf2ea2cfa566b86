use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{COV2D_REGULARIZER, KERNEL_SUPPORT_Q, NEAR_PLANE, SINGULAR_DET};
use crate::camera::Camera;
use crate::gaussian::{GaussianCloud, GaussianPrimitive};
use crate::math::rotation_from_unit;

#[derive(Clone, Debug, Default)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    pub opacity: f64,
    /// Pixel radius of the kernel support along the major axis.
    pub radius: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Projection {
    pub gaussians: Vec<ProjectedGaussian>,
    pub visible: Vec<bool>,
    /// Primitives dropped because the regularized 2D covariance was singular.
    pub skipped_singular: usize,
}

impl Projection {
    /// Visible primitive indices in front-to-back order. Ties in depth fall
    /// back to the parameter bits so the order never depends on list order.
    pub fn sorted_visible(&self, cloud: &GaussianCloud) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.visible.len()).filter(|&i| self.visible[i]).collect();
        let prims = cloud.primitives();
        idx.sort_by(|&a, &b| {
            self.gaussians[a]
                .depth
                .total_cmp(&self.gaussians[b].depth)
                .then_with(|| param_order(&prims[a], &prims[b]))
        });
        idx
    }
}

fn param_order(a: &GaussianPrimitive, b: &GaussianPrimitive) -> Ordering {
    let (pa, pb) = (a.to_params(), b.to_params());
    pa.iter()
        .zip(&pb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Intermediate quantities of one primitive's projection, kept for the
/// reverse pass.
pub(crate) struct ProjectionTerms {
    pub cam_point: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub rotation: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub cov3d: Matrix3<f64>,
}

pub(crate) fn projection_terms(
    p: &GaussianPrimitive,
    view_rot: &Matrix3<f64>,
    view_t: &Vector3<f64>,
    focal: f64,
) -> ProjectionTerms {
    let cam_point = view_rot * p.center + view_t;
    let (tx, ty, tz) = (cam_point.x, cam_point.y, cam_point.z);
    let jacobian = Matrix2x3::new(
        focal / tz,
        0.0,
        -focal * tx / (tz * tz),
        0.0,
        focal / tz,
        -focal * ty / (tz * tz),
    );
    let rotation = rotation_from_unit(&p.unit_rotation());
    let scale = p.scale();
    let l = rotation * Matrix3::from_diagonal(&scale);
    ProjectionTerms {
        cam_point,
        jacobian,
        rotation,
        scale,
        cov3d: l * l.transpose(),
    }
}

/// Perspective projection with the first-order (EWA) covariance transform
/// cov2d = J W Σ Wᵀ Jᵀ + εI. Primitives behind the near plane or whose
/// kernel support misses the image are marked invisible.
pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Projection {
    let (view_rot, view_t) = camera.world_to_camera();
    let pp = camera.principal_point();
    let (w, h) = (camera.image_width as f64, camera.image_height as f64);
    let n = cloud.len();
    let mut out = Projection {
        gaussians: vec![ProjectedGaussian::default(); n],
        visible: vec![false; n],
        skipped_singular: 0,
    };
    for (i, p) in cloud.primitives().iter().enumerate() {
        let cam_z = view_rot.row(2).dot(&p.center.transpose()) + view_t.z;
        if !(cam_z > NEAR_PLANE) {
            continue;
        }
        let terms = projection_terms(p, &view_rot, &view_t, camera.focal);
        let m = terms.jacobian * view_rot;
        let cov2d = m * terms.cov3d * m.transpose() + Matrix2::identity() * COV2D_REGULARIZER;
        let det = cov2d.determinant();
        if !(det > SINGULAR_DET) || !det.is_finite() {
            out.skipped_singular += 1;
            continue;
        }
        let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
        let c = terms.cam_point;
        let mean2d = Vector2::new(camera.focal * c.x / c.z + pp.x, camera.focal * c.y / c.z + pp.y);
        let half_trace = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
        let lambda_max = half_trace + (half_trace * half_trace - det).max(0.0).sqrt();
        let radius = (KERNEL_SUPPORT_Q * lambda_max).sqrt();
        let outside = mean2d.x + radius < 0.0
            || mean2d.x - radius > w
            || mean2d.y + radius < 0.0
            || mean2d.y - radius > h;
        if outside || !mean2d.iter().all(|v| v.is_finite()) {
            continue;
        }
        out.gaussians[i] = ProjectedGaussian {
            mean2d,
            cov2d,
            conic,
            depth: c.z,
            opacity: p.opacity(),
            radius,
        };
        out.visible[i] = true;
    }
    out
}
