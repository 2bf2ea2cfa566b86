use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::project::projection_terms;
use super::raster::{PreparedView, TILE_PIXELS};
use super::{Color, TILE_SIZE};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;
use crate::math::{rotation_backward, sigmoid};

/// Loss gradients for every primitive parameter, in storage parameterization
/// (log scale, raw quaternion, opacity logit).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub center: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<Vector4<f64>>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// |dL/d mean2d| in normalized device units, for densification.
    pub positional_grad_2d: Vec<f64>,
    pub visible: Vec<bool>,
}

impl GradientBundle {
    pub fn zeros(n: usize) -> Self {
        GradientBundle {
            center: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            positional_grad_2d: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    /// Parameter gradients of primitive `i` in file order.
    pub fn params(&self, i: usize) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0..3].copy_from_slice(self.center[i].as_slice());
        out[3..6].copy_from_slice(self.log_scale[i].as_slice());
        out[6..10].copy_from_slice(self.rotation[i].as_slice());
        out[10] = self.opacity_logit[i];
        out[11..14].copy_from_slice(self.color[i].as_slice());
        out
    }

    /// Adds `k * other` to the parameter gradients; statistics are left alone.
    pub fn add_scaled(&mut self, other: &GradientBundle, k: f64) {
        for i in 0..self.len() {
            self.center[i] += other.center[i] * k;
            self.log_scale[i] += other.log_scale[i] * k;
            self.rotation[i] += other.rotation[i] * k;
            self.opacity_logit[i] += other.opacity_logit[i] * k;
            self.color[i] += other.color[i] * k;
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|i| self.params(i).iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.len())
            .flat_map(|i| self.params(i))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    /// dL/dconic as a full symmetric matrix (xx, xy, yy).
    conic: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean += o.mean;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Reverse-mode gradients of the compositing image (rgb and alpha) w.r.t.
/// every primitive parameter. Forward state is recomputed per tile and
/// reduced in a fixed tile order, so results are bit-reproducible.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: Color,
    dl_drgb: &ImageBuffer,
    dl_dalpha: &ImageBuffer,
) -> Result<GradientBundle> {
    let prepared = PreparedView::new(cloud, camera);
    prepared.backward(cloud, camera, background, dl_drgb, dl_dalpha)
}

impl PreparedView {
    pub fn backward(
        &self,
        cloud: &GaussianCloud,
        camera: &Camera,
        background: Color,
        dl_drgb: &ImageBuffer,
        dl_dalpha: &ImageBuffer,
    ) -> Result<GradientBundle> {
        let (w, h) = (self.width, self.height);
        if dl_drgb.width() != w || dl_drgb.height() != h || dl_drgb.channels() != 3 {
            return Err(Error::Dimension(format!(
                "rgb gradient {}x{}x{} for a {w}x{h} view",
                dl_drgb.width(),
                dl_drgb.height(),
                dl_drgb.channels()
            )));
        }
        if dl_dalpha.width() != w || dl_dalpha.height() != h || dl_dalpha.channels() != 1 {
            return Err(Error::Dimension(format!(
                "alpha gradient {}x{}x{} for a {w}x{h} view",
                dl_dalpha.width(),
                dl_dalpha.height(),
                dl_dalpha.channels()
            )));
        }

        let per_tile: Vec<Vec<ScreenGrad>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| self.tile_backward(tile, background, dl_drgb, dl_dalpha))
            .collect();

        let mut screen = vec![ScreenGrad::default(); self.splats.len()];
        for (tile, grads) in per_tile.iter().enumerate() {
            for (slot, g) in grads.iter().enumerate() {
                screen[self.tiles[tile][slot] as usize].add(g);
            }
        }

        let n = cloud.len();
        let mut out = GradientBundle::zeros(n);
        out.visible.clone_from(&self.projection.visible);
        let (view_rot, view_t) = camera.world_to_camera();
        let prims = cloud.primitives();
        let chained: Vec<(usize, PrimitiveGrad)> = self
            .order
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let g = &screen[pos];
                let proj = &self.projection.gaussians[i];
                (i, chain_to_parameters(&prims[i], proj.conic, g, &view_rot, &view_t, camera))
            })
            .collect();
        for (i, g) in chained {
            out.center[i] = g.center;
            out.log_scale[i] = g.log_scale;
            out.rotation[i] = g.rotation;
            out.opacity_logit[i] = g.opacity_logit;
            out.color[i] = g.color;
            out.positional_grad_2d[i] = g.ndc_norm;
        }
        Ok(out)
    }

    fn tile_backward(
        &self,
        tile: usize,
        background: Color,
        dl_drgb: &ImageBuffer,
        dl_dalpha: &ImageBuffer,
    ) -> Vec<ScreenGrad> {
        let mut grads = vec![ScreenGrad::default(); self.tiles[tile].len()];
        if grads.is_empty() {
            return grads;
        }
        let [x0, x1, y0, y1] = self.tile_bounds(tile);
        let mut g_rgb = [Vector3::zeros(); TILE_PIXELS];
        let mut g_alpha = [0.0; TILE_PIXELS];
        let mut any = false;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * TILE_SIZE + x - x0;
                g_rgb[local] = Vector3::new(dl_drgb.get(x, y, 0), dl_drgb.get(x, y, 1), dl_drgb.get(x, y, 2));
                g_alpha[local] = dl_dalpha.get(x, y, 0);
                any |= g_rgb[local] != Vector3::zeros() || g_alpha[local] != 0.0;
            }
        }
        if !any {
            return grads;
        }
        // Total splat color and final transmittance per pixel, from the
        // forward pass when it ran on this view.
        let (total, t_final) = match self.cache.get() {
            Some(cache) => cache[tile],
            None => {
                let mut total = [Color::zeros(); TILE_PIXELS];
                let t = self.composite_tile(tile, |local, _, s, c| {
                    total[local] += s.color * (c.alpha * c.transmittance);
                });
                (total, t)
            }
        };
        // Composite again. The color composited behind contributor i is
        // total - prefix_i + bg·T_final.
        let mut prefix = [Color::zeros(); TILE_PIXELS];
        self.composite_tile(tile, |local, slot, s, c| {
            let weight = c.alpha * c.transmittance;
            prefix[local] += s.color * weight;
            let (gc, ga, tf) = (g_rgb[local], g_alpha[local], t_final[local]);
            if gc == Vector3::zeros() && ga == 0.0 {
                return;
            }
            let g = &mut grads[slot];
            g.color += gc * weight;
            let rest = total[local] - prefix[local] + background * tf;
            let one_minus = 1.0 - c.alpha;
            let dl_dalpha_i =
                c.transmittance * s.color.dot(&gc) - rest.dot(&gc) / one_minus + ga * tf / one_minus;
            if c.clamped {
                return;
            }
            g.opacity += dl_dalpha_i * c.kernel;
            let dl_dq = dl_dalpha_i * s.opacity * c.kernel_dq;
            // q = dᵀ C d with d = pixel - mean
            let cd = Vector2::new(
                s.conic[0] * c.dx + s.conic[1] * c.dy,
                s.conic[1] * c.dx + s.conic[2] * c.dy,
            );
            g.mean -= cd * (2.0 * dl_dq);
            g.conic[0] += dl_dq * c.dx * c.dx;
            g.conic[1] += dl_dq * c.dx * c.dy;
            g.conic[2] += dl_dq * c.dy * c.dy;
        });
        grads
    }
}

struct PrimitiveGrad {
    center: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: Vector4<f64>,
    opacity_logit: f64,
    color: Vector3<f64>,
    ndc_norm: f64,
}

fn chain_to_parameters(
    p: &crate::gaussian::GaussianPrimitive,
    conic: Matrix2<f64>,
    g: &ScreenGrad,
    view_rot: &Matrix3<f64>,
    view_t: &Vector3<f64>,
    camera: &Camera,
) -> PrimitiveGrad {
    let f = camera.focal;
    let terms = projection_terms(p, view_rot, view_t, f);
    let t = terms.cam_point;

    let sig = sigmoid(p.opacity_logit);
    let opacity_logit = g.opacity * sig * (1.0 - sig);
    let color = Vector3::from_fn(|k, _| {
        if (0.0..=1.0).contains(&p.color[k]) {
            g.color[k]
        } else {
            0.0
        }
    });

    // conic = cov2d⁻¹  =>  dL/dcov2d = -C (dL/dC) C
    let g_conic = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    let m = terms.jacobian * view_rot;
    let g_cov3d = m.transpose() * g_cov2d * m;
    let g_m = g_cov2d * m * terms.cov3d * 2.0;
    let g_j = g_m * view_rot.transpose();

    let (tx, ty, tz) = (t.x, t.y, t.z);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_t = Vector3::new(
        g.mean.x * f / tz,
        g.mean.y * f / tz,
        -g.mean.x * f * tx / tz2 - g.mean.y * f * ty / tz2,
    );
    g_t.x += g_j[(0, 2)] * (-f / tz2);
    g_t.y += g_j[(1, 2)] * (-f / tz2);
    g_t.z += g_j[(0, 0)] * (-f / tz2)
        + g_j[(0, 2)] * (2.0 * f * tx / tz3)
        + g_j[(1, 1)] * (-f / tz2)
        + g_j[(1, 2)] * (2.0 * f * ty / tz3);
    let center = view_rot.transpose() * g_t;

    // Σ = L Lᵀ, L = R S
    let l = terms.rotation * Matrix3::from_diagonal(&terms.scale);
    let g_l = g_cov3d * l * 2.0;
    let mut g_rot = Matrix3::zeros();
    let mut log_scale = Vector3::zeros();
    for k in 0..3 {
        let mut g_s = 0.0;
        for i in 0..3 {
            g_rot[(i, k)] = g_l[(i, k)] * terms.scale[k];
            g_s += g_l[(i, k)] * terms.rotation[(i, k)];
        }
        log_scale[k] = g_s * terms.scale[k];
    }
    let rotation = rotation_backward(&p.rotation, &g_rot);

    let ndc = Vector2::new(
        g.mean.x * camera.image_width as f64 / 2.0,
        g.mean.y * camera.image_height as f64 / 2.0,
    );
    PrimitiveGrad {
        center,
        log_scale,
        rotation,
        opacity_logit,
        color,
        ndc_norm: ndc.norm(),
    }
}
