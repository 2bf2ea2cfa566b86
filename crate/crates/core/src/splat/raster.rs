use std::sync::OnceLock;

use rayon::prelude::*;

use super::project::{project, Projection};
use super::{kernel, Color, KERNEL_SUPPORT_Q, MAX_ALPHA, MIN_TRANSMITTANCE, TILE_SIZE};

pub(crate) const TILE_PIXELS: usize = TILE_SIZE * TILE_SIZE;
use crate::camera::Camera;
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;

#[derive(Clone, Debug)]
pub struct RenderedView {
    pub rgb: ImageBuffer,
    /// Accumulated opacity, 1 - final transmittance.
    pub alpha: ImageBuffer,
    /// Opacity-weighted mean splat depth (0 where nothing was hit).
    pub depth: ImageBuffer,
    pub skipped_singular: usize,
}

/// Compact per-splat data in front-to-back order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat {
    pub mean: [f64; 2],
    /// Inverse 2D covariance (xx, xy, yy).
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Color,
    pub depth: f64,
    /// Inclusive pixel bounds of the 4σ footprint: x0, x1, y0, y1.
    pub bbox: [usize; 4],
}

/// Projection, depth order and tile binning of one (cloud, camera) pair;
/// shared by the forward and reverse passes.
pub struct PreparedView {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) projection: Projection,
    /// Sorted position -> primitive index.
    pub(crate) order: Vec<usize>,
    pub(crate) splats: Vec<Splat>,
    /// Per tile, sorted positions of the splats overlapping it.
    pub(crate) tiles: Vec<Vec<u32>>,
    /// Per tile, copies of those splats, contiguous for the pixel loops.
    pub(crate) tile_splats: Vec<Vec<Splat>>,
    pub(crate) tiles_x: usize,
    /// Per-tile splat color sums and final transmittance from `forward`.
    pub(crate) cache: OnceLock<Vec<TileTotals>>,
}

pub(crate) type TileTotals = ([Color; TILE_PIXELS], [f64; TILE_PIXELS]);

/// One contributor to a pixel, as seen during compositing.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub alpha: f64,
    pub clamped: bool,
    pub kernel: f64,
    pub kernel_dq: f64,
    pub dx: f64,
    pub dy: f64,
    /// Transmittance in front of this contributor.
    pub transmittance: f64,
}

impl PreparedView {
    pub fn new(cloud: &GaussianCloud, camera: &Camera) -> PreparedView {
        let projection = project(cloud, camera);
        let order = projection.sorted_visible(cloud);
        let prims = cloud.primitives();
        let (width, height) = (camera.image_width, camera.image_height);
        let mut splats = Vec::with_capacity(order.len());
        for &i in &order {
            let g = &projection.gaussians[i];
            let r = g.radius;
            // pixel centers sit at integer + 0.5
            let x0 = (g.mean2d.x - r - 0.5).ceil().max(0.0);
            let x1 = (g.mean2d.x + r - 0.5).floor().min(width as f64 - 1.0);
            let y0 = (g.mean2d.y - r - 0.5).ceil().max(0.0);
            let y1 = (g.mean2d.y + r - 0.5).floor().min(height as f64 - 1.0);
            let bbox = if x0 > x1 || y0 > y1 {
                [1, 0, 1, 0]
            } else {
                [x0 as usize, x1 as usize, y0 as usize, y1 as usize]
            };
            splats.push(Splat {
                mean: [g.mean2d.x, g.mean2d.y],
                conic: [g.conic[(0, 0)], g.conic[(0, 1)], g.conic[(1, 1)]],
                opacity: g.opacity,
                color: prims[i].color(),
                depth: g.depth,
                bbox,
            });
        }

        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (pos, s) in splats.iter().enumerate() {
            let [x0, x1, y0, y1] = s.bbox;
            if x0 > x1 {
                continue;
            }
            let (tx0, tx1) = (x0 / TILE_SIZE, x1 / TILE_SIZE);
            let (ty0, ty1) = (y0 / TILE_SIZE, y1 / TILE_SIZE);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tiles[ty * tiles_x + tx].push(pos as u32);
                }
            }
        }
        let tile_splats = tiles
            .iter()
            .map(|list| list.iter().map(|&pos| splats[pos as usize]).collect())
            .collect();
        PreparedView {
            width,
            height,
            projection,
            order,
            splats,
            tiles,
            tile_splats,
            tiles_x,
            cache: OnceLock::new(),
        }
    }

    pub fn visible(&self) -> &[bool] {
        &self.projection.visible
    }

    /// Pixel bounds of `tile`: x0, x1 (exclusive), y0, y1 (exclusive).
    pub(crate) fn tile_bounds(&self, tile: usize) -> [usize; 4] {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
        [x0, (x0 + TILE_SIZE).min(self.width), y0, (y0 + TILE_SIZE).min(self.height)]
    }

    /// Composites every pixel of `tile`. Splats are visited front to back,
    /// each over its own footprint, and `f(local, slot, splat, c)` is called
    /// per contributor with `local = (y - y0) * TILE_SIZE + (x - x0)`. The
    /// per-pixel call order is the depth order. Returns the final
    /// transmittance of every local pixel.
    #[inline(always)]
    pub(crate) fn composite_tile(
        &self,
        tile: usize,
        mut f: impl FnMut(usize, usize, &Splat, &Contribution),
    ) -> [f64; TILE_PIXELS] {
        let [x0, x1, y0, y1] = self.tile_bounds(tile);
        let mut t = [1.0; TILE_PIXELS];
        let mut done = [false; TILE_PIXELS];
        let mut active = (x1 - x0) * (y1 - y0);
        for (slot, s) in self.tile_splats[tile].iter().enumerate() {
            let [sx0, sx1, sy0, sy1] = s.bbox;
            for y in sy0.max(y0)..=sy1.min(y1 - 1) {
                let dy = y as f64 + 0.5 - s.mean[1];
                let row = (y - y0) * TILE_SIZE;
                for x in sx0.max(x0)..=sx1.min(x1 - 1) {
                    let local = row + x - x0;
                    if done[local] {
                        continue;
                    }
                    let dx = x as f64 + 0.5 - s.mean[0];
                    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                    if q >= KERNEL_SUPPORT_Q {
                        continue;
                    }
                    let (k, dk) = kernel(q);
                    let raw = s.opacity * k;
                    if raw <= 0.0 {
                        continue;
                    }
                    let clamped = raw > MAX_ALPHA;
                    let alpha = if clamped { MAX_ALPHA } else { raw };
                    f(
                        local,
                        slot,
                        s,
                        &Contribution {
                            alpha,
                            clamped,
                            kernel: k,
                            kernel_dq: dk,
                            dx,
                            dy,
                            transmittance: t[local],
                        },
                    );
                    t[local] *= 1.0 - alpha;
                    if t[local] < MIN_TRANSMITTANCE {
                        done[local] = true;
                        active -= 1;
                    }
                }
            }
            if active == 0 {
                break;
            }
        }
        t
    }

    pub fn forward(&self, background: Color) -> RenderedView {
        let (totals, depths): (Vec<TileTotals>, Vec<[f64; TILE_PIXELS]>) = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let mut rgb = [Color::zeros(); TILE_PIXELS];
                let mut depth = [0.0; TILE_PIXELS];
                let t = self.composite_tile(tile, |local, _, s, c| {
                    let w = c.alpha * c.transmittance;
                    rgb[local] += s.color * w;
                    depth[local] += s.depth * w;
                });
                ((rgb, t), depth)
            })
            .unzip();

        let (w, h) = (self.width, self.height);
        let mut rgb = ImageBuffer::new(w, h, 3);
        let mut alpha = ImageBuffer::new(w, h, 1);
        let mut depth = ImageBuffer::new(w, h, 1);
        for (tile, ((c, t), d)) in totals.iter().zip(&depths).enumerate() {
            let [x0, x1, y0, y1] = self.tile_bounds(tile);
            for y in y0..y1 {
                for x in x0..x1 {
                    let local = (y - y0) * TILE_SIZE + x - x0;
                    let color = c[local] + background * t[local];
                    for k in 0..3 {
                        rgb.set(x, y, k, color[k]);
                    }
                    let a = 1.0 - t[local];
                    alpha.set(x, y, 0, a.clamp(0.0, 1.0));
                    depth.set(x, y, 0, if a > 0.0 { d[local] / a } else { 0.0 });
                }
            }
        }
        let _ = self.cache.set(totals);
        RenderedView {
            rgb,
            alpha,
            depth,
            skipped_singular: self.projection.skipped_singular,
        }
    }
}

/// Renders `cloud` from `camera` over a constant background color.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: Color) -> RenderedView {
    PreparedView::new(cloud, camera).forward(background)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPrimitive;
    use crate::math::logit;
    use nalgebra::{Vector3, Vector4};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(w: usize) -> Camera {
        Camera::orbit(Vector3::zeros(), 1.0, 0.0, 0.0, w, w, w as f64)
    }

    #[test]
    fn empty_cloud_shows_background() {
        let v = render(&GaussianCloud::default(), &camera(8), Vector3::repeat(1.0));
        assert!(v.rgb.data().iter().all(|&x| x == 1.0));
        assert!(v.alpha.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_opaque_splat_saturates_at_clamp() {
        // pixel (4, 4) has its center on the optical axis of a 9x9 image
        let cam = camera(9);
        let px_to_world = 1.0 / cam.focal;
        let cloud = GaussianCloud::new(vec![GaussianPrimitive {
            center: Vector3::new(0.0, 0.0, 0.0),
            log_scale: Vector3::repeat((3.0 * px_to_world).ln()),
            opacity_logit: 30.0,
            color: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        }]);
        let v = render(&cloud, &cam, Vector3::zeros());
        let (r, g) = (v.rgb.get(4, 4, 0), v.rgb.get(4, 4, 1));
        assert!((r - 0.99).abs() < 1e-9, "{r}");
        assert_eq!(g, 0.0);
        assert!((v.alpha.get(4, 4, 0) - 0.99).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariance_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut prims: Vec<GaussianPrimitive> = (0..60)
            .map(|_| GaussianPrimitive {
                center: Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-4.0..-2.5)),
                rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                opacity_logit: logit(rng.random_range(0.1..0.9)),
                color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
            })
            .collect();
        // duplicate depth to exercise the tie-break
        prims.push(prims[0]);
        let cam = camera(40);
        let a = render(&GaussianCloud::new(prims.clone()), &cam, Vector3::repeat(1.0));
        prims.shuffle(&mut rng);
        let b = render(&GaussianCloud::new(prims), &cam, Vector3::repeat(1.0));
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.alpha, b.alpha);
    }
}
