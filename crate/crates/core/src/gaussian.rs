use nalgebra::{Vector3, Vector4};

use crate::math::{normalize_quaternion, sigmoid};

/// Number of scalar parameters per primitive, in file order.
pub const PARAMS_PER_PRIMITIVE: usize = 14;

/// One anisotropic Gaussian kernel. Scale lives in log space and opacity in
/// logit space so unconstrained updates keep both in range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// (w, x, y, z)
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Default for GaussianPrimitive {
    fn default() -> Self {
        GaussianPrimitive {
            center: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: 0.0,
            color: Vector3::repeat(0.5),
        }
    }
}

impl GaussianPrimitive {
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Color as seen by the renderer.
    pub fn color(&self) -> Vector3<f64> {
        self.color.map(|c| c.clamp(0.0, 1.0))
    }

    pub fn unit_rotation(&self) -> Vector4<f64> {
        normalize_quaternion(&self.rotation)
    }

    /// center×3, log_scale×3, quaternion×4, opacity_logit, color×3.
    pub fn to_params(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut out = [0.0; PARAMS_PER_PRIMITIVE];
        out[0..3].copy_from_slice(self.center.as_slice());
        out[3..6].copy_from_slice(self.log_scale.as_slice());
        out[6..10].copy_from_slice(self.rotation.as_slice());
        out[10] = self.opacity_logit;
        out[11..14].copy_from_slice(self.color.as_slice());
        out
    }

    pub fn from_params(p: &[f64; PARAMS_PER_PRIMITIVE]) -> Self {
        GaussianPrimitive {
            center: Vector3::new(p[0], p[1], p[2]),
            log_scale: Vector3::new(p[3], p[4], p[5]),
            rotation: Vector4::new(p[6], p[7], p[8], p[9]),
            opacity_logit: p[10],
            color: Vector3::new(p[11], p[12], p[13]),
        }
    }
}

/// The optimizable scene plus the per-primitive gradient statistics that
/// drive densification. All per-primitive arrays share one length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    primitives: Vec<GaussianPrimitive>,
    positional_grad_accum: Vec<f64>,
    grad_accum_count: Vec<u32>,
    center_grad_accum: Vec<Vector3<f64>>,
}

impl GaussianCloud {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        let n = primitives.len();
        GaussianCloud {
            primitives,
            positional_grad_accum: vec![0.0; n],
            grad_accum_count: vec![0; n],
            center_grad_accum: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn primitives_mut(&mut self) -> &mut [GaussianPrimitive] {
        &mut self.primitives
    }

    pub fn into_primitives(self) -> Vec<GaussianPrimitive> {
        self.primitives
    }

    pub fn push(&mut self, p: GaussianPrimitive) {
        self.primitives.push(p);
        self.positional_grad_accum.push(0.0);
        self.grad_accum_count.push(0);
        self.center_grad_accum.push(Vector3::zeros());
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = GaussianPrimitive>) {
        for p in other {
            self.push(p);
        }
    }

    /// Mean 2D positional gradient magnitude per primitive (0 where never seen).
    pub fn mean_positional_grad(&self) -> Vec<f64> {
        self.positional_grad_accum
            .iter()
            .zip(&self.grad_accum_count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    pub fn grad_accum_count(&self) -> &[u32] {
        &self.grad_accum_count
    }

    pub fn center_grad_accum(&self) -> &[Vector3<f64>] {
        &self.center_grad_accum
    }

    /// Folds one view's statistics into the running accumulators. Only
    /// primitives with `visible[i]` are counted.
    pub fn accumulate_gradient_stats(
        &mut self,
        grad2d_norm: &[f64],
        center_grad: &[Vector3<f64>],
        visible: &[bool],
    ) {
        debug_assert_eq!(grad2d_norm.len(), self.len());
        for i in 0..self.len() {
            if visible[i] {
                self.positional_grad_accum[i] += grad2d_norm[i];
                self.grad_accum_count[i] += 1;
                self.center_grad_accum[i] += center_grad[i];
            }
        }
    }

    pub fn reset_accumulators(&mut self) {
        let n = self.len();
        self.positional_grad_accum = vec![0.0; n];
        self.grad_accum_count = vec![0; n];
        self.center_grad_accum = vec![Vector3::zeros(); n];
    }

    /// Keeps the primitives for which `keep` is true; accumulators are reset.
    pub fn retain_indices(&mut self, keep: &[bool]) {
        let prims = std::mem::take(&mut self.primitives);
        self.primitives = prims
            .into_iter()
            .zip(keep)
            .filter_map(|(p, &k)| k.then_some(p))
            .collect();
        self.reset_accumulators();
    }

    /// Renormalizes every quaternion and clamps colors into [0, 1].
    pub fn normalize(&mut self) {
        for p in &mut self.primitives {
            p.rotation = normalize_quaternion(&p.rotation);
            p.color = p.color.map(|c| c.clamp(0.0, 1.0));
        }
    }

    /// Copy with every parameter rounded through f32, the precision of the
    /// cloud file format.
    pub fn quantized(&self) -> GaussianCloud {
        let prims = self
            .primitives
            .iter()
            .map(|p| {
                let mut params = p.to_params();
                for v in &mut params {
                    *v = *v as f32 as f64;
                }
                GaussianPrimitive::from_params(&params)
            })
            .collect();
        GaussianCloud::new(prims)
    }
}

impl FromIterator<GaussianPrimitive> for GaussianCloud {
    fn from_iter<I: IntoIterator<Item = GaussianPrimitive>>(iter: I) -> Self {
        GaussianCloud::new(iter.into_iter().collect())
    }
}
