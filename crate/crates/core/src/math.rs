//! Rotation and covariance helpers shared by the renderer and the optimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::gaussian::GaussianPrimitive;

static ZERO_QUATERNION_FALLBACKS: AtomicU64 = AtomicU64::new(0);

/// Number of times a zero quaternion was replaced by the identity rotation.
pub fn zero_quaternion_fallbacks() -> u64 {
    ZERO_QUATERNION_FALLBACKS.load(Ordering::Relaxed)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalizes a (w, x, y, z) quaternion. The zero quaternion maps to identity.
pub fn normalize_quaternion(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n < 1e-12 || !n.is_finite() {
        ZERO_QUATERNION_FALLBACKS.fetch_add(1, Ordering::Relaxed);
        return Vector4::new(1.0, 0.0, 0.0, 0.0);
    }
    if n == 1.0 {
        return *q;
    }
    q / n
}

/// Rotation matrix of a (w, x, y, z) quaternion; normalizes first.
pub fn quaternion_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = normalize_quaternion(q);
    rotation_from_unit(&q)
}

pub(crate) fn rotation_from_unit(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back onto the raw (unnormalized)
/// quaternion, through the normalization.
pub(crate) fn rotation_backward(q_raw: &Vector4<f64>, d_rot: &Matrix3<f64>) -> Vector4<f64> {
    let norm = q_raw.norm();
    if norm < 1e-12 || !norm.is_finite() {
        return Vector4::zeros();
    }
    let q = q_raw / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let d_unit = Vector4::new(
        d_rot.component_mul(&dw).sum(),
        d_rot.component_mul(&dx).sum(),
        d_rot.component_mul(&dy).sum(),
        d_rot.component_mul(&dz).sum(),
    );
    (d_unit - q * q.dot(&d_unit)) / norm
}

/// Σ = R · diag(exp(log_scale))² · Rᵀ.
pub fn covariance_3d(p: &GaussianPrimitive) -> Matrix3<f64> {
    let r = quaternion_to_matrix(&p.rotation);
    let m = r * Matrix3::from_diagonal(&p.scale());
    m * m.transpose()
}

/// World-to-camera rotation whose rows are (right, down, forward).
pub(crate) fn orthonormal_basis(forward: &Vector3<f64>, up_hint: &Vector3<f64>) -> Matrix3<f64> {
    let f = forward.normalize();
    let mut right = f.cross(up_hint);
    if right.norm() < 1e-9 {
        let alt = if f.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        right = f.cross(&alt);
    }
    let right = right.normalize();
    // camera y points down in image space
    let down = f.cross(&right);
    Matrix3::from_rows(&[right.transpose(), down.transpose(), f.transpose()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    #[test]
    fn identity_quaternion_is_identity_matrix() {
        let m = quaternion_to_matrix(&Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(m, Matrix3::identity());
    }

    #[test]
    fn z_half_turn() {
        let m = quaternion_to_matrix(&Vector4::new(0.0, 0.0, 0.0, 1.0));
        assert_eq!(m, Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
    }

    #[test]
    fn zero_quaternion_falls_back_to_identity() {
        let before = zero_quaternion_fallbacks();
        let m = quaternion_to_matrix(&Vector4::zeros());
        assert_eq!(m, Matrix3::identity());
        assert!(zero_quaternion_fallbacks() > before);
    }

    #[test]
    fn random_quaternions_are_proper_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let m = quaternion_to_matrix(&q);
            let err = (m.transpose() * m - Matrix3::identity()).abs().max();
            assert!(err < 1e-12, "orthonormality error {err}");
            assert_close!(m.determinant(), 1.0, 1e-12);
        }
    }

    #[test]
    fn covariance_examples() {
        let mut p = GaussianPrimitive::default();
        assert!((covariance_3d(&p) - Matrix3::identity()).abs().max() < 1e-15);
        p.log_scale = Vector3::new(2f64.ln(), 0.0, 0.0);
        let c = covariance_3d(&p);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_match_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = GaussianPrimitive {
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-2.0..1.0)),
                rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                ..Default::default()
            };
            let c = covariance_3d(&p);
            assert!((c - c.transpose()).abs().max() < 1e-12);
            let eig = SymmetricEigen::new(c);
            let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            got.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = p.scale().iter().map(|s| s * s).collect();
            want.sort_by(f64::total_cmp);
            assert!(got[0] >= -1e-12);
            for (g, w) in got.iter().zip(&want) {
                assert_close!(*g, *w, 1e-9);
            }
        }
    }

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let upstream = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |q: &Vector4<f64>| quaternion_to_matrix(q).component_mul(&upstream).sum();
            let g = rotation_backward(&q, &upstream);
            for k in 0..4 {
                let h = 1e-6;
                let mut qp = q;
                let mut qm = q;
                qp[k] += h;
                qm[k] -= h;
                let fd = (f(&qp) - f(&qm)) / (2.0 * h);
                assert_close!(g[k], fd, 1e-7);
            }
        }
    }
}
