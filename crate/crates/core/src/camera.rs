use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::math::orthonormal_basis;

/// Sensor width used to turn a focal length in millimetres into pixels.
pub const SENSOR_WIDTH_MM: f64 = 36.0;
pub const DEFAULT_FOCAL_MM: f64 = 50.0;
pub const DEFAULT_ORBIT_RADIUS: f64 = 1.05;

pub fn focal_mm_to_px(focal_mm: f64, image_width: usize) -> f64 {
    focal_mm / SENSOR_WIDTH_MM * image_width as f64
}

/// Pinhole camera looking at `look_at`. The principal point is the image
/// center; camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub up: Vector3<f64>,
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

/// Rigid change of camera frame relative to a reference view. The reference
/// view itself is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn identity() -> Self {
        RelativePose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

impl Camera {
    /// Camera on a sphere around `center`: azimuth 0 and elevation 0 sit on
    /// the -y axis looking toward +y, with +z up.
    pub fn orbit(
        center: Vector3<f64>,
        radius: f64,
        azimuth: f64,
        elevation: f64,
        image_width: usize,
        image_height: usize,
        focal: f64,
    ) -> Camera {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        let dir = Vector3::new(ce * sa, -ce * ca, se);
        let up = if ce.abs() < 1e-6 {
            Vector3::new(-sa, ca, 0.0)
        } else {
            Vector3::z()
        };
        Camera {
            image_width,
            image_height,
            focal,
            position: center + dir * radius,
            look_at: center,
            up,
            azimuth,
            elevation,
            radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Range("camera image size must be positive".into()));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::Range(format!("focal {} must be positive", self.focal)));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Range(format!("radius {} must be positive", self.radius)));
        }
        if (self.look_at - self.position).norm() < 1e-12 {
            return Err(Error::InvalidPose("camera sits on its look-at point".into()));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.image_width as f64 / 2.0, self.image_height as f64 / 2.0)
    }

    /// World-to-camera rotation and translation: x_cam = R x_world + t.
    pub fn world_to_camera(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let r = orthonormal_basis(&(self.look_at - self.position), &self.up);
        let t = -(r * self.position);
        (r, t)
    }

    /// Pixel coordinates and camera depth of a world point.
    pub fn project_point(&self, p: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let (r, t) = self.world_to_camera();
        let c = r * p + t;
        let pp = self.principal_point();
        (
            Vector2::new(self.focal * c.x / c.z + pp.x, self.focal * c.y / c.z + pp.y),
            c.z,
        )
    }

    /// Pose of `self` relative to `reference`.
    pub fn relative_to(&self, reference: &Camera) -> RelativePose {
        let (r_ref, t_ref) = reference.world_to_camera();
        let (r_tgt, t_tgt) = self.world_to_camera();
        let rotation = r_tgt * r_ref.transpose();
        RelativePose {
            translation: t_tgt - rotation * t_ref,
            rotation,
        }
    }

    /// Camera reached by applying `rel` to this (reference) camera. Intrinsics
    /// and look-at distance carry over from the reference.
    pub fn compose(&self, rel: &RelativePose) -> Result<Camera> {
        if rel.is_identity() {
            return Ok(self.clone());
        }
        let ortho = (rel.rotation.transpose() * rel.rotation - Matrix3::identity())
            .abs()
            .max();
        if !(ortho < 1e-6) || !(rel.rotation.determinant() > 0.0) {
            return Err(Error::InvalidPose(
                "relative rotation is not a proper rotation".into(),
            ));
        }
        if !rel.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite relative translation".into()));
        }
        let (r_ref, t_ref) = self.world_to_camera();
        let r = rel.rotation * r_ref;
        let t = rel.rotation * t_ref + rel.translation;
        let position = -(r.transpose() * t);
        let forward = r.row(2).transpose();
        let up = -r.row(1).transpose();
        let dist = (self.look_at - self.position).norm();
        let look_at = position + forward * dist;
        let offset = position - look_at;
        Ok(Camera {
            image_width: self.image_width,
            image_height: self.image_height,
            focal: self.focal,
            position,
            look_at,
            up,
            azimuth: offset.x.atan2(-offset.y),
            elevation: (offset.z / dist).clamp(-1.0, 1.0).asin(),
            radius: dist,
        })
    }

    /// Same pose at a different resolution; focal scales with width.
    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        Camera {
            image_width: width,
            image_height: height,
            focal: self.focal * width as f64 / self.image_width as f64,
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let v = |v: &Vector3<f64>| format!("{} {} {}", v.x, v.y, v.z);
        let mut s = String::new();
        let _ = writeln!(s, "width={}", self.image_width);
        let _ = writeln!(s, "height={}", self.image_height);
        let _ = writeln!(s, "focal_px={}", self.focal);
        let _ = writeln!(s, "position={}", v(&self.position));
        let _ = writeln!(s, "look_at={}", v(&self.look_at));
        let _ = writeln!(s, "up={}", v(&self.up));
        let _ = writeln!(s, "azimuth={}", self.azimuth);
        let _ = writeln!(s, "elevation={}", self.elevation);
        let _ = writeln!(s, "radius={}", self.radius);
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Camera, String> {
        let mut fields = std::collections::BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(format!("duplicate key {k}"));
            }
        }
        let mut take = |k: &str| fields.remove(k).ok_or_else(|| format!("missing key {k}"));
        let num = |s: String, k: &str| s.parse::<f64>().map_err(|e| format!("{k}: {e}"));
        let int = |s: String, k: &str| s.parse::<usize>().map_err(|e| format!("{k}: {e}"));
        let vec3 = |s: String, k: &str| -> std::result::Result<Vector3<f64>, String> {
            let parts: Vec<f64> = s
                .split_whitespace()
                .map(|p| p.parse::<f64>().map_err(|e| format!("{k}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if parts.len() != 3 {
                return Err(format!("{k}: expected 3 components"));
            }
            Ok(Vector3::new(parts[0], parts[1], parts[2]))
        };
        let cam = Camera {
            image_width: int(take("width")?, "width")?,
            image_height: int(take("height")?, "height")?,
            focal: num(take("focal_px")?, "focal_px")?,
            position: vec3(take("position")?, "position")?,
            look_at: vec3(take("look_at")?, "look_at")?,
            up: vec3(take("up")?, "up")?,
            azimuth: num(take("azimuth")?, "azimuth")?,
            elevation: num(take("elevation")?, "elevation")?,
            radius: num(take("radius")?, "radius")?,
        };
        if let Some(k) = fields.keys().next() {
            return Err(format!("unknown key {k}"));
        }
        Ok(cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Camera> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Camera::from_text(&text).map_err(|detail| Error::Parse {
            path: path.to_path_buf(),
            detail,
        })
    }
}
