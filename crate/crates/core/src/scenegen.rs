//! Procedural strand-like ground-truth scenes, hemisphere camera sampling,
//! and multi-view dataset rendering.

use std::f64::consts::{PI, TAU};
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{focal_mm_to_px, Camera, DEFAULT_FOCAL_MM, DEFAULT_ORBIT_RADIUS};
use crate::cloud_io::save_cloud;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPrimitive};
use crate::image::ImageBuffer;
use crate::math::logit;
use crate::priors::mix_seed;
use crate::splat::{render, Color};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HairStyle {
    Straight,
    Wavy,
    Bun,
    Braid,
}

impl std::str::FromStr for HairStyle {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "straight" => Ok(HairStyle::Straight),
            "wavy" => Ok(HairStyle::Wavy),
            "bun" => Ok(HairStyle::Bun),
            "braid" => Ok(HairStyle::Braid),
            other => Err(format!("unknown style {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub style: HairStyle,
    pub strand_count: usize,
    pub gaussians_per_strand: usize,
    pub head_center: [f64; 3],
    pub head_radius: f64,
    pub strand_length: f64,
    pub strand_radius: f64,
    pub base_color: [f64; 3],
    pub color_variation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            style: HairStyle::Straight,
            strand_count: 40,
            gaussians_per_strand: 24,
            head_center: [0.0, 0.0, 0.15],
            head_radius: 0.09,
            strand_length: 0.26,
            strand_radius: 0.006,
            base_color: [0.35, 0.22, 0.12],
            color_variation: 0.08,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strand_count == 0 || self.gaussians_per_strand == 0 {
            return Err(Error::Config("strand_count and gaussians_per_strand must be at least 1".into()));
        }
        if !(self.head_radius > 0.0 && self.strand_length > 0.0 && self.strand_radius > 0.0) {
            return Err(Error::Config("head_radius, strand_length and strand_radius must be positive".into()));
        }
        Ok(())
    }

    fn head(&self) -> Vector3<f64> {
        Vector3::from(self.head_center)
    }
}

/// A generated scene: hair primitives first, then the template body.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub cloud: GaussianCloud,
    pub hair_count: usize,
    /// Primitive range of each strand within `cloud`.
    pub strands: Vec<Range<usize>>,
}

impl GeneratedScene {
    pub fn hair(&self) -> GaussianCloud {
        self.cloud.primitives()[..self.hair_count].iter().cloned().collect()
    }
}

/// Braid geometry: axis top, downward length, helix radius and turns.
pub struct BraidAxis {
    pub top: Vector3<f64>,
    pub length: f64,
    pub radius: f64,
    pub turns: f64,
}

impl BraidAxis {
    pub fn for_spec(spec: &SceneSpec) -> Self {
        let r = spec.head_radius;
        BraidAxis {
            top: spec.head() + Vector3::new(0.0, 1.05 * r, -0.1 * r),
            length: spec.strand_length,
            radius: 0.18 * r,
            turns: 3.0,
        }
    }

    /// Point of helix `k` (of 3) at fraction `s` down the axis.
    pub fn point(&self, k: usize, s: f64) -> Vector3<f64> {
        let theta = self.phase(k, s);
        self.top + Vector3::new(self.radius * theta.cos(), self.radius * theta.sin(), -self.length * s)
    }

    pub fn phase(&self, k: usize, s: f64) -> f64 {
        TAU * self.turns * s + TAU * k as f64 / 3.0
    }
}

/// Upper-hemisphere root direction, kept off the face (the -y side).
fn root_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let z: f64 = rng.random_range(0.15..1.0);
        let phi: f64 = rng.random_range(-PI..PI);
        let rho = (1.0 - z * z).sqrt();
        let d = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
        if d.y < -0.35 && d.z < 0.75 {
            continue;
        }
        return d;
    }
}

/// Resamples a polyline to `n + 1` points evenly spaced in arc length.
fn resample(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    (0..=n)
        .map(|k| {
            let target = total * k as f64 / n as f64;
            let i = cum.partition_point(|&c| c < target).clamp(1, points.len() - 1);
            let seg = cum[i] - cum[i - 1];
            let f = if seg > 0.0 { (target - cum[i - 1]) / seg } else { 0.0 };
            points[i - 1] + (points[i] - points[i - 1]) * f
        })
        .collect()
}

/// Draped strand: leaves the scalp along the normal and bends under gravity,
/// pushed outside the head sphere.
fn draped(spec: &SceneSpec, dir: &Vector3<f64>, samples: usize) -> Vec<Vector3<f64>> {
    let head = spec.head();
    let r = spec.head_radius;
    let step = spec.strand_length / samples as f64;
    let mut p = head + dir * r;
    let mut pts = vec![p];
    let down = Vector3::new(0.0, 0.0, -1.0);
    for k in 0..samples {
        let s = (k as f64 + 0.5) / samples as f64;
        let heading = (dir * (1.0 - s).powi(2) + down * (1.6 * s)).normalize();
        p += heading * step;
        let off = p - head;
        let min_r = r + 0.6 * spec.strand_radius + 0.015 * s;
        if off.norm() < min_r {
            p = head + off.normalize() * min_r;
        }
        pts.push(p);
    }
    pts
}

fn strand_polyline(spec: &SceneSpec, rng: &mut ChaCha8Rng, index: usize) -> Vec<Vector3<f64>> {
    const SAMPLES: usize = 96;
    match spec.style {
        HairStyle::Straight => draped(spec, &root_direction(rng), SAMPLES),
        HairStyle::Wavy => {
            let dir = root_direction(rng);
            let base = draped(spec, &dir, SAMPLES);
            let phase: f64 = rng.random_range(0.0..TAU);
            let side = dir.cross(&Vector3::z()).try_normalize(1e-9).unwrap_or(Vector3::x());
            base.iter()
                .enumerate()
                .map(|(k, p)| {
                    let s = k as f64 / SAMPLES as f64;
                    p + side * (0.012 * s.sqrt() * (TAU * 3.5 * s + phase).sin())
                })
                .collect()
        }
        HairStyle::Bun => {
            let head = spec.head();
            let r = spec.head_radius;
            let dir = root_direction(rng);
            let center = head + Vector3::new(0.0, 0.55, 0.75).normalize() * (r * 1.15);
            let axis = (center - head).normalize();
            let u = axis.cross(&Vector3::x()).normalize();
            let v = axis.cross(&u);
            let (major, minor) = (0.4 * r, 0.18 * r);
            let start: f64 = rng.random_range(0.0..TAU);
            let twist: f64 = rng.random_range(0.0..TAU);
            let mut pts = vec![head + dir * r];
            for k in 0..=SAMPLES {
                let s = k as f64 / SAMPLES as f64;
                let a = start + TAU * 1.25 * s;
                let b = twist + TAU * 3.0 * s;
                let ring = u * a.cos() + v * a.sin();
                pts.push(center + ring * (major + minor * b.cos()) + axis * (minor * b.sin()));
            }
            pts
        }
        HairStyle::Braid => {
            let braid = BraidAxis::for_spec(spec);
            let k = index % 3;
            let jitter = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                0.0,
            ) * spec.strand_radius;
            let dir = root_direction(rng);
            let mut pts = vec![spec.head() + dir * spec.head_radius];
            pts.extend((0..=SAMPLES).map(|i| braid.point(k, i as f64 / SAMPLES as f64) + jitter));
            pts
        }
    }
}

fn rotation_to(tangent: &Vector3<f64>) -> Vector4<f64> {
    let q = UnitQuaternion::rotation_between(&Vector3::x(), tangent)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI));
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn chain(points: &[Vector3<f64>], radius: f64, color: &Vector3<f64>) -> Vec<GaussianPrimitive> {
    let n = points.len() - 1;
    points
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let seg = w[1] - w[0];
            let len = seg.norm().max(1e-6);
            let s = (k as f64 + 0.5) / n as f64;
            let shade = 0.8 + 0.35 * s;
            GaussianPrimitive {
                center: (w[0] + w[1]) / 2.0,
                log_scale: Vector3::new((0.6 * len).max(radius).ln(), radius.ln(), radius.ln()),
                rotation: rotation_to(&(seg / len)),
                opacity_logit: logit(0.95),
                color: (color * shade).map(|c| c.clamp(0.0, 1.0)),
            }
        })
        .collect()
}

/// Points spread evenly over a unit sphere.
fn fibonacci_sphere(n: usize) -> impl Iterator<Item = Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
    })
}

fn surface_splat(center: Vector3<f64>, normal: &Vector3<f64>, size: f64, color: Vector3<f64>) -> GaussianPrimitive {
    // Flattened along the normal (local x).
    GaussianPrimitive {
        center,
        log_scale: Vector3::new((0.35 * size).ln(), size.ln(), size.ln()),
        rotation: rotation_to(normal),
        opacity_logit: logit(0.98),
        color,
    }
}

/// Gray head sphere, neck and shoulder capsules.
fn template_body(spec: &SceneSpec) -> Vec<GaussianPrimitive> {
    let head = spec.head();
    let r = spec.head_radius;
    let skin = Vector3::new(0.72, 0.70, 0.68);
    let cloth = Vector3::new(0.55, 0.56, 0.6);
    let mut out: Vec<GaussianPrimitive> = fibonacci_sphere(260)
        .map(|n| surface_splat(head + n * r, &n, 0.11 * r, skin))
        .collect();
    let capsule = |a: Vector3<f64>, b: Vector3<f64>, radius: f64, rings: usize, around: usize, color: Vector3<f64>| {
        let axis = (b - a).normalize();
        let u = axis.cross(&Vector3::y()).try_normalize(1e-9).unwrap_or(Vector3::x());
        let v = axis.cross(&u);
        let mut prims = Vec::new();
        for i in 0..rings {
            let p = a + (b - a) * ((i as f64 + 0.5) / rings as f64);
            for j in 0..around {
                let ang = TAU * (j as f64 + 0.5 * (i % 2) as f64) / around as f64;
                let n = u * ang.cos() + v * ang.sin();
                prims.push(surface_splat(p + n * radius, &n, 0.6 * radius * TAU / around as f64 * 1.2, color));
            }
        }
        for (end, sign) in [(a, -1.0), (b, 1.0)] {
            for n in fibonacci_sphere(around) {
                if n.dot(&axis) * sign > 0.0 {
                    prims.push(surface_splat(end + n * radius, &n, 0.5 * radius * TAU / around as f64, color));
                }
            }
        }
        prims
    };
    let neck_top = head - Vector3::new(0.0, 0.0, 0.75 * r);
    out.extend(capsule(Vector3::new(0.0, 0.0, -0.06), neck_top, 0.42 * r, 5, 14, skin));
    out.extend(capsule(
        Vector3::new(-0.16, 0.0, -0.13),
        Vector3::new(0.16, 0.0, -0.13),
        0.07,
        12,
        18,
        cloth,
    ));
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, spec.style as u64 + 1));
    let base = Vector3::from(spec.base_color);
    let mut prims = Vec::new();
    let mut strands = Vec::new();
    for i in 0..spec.strand_count {
        let line = strand_polyline(spec, &mut rng, i);
        let pts = resample(&line, spec.gaussians_per_strand);
        let tint = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)) * spec.color_variation;
        let color = (base + tint).map(|c| c.clamp(0.0, 1.0));
        let start = prims.len();
        prims.extend(chain(&pts, spec.strand_radius, &color));
        strands.push(start..prims.len());
    }
    let hair_count = prims.len();
    prims.extend(template_body(spec));
    Ok(GeneratedScene {
        cloud: GaussianCloud::new(prims),
        hair_count,
        strands,
    })
}

/// Cameras on the upper hemisphere around the neck point.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub neck: Vector3<f64>,
    pub radius: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl CameraRig {
    /// Default lens and orbit at a square resolution.
    pub fn square(size: usize) -> Self {
        CameraRig {
            neck: Vector3::zeros(),
            radius: DEFAULT_ORBIT_RADIUS,
            width: size,
            height: size,
            focal: focal_mm_to_px(DEFAULT_FOCAL_MM, size),
        }
    }

    pub fn at(&self, azimuth: f64, elevation: f64) -> Camera {
        Camera::orbit(self.neck, self.radius, azimuth, elevation, self.width, self.height, self.focal)
    }

    pub fn frontal(&self) -> Camera {
        self.at(0.0, 0.0)
    }

    /// Area-uniform sample on the upper hemisphere, a pure function of
    /// (seed, index).
    pub fn sample(&self, seed: u64, index: u64) -> Camera {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index));
        let z: f64 = rng.random_range(0.0..1.0);
        let azimuth: f64 = rng.random_range(-PI..PI);
        self.at(azimuth, z.asin())
    }

    /// Camera `index` of `count` evenly spaced around a fixed elevation.
    pub fn ring(&self, index: usize, count: usize, elevation: f64) -> Camera {
        self.at(-PI + TAU * index as f64 / count.max(1) as f64, elevation)
    }
}

/// 68 pseudo-landmarks: front-facing points on the head sphere projected
/// into `camera`.
pub fn head_landmarks(spec: &SceneSpec, camera: &Camera) -> Vec<Vector2<f64>> {
    let head = spec.head();
    let r = spec.head_radius;
    (0..68)
        .map(|i| {
            let a = -1.1 + 2.2 * (i % 17) as f64 / 16.0;
            let b = -0.6 + 1.2 * (i / 17) as f64 / 3.0;
            let d = Rotation3::from_euler_angles(b, 0.0, a) * Vector3::new(0.0, -1.0, 0.0);
            camera.project_point(&(head + d * r)).0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: PathBuf,
    pub camera: PathBuf,
}

/// Dataset listing; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.index, e.image.display(), e.camera.display()))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let index = cols.first().and_then(|c| c.parse().ok());
            match (index, cols.len()) {
                (Some(index), 3) => entries.push(ManifestEntry {
                    index,
                    image: PathBuf::from(cols[1]),
                    camera: PathBuf::from(cols[2]),
                }),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        detail: format!("line {}: expected index<TAB>image<TAB>camera", n + 1),
                    })
                }
            }
        }
        Ok(Manifest { root, entries })
    }

    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image)
    }

    pub fn camera_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.camera)
    }
}

/// Writes `n_views` renders with their cameras and a manifest. View 0 is the
/// frontal reference; the rest are hemisphere samples drawn from `seed`.
pub fn render_dataset(
    scene: &GaussianCloud,
    rig: &CameraRig,
    n_views: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    background: Color,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let cam = if i == 0 { rig.frontal() } else { rig.sample(seed, i as u64) };
        let image = PathBuf::from(format!("view_{i:03}.png"));
        let camera = PathBuf::from(format!("view_{i:03}.cam"));
        render(scene, &cam, background).rgb.save_png(out_dir.join(&image))?;
        cam.save(out_dir.join(&camera))?;
        entries.push(ManifestEntry { index: i, image, camera });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes the full dataset for a generated scene: views, `scene.gs`,
/// `hair.gs`, the reference foreground mask, and landmarks. Hemisphere
/// views are drawn from `view_seed`.
pub fn write_scene_dataset(
    spec: &SceneSpec,
    generated: &GeneratedScene,
    rig: &CameraRig,
    n_views: usize,
    view_seed: u64,
    out_dir: impl AsRef<Path>,
    background: Color,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let manifest = render_dataset(&generated.cloud, rig, n_views, view_seed, out_dir, background)?;
    save_cloud(&generated.cloud, out_dir.join("scene.gs"))?;
    save_cloud(&generated.hair(), out_dir.join("hair.gs"))?;
    let frontal = rig.frontal();
    let view = render(&generated.cloud, &frontal, background);
    view.alpha.save_png(out_dir.join("reference_mask.png"))?;
    render(&generated.hair(), &frontal, background)
        .alpha
        .save_png(out_dir.join("hair_mask.png"))?;
    crate::pipeline::save_landmarks(out_dir.join("landmarks.txt"), &head_landmarks(spec, &frontal))?;
    Ok(manifest)
}

/// Image quantized to 8 bits per channel, as stored in a dataset PNG.
pub fn quantize8(img: &ImageBuffer) -> ImageBuffer {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}
