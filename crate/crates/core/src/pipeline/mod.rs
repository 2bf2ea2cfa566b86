//! The three optimization stages (coarse SDS fit, view-wise refinement,
//! pixel-wise enhancement) and their supporting pieces.

mod align;
mod densify;
mod optim;
mod stages;

pub use align::{
    align_landmarks, compose_aligned_image, load_landmarks, save_landmarks, Alignment,
    Similarity2D,
};
pub use densify::{densify_and_prune, DensifyConfig, DensifyEvent};
pub use optim::{decayed_rate, GroupRates, Optimizer, OptimizerKind};
pub use stages::{
    viewwise_stage_with,
    coarse_stage, pixelwise_stage, viewwise_stage, HeldOutSet, ReferenceView, StageContext,
    StageFailure, StageOutput,
};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPrimitive};
use crate::losses::Metrics;
use crate::math::logit;

/// Hyperparameters of one optimization stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub iters: usize,
    pub batch_views: usize,
    pub lr_position: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_floor: f64,
    pub optimizer: OptimizerKind,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Split instead of clone when the largest scale exceeds this fraction
    /// of the scene extent.
    pub split_scale_fraction: f64,
    pub max_primitives: usize,
    pub gamma_start: f64,
    pub gamma_increment: f64,
    pub gamma_period: usize,
    pub beta: f64,
    pub ref_view_weight: f64,
    /// Multiplier on the score-distillation gradient (coarse stage only).
    pub guidance_scale: f64,
    pub checkpoint_interval: usize,
}

impl StageConfig {
    pub fn coarse() -> Self {
        StageConfig {
            iters: 1000,
            batch_views: 4,
            lr_position: 0.001,
            lr_color: 0.01,
            lr_opacity: 0.05,
            lr_scale: 0.005,
            lr_rotation: 0.005,
            lr_floor: 2e-5,
            optimizer: OptimizerKind::Adam,
            densify_interval: 100,
            densify_grad_threshold: 0.01,
            prune_opacity_threshold: 0.01,
            split_scale_fraction: 0.01,
            max_primitives: 50_000,
            gamma_start: 0.5,
            gamma_increment: 0.15,
            gamma_period: 200,
            beta: 0.5,
            ref_view_weight: 1.0,
            guidance_scale: 1.0,
            checkpoint_interval: 200,
        }
    }

    pub fn viewwise() -> Self {
        StageConfig {
            iters: 600,
            densify_interval: 200,
            densify_grad_threshold: 0.0002,
            ..StageConfig::coarse()
        }
    }

    pub fn pixelwise() -> Self {
        StageConfig {
            iters: 1000,
            ref_view_weight: 0.0,
            ..StageConfig::viewwise()
        }
    }

    pub fn rates(&self) -> GroupRates {
        GroupRates {
            position: self.lr_position,
            scale: self.lr_scale,
            rotation: self.lr_rotation,
            opacity: self.lr_opacity,
            color: self.lr_color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position", self.lr_position),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_floor", self.lr_floor),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_views", self.batch_views),
            ("densify_interval", self.densify_interval),
            ("gamma_period", self.gamma_period),
            ("checkpoint_interval", self.checkpoint_interval),
            ("max_primitives", self.max_primitives),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.gamma_start > 0.0 && self.gamma_start <= 1.0) {
            return Err(Error::Config(format!("gamma_start {} outside (0, 1]", self.gamma_start)));
        }
        let nonneg = [
            ("gamma_increment", self.gamma_increment),
            ("beta", self.beta),
            ("ref_view_weight", self.ref_view_weight),
            ("guidance_scale", self.guidance_scale),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("prune_opacity_threshold", self.prune_opacity_threshold),
            ("split_scale_fraction", self.split_scale_fraction),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// min(gamma_start + gamma_increment·⌊step/gamma_period⌋, 1).
pub fn gamma_at(step: usize, cfg: &StageConfig) -> f64 {
    let k = (step / cfg.gamma_period.max(1)) as f64;
    (cfg.gamma_start + cfg.gamma_increment * k).min(1.0)
}

/// `n` gray, faint, isotropic primitives uniform in [-e, e]³. The scale is
/// the expected nearest-neighbour distance of a uniform point process.
pub fn init_cloud(n: usize, half_extent: f64, seed: u64) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::Range("init_cloud needs at least one primitive".into()));
    }
    if !(half_extent > 0.0) {
        return Err(Error::Range(format!("box half extent {half_extent} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let volume = (2.0 * half_extent).powi(3);
    // E[nn distance] = Γ(4/3)·(3/(4π))^(1/3)·(V/n)^(1/3)
    let nn = 0.553_960_278_9 * (volume / n as f64).cbrt();
    let prims = (0..n)
        .map(|_| GaussianPrimitive {
            center: Vector3::from_fn(|_, _| rng.random_range(-half_extent..=half_extent)),
            log_scale: Vector3::repeat(nn.ln()),
            opacity_logit: logit(0.1),
            color: Vector3::repeat(0.5),
            ..Default::default()
        })
        .collect();
    Ok(GaussianCloud::new(prims))
}

/// Metrics and loss terms at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub step: usize,
    pub primitives: usize,
    /// Loss terms averaged over the steps since the previous checkpoint.
    pub losses: Vec<(String, f64)>,
    pub heldout: Option<Metrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub checkpoints: Vec<Checkpoint>,
    pub densify: Vec<DensifyEvent>,
    /// Not part of the text form, which must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl StageReport {
    /// One `key=value` line per checkpoint and per densify event.
    pub fn to_text(&self) -> String {
        let mut out = format!("stage={}\n", self.stage);
        for c in &self.checkpoints {
            out += &format!("checkpoint step={} primitives={}", c.step, c.primitives);
            for (k, v) in &c.losses {
                out += &format!(" loss_{k}={v}");
            }
            if let Some(m) = &c.heldout {
                out += &format!(" l1={} psnr_db={} perceptual={}", m.l1, m.psnr_db, m.perceptual);
            }
            out.push('\n');
        }
        for e in &self.densify {
            out += &format!(
                "densify step={} before={} splits={} clones={} pruned={} after={}\n",
                e.step, e.before, e.splits, e.clones, e.pruned, e.after
            );
        }
        out
    }

    pub fn checkpoint_at(&self, step: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.step == step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_schedule_matches_table() {
        let cfg = StageConfig::viewwise();
        assert_eq!(gamma_at(0, &cfg), 0.5);
        assert_eq!(gamma_at(199, &cfg), 0.5);
        assert!((gamma_at(200, &cfg) - 0.65).abs() < 1e-15);
        assert!((gamma_at(400, &cfg) - 0.8).abs() < 1e-15);
        assert_eq!(gamma_at(1_000_000, &cfg), 1.0);
        let mut prev = 0.0;
        for s in 0..3000 {
            let g = gamma_at(s, &cfg);
            assert!(g >= prev && g <= 1.0);
            prev = g;
        }
    }

    #[test]
    fn init_cloud_fills_box() {
        let c = init_cloud(5000, 0.3, 7).unwrap();
        assert_eq!(c.len(), 5000);
        assert!(c.primitives().iter().all(|p| p.center.iter().all(|v| v.abs() <= 0.3)));
        let p = &c.primitives()[0];
        assert!((p.opacity() - 0.1).abs() < 1e-12);
        assert_eq!(p.color(), Vector3::repeat(0.5));
        assert_eq!(p.unit_rotation(), nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(init_cloud(5000, 0.3, 7).unwrap(), c);
        assert_eq!(init_cloud(1, 0.3, 7).unwrap().len(), 1);
        assert!(init_cloud(0, 0.3, 7).is_err());
    }

    #[test]
    fn init_scale_matches_nearest_neighbour_distance() {
        let c = init_cloud(2000, 0.3, 11).unwrap();
        let pts: Vec<_> = c.primitives().iter().map(|p| p.center).collect();
        // Interior points only, to avoid the boundary deficit.
        let mut sum = 0.0;
        let mut n = 0;
        for (i, p) in pts.iter().enumerate() {
            if p.iter().any(|v| v.abs() > 0.2) {
                continue;
            }
            let d = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            sum += d;
            n += 1;
        }
        let measured = sum / n as f64;
        let predicted = c.primitives()[0].scale().x;
        assert!((measured / predicted - 1.0).abs() < 0.08, "{measured} vs {predicted}");
    }

    #[test]
    fn config_validation() {
        assert!(StageConfig::coarse().validate().is_ok());
        let bad = StageConfig { lr_color: 0.0, ..StageConfig::coarse() };
        assert_eq!(bad.validate().unwrap_err().category(), "config");
        let bad = StageConfig { densify_interval: 0, ..StageConfig::coarse() };
        assert!(bad.validate().is_err());
    }
}
