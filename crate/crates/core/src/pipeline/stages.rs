use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{densify_and_prune, gamma_at, Checkpoint, DensifyConfig, Optimizer, StageConfig, StageReport};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;
use crate::losses::{l1_with_grad, masked_metrics, perceptual_with_grad, reference_loss, sds_grad, Metrics};
use crate::priors::{mix_seed, EnhanceContext, EnhancerOracle, NoiseSchedule, SynthesizerOracle};
use crate::scenegen::CameraRig;
use crate::splat::{render, Color, GradientBundle, PreparedView};

/// The single input view: aligned image, its foreground mask, and the
/// reference camera.
#[derive(Clone, Debug)]
pub struct ReferenceView {
    pub image: ImageBuffer,
    pub mask: ImageBuffer,
    pub camera: Camera,
}

impl ReferenceView {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.image_width, self.camera.image_height);
        if self.image.width() != w || self.image.height() != h || self.image.channels() != 3 {
            return Err(Error::Dimension(format!(
                "reference image {}x{}x{} for a {w}x{h} camera",
                self.image.width(),
                self.image.height(),
                self.image.channels()
            )));
        }
        if self.mask.width() != w || self.mask.height() != h || self.mask.channels() != 1 {
            return Err(Error::Dimension("reference mask does not match the image".into()));
        }
        Ok(())
    }
}

/// Ground-truth views used to monitor progress: masked metrics over each
/// camera, averaged.
#[derive(Clone, Debug)]
pub struct HeldOutSet {
    pub cameras: Vec<Camera>,
    pub truths: Vec<ImageBuffer>,
    pub masks: Vec<ImageBuffer>,
    pub background: Color,
}

impl HeldOutSet {
    /// Renders `scene` for the targets and thresholds the alpha of `hair`
    /// for the masks.
    pub fn from_scene(scene: &GaussianCloud, hair: &GaussianCloud, cameras: Vec<Camera>, background: Color) -> Self {
        let truths = cameras.iter().map(|c| render(scene, c, background).rgb).collect();
        let masks = cameras
            .iter()
            .map(|c| render(hair, c, background).alpha.map(|a| if a >= 0.5 { 1.0 } else { 0.0 }))
            .collect();
        HeldOutSet {
            cameras,
            truths,
            masks,
            background,
        }
    }

    pub fn per_view(&self, cloud: &GaussianCloud) -> Result<Vec<Metrics>> {
        self.cameras
            .iter()
            .zip(&self.truths)
            .zip(&self.masks)
            .map(|((cam, truth), mask)| {
                let img = render(cloud, cam, self.background).rgb;
                masked_metrics(&img, truth, Some(mask))
            })
            .collect()
    }

    pub fn evaluate(&self, cloud: &GaussianCloud) -> Result<Metrics> {
        Ok(Metrics::mean(&self.per_view(cloud)?))
    }
}

/// Everything a stage needs besides its config and oracle.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub reference: &'a ReferenceView,
    /// Cameras for randomly sampled training views.
    pub rig: &'a CameraRig,
    pub background: Color,
    /// Characteristic scene size used by the split/clone decision.
    pub scene_extent: f64,
    pub monitor: Option<&'a HeldOutSet>,
}

pub struct StageOutput {
    pub cloud: GaussianCloud,
    pub report: StageReport,
}

/// A stage that stopped early, with the report up to the failure.
#[derive(Debug)]
pub struct StageFailure {
    pub error: Error,
    pub report: StageReport,
}

impl From<StageFailure> for Error {
    fn from(f: StageFailure) -> Error {
        f.error
    }
}

/// Gradients and loss terms collected over one step.
struct StepAccum {
    grads: GradientBundle,
    losses: Vec<(&'static str, f64)>,
    stats: Vec<(Vec<f64>, Vec<nalgebra::Vector3<f64>>, Vec<bool>)>,
}

impl StepAccum {
    fn new(n: usize) -> Self {
        StepAccum {
            grads: GradientBundle::zeros(n),
            losses: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn add_loss(&mut self, name: &'static str, v: f64) {
        match self.losses.iter_mut().find(|(k, _)| *k == name) {
            Some(e) => e.1 += v,
            None => self.losses.push((name, v)),
        }
    }

    fn backprop(
        &mut self,
        prepared: &PreparedView,
        cloud: &GaussianCloud,
        cam: &Camera,
        bg: Color,
        d_rgb: &ImageBuffer,
        d_alpha: &ImageBuffer,
    ) -> Result<()> {
        let g = prepared.backward(cloud, cam, bg, d_rgb, d_alpha)?;
        self.grads.add_scaled(&g, 1.0);
        self.stats.push((g.positional_grad_2d, g.center, g.visible));
        Ok(())
    }
}

/// Shared loop: per step, `step_fn` fills an accumulator; the driver applies
/// the update, densifies on schedule, and records checkpoints.
fn drive(
    name: &str,
    mut cloud: GaussianCloud,
    cfg: &StageConfig,
    ctx: &StageContext,
    mut step_fn: impl FnMut(usize, &GaussianCloud, &mut StepAccum) -> Result<()>,
) -> std::result::Result<StageOutput, StageFailure> {
    let started = Instant::now();
    let mut report = StageReport {
        stage: name.to_string(),
        ..Default::default()
    };
    let fail = |error: Error, mut report: StageReport| {
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        StageFailure { error, report }
    };
    if let Err(e) = cfg.validate().and_then(|_| ctx.reference.validate()) {
        return Err(fail(e, report));
    }
    let densify_cfg = DensifyConfig {
        grad_threshold: cfg.densify_grad_threshold,
        split_scale: cfg.split_scale_fraction * ctx.scene_extent,
        prune_opacity: cfg.prune_opacity_threshold,
        max_primitives: cfg.max_primitives,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.rates(), cfg.lr_floor, cfg.iters, cloud.len());
    cloud.reset_accumulators();
    let mut window: Vec<(&'static str, f64)> = Vec::new();
    let mut window_steps = 0usize;
    for step in 0..cfg.iters {
        let mut acc = StepAccum::new(cloud.len());
        if let Err(e) = step_fn(step, &cloud, &mut acc) {
            return Err(fail(e, report));
        }
        for (g2d, center, vis) in &acc.stats {
            cloud.accumulate_gradient_stats(g2d, center, vis);
        }
        opt.step(&mut cloud, &acc.grads);
        for (k, v) in acc.losses {
            match window.iter_mut().find(|(n, _)| *n == k) {
                Some(e) => e.1 += v,
                None => window.push((k, v)),
            }
        }
        window_steps += 1;
        let done = step + 1;
        // checkpoints see the state after the update, before structural edits
        if done % cfg.checkpoint_interval == 0 || done == cfg.iters {
            let heldout = match ctx.monitor.map(|m| m.evaluate(&cloud)).transpose() {
                Ok(h) => h,
                Err(e) => return Err(fail(e, report)),
            };
            report.checkpoints.push(Checkpoint {
                step: done,
                primitives: cloud.len(),
                losses: window
                    .iter()
                    .map(|(k, v)| (k.to_string(), v / window_steps as f64))
                    .collect(),
                heldout,
            });
            window.clear();
            window_steps = 0;
        }
        if done % cfg.densify_interval == 0 && done < cfg.iters {
            let (event, origin) = densify_and_prune(&mut cloud, &densify_cfg, done);
            opt.remap(&origin);
            report.densify.push(event);
        }
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(StageOutput { cloud, report })
}

fn noise_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, 3, |_, _, _| StandardNormal.sample(rng))
}

const COARSE_TAG: u64 = 0xC0A25E;
const VIEWWISE_TAG: u64 = 0x71E3;
const PIXELWISE_TAG: u64 = 0x91C5E1;

/// Reference-view supervision shared by all stages.
fn reference_term(
    cloud: &GaussianCloud,
    ctx: &StageContext,
    weight: f64,
    acc: &mut StepAccum,
) -> Result<()> {
    if weight <= 0.0 {
        return Ok(());
    }
    let r = ctx.reference;
    let prepared = PreparedView::new(cloud, &r.camera);
    let view = prepared.forward(ctx.background);
    let loss = reference_loss(&view, &r.image, &r.mask)?;
    acc.add_loss("ref", loss.value);
    acc.backprop(
        &prepared,
        cloud,
        &r.camera,
        ctx.background,
        &loss.d_rgb.map(|v| v * weight),
        &loss.d_alpha.map(|v| v * weight),
    )
}

/// Θ⁰: score distillation from random hemisphere views plus reference-view
/// supervision.
pub fn coarse_stage(
    init: GaussianCloud,
    cfg: &StageConfig,
    ctx: &StageContext,
    synthesizer: &dyn SynthesizerOracle,
    schedule: &NoiseSchedule,
    seed: u64,
) -> std::result::Result<StageOutput, StageFailure> {
    let stage_seed = mix_seed(seed, COARSE_TAG);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let (t_lo, t_hi) = schedule.sds_range();
    let (w, h) = (ctx.rig.width, ctx.rig.height);
    let zero_alpha = ImageBuffer::new(w, h, 1);
    let norm = cfg.guidance_scale / (w * h * 3) as f64;
    drive("coarse", init, cfg, ctx, |step, cloud, acc| {
        for b in 0..cfg.batch_views {
            let call = (step * cfg.batch_views + b) as u64;
            let cam = ctx.rig.sample(stage_seed, call);
            let rel = cam.relative_to(&ctx.reference.camera);
            let prepared = PreparedView::new(cloud, &cam);
            let view = prepared.forward(ctx.background);
            let t = rng.random_range(t_lo..=t_hi);
            let eps = noise_image(w, h, &mut rng);
            let g = sds_grad(
                &view.rgb,
                &ctx.reference.image,
                &rel,
                t,
                &eps,
                synthesizer,
                schedule,
                mix_seed(stage_seed, call),
            )?;
            acc.add_loss("sds", g.data().iter().map(|v| v * v).sum::<f64>() / g.data().len() as f64);
            acc.backprop(&prepared, cloud, &cam, ctx.background, &g.map(|v| v * norm), &zero_alpha)?;
        }
        reference_term(cloud, ctx, cfg.ref_view_weight, acc)
    })
}

/// l1 + β·perceptual between a render and its target, as an upstream image.
fn image_term(rendered: &ImageBuffer, target: &ImageBuffer, beta: f64, acc: &mut StepAccum) -> Result<ImageBuffer> {
    let l1 = l1_with_grad(rendered, target)?;
    acc.add_loss("l1", l1.value);
    if beta <= 0.0 {
        return Ok(l1.grad);
    }
    let (perc, d_perc) = perceptual_with_grad(rendered, target)?;
    acc.add_loss("perceptual", perc);
    Ok(l1.grad.zip_map(&d_perc, |a, b| a + beta * b))
}

/// Θ¹: fit renders to the synthesizer's refinement of γ-blended renders.
pub fn viewwise_stage(
    theta0: GaussianCloud,
    cfg: &StageConfig,
    ctx: &StageContext,
    synthesizer: &dyn SynthesizerOracle,
    seed: u64,
) -> std::result::Result<StageOutput, StageFailure> {
    viewwise_stage_with(theta0, cfg, ctx, synthesizer, seed, |step| gamma_at(step, cfg))
}

/// View-wise stage with an explicit γ schedule.
pub fn viewwise_stage_with(
    theta0: GaussianCloud,
    cfg: &StageConfig,
    ctx: &StageContext,
    synthesizer: &dyn SynthesizerOracle,
    seed: u64,
    gamma: impl Fn(usize) -> f64,
) -> std::result::Result<StageOutput, StageFailure> {
    let stage_seed = mix_seed(seed, VIEWWISE_TAG);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let (w, h) = (ctx.rig.width, ctx.rig.height);
    let zero_alpha = ImageBuffer::new(w, h, 1);
    drive("viewwise", theta0, cfg, ctx, |step, cloud, acc| {
        let g = gamma(step);
        for b in 0..cfg.batch_views {
            let call = (step * cfg.batch_views + b) as u64;
            let cam = ctx.rig.sample(stage_seed, call);
            let rel = cam.relative_to(&ctx.reference.camera);
            let prepared = PreparedView::new(cloud, &cam);
            let view = prepared.forward(ctx.background);
            let noise = noise_image(w, h, &mut rng);
            let blend = view.rgb.zip_map(&noise, |x, n| g * x + (1.0 - g) * n);
            let target = synthesizer.synthesize(&blend, g, &ctx.reference.image, &rel, mix_seed(stage_seed, call))?;
            let d_rgb = image_term(&view.rgb, &target, cfg.beta, acc)?;
            acc.backprop(&prepared, cloud, &cam, ctx.background, &d_rgb, &zero_alpha)?;
        }
        reference_term(cloud, ctx, cfg.ref_view_weight, acc)
    })
}

/// Θ²: fit renders to the enhancer's output for the same view.
pub fn pixelwise_stage(
    theta1: GaussianCloud,
    cfg: &StageConfig,
    ctx: &StageContext,
    enhancer: &dyn EnhancerOracle,
    seed: u64,
) -> std::result::Result<StageOutput, StageFailure> {
    let stage_seed = mix_seed(seed, PIXELWISE_TAG);
    let (w, h) = (ctx.rig.width, ctx.rig.height);
    let zero_alpha = ImageBuffer::new(w, h, 1);
    drive("pixelwise", theta1, cfg, ctx, |step, cloud, acc| {
        for b in 0..cfg.batch_views {
            let call = (step * cfg.batch_views + b) as u64;
            let cam = ctx.rig.sample(stage_seed, call);
            let prepared = PreparedView::new(cloud, &cam);
            let view = prepared.forward(ctx.background);
            let target = enhancer.enhance(&view.rgb, &EnhanceContext::with_camera(cam.clone()))?;
            let d_rgb = image_term(&view.rgb, &target, cfg.beta, acc)?;
            acc.backprop(&prepared, cloud, &cam, ctx.background, &d_rgb, &zero_alpha)?;
        }
        reference_term(cloud, ctx, cfg.ref_view_weight, acc)
    })
}
