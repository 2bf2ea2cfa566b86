//! Command implementations behind the `gslift` binary, plus the run
//! configuration they share.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud_io::{load_cloud, save_cloud};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::image::ImageBuffer;
use crate::losses::{masked_metrics, Metrics};
use crate::pipeline::{
    align_landmarks, coarse_stage, compose_aligned_image, gamma_at, init_cloud, load_landmarks,
    pixelwise_stage, viewwise_stage, viewwise_stage_with, Alignment, HeldOutSet, ReferenceView,
    StageConfig, StageContext, StageFailure, StageOutput, StageReport,
};
use crate::priors::{
    BlindEnhancer, BlindSynthesizer, Corruption, EnhancerOracle, GroundTruthEnhancer,
    GroundTruthSynthesizer, NoiseSchedule, SynthesizerOracle,
};
use crate::scenegen::{
    generate_scene, quantize8, write_scene_dataset, CameraRig, Manifest, SceneSpec, MANIFEST_FILE,
};
use crate::splat::{render, Color};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gt,
    Blind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub blur_sigma: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
    /// Ground-truth scene cloud; required when `kind = "gt"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    /// Hair-only cloud for held-out monitoring; optional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hair: Option<PathBuf>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kind: PriorKind::Gt,
            blur_sigma: 1.5,
            jitter_sigma: 0.03,
            seed: 1,
            scene: None,
            hair: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Square image size for generated datasets and ablations.
    pub resolution: usize,
    pub views: usize,
    pub heldout_views: usize,
    pub heldout_seed: u64,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            resolution: 512,
            views: 180,
            heldout_views: 20,
            heldout_seed: 0xE7A1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub count: usize,
    pub half_extent: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            count: 5000,
            half_extent: 0.3,
        }
    }
}

/// Everything a command needs. Files only list the keys they change; the
/// rest keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub coarse: StageConfig,
    pub viewwise: StageConfig,
    pub pixelwise: StageConfig,
    pub prior: PriorConfig,
    pub scene: SceneSpec,
    pub io: IoConfig,
    pub init: InitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            coarse: StageConfig::coarse(),
            viewwise: StageConfig::viewwise(),
            pixelwise: StageConfig::pixelwise(),
            prior: PriorConfig::default(),
            scene: SceneSpec::default(),
            io: IoConfig::default(),
            init: InitConfig::default(),
        }
    }
}

/// The desk-scale calibration profile: 128² images and an init cloud sized
/// for them.
pub const CALIBRATION_TOML: &str = include_str!("../configs/calibration.toml");

impl RunConfig {
    /// Defaults overlaid with `text` (TOML), then `overrides` of the form
    /// `section.key=value`.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut base = toml::Value::try_from(RunConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(one_line(&e)))?;
        merge(&mut base, toml::Value::Table(user));
        for o in overrides {
            apply_override(&mut base, o)?;
        }
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(one_line(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        RunConfig::from_toml(&text, overrides)
    }

    pub fn calibration() -> RunConfig {
        RunConfig::from_toml(CALIBRATION_TOML, &[]).expect("bundled calibration config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("coarse", &self.coarse), ("viewwise", &self.viewwise), ("pixelwise", &self.pixelwise)] {
            s.validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        self.scene.validate()?;
        if self.io.resolution < 8 {
            return Err(Error::Config("io.resolution must be at least 8".into()));
        }
        if self.init.count == 0 || !(self.init.half_extent > 0.0) {
            return Err(Error::Config("init.count and init.half_extent must be positive".into()));
        }
        if !(self.prior.blur_sigma >= 0.0 && self.prior.jitter_sigma >= 0.0) {
            return Err(Error::Config("prior corruption must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn corruption(&self) -> Corruption {
        Corruption {
            blur_sigma: self.prior.blur_sigma,
            jitter_sigma: self.prior.jitter_sigma,
            seed: self.prior.seed,
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Coarse => &self.coarse,
            Stage::Viewwise => &self.viewwise,
            Stage::Pixelwise => &self.pixelwise,
        }
    }
}

fn one_line(e: &dyn std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(base: &mut toml::Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {item:?}: expected section.key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set {item:?}: empty key segment")));
    }
    // values are TOML literals; bare words fall back to strings
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut table = toml::Table::new();
    let mut cursor = &mut table;
    for seg in &path[..path.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("fresh table");
    }
    cursor.insert(path[path.len() - 1].to_string(), value);
    merge(base, toml::Value::Table(table));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Coarse,
    Viewwise,
    Pixelwise,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Coarse, Stage::Viewwise, Stage::Pixelwise];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Viewwise => "viewwise",
            Stage::Pixelwise => "pixelwise",
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("theta{}.gs", self as usize)
    }

    pub fn report_file(self) -> String {
        format!("report_{}.txt", self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (coarse, viewwise, pixelwise)"))
    }
}

/// Background used by every render in the pipeline.
pub fn background() -> Color {
    Color::repeat(1.0)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a synthetic dataset for `cfg.scene` with `cfg.io.views` views.
pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let scene = generate_scene(&cfg.scene)?;
    let rig = CameraRig::square(cfg.io.resolution);
    create_dir(out_dir)?;
    write_scene_dataset(&cfg.scene, &scene, &rig, cfg.io.views, cfg.seed, out_dir, background())?;
    Ok(out_dir.join(MANIFEST_FILE))
}

#[derive(Clone, Debug)]
pub struct ReconstructInputs {
    /// Image holding the hair layer.
    pub image: PathBuf,
    pub landmarks_hair: PathBuf,
    pub landmarks_body: PathBuf,
    /// Foreground mask of `image`.
    pub mask: PathBuf,
    /// Body image the hair is composited onto; `image` itself when absent.
    pub body: Option<PathBuf>,
    /// Foreground mask of `body`; the whole frame when absent.
    pub body_mask: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ReconstructResult {
    pub alignment: Alignment,
    pub reports: Vec<StageReport>,
    pub checkpoints: Vec<PathBuf>,
    pub cloud: GaussianCloud,
}

/// Oracles chosen by the `[prior]` section.
pub struct Oracles {
    pub synthesizer: Box<dyn SynthesizerOracle>,
    pub enhancer: Box<dyn EnhancerOracle>,
    pub monitor: Option<HeldOutSet>,
}

impl Oracles {
    pub fn from_config(cfg: &RunConfig, rig: &CameraRig) -> Result<Oracles> {
        match cfg.prior.kind {
            PriorKind::Blind => Ok(Oracles {
                synthesizer: Box::new(BlindSynthesizer::default()),
                enhancer: Box::new(BlindEnhancer::default()),
                monitor: None,
            }),
            PriorKind::Gt => {
                let path = cfg.prior.scene.as_ref().ok_or_else(|| {
                    Error::Oracle("gt prior requested without prior.scene".into())
                })?;
                let scene = load_cloud(path)?;
                let monitor = match &cfg.prior.hair {
                    Some(h) => Some(heldout(cfg, rig, &scene, &load_cloud(h)?)),
                    None => None,
                };
                Ok(Oracles {
                    synthesizer: Box::new(GroundTruthSynthesizer::new(
                        scene.clone(),
                        rig.frontal(),
                        cfg.corruption(),
                    )),
                    enhancer: Box::new(GroundTruthEnhancer::new(scene)),
                    monitor,
                })
            }
        }
    }
}

/// Held-out hemisphere views of `scene` used for monitoring and scoring.
pub fn heldout(cfg: &RunConfig, rig: &CameraRig, scene: &GaussianCloud, hair: &GaussianCloud) -> HeldOutSet {
    let cameras = (0..cfg.io.heldout_views as u64)
        .map(|i| rig.sample(cfg.io.heldout_seed, i))
        .collect();
    HeldOutSet::from_scene(scene, hair, cameras, background())
}

/// Loads, aligns and composites the input into the reference view.
pub fn prepare_reference(inputs: &ReconstructInputs) -> Result<(ReferenceView, Alignment)> {
    let hair = ImageBuffer::load_png_rgb(&inputs.image)?;
    let mask = ImageBuffer::load_png_gray(&inputs.mask)?;
    let lh = load_landmarks(&inputs.landmarks_hair)?;
    let lb = load_landmarks(&inputs.landmarks_body)?;
    let alignment = align_landmarks(&lh, &lb)?;
    let (body, body_mask) = match &inputs.body {
        Some(b) => {
            let body = ImageBuffer::load_png_rgb(b)?;
            let m = match &inputs.body_mask {
                Some(p) => ImageBuffer::load_png_gray(p)?,
                None => ImageBuffer::filled(body.width(), body.height(), 1, 1.0),
            };
            (body, m)
        }
        None => (hair.clone(), mask.clone()),
    };
    let (image, warped) = compose_aligned_image(&hair, &mask, &body, &alignment.transform)?;
    body_mask.ensure_same_shape(&warped, "body mask")?;
    let mask = warped.zip_map(&body_mask, f64::max);
    if image.width() != image.height() {
        return Err(Error::Dimension(format!(
            "input must be square, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let camera = CameraRig::square(image.width()).frontal();
    Ok((ReferenceView { image, mask, camera }, alignment))
}

/// Renders the 7-view turntable strip at elevation 0.
pub fn turntable(cloud: &GaussianCloud, rig: &CameraRig) -> Result<ImageBuffer> {
    let views: Vec<ImageBuffer> = (-3..=3)
        .map(|k| render(cloud, &rig.at(k as f64 * PI / 4.0, 0.0), background()).rgb)
        .collect();
    ImageBuffer::hstack(&views)
}

/// align → compose → coarse → view-wise → pixel-wise, writing each
/// checkpoint and report into `out_dir`.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    inputs: &ReconstructInputs,
    out_dir: &Path,
    stop_after: Option<Stage>,
) -> Result<ReconstructResult> {
    let (reference, alignment) = prepare_reference(inputs)?;
    let rig = CameraRig::square(reference.image.width());
    let oracles = Oracles::from_config(cfg, &rig)?;
    create_dir(out_dir)?;
    write_file(
        &out_dir.join("alignment.txt"),
        format!(
            "tx={} ty={} rotation={} scale={} rmse={}\n",
            alignment.transform.translation.x,
            alignment.transform.translation.y,
            alignment.transform.rotation,
            alignment.transform.scale,
            alignment.rmse
        ),
    )?;
    reference.image.save_png(out_dir.join("reference.png"))?;

    let ctx = StageContext {
        reference: &reference,
        rig: &rig,
        background: background(),
        scene_extent: rig.radius,
        monitor: oracles.monitor.as_ref(),
    };
    let last = stop_after.unwrap_or(Stage::Pixelwise);
    let schedule = NoiseSchedule::default();
    let mut cloud = init_cloud(cfg.init.count, cfg.init.half_extent, cfg.seed)?;
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
        let sc = cfg.stage(stage);
        let out = match stage {
            Stage::Coarse => coarse_stage(cloud, sc, &ctx, oracles.synthesizer.as_ref(), &schedule, cfg.seed),
            Stage::Viewwise => viewwise_stage(cloud, sc, &ctx, oracles.synthesizer.as_ref(), cfg.seed),
            Stage::Pixelwise => pixelwise_stage(cloud, sc, &ctx, oracles.enhancer.as_ref(), cfg.seed),
        };
        let StageOutput { cloud: next, report } = finish_stage(out, stage, out_dir)?;
        // continue from exactly what the checkpoint file holds
        let next = next.quantized();
        let path = out_dir.join(stage.checkpoint_file());
        save_cloud(&next, &path)?;
        checkpoints.push(path);
        reports.push(report);
        cloud = next;
    }
    turntable(&cloud, &rig)?.save_png(out_dir.join("turntable.png"))?;
    Ok(ReconstructResult {
        alignment,
        reports,
        checkpoints,
        cloud,
    })
}

/// Writes the stage report, partial on failure.
fn finish_stage(
    out: std::result::Result<StageOutput, StageFailure>,
    stage: Stage,
    out_dir: &Path,
) -> Result<StageOutput> {
    let path = out_dir.join(stage.report_file());
    match out {
        Ok(o) => {
            write_file(&path, o.report.to_text())?;
            Ok(o)
        }
        Err(f) => {
            write_file(&path, f.report.to_text())?;
            Err(f.error)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub view: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<EvalRow>,
    pub mean: Metrics,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.views {
            let _ = writeln!(s, "view={} {}", r.view, r.metrics.to_kv());
        }
        let _ = writeln!(s, "mean {}", self.mean.to_kv());
        s
    }
}

/// Masked metrics of `cloud` against every manifest view. The hair mask is
/// the thresholded alpha of the hair cloud (`hair.gs` next to the manifest
/// by default). Renders are quantized to 8 bits like the stored images.
pub fn cmd_eval(cloud_path: &Path, manifest_path: &Path, hair_path: Option<&Path>) -> Result<EvalReport> {
    let cloud = load_cloud(cloud_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let hair_path = hair_path.map(Path::to_path_buf).unwrap_or_else(|| manifest.root.join("hair.gs"));
    let hair = load_cloud(&hair_path)?;
    let mut views = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let truth = ImageBuffer::load_png_rgb(manifest.image_path(e))?;
        let cam = crate::camera::Camera::load(manifest.camera_path(e))?;
        if truth.width() != cam.image_width || truth.height() != cam.image_height {
            return Err(Error::Dimension(format!(
                "view {}: image {}x{} but camera {}x{}",
                e.index,
                truth.width(),
                truth.height(),
                cam.image_width,
                cam.image_height
            )));
        }
        let img = quantize8(&render(&cloud, &cam, background()).rgb);
        let mask = render(&hair, &cam, background()).alpha;
        views.push(EvalRow {
            view: e.index,
            metrics: masked_metrics(&img, &truth, Some(&mask))?,
        });
    }
    if views.is_empty() {
        return Err(Error::Parse {
            path: manifest_path.to_path_buf(),
            detail: "manifest lists no views".into(),
        });
    }
    let mean = Metrics::mean(&views.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport { views, mean })
}

/// The calibration setup shared by ablations: generated scene, reference
/// render at `io.resolution`, held-out views, and ground-truth oracles.
pub struct CalibrationScene {
    pub scene: GaussianCloud,
    pub hair: GaussianCloud,
    pub rig: CameraRig,
    pub reference: ReferenceView,
    pub monitor: HeldOutSet,
    pub synthesizer: GroundTruthSynthesizer,
    pub enhancer: GroundTruthEnhancer,
}

impl CalibrationScene {
    pub fn new(cfg: &RunConfig) -> Result<CalibrationScene> {
        let generated = generate_scene(&cfg.scene)?;
        let rig = CameraRig::square(cfg.io.resolution);
        let camera = rig.frontal();
        let view = render(&generated.cloud, &camera, background());
        let reference = ReferenceView {
            image: view.rgb,
            mask: view.alpha,
            camera: camera.clone(),
        };
        let hair = generated.hair();
        let monitor = heldout(cfg, &rig, &generated.cloud, &hair);
        Ok(CalibrationScene {
            synthesizer: GroundTruthSynthesizer::new(generated.cloud.clone(), camera, cfg.corruption()),
            enhancer: GroundTruthEnhancer::new(generated.cloud.clone()),
            scene: generated.cloud,
            hair,
            rig,
            reference,
            monitor,
        })
    }

    pub fn context(&self) -> StageContext<'_> {
        StageContext {
            reference: &self.reference,
            rig: &self.rig,
            background: background(),
            scene_extent: self.rig.radius,
            monitor: Some(&self.monitor),
        }
    }
}

/// Metrics at the three γ snapshots of one view-wise run.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaRun {
    pub label: String,
    pub steps: Vec<usize>,
    pub gammas: Vec<f64>,
    pub metrics: Vec<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub scheduled: GammaRun,
    pub fixed: Option<GammaRun>,
}

impl GammaRun {
    fn to_text(&self) -> String {
        let mut s = format!("# {}\n{:<12}", self.label, "metric");
        for g in &self.gammas {
            let _ = write!(s, "{:>14}", format!("γ={g}"));
        }
        s.push('\n');
        let mut row = |name: &str, f: &dyn Fn(usize) -> String| {
            let _ = write!(s, "{name:<12}");
            for i in 0..self.steps.len() {
                let _ = write!(s, "{:>14}", f(i));
            }
            s.push('\n');
        };
        row("step", &|i| self.steps[i].to_string());
        row("l1", &|i| format!("{:.6}", self.metrics[i].l1));
        row("psnr_db", &|i| format!("{:.4}", self.metrics[i].psnr_db));
        row("perceptual", &|i| format!("{:.6}", self.metrics[i].perceptual));
        s
    }
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = self.scheduled.to_text();
        if let Some(f) = &self.fixed {
            s.push('\n');
            s.push_str(&f.to_text());
        }
        s
    }
}

/// View-wise stage on the calibration scene with snapshots after each of
/// the first three γ periods. `theta0` skips the coarse stage; otherwise it
/// runs and `theta0.gs` is written. `fixed_gamma` adds a control run at a
/// constant γ.
pub fn cmd_ablate_gamma(
    cfg: &RunConfig,
    out_dir: &Path,
    theta0: Option<&Path>,
    fixed_gamma: Option<f64>,
) -> Result<AblationTable> {
    let period = cfg.viewwise.gamma_period;
    let mut vw = cfg.viewwise.clone();
    vw.iters = 3 * period;
    vw.checkpoint_interval = period;
    if let Some(g) = fixed_gamma {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::Config(format!("fixed gamma {g} outside (0, 1]")));
        }
    }
    let calib = CalibrationScene::new(cfg)?;
    let ctx = calib.context();
    create_dir(out_dir)?;
    let start = match theta0 {
        Some(p) => load_cloud(p)?,
        None => {
            let init = init_cloud(cfg.init.count, cfg.init.half_extent, cfg.seed)?;
            let out = coarse_stage(init, &cfg.coarse, &ctx, &calib.synthesizer, &NoiseSchedule::default(), cfg.seed);
            let theta0 = finish_stage(out, Stage::Coarse, out_dir)?.cloud.quantized();
            save_cloud(&theta0, out_dir.join(Stage::Coarse.checkpoint_file()))?;
            theta0
        }
    };
    let steps: Vec<usize> = (1..=3).map(|k| k * period).collect();
    let snapshot = |report: &StageReport, label: String, gammas: Vec<f64>| -> Result<GammaRun> {
        let metrics = steps
            .iter()
            .map(|&s| {
                report
                    .checkpoint_at(s)
                    .and_then(|c| c.heldout)
                    .ok_or_else(|| Error::Oracle(format!("no held-out metrics at step {s}")))
            })
            .collect::<Result<_>>()?;
        Ok(GammaRun {
            label,
            steps: steps.clone(),
            gammas,
            metrics,
        })
    };

    let out = viewwise_stage(start.clone(), &vw, &ctx, &calib.synthesizer, cfg.seed)?;
    let gammas = steps.iter().map(|&s| gamma_at(s - period, &vw)).collect();
    let scheduled = snapshot(&out.report, "scheduled".into(), gammas)?;
    let fixed = match fixed_gamma {
        Some(g) => {
            let out = viewwise_stage_with(start, &vw, &ctx, &calib.synthesizer, cfg.seed, |_| g)?;
            Some(snapshot(&out.report, format!("fixed γ={g}"), vec![g; 3])?)
        }
        None => None,
    };
    let table = AblationTable { scheduled, fixed };
    write_file(&out_dir.join("ablate_gamma.txt"), table.to_text())?;
    Ok(table)
}
