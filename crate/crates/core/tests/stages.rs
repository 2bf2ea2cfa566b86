use gslift::cloud_io::encode_cloud;
use gslift::losses::reference_loss;
use gslift::pipeline::*;
use gslift::priors::*;
use gslift::scenegen::{generate_scene, CameraRig, SceneSpec};
use gslift::splat::{render, Color};
use gslift::GaussianCloud;

struct Fixture {
    scene: GaussianCloud,
    rig: CameraRig,
    reference: ReferenceView,
    monitor: HeldOutSet,
}

impl Fixture {
    fn new(size: usize) -> Fixture {
        let spec = SceneSpec {
            strand_count: 8,
            gaussians_per_strand: 10,
            ..Default::default()
        };
        let g = generate_scene(&spec).unwrap();
        let rig = CameraRig::square(size);
        let camera = rig.frontal();
        let view = render(&g.cloud, &camera, bg());
        let cams = (0..4).map(|i| rig.sample(99, i)).collect();
        Fixture {
            monitor: HeldOutSet::from_scene(&g.cloud, &g.hair(), cams, bg()),
            reference: ReferenceView {
                image: view.rgb,
                mask: view.alpha,
                camera,
            },
            scene: g.cloud,
            rig,
        }
    }

    fn ctx(&self) -> StageContext<'_> {
        StageContext {
            reference: &self.reference,
            rig: &self.rig,
            background: bg(),
            scene_extent: self.rig.radius,
            monitor: Some(&self.monitor),
        }
    }

    fn synth(&self, corruption: Corruption) -> GroundTruthSynthesizer {
        GroundTruthSynthesizer::new(self.scene.clone(), self.reference.camera.clone(), corruption)
    }
}

fn bg() -> Color {
    Color::repeat(1.0)
}

fn small(iters: usize) -> [StageConfig; 3] {
    let shrink = |mut c: StageConfig| {
        c.iters = iters;
        c.batch_views = 2;
        c.checkpoint_interval = 10;
        c
    };
    [
        shrink(StageConfig::coarse()),
        shrink(StageConfig::viewwise()),
        shrink(StageConfig::pixelwise()),
    ]
}

fn init() -> GaussianCloud {
    init_cloud(300, 0.22, 5).unwrap()
}

#[test]
fn zero_iterations_return_the_input() {
    let f = Fixture::new(24);
    let [c, v, p] = small(0);
    let synth = f.synth(Corruption::none());
    let out = coarse_stage(init(), &c, &f.ctx(), &synth, &NoiseSchedule::default(), 1).unwrap();
    assert_eq!(out.cloud.primitives(), init().primitives());
    assert!(out.report.checkpoints.is_empty());
    let out = viewwise_stage(init(), &v, &f.ctx(), &synth, 1).unwrap();
    assert_eq!(out.cloud.primitives(), init().primitives());
    let out = pixelwise_stage(init(), &p, &f.ctx(), &GroundTruthEnhancer::new(f.scene.clone()), 1).unwrap();
    assert_eq!(out.cloud.primitives(), init().primitives());
}

#[test]
fn identity_enhancer_leaves_parameters_unchanged() {
    let f = Fixture::new(24);
    let [_, _, mut p] = small(12);
    p.densify_interval = 5;
    // every primitive is well above the prune threshold
    let theta = init();
    let out = pixelwise_stage(theta.clone(), &p, &f.ctx(), &IdentityEnhancer, 3).unwrap();
    assert_eq!(out.cloud.primitives(), theta.primitives());
    for c in &out.report.checkpoints {
        let l1 = c.losses.iter().find(|(k, _)| k == "l1").unwrap().1;
        assert_eq!(l1, 0.0);
    }
}

#[test]
fn coarse_stage_reduces_reference_loss() {
    let f = Fixture::new(32);
    let [c, _, _] = small(40);
    let synth = f.synth(Corruption { blur_sigma: 1.0, jitter_sigma: 0.02, seed: 4 });
    let before = reference_loss(&render(&init(), &f.reference.camera, bg()), &f.reference.image, &f.reference.mask)
        .unwrap()
        .value;
    let out = coarse_stage(init(), &c, &f.ctx(), &synth, &NoiseSchedule::default(), 2).unwrap();
    let after = reference_loss(&render(&out.cloud, &f.reference.camera, bg()), &f.reference.image, &f.reference.mask)
        .unwrap()
        .value;
    assert!(after < before, "{after} vs {before}");
    let first = out.report.checkpoints.first().unwrap().heldout.unwrap();
    let init_psnr = f.monitor.evaluate(&init()).unwrap().psnr_db;
    assert!(first.psnr_db > init_psnr);
}

#[test]
fn densify_events_chain_exactly() {
    let f = Fixture::new(32);
    let [_, mut v, _] = small(40);
    v.densify_interval = 10;
    v.densify_grad_threshold = 1e-5;
    let synth = f.synth(Corruption::none());
    let out = viewwise_stage(init(), &v, &f.ctx(), &synth, 8).unwrap();
    let events = &out.report.densify;
    assert_eq!(events.len(), 3);
    let mut count = init().len();
    for e in events {
        assert!(e.is_consistent(), "{e:?}");
        assert_eq!(e.before, count);
        count = e.after;
    }
    assert_eq!(count, out.cloud.len());
    assert!(events.iter().any(|e| e.splits + e.clones > 0));
    let steps: Vec<usize> = out.report.checkpoints.iter().map(|c| c.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn stages_are_deterministic() {
    let f = Fixture::new(24);
    let [c, v, p] = small(6);
    let synth = f.synth(Corruption { blur_sigma: 1.0, jitter_sigma: 0.05, seed: 3 });
    let enh = GroundTruthEnhancer::new(f.scene.clone());
    let run = || {
        let a = coarse_stage(init(), &c, &f.ctx(), &synth, &NoiseSchedule::default(), 11).unwrap();
        let b = viewwise_stage(a.cloud, &v, &f.ctx(), &synth, 11).unwrap();
        let d = pixelwise_stage(b.cloud, &p, &f.ctx(), &enh, 11).unwrap();
        (encode_cloud(&d.cloud), a.report.to_text() + &b.report.to_text() + &d.report.to_text())
    };
    assert_eq!(run(), run());
    let other = coarse_stage(init(), &c, &f.ctx(), &synth, &NoiseSchedule::default(), 12).unwrap();
    let same = coarse_stage(init(), &c, &f.ctx(), &synth, &NoiseSchedule::default(), 11).unwrap();
    assert_ne!(encode_cloud(&other.cloud), encode_cloud(&same.cloud));
}

#[test]
fn quaternions_are_unit_after_every_stage() {
    let f = Fixture::new(24);
    let [c, _, _] = small(5);
    let out = coarse_stage(init(), &c, &f.ctx(), &f.synth(Corruption::none()), &NoiseSchedule::default(), 1).unwrap();
    for p in out.cloud.primitives() {
        assert!((p.rotation.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn blind_enhancer_keeps_renders_in_range() {
    let f = Fixture::new(24);
    let [_, _, p] = small(10);
    let out = pixelwise_stage(init(), &p, &f.ctx(), &BlindEnhancer::default(), 4).unwrap();
    for i in 0..4 {
        let img = render(&out.cloud, &f.rig.sample(5, i), bg()).rgb;
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn viewwise_with_exact_targets_does_not_regress() {
    let f = Fixture::new(32);
    let [c, mut v, _] = small(20);
    let synth = f.synth(Corruption::none());
    let theta0 = coarse_stage(init(), &c, &f.ctx(), &f.synth(Corruption { blur_sigma: 1.0, jitter_sigma: 0.02, seed: 2 }), &NoiseSchedule::default(), 1)
        .unwrap()
        .cloud;
    v.iters = 60;
    v.checkpoint_interval = 20;
    let out = viewwise_stage_with(theta0, &v, &f.ctx(), &synth, 6, |_| 1.0).unwrap();
    let psnr: Vec<f64> = out.report.checkpoints.iter().map(|c| c.heldout.unwrap().psnr_db).collect();
    assert_eq!(psnr.len(), 3);
    for w in psnr.windows(2) {
        assert!(w[1] >= w[0] - 0.3, "{psnr:?}");
    }
}

#[test]
fn failing_oracle_aborts_with_partial_report() {
    struct Flaky;
    impl EnhancerOracle for Flaky {
        fn enhance(&self, _: &gslift::ImageBuffer, _: &EnhanceContext) -> gslift::Result<gslift::ImageBuffer> {
            Err(gslift::Error::Oracle("unavailable".into()))
        }
    }
    let f = Fixture::new(16);
    let [_, _, p] = small(5);
    let err = pixelwise_stage(init(), &p, &f.ctx(), &Flaky, 1).err().unwrap();
    assert_eq!(err.error.category(), "oracle");
    assert!(err.report.checkpoints.is_empty());
    assert_eq!(err.report.stage, "pixelwise");
}
