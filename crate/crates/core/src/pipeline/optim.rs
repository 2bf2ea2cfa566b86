use serde::{Deserialize, Serialize};

use crate::gaussian::{GaussianCloud, PARAMS_PER_PRIMITIVE};
use crate::splat::GradientBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-group base rates, in parameter order: center, log_scale, rotation,
/// opacity, color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl GroupRates {
    fn per_param(&self) -> [f64; PARAMS_PER_PRIMITIVE] {
        let mut r = [0.0; PARAMS_PER_PRIMITIVE];
        r[0..3].fill(self.position);
        r[3..6].fill(self.scale);
        r[6..10].fill(self.rotation);
        r[10] = self.opacity;
        r[11..14].fill(self.color);
        r
    }
}

/// Log-linear decay from `base` at step 0 to `floor` at the last step.
pub fn decayed_rate(base: f64, floor: f64, step: usize, total: usize) -> f64 {
    if total <= 1 || base <= floor {
        return base;
    }
    let f = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
    base * (floor / base).powf(f)
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Plain descent or Adam with per-primitive moment state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    rates: [f64; PARAMS_PER_PRIMITIVE],
    floor: f64,
    total_steps: usize,
    step: usize,
    m: Vec<[f64; PARAMS_PER_PRIMITIVE]>,
    v: Vec<[f64; PARAMS_PER_PRIMITIVE]>,
    t: Vec<u32>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, rates: GroupRates, floor: f64, total_steps: usize, n: usize) -> Self {
        Optimizer {
            kind,
            rates: rates.per_param(),
            floor,
            total_steps,
            step: 0,
            m: vec![[0.0; PARAMS_PER_PRIMITIVE]; n],
            v: vec![[0.0; PARAMS_PER_PRIMITIVE]; n],
            t: vec![0; n],
        }
    }

    /// Rate multiplier for the current step: rates[j] decays toward `floor`.
    pub fn rate(&self, j: usize) -> f64 {
        decayed_rate(self.rates[j], self.floor, self.step, self.total_steps)
    }

    /// One update, then quaternion renormalization and color clamping.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBundle) {
        assert_eq!(cloud.len(), grads.len());
        assert_eq!(cloud.len(), self.m.len());
        let lr: [f64; PARAMS_PER_PRIMITIVE] = std::array::from_fn(|j| self.rate(j));
        for (i, prim) in cloud.primitives_mut().iter_mut().enumerate() {
            let g = grads.params(i);
            let mut p = prim.to_params();
            match self.kind {
                OptimizerKind::Sgd => {
                    for j in 0..PARAMS_PER_PRIMITIVE {
                        p[j] -= lr[j] * g[j];
                    }
                }
                OptimizerKind::Adam => {
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    self.t[i] += 1;
                    let t = self.t[i] as i32;
                    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..PARAMS_PER_PRIMITIVE {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                        p[j] -= lr[j] * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            *prim = crate::gaussian::GaussianPrimitive::from_params(&p);
        }
        cloud.normalize();
        self.step += 1;
    }

    /// Re-indexes per-primitive state after densification: entry k of the
    /// new cloud takes the state of `origin[k]`, or fresh state if `None`.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let pick = |src: &[[f64; PARAMS_PER_PRIMITIVE]]| -> Vec<[f64; PARAMS_PER_PRIMITIVE]> {
            origin
                .iter()
                .map(|o| o.map_or([0.0; PARAMS_PER_PRIMITIVE], |i| src[i]))
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
        self.t = origin.iter().map(|o| o.map_or(0, |i| self.t[i])).collect();
    }
}
