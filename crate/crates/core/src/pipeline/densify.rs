use serde::Serialize;

use crate::gaussian::{GaussianCloud, GaussianPrimitive};
use crate::math::{logit, quaternion_to_matrix, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyConfig {
    /// Mean 2D positional gradient (NDC units) above which a primitive is
    /// split or cloned.
    pub grad_threshold: f64,
    /// Largest scale above which a candidate is split rather than cloned.
    pub split_scale: f64,
    pub prune_opacity: f64,
    pub max_primitives: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DensifyEvent {
    pub step: usize,
    pub before: usize,
    pub splits: usize,
    pub clones: usize,
    pub pruned: usize,
    pub after: usize,
}

impl DensifyEvent {
    pub fn is_consistent(&self) -> bool {
        self.before + self.splits + self.clones == self.after + self.pruned
    }
}

const SPLIT_SHRINK: f64 = 1.6;

fn split(p: &GaussianPrimitive) -> [GaussianPrimitive; 2] {
    let scale = p.scale();
    let axis = scale.imax();
    let dir = quaternion_to_matrix(&p.unit_rotation()).column(axis) * (0.5 * scale[axis]);
    let child = |sign: f64| GaussianPrimitive {
        center: p.center + dir * sign,
        log_scale: p.log_scale.add_scalar(-SPLIT_SHRINK.ln()),
        ..p.clone()
    };
    [child(1.0), child(-1.0)]
}

/// Opacity each of two overlapping copies needs to composite back to `a`.
fn shared_opacity_logit(p: &GaussianPrimitive) -> f64 {
    let a = 1.0 - (1.0 - p.opacity()).sqrt();
    if a > 0.0 && a < 1.0 {
        logit(a)
    } else {
        p.opacity_logit
    }
}

fn clone_toward_descent(p: &GaussianPrimitive, center_grad: &nalgebra::Vector3<f64>) -> GaussianPrimitive {
    let step = p.scale().min();
    let n = center_grad.norm();
    let offset = if n > 0.0 { -center_grad / n * step } else { center_grad * 0.0 };
    GaussianPrimitive {
        center: p.center + offset,
        opacity_logit: shared_opacity_logit(p),
        ..p.clone()
    }
}

/// Splits or clones high-gradient primitives, then prunes near-transparent
/// ones and resets the gradient accumulators. Returns the event and, for
/// every primitive of the new cloud, the index it came from in the old one
/// (`None` for newly created primitives).
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    cfg: &DensifyConfig,
    step: usize,
) -> (DensifyEvent, Vec<Option<usize>>) {
    let before = cloud.len();
    let grads = cloud.mean_positional_grad();
    let mut candidates: Vec<usize> = (0..before).filter(|&i| grads[i] > cfg.grad_threshold).collect();
    candidates.sort_by(|&a, &b| grads[b].total_cmp(&grads[a]).then(a.cmp(&b)));
    candidates.truncate(cfg.max_primitives.saturating_sub(before));
    candidates.sort_unstable();

    let prims = cloud.primitives();
    let center_grads = cloud.center_grad_accum();
    let mut is_split = vec![false; before];
    let mut is_cloned = vec![false; before];
    let (mut splits, mut clones) = (0, 0);
    let mut created = Vec::new();
    let mut children = Vec::new();
    for &i in &candidates {
        let p = &prims[i];
        if p.scale().max() > cfg.split_scale {
            is_split[i] = true;
            children.extend(split(p));
            splits += 1;
        } else {
            created.push(clone_toward_descent(p, &center_grads[i]));
            is_cloned[i] = true;
            clones += 1;
        }
    }

    let mut next = Vec::with_capacity(before + created.len() + children.len());
    let mut origin = Vec::with_capacity(next.capacity());
    for (i, p) in prims.iter().enumerate() {
        if is_split[i] {
            continue;
        }
        let mut kept = p.clone();
        if is_cloned[i] {
            kept.opacity_logit = shared_opacity_logit(p);
        }
        next.push(kept);
        origin.push(Some(i));
    }
    for p in created.into_iter().chain(children) {
        next.push(p);
        origin.push(None);
    }

    let keep: Vec<bool> = next.iter().map(|p| sigmoid(p.opacity_logit) >= cfg.prune_opacity).collect();
    let pruned = keep.iter().filter(|&&k| !k).count();
    let origin: Vec<Option<usize>> = origin.into_iter().zip(&keep).filter_map(|(o, &k)| k.then_some(o)).collect();
    let mut out = GaussianCloud::new(next);
    out.retain_indices(&keep);
    *cloud = out;
    (
        DensifyEvent {
            step,
            before,
            splits,
            clones,
            pruned,
            after: cloud.len(),
        },
        origin,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use nalgebra::Vector3;

    fn cfg() -> DensifyConfig {
        DensifyConfig { grad_threshold: 0.01, split_scale: 0.02, prune_opacity: 0.01, max_primitives: 1000 }
    }

    fn cloud(n: usize, scale: f64, opacity: f64) -> GaussianCloud {
        (0..n)
            .map(|i| GaussianPrimitive {
                center: Vector3::new(i as f64 * 0.1, 0.0, 0.0),
                log_scale: Vector3::new(scale.ln(), (scale * 0.5).ln(), (scale * 0.25).ln()),
                opacity_logit: logit(opacity),
                ..Default::default()
            })
            .collect()
    }

    fn feed(c: &mut GaussianCloud, g: &[f64]) {
        let n = c.len();
        let centers = vec![Vector3::new(1.0, 0.0, 0.0); n];
        c.accumulate_gradient_stats(g, &centers, &vec![true; n]);
    }

    #[test]
    fn quiet_cloud_is_unchanged() {
        let mut c = cloud(5, 0.01, 0.5);
        feed(&mut c, &[0.001; 5]);
        let prims = c.primitives().to_vec();
        let (ev, origin) = densify_and_prune(&mut c, &cfg(), 100);
        assert_eq!(c.primitives(), &prims[..]);
        assert_eq!((ev.splits, ev.clones, ev.pruned), (0, 0, 0));
        assert_eq!(origin, (0..5).map(Some).collect::<Vec<_>>());
        assert!(c.grad_accum_count().iter().all(|&n| n == 0));
    }

    #[test]
    fn one_hot_primitive_adds_exactly_one() {
        for scale in [0.005, 0.05] {
            let mut c = cloud(5, scale, 0.5);
            feed(&mut c, &[0.0, 0.0, 0.5, 0.0, 0.0]);
            let (ev, origin) = densify_and_prune(&mut c, &cfg(), 100);
            assert_eq!(c.len(), 6);
            assert!(ev.is_consistent());
            assert_eq!(origin.len(), 6);
            assert_eq!(ev.splits + ev.clones, 1);
            assert_eq!(ev.splits == 1, scale > 0.02);
        }
    }

    #[test]
    fn split_children_straddle_parent() {
        let mut c = cloud(1, 0.05, 0.5);
        let parent = c.primitives()[0].clone();
        feed(&mut c, &[1.0]);
        densify_and_prune(&mut c, &cfg(), 0);
        let kids = c.primitives();
        assert_eq!(kids.len(), 2);
        let mid = (kids[0].center + kids[1].center) / 2.0;
        assert!((mid - parent.center).norm() < 1e-15);
        assert!(((kids[0].center - kids[1].center).norm() - 0.05).abs() < 1e-12);
        assert!((kids[0].scale().x - 0.05 / 1.6).abs() < 1e-12);
    }

    #[test]
    fn clone_moves_against_gradient() {
        let mut c = cloud(1, 0.004, 0.5);
        feed(&mut c, &[1.0]);
        densify_and_prune(&mut c, &cfg(), 0);
        assert!(c.primitives()[1].center.x < c.primitives()[0].center.x);
    }

    #[test]
    fn clone_pair_composites_to_parent_opacity() {
        for a in [0.02, 0.5, 0.9, 0.999] {
            let mut c = cloud(1, 0.004, a);
            feed(&mut c, &[1.0]);
            densify_and_prune(&mut c, &cfg(), 0);
            let (p, q) = (c.primitives()[0].opacity(), c.primitives()[1].opacity());
            assert_eq!(p, q);
            assert!((1.0 - (1.0 - p) * (1.0 - q) - a).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn transparent_primitives_are_pruned() {
        let mut c = cloud(4, 0.01, 0.5);
        c.extend(cloud(3, 0.01, 0.001).into_primitives());
        let (ev, origin) = densify_and_prune(&mut c, &cfg(), 0);
        assert_eq!((ev.before, ev.pruned, ev.after), (7, 3, 4));
        assert_eq!(origin, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn respects_primitive_cap() {
        let mut c = cloud(10, 0.005, 0.5);
        feed(&mut c, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        let cfg = DensifyConfig { max_primitives: 13, ..cfg() };
        let (ev, _) = densify_and_prune(&mut c, &cfg, 0);
        assert_eq!((ev.clones, ev.after), (3, 13));
    }
}
