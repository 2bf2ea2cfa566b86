use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Linear-beta diffusion schedule. `alpha_bar[t]` is the cumulative signal
/// retention after `t` steps; `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::Range("schedule needs at least one timestep".into()));
        }
        if !(0.0..1.0).contains(&beta_start) || !(beta_start..1.0).contains(&beta_end) {
            return Err(Error::Range(format!(
                "betas must satisfy 0 <= start <= end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=timesteps {
            let frac = if timesteps == 1 {
                0.0
            } else {
                (s - 1) as f64 / (timesteps - 1) as f64
            };
            acc *= 1.0 - (beta_start + (beta_end - beta_start) * frac);
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule {
            timesteps,
            beta_start,
            beta_end,
            alpha_bar,
        })
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::Range(format!("timestep {t} outside [0, {}]", self.timesteps)))
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Timestep range used for score distillation, [0.02T, 0.98T].
    pub fn sds_range(&self) -> (usize, usize) {
        let lo = ((0.02 * self.timesteps as f64).ceil() as usize).max(1);
        let hi = ((0.98 * self.timesteps as f64).floor() as usize).max(lo);
        (lo, hi)
    }
}

/// √ᾱ_t · x0 + √(1-ᾱ_t) · eps, channelwise.
pub fn forward_diffuse(
    x0: &ImageBuffer,
    t: usize,
    eps: &ImageBuffer,
    schedule: &NoiseSchedule,
) -> Result<ImageBuffer> {
    if t == 0 || t > schedule.timesteps {
        return Err(Error::Range(format!(
            "timestep {t} outside [1, {}]",
            schedule.timesteps
        )));
    }
    x0.ensure_same_shape(eps, "noise")?;
    let ab = schedule.alpha_bar(t)?;
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| s * x + n * e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(8, 8, 3, |_, _, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn alpha_bar_is_strictly_decreasing() {
        let s = NoiseSchedule::default();
        let ab = s.alpha_bars();
        assert_eq!(ab[0], 1.0);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab.iter().all(|&a| a > 0.0 && a <= 1.0));
        assert_eq!(s.sds_range(), (20, 980));
    }

    #[test]
    fn unit_alpha_bar_returns_input() {
        let s = NoiseSchedule::linear(10, 0.0, 0.1).unwrap();
        assert_eq!(s.alpha_bar(1).unwrap(), 1.0);
        let x0 = noise(1);
        assert_eq!(forward_diffuse(&x0, 1, &noise(2), &s).unwrap(), x0);
    }

    #[test]
    fn zero_noise_scales_input() {
        let s = NoiseSchedule::default();
        let x0 = noise(3);
        let out = forward_diffuse(&x0, 400, &ImageBuffer::new(8, 8, 3), &s).unwrap();
        let k = s.alpha_bar(400).unwrap().sqrt();
        assert_eq!(out, x0.map(|v| k * v));
    }

    #[test]
    fn algebraic_inversion_recovers_input() {
        let s = NoiseSchedule::default();
        let (x0, eps) = (noise(4), noise(5));
        for t in [1, 250, 999] {
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let back = xt.zip_map(&eps, |x, e| (x - (1.0 - ab).sqrt() * e) / ab.sqrt());
            let err = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "t={t} err={err}");
        }
    }

    #[test]
    fn rejects_out_of_range_timestep() {
        let s = NoiseSchedule::default();
        let x = noise(1);
        assert!(forward_diffuse(&x, 0, &x, &s).is_err());
        assert!(forward_diffuse(&x, 1001, &x, &s).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn larger_t_moves_further_from_x0_in_expectation() {
        let s = NoiseSchedule::default();
        let x0 = ImageBuffer::filled(8, 8, 3, 0.7);
        let dist = |t: usize| {
            (0..64)
                .map(|k| {
                    let xt = forward_diffuse(&x0, t, &noise(100 + k), &s).unwrap();
                    xt.data().iter().zip(x0.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / 64.0
        };
        let ds: Vec<f64> = [50, 200, 500, 900].iter().map(|&t| dist(t)).collect();
        assert!(ds.windows(2).all(|w| w[1] > w[0]), "{ds:?}");
    }
}
