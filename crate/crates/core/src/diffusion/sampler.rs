use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::unet::{Cache, Denoiser};
use super::{DiffusionError, NoiseSchedule};
use crate::map::LocalGrid;
use crate::merge::PredictionGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    /// Add posterior noise between steps; off gives a deterministic mean path.
    pub stochastic: bool,
    pub seed: u64,
    /// Values above this are occupied after the last step.
    pub threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            inference_steps: 30,
            stochastic: true,
            seed: 0,
            threshold: 0.0,
        }
    }
}

/// Evenly spaced descending timesteps from `train_steps - 1` to 0.
pub fn timesteps(train_steps: usize, inference_steps: usize) -> Vec<usize> {
    if inference_steps <= 1 {
        return vec![train_steps - 1];
    }
    let last = (train_steps - 1) as f64;
    (0..inference_steps)
        .rev()
        .map(|i| (last * i as f64 / (inference_steps - 1) as f64).round() as usize)
        .collect()
}

/// Completes the unknown voxels of `crop` by inpainted reverse diffusion.
///
/// Known voxels are replaced by a forward-noised copy of their values before
/// each step and by their exact values in the returned grid.
pub fn sample_inpaint(
    net: &Denoiser,
    schedule: &NoiseSchedule,
    crop: &LocalGrid,
    cfg: &SamplerConfig,
) -> Result<PredictionGrid, DiffusionError> {
    let dim = net.arch().dim;
    if crop.dim() != dim {
        return Err(DiffusionError::Geometry { expected: dim, got: crop.dim() });
    }
    if cfg.inference_steps == 0 || cfg.inference_steps > schedule.steps() {
        return Err(DiffusionError::Config(format!(
            "inference_steps must be in 1..={}",
            schedule.steps()
        )));
    }
    let n = crop.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let mut x = normal(&mut rng);
    let mut cache = Cache::default();
    let steps = timesteps(schedule.steps(), cfg.inference_steps);

    for (i, &t) in steps.iter().enumerate() {
        let noise = normal(&mut rng);
        let known = schedule.forward_noise(&crop.values, t, &noise)?;
        for v in 0..n {
            if crop.known_mask[v] {
                x[v] = known[v];
            }
        }

        net.forward(&x, t, &mut cache);
        let eps = cache.output();
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite { seed: cfg.seed, step: i, t });
        }
        let ab = schedule.alpha_bars[t];
        let ab_prev = steps.get(i + 1).map_or(1.0, |&p| schedule.alpha_bars[p]);
        let beta = 1.0 - ab / ab_prev;
        let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        let z = if cfg.stochastic && i + 1 < steps.len() { Some(normal(&mut rng)) } else { None };

        for v in 0..n {
            let x0 = ((x[v] - s1a * eps[v]) / sa).clamp(-1.0, 1.0);
            let mut next = c0 * x0 + ct * x[v];
            if let Some(z) = &z {
                next += sigma * z[v];
            }
            x[v] = next;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite { seed: cfg.seed, step: i, t });
        }
    }

    let occupied = (0..n)
        .map(|v| {
            if crop.known_mask[v] {
                crop.values[v] > 0.0
            } else {
                x[v] > cfg.threshold
            }
        })
        .collect();
    Ok(PredictionGrid::new(crop.geometry, occupied))
}
