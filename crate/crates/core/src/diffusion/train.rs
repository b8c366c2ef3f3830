use std::f64::consts::PI;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::unet::{Cache, Denoiser};
use super::{DiffusionError, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate at step 0, ramped linearly to `lr_peak`.
    pub lr_start: f64,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 250,
            lr_start: 1e-6,
            lr_peak: 1e-4,
            warmup_steps: 500,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, dataset_len: usize) -> usize {
        let per_epoch = dataset_len.div_ceil(self.batch_size.max(1));
        let total = per_epoch * self.epochs;
        self.max_steps.map_or(total, |m| m.min(total))
    }
}

/// Linear warmup followed by cosine decay to zero.
pub fn lr_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if step < cfg.warmup_steps {
        cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step as f64 / cfg.warmup_steps as f64
    } else {
        let span = (total - cfg.warmup_steps).max(1) as f64;
        let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
        cfg.lr_peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_csv<W: Write>(trace: &[LossRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "step,loss,lr")?;
    for r in trace {
        writeln!(w, "{},{},{}", r.step, r.loss, r.lr)?;
    }
    Ok(())
}

/// A forward-noised training example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub noise: Vec<f64>,
}

impl NoisedSample {
    pub fn draw<R: Rng>(schedule: &NoiseSchedule, x0: &[f64], rng: &mut R) -> Self {
        let t = rng.gen_range(0..schedule.steps());
        let noise: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
        let x_t = schedule
            .forward_noise(x0, t, &noise)
            .expect("noise drawn with matching shape");
        Self { x_t, t, noise }
    }
}

pub struct TrainOutcome {
    pub denoiser: Denoiser,
    pub trace: Vec<LossRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn validate(dataset: &[Vec<f64>], voxels: usize, cfg: &TrainConfig) -> Result<(), DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    for (index, g) in dataset.iter().enumerate() {
        if g.len() != voxels {
            return Err(DiffusionError::BadSample {
                index,
                msg: format!("{} values, model expects {voxels}", g.len()),
            });
        }
        if g.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(DiffusionError::BadSample {
                index,
                msg: "values must lie in [-1, 1]".into(),
            });
        }
    }
    if cfg.batch_size == 0 {
        return Err(DiffusionError::Config("batch_size must be positive".into()));
    }
    if cfg.lr_start < 0.0 || cfg.lr_peak < 0.0 {
        return Err(DiffusionError::Config("learning rates must be nonnegative".into()));
    }
    let total = cfg.total_steps(dataset.len());
    if total > 0 && cfg.warmup_steps >= total {
        return Err(DiffusionError::Config(format!(
            "warmup ({}) must be shorter than the run ({total} steps)",
            cfg.warmup_steps
        )));
    }
    Ok(())
}

/// Noise-prediction MSE training with Adam on shuffled complete grids.
pub fn train(
    init: Denoiser,
    schedule: &NoiseSchedule,
    dataset: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DiffusionError> {
    validate(dataset, init.voxels(), cfg)?;
    let mut net = init;
    let total = cfg.total_steps(dataset.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.param_count());
    let mut grad = vec![0.0; net.param_count()];
    let mut cache = Cache::default();
    let mut trace = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut initial = None;
    let mut above = 0usize;

    let mut step = 0;
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let batch: Vec<NoisedSample> = chunk
                .iter()
                .map(|&i| NoisedSample::draw(schedule, &dataset[i], &mut rng))
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = super::gradcheck::accumulate(&net, &batch, 1.0, &mut grad, &mut cache);
            let lr = lr_at(cfg, step, total);
            adam.step(net.params_mut(), &grad, lr);
            trace.push(LossRecord { step, loss, lr });

            let init_loss = *initial.get_or_insert(loss);
            if loss > 10.0 * init_loss || !loss.is_finite() {
                above += 1;
                if above >= 100 || !loss.is_finite() {
                    return Err(DiffusionError::Diverged { step, loss, initial: init_loss });
                }
            } else {
                above = 0;
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { denoiser: net, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Arch;

    fn tiny() -> Denoiser {
        Denoiser::new(Arch { dim: 8, channels: [4, 8, 8], temb_dim: 8 }, 7).unwrap()
    }

    fn corridor_grid() -> Vec<f64> {
        // 8^3: free slab through the middle, occupied elsewhere
        (0..512)
            .map(|i| {
                let (y, z) = ((i / 8) % 8, i / 64);
                if (2..6).contains(&y) && (1..6).contains(&z) { -1.0 } else { 1.0 }
            })
            .collect()
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig { warmup_steps: 10, lr_start: 1e-6, lr_peak: 1e-4, ..Default::default() };
        assert_eq!(lr_at(&cfg, 0, 100), 1e-6);
        assert!((lr_at(&cfg, 10, 100) - 1e-4).abs() < 1e-18);
        assert!(lr_at(&cfg, 5, 100) > 1e-6 && lr_at(&cfg, 5, 100) < 1e-4);
        assert!(lr_at(&cfg, 99, 100) < 1e-6);
        assert!(lr_at(&cfg, 55, 100) < lr_at(&cfg, 20, 100));
    }

    #[test]
    fn constant_dataset_loss_halves() {
        let data = vec![corridor_grid(); 4];
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 200,
            lr_start: 1e-4,
            lr_peak: 3e-3,
            warmup_steps: 20,
            seed: 1,
            max_steps: None,
        };
        let out = train(tiny(), &NoiseSchedule::default(), &data, &cfg).unwrap();
        assert_eq!(out.trace.len(), 200);
        let head: f64 = out.trace[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        let tail: f64 = out.trace[180..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        assert!(tail < 0.5 * head, "head {head} tail {tail}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = vec![corridor_grid(); 3];
        let cfg = TrainConfig { batch_size: 2, epochs: 3, lr_start: 0.0, lr_peak: 0.0, warmup_steps: 1, ..Default::default() };
        let net = tiny();
        let out = train(net.clone(), &NoiseSchedule::default(), &data, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert_eq!(out.denoiser.params(), net.params());
    }

    #[test]
    fn fixed_seed_reproduces_trace() {
        let data = vec![corridor_grid(); 3];
        let cfg = TrainConfig { batch_size: 2, epochs: 4, warmup_steps: 2, lr_peak: 1e-3, ..Default::default() };
        let a = train(tiny(), &NoiseSchedule::default(), &data, &cfg).unwrap();
        let b = train(tiny(), &NoiseSchedule::default(), &data, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.denoiser, b.denoiser);
    }

    #[test]
    fn zero_epochs_return_initialisation() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let net = tiny();
        let out = train(net.clone(), &NoiseSchedule::default(), &[corridor_grid()], &cfg).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.denoiser, net);
    }

    #[test]
    fn rejects_bad_datasets() {
        let s = NoiseSchedule::default();
        let cfg = TrainConfig { epochs: 1, warmup_steps: 0, ..Default::default() };
        assert!(matches!(train(tiny(), &s, &[], &cfg), Err(DiffusionError::EmptyDataset)));
        assert!(matches!(train(tiny(), &s, &[vec![0.0; 10]], &cfg), Err(DiffusionError::BadSample { .. })));
        assert!(matches!(train(tiny(), &s, &[vec![2.0; 512]], &cfg), Err(DiffusionError::BadSample { .. })));
        let long_warmup = TrainConfig { epochs: 1, warmup_steps: 500, ..Default::default() };
        assert!(matches!(train(tiny(), &s, &[corridor_grid()], &long_warmup), Err(DiffusionError::Config(_))));
    }

    #[test]
    fn divergence_aborts() {
        let data = vec![corridor_grid(); 2];
        let cfg = TrainConfig { batch_size: 2, epochs: 400, lr_start: 50.0, lr_peak: 50.0, warmup_steps: 1, ..Default::default() };
        let err = train(tiny(), &NoiseSchedule::default(), &data, &cfg);
        assert!(matches!(err, Err(DiffusionError::Diverged { .. })), "{:?}", err.err());
    }

    #[test]
    fn loss_csv_header() {
        let mut buf = Vec::new();
        write_loss_csv(&[LossRecord { step: 0, loss: 1.5, lr: 1e-6 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,loss,lr\n0,1.5,0.000001\n");
    }
}
