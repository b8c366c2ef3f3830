use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::NoisedSample;
use super::unet::{Cache, Denoiser};

/// Adds `scale * d(loss)/d(params)` to `grad` and returns `scale * loss`, where
/// loss is the noise MSE averaged over voxels and batch.
pub(crate) fn accumulate(net: &Denoiser, batch: &[NoisedSample], scale: f64, grad: &mut [f64], cache: &mut Cache) -> f64 {
    let n = net.voxels() as f64;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; net.voxels()];
    for s in batch {
        net.forward(&s.x_t, s.t, cache);
        for ((d, o), e) in d_out.iter_mut().zip(cache.output()).zip(&s.noise) {
            let r = o - e;
            loss += r * r;
            *d = scale * 2.0 * r / (n * b);
        }
        net.backward(cache, &d_out, grad);
    }
    scale * loss / (n * b)
}

fn loss_only(net: &Denoiser, batch: &[NoisedSample], cache: &mut Cache) -> f64 {
    let n = net.voxels() as f64;
    let mut loss = 0.0;
    for s in batch {
        net.forward(&s.x_t, s.t, cache);
        loss += cache.output().iter().zip(&s.noise).map(|(o, e)| (o - e) * (o - e)).sum::<f64>();
    }
    loss / (n * batch.len() as f64)
}

/// Loss and full parameter gradient, with the loss multiplied by `scale`.
pub fn loss_and_grad(net: &Denoiser, batch: &[NoisedSample], scale: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.param_count()];
    let loss = accumulate(net, batch, scale, &mut grad, &mut Cache::default());
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
    pub analytic_finite: bool,
}

/// Compares the analytic gradient with central differences on a random subset
/// of parameters. Relative error is `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn gradient_check(net: &Denoiser, batch: &[NoisedSample], n_params: usize, h: f64, seed: u64) -> GradCheckReport {
    let (_, analytic) = loss_and_grad(net, batch, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample(&mut rng, net.param_count(), n_params.min(net.param_count()));
    let mut probe = net.clone();
    let mut cache = Cache::default();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: 0,
        analytic_finite: analytic.iter().all(|g| g.is_finite()),
    };
    for i in idx.iter() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = loss_only(&probe, batch, &mut cache);
        probe.params_mut()[i] = orig - h;
        let minus = loss_only(&probe, batch, &mut cache);
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst = i;
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Arch, NoiseSchedule};

    fn fixture() -> (Denoiser, Vec<NoisedSample>) {
        let net = Denoiser::new(Arch { dim: 8, channels: [2, 3, 4], temb_dim: 4 }, 3).unwrap();
        let schedule = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0: Vec<f64> = (0..512).map(|i| if i % 7 < 3 { 1.0 } else { -1.0 }).collect();
        let batch = (0..2).map(|_| NoisedSample::draw(&schedule, &x0, &mut rng)).collect();
        (net, batch)
    }

    #[test]
    fn analytic_matches_numeric() {
        let (net, batch) = fixture();
        let r = gradient_check(&net, &batch, 200, 1e-4, 0);
        assert_eq!(r.checked, 200);
        assert!(r.analytic_finite);
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn scaling_the_loss_scales_the_gradient() {
        let (net, batch) = fixture();
        let (l1, g1) = loss_and_grad(&net, &batch, 1.0);
        let (l2, g2) = loss_and_grad(&net, &batch, 2.0);
        assert_eq!(l2, 2.0 * l1);
        assert!(g1.iter().zip(&g2).all(|(a, b)| *b == 2.0 * a));
    }
}
