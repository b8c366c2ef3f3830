use sha2::{Digest, Sha256};

use super::DiffusionError;

/// Linear beta schedule with cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(steps >= 2, "schedule needs at least two steps");
        assert!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0);
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
            beta_start,
            beta_end,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Short stable identifier stored in checkpoints.
    pub fn hash(&self) -> String {
        let desc = format!("linear:{}:{:e}:{:e}", self.steps(), self.beta_start, self.beta_end);
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise`.
    pub fn forward_noise(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        if x0.len() != noise.len() {
            return Err(DiffusionError::Shape {
                expected: x0.len(),
                got: noise.len(),
            });
        }
        if t >= self.steps() {
            return Err(DiffusionError::Timestep { t, steps: self.steps() });
        }
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_monotone() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!(s.betas.windows(2).all(|w| w[0] < w[1]));
        assert!(s.alpha_bars.windows(2).all(|w| w[0] > w[1]));
        assert!(s.alpha_bars.iter().all(|a| *a > 0.0 && *a <= 1.0));
        assert!((s.alpha_bars[0] - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn boundary_and_zero_signal() {
        let s = NoiseSchedule::default();
        let x0 = vec![0.5, -1.0, 1.0];
        let noise = vec![1.0, -2.0, 0.3];
        let x = s.forward_noise(&x0, 0, &noise).unwrap();
        let tol = (1.0 - s.alpha_bars[0]).sqrt() * 2.0 + 1e-4;
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() <= tol);
        }
        let zero = vec![0.0; 3];
        let x = s.forward_noise(&zero, 700, &noise).unwrap();
        for (a, e) in x.iter().zip(&noise) {
            assert_eq!(*a, (1.0 - s.alpha_bars[700]).sqrt() * e);
        }
    }

    #[test]
    fn errors() {
        let s = NoiseSchedule::default();
        assert!(matches!(s.forward_noise(&[0.0; 3], 1, &[0.0; 2]), Err(DiffusionError::Shape { .. })));
        assert!(matches!(s.forward_noise(&[0.0; 3], 1000, &[0.0; 3]), Err(DiffusionError::Timestep { .. })));
    }

    #[test]
    fn hash_depends_on_schedule() {
        assert_eq!(NoiseSchedule::default().hash(), NoiseSchedule::default().hash());
        assert_ne!(NoiseSchedule::default().hash(), NoiseSchedule::linear(500, 1e-4, 0.02).hash());
    }
}
