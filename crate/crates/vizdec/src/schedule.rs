//! Linear-β diffusion schedule, forward noising, and respaced reverse steps.

use crate::error::DecError;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    /// `betas[t - 1]` is β_t.
    pub betas: Vec<f64>,
    /// `alpha_bars[t - 1]` is ᾱ_t = ∏_{s ≤ t} (1 − β_s).
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DecError> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(DecError::Config(format!(
                "linear schedule needs 0 < β_1 < β_T < 1 and T ≥ 2, got {beta_start}, {beta_end}, {steps}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// T = 1000, β from 1e-4 to 0.02.
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, DecError> {
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    fn check(&self, t: usize) -> Result<(), DecError> {
        if t == 0 || t > self.steps() {
            return Err(DecError::Timestep {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·noise`.
    pub fn add_noise(&self, x0: &[f32], t: usize, noise: &[f32]) -> Result<Vec<f32>, DecError> {
        if x0.len() != noise.len() {
            return Err(DecError::Shape(format!(
                "image has {} values, noise {}",
                x0.len(),
                noise.len()
            )));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        Ok(x0.iter().zip(noise).map(|(&x, &n)| a * x + b * n).collect())
    }

    /// `count` timesteps evenly spaced over `1..=T`, descending, ending at 1.
    pub fn respaced(&self, count: usize) -> Result<Vec<usize>, DecError> {
        let t = self.steps();
        if count == 0 || count > t {
            return Err(DecError::Config(format!("cannot respace {t} steps into {count}")));
        }
        let mut ts: Vec<usize> = (0..count)
            .map(|i| 1 + ((t - 1) as f64 * i as f64 / (count.max(2) - 1) as f64).round() as usize)
            .collect();
        if count == 1 {
            ts = vec![t];
        }
        ts.dedup();
        ts.reverse();
        Ok(ts)
    }
}
