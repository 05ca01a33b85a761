use serde::{Deserialize, Serialize};

use super::DiffusionError;

pub const DEFAULT_STEPS: usize = 200;
pub const DEFAULT_ALPHA_FIRST: f64 = 0.9999;
pub const DEFAULT_ALPHA_LAST: f64 = 0.98;

/// How `α_t` moves between its endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `α_t = α_1 + (α_T − α_1)(t − 1)/(T − 1)`.
    Linear,
}

/// The parameters a schedule is rebuilt from; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub steps: usize,
    pub alpha_first: f64,
    pub alpha_last: f64,
    pub interpolation: Interpolation,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            alpha_first: DEFAULT_ALPHA_FIRST,
            alpha_last: DEFAULT_ALPHA_LAST,
            interpolation: Interpolation::Linear,
        }
    }
}

/// Precomputed `α_t`, `ᾱ_t` and `σ_t` tables. Steps are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(steps: usize, alpha_first: f64, alpha_last: f64) -> Result<Self, DiffusionError> {
        Self::from_params(ScheduleParams {
            steps,
            alpha_first,
            alpha_last,
            interpolation: Interpolation::Linear,
        })
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self, DiffusionError> {
        let ScheduleParams {
            steps,
            alpha_first,
            alpha_last,
            ..
        } = params;
        if steps < 2 {
            return Err(DiffusionError::Config(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(0.0 < alpha_last && alpha_last < alpha_first && alpha_first < 1.0) {
            return Err(DiffusionError::Config(format!(
                "need 0 < alpha_last < alpha_first < 1, got alpha_first={alpha_first}, alpha_last={alpha_last}"
            )));
        }
        let span = (steps - 1) as f64;
        let alpha: Vec<f64> = (0..steps)
            .map(|i| alpha_first + (alpha_last - alpha_first) * i as f64 / span)
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for (i, &a) in alpha.iter().enumerate() {
            alpha_bar.push(alpha_bar[i] * a);
        }
        // σ_t = (1 − α_t)(1 − ᾱ_{t−1}) / (1 − ᾱ_t); exactly 0 at t = 1.
        let sigma = (1..=steps)
            .map(|t| (1.0 - alpha[t - 1]) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]))
            .collect();
        Ok(Self {
            params,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `α_t` for `1 ≤ t ≤ T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `σ_t` for `1 ≤ t ≤ T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    /// Smallest step with `ᾱ_t ≤ target`, or `T` if none.
    pub fn step_for_alpha_bar(&self, target: f64) -> usize {
        (1..=self.steps())
            .find(|&t| self.alpha_bar(t) <= target)
            .unwrap_or(self.steps())
    }

    /// Step whose `ᾱ_t` is nearest to `target`.
    pub fn nearest_step(&self, target: f64) -> usize {
        (1..=self.steps())
            .min_by(|&a, &b| {
                (self.alpha_bar(a) - target)
                    .abs()
                    .total_cmp(&(self.alpha_bar(b) - target).abs())
            })
            .unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints_and_monotonicity() {
        let s = NoiseSchedule::build(200, 0.9999, 0.98).unwrap();
        assert_eq!(s.alpha(1), 0.9999);
        assert!((s.alpha(200) - 0.98).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.alpha_bar(1), 0.9999);
        let prod: f64 = (1..=200).map(|t| s.alpha(t)).product();
        assert!((s.alpha_bar(200) - prod).abs() < 1e-14);
        assert!(s.alpha_bar(200) < s.alpha_bar(1));
        for t in 1..=200 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.sigma(t) >= 0.0);
        }
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn two_step_arithmetic() {
        let s = NoiseSchedule::build(2, 0.99, 0.98).unwrap();
        assert!((s.alpha_bar(2) - 0.9702).abs() < 1e-15);
        let want = 0.02 * 0.01 / (1.0 - 0.9702);
        assert!((s.sigma(2) - want).abs() < 1e-15);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(NoiseSchedule::build(1, 0.9, 0.8).is_err());
        assert!(NoiseSchedule::build(10, 0.8, 0.9).is_err());
        assert!(NoiseSchedule::build(10, 1.0, 0.9).is_err());
        assert!(NoiseSchedule::build(10, 0.9, 0.0).is_err());
    }

    #[test]
    fn step_lookup() {
        let s = NoiseSchedule::build(200, 0.9999, 0.98).unwrap();
        let t = s.step_for_alpha_bar(0.5);
        assert!(s.alpha_bar(t) <= 0.5 && s.alpha_bar(t - 1) > 0.5);
        assert!(s.check_step(0).is_err());
        assert!(s.check_step(201).is_err());
        assert!(s.check_step(200).is_ok());
    }
}
