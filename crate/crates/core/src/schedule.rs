//! Discrete corruption schedule `t -> alpha_t`.
//!
//! `alpha_t` is the interpolation weight given to the foreign content at
//! step `t`. It is derived from the linear-beta DDPM cumulative product as
//! `1 - sqrt(alpha_bar_t)` and then affinely rescaled so that `alpha_0 = 0`
//! and `alpha_T = 1` hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Default number of corruption steps.
pub const DEFAULT_STEPS: usize = 100;

/// Parameters from which a [`Schedule`] is rebuilt bit-identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    /// The 1000-step DDPM betas (1e-4 to 0.02) rescaled by `1000 / steps`,
    /// which keeps the cumulative product at `steps` close to the 1000-step
    /// profile. For `steps = 100` this is 1e-3 to 0.2.
    pub fn scaled_default(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        ScheduleParams {
            steps,
            beta_start: 1e-4 * scale,
            beta_end: 0.02 * scale,
        }
    }

    pub fn build(&self) -> Result<Schedule> {
        Schedule::new(self.steps, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::scaled_default(DEFAULT_STEPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    params: ScheduleParams,
    alphas: Vec<f64>,
}

impl Schedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure(steps >= 2, || format!("schedule needs at least 2 steps, got {steps}"))?;
        ensure(
            beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
            || format!("betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"),
        )?;

        let mut raw = Vec::with_capacity(steps + 1);
        let mut alpha_bar = 1.0f64;
        raw.push(0.0);
        for s in 1..=steps {
            let frac = (s - 1) as f64 / (steps - 1) as f64;
            let beta = beta_start + (beta_end - beta_start) * frac;
            alpha_bar *= 1.0 - beta;
            raw.push(1.0 - alpha_bar.sqrt());
        }

        let (lo, hi) = (raw[0], raw[steps]);
        let span = hi - lo;
        let mut alphas: Vec<f64> = raw.iter().map(|r| (r - lo) / span).collect();
        alphas[0] = 0.0;
        alphas[steps] = 1.0;

        if alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(
                "betas too small to give a strictly increasing schedule".into(),
            ));
        }

        Ok(Schedule {
            params: ScheduleParams {
                steps,
                beta_start,
                beta_end,
            },
            alphas,
        })
    }

    /// Number of corruption steps `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        self.alphas.get(t).copied().ok_or(Error::Index {
            index: t,
            max: self.steps(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_constant_beta_hand_value() {
        // raw = [0, 1 - sqrt(0.5), 1 - 0.5]; alpha_1 = raw_1 / raw_2.
        let s = Schedule::new(2, 0.5, 0.5).unwrap();
        let expected = (1.0 - 0.5f64.sqrt()) / 0.5;
        assert!((s.alphas()[1] - expected).abs() < 1e-15);
        assert!((s.alphas()[1] - 0.585_786_437_6).abs() < 1e-9);
    }

    #[test]
    fn endpoints_exact_and_monotone() {
        let s = ScheduleParams::default().build().unwrap();
        assert_eq!(s.steps(), 100);
        assert_eq!(s.alpha_at(0).unwrap(), 0.0);
        assert_eq!(s.alpha_at(100).unwrap(), 1.0);
        let mid = s.alpha_at(50).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        assert!(s.alphas().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn default_betas_for_hundred_steps() {
        let p = ScheduleParams::default();
        assert!((p.beta_start - 1e-3).abs() < 1e-15);
        assert!((p.beta_end - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rescaling_is_affine_in_raw_values() {
        let s = Schedule::new(10, 0.01, 0.3).unwrap();
        let mut ab = 1.0f64;
        let raw: Vec<f64> = std::iter::once(0.0)
            .chain((1..=10).map(|i| {
                ab *= 1.0 - (0.01 + 0.29 * (i - 1) as f64 / 9.0);
                1.0 - ab.sqrt()
            }))
            .collect();
        for (a, r) in s.alphas().iter().zip(&raw) {
            assert!((a - r / raw[10]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Schedule::new(1, 1e-3, 0.2).is_err());
        assert!(Schedule::new(100, 0.0, 0.2).is_err());
        assert!(Schedule::new(100, 0.3, 0.2).is_err());
        assert!(Schedule::new(100, 1e-3, 1.0).is_err());
        let s = Schedule::new(100, 1e-3, 0.2).unwrap();
        assert!(matches!(s.alpha_at(101), Err(Error::Index { index: 101, max: 100 })));
    }
}
