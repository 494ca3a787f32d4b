//! Step-size schedules.

use crate::error::{Error, Result};

/// Step size `α^k` as a function of the round index `k ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `α^k = 4 / (μ (k + k₀))`, the schedule the convergence rates assume.
    Theoretical { mu: f64, k0: f64 },
    /// `α^k = a / √(k + 1)`, the schedule used in practice.
    Sqrt { a: f64 },
}

impl StepSchedule {
    pub const DEFAULT_K0: f64 = 10.0;

    pub fn theoretical(mu: f64, k0: f64) -> Result<Self> {
        let s = StepSchedule::Theoretical { mu, k0 };
        s.validate()?;
        Ok(s)
    }

    pub fn sqrt(a: f64) -> Result<Self> {
        let s = StepSchedule::Sqrt { a };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Theoretical { mu, k0 } => {
                if !(mu > 0.0 && mu.is_finite()) || !(k0 > 0.0 && k0.is_finite()) {
                    return Err(Error::invalid(format!(
                        "theoretical schedule needs mu > 0 and k0 > 0, got mu={mu}, k0={k0}"
                    )));
                }
            }
            StepSchedule::Sqrt { a } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::invalid(format!("sqrt schedule needs a > 0, got {a}")));
                }
            }
        }
        Ok(())
    }

    pub fn step_size(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::Theoretical { mu, k0 } => 4.0 / (mu * (k as f64 + k0)),
            StepSchedule::Sqrt { a } => a / (k as f64 + 1.0).sqrt(),
        }
    }

    /// Noise standard deviation `σ^k = C α^k`.
    pub fn noise_sigma(&self, k: u64, c: f64) -> f64 {
        c * self.step_size(k)
    }
}
