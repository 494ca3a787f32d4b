//! Rényi-DP accounting for noisy local SGD.
//!
//! Each iteration releases `x − α ∇f + N(0, (Cα)²)` with gradients bounded by
//! `M`, which is a Gaussian mechanism whose RDP at order `g` is linear in
//! `g`, `r(g) = a·g`. Composition over `K` iterations adds the RDP, and the
//! conversion `ε = K r(g) + ln(1/δ)/(g − 1)` is minimised over the admissible
//! orders. Logarithms are natural throughout.

use crate::error::{Error, Result};
use crate::schedule::StepSchedule;

/// Inputs of the accountant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    /// Noise multiplier, `σ^k = C α^k`.
    pub c: f64,
    /// Gradient-norm bound.
    pub m: f64,
    /// Per-agent dataset size.
    pub s: u64,
    /// Mini-batch size.
    pub b: u64,
    /// Number of iterations.
    pub k: u64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(c: f64, m: f64, s: u64, b: u64, k: u64, delta: f64) -> Result<Self> {
        let p = PrivacyParams { c, m, s, b, k, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("noise multiplier C must be positive, got {}", self.c)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::invalid(format!("gradient bound M must be positive, got {}", self.m)));
        }
        if self.b == 0 || self.b > self.s {
            return Err(Error::invalid(format!("batch size must satisfy 1 <= B <= S, got B={}, S={}", self.b, self.s)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn is_full_batch(&self) -> bool {
        self.b == self.s
    }
}

/// Which per-iteration RDP rate the accountant composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RdpRate {
    /// Full-batch Gaussian mechanism `2gM²/(C²B²)` when `B = S`, subsampled
    /// rate `20gM²/(C²S²)` otherwise.
    #[default]
    Mechanism,
    /// The subsampled rate `20gM²/(C²S²)` for every batch size, with the
    /// order constraint dropped when `B = S`. This is the rate behind the
    /// published closed form.
    Uniform,
}

/// Outcome of the regime check for the subsampled mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCheck {
    /// `C²B²/M² ≥ 6`.
    pub noise_ok: bool,
    /// `g ≤ g_max`.
    pub order_ok: bool,
    /// `−ln((B/S)(1 + C²B²/(4M²)))`; `None` when unbounded (full batch).
    pub g_max: Option<f64>,
}

impl RegimeCheck {
    pub fn ok(&self) -> bool {
        self.noise_ok && self.order_ok
    }
}

/// Checks the conditions under which the subsampled RDP bound holds at order
/// `g`. A full batch involves no subsampling and is always admissible.
pub fn validate_regime(g: f64, p: &PrivacyParams) -> RegimeCheck {
    if p.is_full_batch() {
        return RegimeCheck { noise_ok: true, order_ok: true, g_max: None };
    }
    let (b, s) = (p.b as f64, p.s as f64);
    let u2 = (p.c * b / p.m).powi(2);
    let g_max = -((b / s) * (1.0 + u2 / 4.0)).ln();
    RegimeCheck { noise_ok: u2 >= 6.0, order_ok: g <= g_max, g_max: Some(g_max) }
}

fn rate(p: &PrivacyParams, mode: RdpRate) -> f64 {
    let m2c2 = (p.m / p.c).powi(2);
    match mode {
        RdpRate::Mechanism if p.is_full_batch() => 2.0 * m2c2 / (p.b as f64).powi(2),
        _ => 20.0 * m2c2 / (p.s as f64).powi(2),
    }
}

/// Per-iteration RDP at order `g`.
pub fn rdp_per_iteration(g: f64, p: &PrivacyParams) -> Result<f64> {
    if !(g > 1.0) {
        return Err(Error::invalid(format!("RDP order must exceed 1, got {g}")));
    }
    let check = validate_regime(g, p);
    if !check.ok() {
        return Err(Error::regime(regime_message(p, &check)));
    }
    Ok(rate(p, RdpRate::Mechanism) * g)
}

fn regime_message(p: &PrivacyParams, check: &RegimeCheck) -> String {
    if !check.noise_ok {
        format!("C^2 B^2 / M^2 = {:.4} < 6", (p.c * p.b as f64 / p.m).powi(2))
    } else {
        format!("no admissible RDP order: g_max = {:.4} <= 1", check.g_max.unwrap_or(f64::INFINITY))
    }
}

/// Privacy budget after composition and conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    /// Order that minimises the bound; `None` when no order is needed (`K = 0`
    /// or no noise at all).
    pub g_used: Option<f64>,
    /// The unconstrained optimum exceeded `g_max` and was clamped.
    pub clamped: bool,
    pub regime_ok: bool,
    pub g_max: Option<f64>,
}

impl PrivacyReport {
    /// Report for a noise-free run: no finite guarantee.
    pub fn without_noise(delta: f64) -> Self {
        PrivacyReport { epsilon: f64::INFINITY, delta, g_used: None, clamped: false, regime_ok: false, g_max: None }
    }
}

/// `ε(g) = K r(g) + ln(1/δ)/(g − 1)` minimised over admissible `g`.
pub fn compose_and_convert(p: &PrivacyParams) -> Result<PrivacyReport> {
    compose_and_convert_with(p, RdpRate::Mechanism)
}

pub fn compose_and_convert_with(p: &PrivacyParams, mode: RdpRate) -> Result<PrivacyReport> {
    p.validate()?;
    let g_max = match mode {
        RdpRate::Uniform if p.is_full_batch() => None,
        _ => {
            let check = validate_regime(f64::INFINITY, p);
            if !check.noise_ok || check.g_max.is_some_and(|g| g <= 1.0) {
                return Err(Error::regime(regime_message(p, &check)));
            }
            check.g_max
        }
    };
    if p.k == 0 {
        return Ok(PrivacyReport {
            epsilon: 0.0,
            delta: p.delta,
            g_used: None,
            clamped: false,
            regime_ok: true,
            g_max,
        });
    }
    let a = rate(p, mode);
    let k = p.k as f64;
    let log_inv_delta = (1.0 / p.delta).ln();
    let g_opt = 1.0 + (log_inv_delta / (k * a)).sqrt();
    let (g, clamped) = match g_max {
        Some(limit) if g_opt > limit => (limit, true),
        _ => (g_opt, false),
    };
    let epsilon = k * a * g + log_inv_delta / (g - 1.0);
    Ok(PrivacyReport { epsilon, delta: p.delta, g_used: Some(g), clamped, regime_ok: true, g_max })
}

/// `20M²K/(C²S²) + (2M/(CS)) √(20 K ln(1/δ))`.
pub fn theorem_closed_form(p: &PrivacyParams) -> f64 {
    let (m, c, s, k) = (p.m, p.c, p.s as f64, p.k as f64);
    20.0 * m * m * k / (c * c * s * s) + (2.0 * m / (c * s)) * (20.0 * k * (1.0 / p.delta).ln()).sqrt()
}

/// `σ^k = C α^k`.
pub fn noise_sigma(k: u64, c: f64, schedule: &StepSchedule) -> f64 {
    schedule.noise_sigma(k, c)
}
