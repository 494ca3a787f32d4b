//! Byzantine message generators.
//!
//! Attacks are omniscient: they run after every honest agent has produced its
//! outbound message for the round and may read all of them.

use std::fmt;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::topology::{Topology, TrustWeights};
use crate::vector;

/// Everything an attacker sees in round `k`.
pub struct AttackContext<'a> {
    pub round: u64,
    pub seed: u64,
    pub topology: &'a Topology,
    pub weights: &'a TrustWeights,
    /// Outbound message of every agent, indexed by id; entries for Byzantine
    /// agents are ignored.
    pub outbound: &'a [Vec<f64>],
    pub dim: usize,
}

impl AttackContext<'_> {
    pub fn honest_mean(&self) -> Vec<f64> {
        let honest = self.topology.honest();
        vector::mean(honest.iter().map(|&n| self.outbound[n].as_slice()), self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    None,
    /// I.i.d. `N(0, variance)` entries, drawn independently per target.
    Gaussian {
        variance: f64,
    },
    /// `factor` times the mean honest outbound message, sent to everyone.
    SignFlip {
        factor: f64,
    },
    /// Messages that make each victim's trust-weighted inbound average equal
    /// its own message.
    Isolate,
}

impl Attack {
    pub const DEFAULT_VARIANCE: f64 = 900.0;
    pub const DEFAULT_FACTOR: f64 = -10.0;

    /// Parses `none`, `gaussian`, `signflip` or `isolate` with an optional
    /// numeric parameter.
    pub fn parse(name: &str, param: Option<f64>) -> Result<Self> {
        let attack = match name {
            "none" => Attack::None,
            "gaussian" => Attack::Gaussian { variance: param.unwrap_or(Self::DEFAULT_VARIANCE) },
            "signflip" | "sign_flip" => Attack::SignFlip { factor: param.unwrap_or(Self::DEFAULT_FACTOR) },
            "isolate" | "isolating" => Attack::Isolate,
            other => return Err(Error::invalid(format!("unknown attack `{other}`"))),
        };
        attack.validate()?;
        Ok(attack)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Attack::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => {
                Err(Error::invalid(format!("gaussian attack variance must be positive, got {variance}")))
            }
            Attack::SignFlip { factor } if !factor.is_finite() => {
                Err(Error::invalid("sign-flip factor must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attack::None => "none",
            Attack::Gaussian { .. } => "gaussian",
            Attack::SignFlip { .. } => "signflip",
            Attack::Isolate => "isolate",
        }
    }

    /// Message Byzantine agent `byz` sends to honest agent `target`, or
    /// `None` if it sends nothing.
    pub fn message(&self, ctx: &AttackContext, byz: usize, target: usize) -> Option<Vec<f64>> {
        match *self {
            Attack::None => None,
            Attack::Gaussian { variance } => Some(gaussian_attack(ctx, variance, byz, target)),
            Attack::SignFlip { factor } => Some(sign_flip_attack(ctx, factor)),
            Attack::Isolate => isolating_attack(ctx, target),
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attack::Gaussian { variance } => write!(f, "gaussian({variance})"),
            Attack::SignFlip { factor } => write!(f, "signflip({factor})"),
            other => f.write_str(other.name()),
        }
    }
}

pub fn gaussian_attack(ctx: &AttackContext, variance: f64, byz: usize, target: usize) -> Vec<f64> {
    let mut rng = rng::stream(ctx.seed, Purpose::Attack, ctx.round, byz as u64, target as u64);
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive variance");
    (0..ctx.dim).map(|_| normal.sample(&mut rng)).collect()
}

pub fn sign_flip_attack(ctx: &AttackContext, factor: f64) -> Vec<f64> {
    let mut v = ctx.honest_mean();
    vector::scale(&mut v, factor);
    v
}

/// `v = (x̃_nn (1 − w'_nn) − Σ_{R_n} w'_nm x̃_m) / Σ_{B_n} w'_nb`, the value
/// every Byzantine neighbour of `target` sends so that the trust-weighted
/// average of its inbound messages equals its own.
pub fn isolating_attack(ctx: &AttackContext, target: usize) -> Option<Vec<f64>> {
    let mass = ctx.weights.byzantine_mass(ctx.topology, target);
    if mass <= 0.0 {
        return None;
    }
    let own = &ctx.outbound[target];
    let mut v = own.clone();
    vector::scale(&mut v, 1.0 - ctx.weights.get(target, target));
    for m in ctx.topology.honest_neighbors(target) {
        vector::axpy(&mut v, -ctx.weights.get(target, m), &ctx.outbound[m]);
    }
    vector::scale(&mut v, 1.0 / mass);
    Some(v)
}
