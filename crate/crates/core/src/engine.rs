//! Synchronous simulation of noisy decentralized SGD with robust aggregation.
//!
//! Round `k` has three barrier-separated phases:
//!
//! 1. every honest agent `n` samples a batch, takes a clipped gradient step
//!    and adds Gaussian noise, producing `x̃_n = x_n − α^k g + e`;
//! 2. every Byzantine agent crafts a message for each honest neighbour,
//!    seeing all the honest messages of the round;
//! 3. every honest agent aggregates its own message with what it received.
//!
//! Phases 1 and 3 run in parallel across agents. All randomness comes from
//! keyed streams, so results do not depend on the thread schedule.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::aggregation::{self, Inbound, InboundSet, Rule};
use crate::attacks::{Attack, AttackContext};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsLog};
use crate::rng::{self, Purpose};
use crate::schedule::StepSchedule;
use crate::tasks::{self, Objective};
use crate::topology::{Topology, TrustWeights};
use crate::vector;

/// Model held by one honest agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub model: Vec<f64>,
}

/// Initial models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Shared start at the origin.
    Zero,
    /// Independent `N(0, std²)` entries per agent.
    Gaussian { std: f64 },
}

/// Everything that determines a run, apart from the task data.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: Topology,
    pub weights: TrustWeights,
    pub rule: Rule,
    pub attack: Attack,
    pub schedule: StepSchedule,
    /// Noise multiplier `C`: `σ^k = C α^k`.
    pub noise_c: f64,
    /// Gradient-norm clip `M`; `None` disables clipping.
    pub clip: Option<f64>,
    pub rounds: u64,
    pub batch: usize,
    pub seed: u64,
    pub eval_every: u64,
    pub init: Init,
    pub parallel: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate().map_err(Error::Disconnected)?;
        if self.weights.num_agents() != self.topology.num_agents() {
            return Err(Error::invalid("trust weights do not match the topology size"));
        }
        self.rule.check(&self.topology)?;
        self.attack.validate()?;
        if self.attack == Attack::None && !self.topology.byzantine().is_empty() {
            return Err(Error::invalid("Byzantine agents are declared but the attack is `none`"));
        }
        self.schedule.validate()?;
        if !(self.noise_c >= 0.0 && self.noise_c.is_finite()) {
            return Err(Error::invalid(format!("noise multiplier C must be nonnegative, got {}", self.noise_c)));
        }
        if let Some(m) = self.clip {
            if !(m > 0.0) {
                return Err(Error::invalid(format!("gradient clip M must be positive, got {m}")));
            }
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be positive"));
        }
        if let Init::Gaussian { std } = self.init {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::invalid(format!("init std must be nonnegative, got {std}")));
            }
        }
        Ok(())
    }
}

/// Messages exchanged in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessages {
    /// Outbound message of each agent id; empty for Byzantine agents.
    pub outbound: Vec<Vec<f64>>,
    /// Byzantine messages keyed by `(sender, receiver)`.
    pub byzantine: BTreeMap<(usize, usize), Vec<f64>>,
}

pub struct Engine {
    config: RunConfig,
    task: Arc<dyn Objective>,
    honest: Vec<usize>,
}

impl Engine {
    pub fn new(config: RunConfig, task: Arc<dyn Objective>) -> Result<Self> {
        config.validate()?;
        let honest = config.topology.honest();
        for &n in &honest {
            if task.shard_size(n) == 0 {
                return Err(Error::invalid(format!("honest agent {n} has no data")));
            }
        }
        Ok(Engine { config, task, honest })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn task(&self) -> &dyn Objective {
        self.task.as_ref()
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    pub fn initial_states(&self) -> Vec<AgentState> {
        let dim = self.task.dim();
        self.honest
            .iter()
            .map(|&id| {
                let model = match self.config.init {
                    Init::Zero => vec![0.0; dim],
                    Init::Gaussian { std } => {
                        let mut rng = rng::stream(self.config.seed, Purpose::Init, 0, id as u64, 0);
                        (0..dim)
                            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                            .collect::<Vec<f64>>()
                    }
                };
                AgentState { id, model }
            })
            .collect()
    }

    /// Phase 1 for one agent: `x − α clip(∇f_n(x; batch), M) + N(0, σ²)`.
    pub fn local_update(&self, k: u64, state: &AgentState) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let alpha = cfg.schedule.step_size(k);
        let sigma = cfg.schedule.noise_sigma(k, cfg.noise_c);
        let shard = self.task.shard_size(state.id);
        let batch: Vec<usize> = if cfg.batch >= shard {
            (0..shard).collect()
        } else {
            let mut rng = rng::stream(cfg.seed, Purpose::Batch, k, state.id as u64, 0);
            let mut b = index::sample(&mut rng, shard, cfg.batch).into_vec();
            b.sort_unstable();
            b
        };
        let mut grad = self.task.batch_gradient(state.id, &state.model, &batch)?;
        if let Some(m) = cfg.clip {
            grad = aggregation::clip(&grad, m);
        }
        let mut out = state.model.clone();
        vector::axpy(&mut out, -alpha, &grad);
        if sigma > 0.0 {
            let mut rng = rng::stream(cfg.seed, Purpose::Noise, k, state.id as u64, 0);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            for v in &mut out {
                *v += normal.sample(&mut rng);
            }
        }
        Ok(out)
    }

    fn map_agents<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        if self.config.parallel {
            (0..self.honest.len()).into_par_iter().map(f).collect()
        } else {
            (0..self.honest.len()).map(f).collect()
        }
    }

    /// Runs round `k` on `states` (one per honest agent, in id order).
    pub fn run_round(&self, k: u64, states: &[AgentState]) -> Result<(Vec<AgentState>, RoundMessages)> {
        let cfg = &self.config;
        let topo = &cfg.topology;
        let updates = self.map_agents(|i| self.local_update(k, &states[i]))?;
        let mut outbound = vec![Vec::new(); topo.num_agents()];
        for (state, msg) in states.iter().zip(updates) {
            outbound[state.id] = msg;
        }

        let ctx = AttackContext {
            round: k,
            seed: cfg.seed,
            topology: topo,
            weights: &cfg.weights,
            outbound: &outbound,
            dim: self.task.dim(),
        };
        let mut byzantine = BTreeMap::new();
        for &n in &self.honest {
            for b in topo.byzantine_neighbors(n) {
                if let Some(msg) = cfg.attack.message(&ctx, b, n) {
                    byzantine.insert((b, n), msg);
                }
            }
        }

        let next = self.map_agents(|i| {
            let n = self.honest[i];
            let mut received: Vec<Inbound> = topo
                .honest_neighbors(n)
                .map(|m| Inbound { from: m, weight: cfg.weights.get(n, m), model: &outbound[m] })
                .collect();
            for b in topo.byzantine_neighbors(n) {
                if let Some(msg) = byzantine.get(&(b, n)) {
                    received.push(Inbound { from: b, weight: cfg.weights.get(n, b), model: msg });
                }
            }
            let set = InboundSet::new(n, &outbound[n], cfg.weights.get(n, n), received)?;
            Ok(AgentState { id: n, model: cfg.rule.aggregate(&set, topo)? })
        })?;
        Ok((next, RoundMessages { outbound, byzantine }))
    }

    /// Appends the metrics row for the states at round `k`.
    pub fn evaluate(&self, k: u64, states: &[AgentState], log: &mut MetricsLog) -> Result<()> {
        let models: Vec<&[f64]> = states.iter().map(|s| s.model.as_slice()).collect();
        let avg = vector::mean(models.iter().copied(), self.task.dim());
        let h = metrics::disagreement(&models);
        let loss = tasks::global_loss(self.task.as_ref(), &self.honest, &avg);
        let accuracy = self.task.accuracy(&avg).unwrap_or(f64::NAN);
        let alpha = self.config.schedule.step_size(k);
        let sigma = self.config.schedule.noise_sigma(k, self.config.noise_c);
        log.record(k, h, loss, accuracy, alpha, sigma)
    }

    pub fn run(&self) -> Result<MetricsLog> {
        self.run_observed(|_, _, _| Ok(()))
    }

    /// Runs all rounds, calling `observer(k, new_states, messages)` after
    /// each one.
    pub fn run_observed(
        &self,
        mut observer: impl FnMut(u64, &[AgentState], &RoundMessages) -> Result<()>,
    ) -> Result<MetricsLog> {
        let mut log = MetricsLog::new();
        let mut states = self.initial_states();
        self.evaluate(0, &states, &mut log)?;
        for k in 0..self.config.rounds {
            let (next, messages) = self.run_round(k, &states)?;
            observer(k, &next, &messages)?;
            states = next;
            let done = k + 1;
            if done % self.config.eval_every == 0 || done == self.config.rounds {
                self.evaluate(done, &states, &mut log)?;
            }
        }
        Ok(log)
    }
}
