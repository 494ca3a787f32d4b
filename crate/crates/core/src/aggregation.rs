//! Robust aggregation rules run by each honest agent on its own noisy model
//! and the messages received from its neighbours.
//!
//! Every rule sees the received messages in increasing sender-id order, so
//! outputs do not depend on arrival order, bit for bit.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::vector;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// One received message `x̃_{m,n}` with the trust weight `w'_{nm}`.
#[derive(Debug, Clone, Copy)]
pub struct Inbound<'a> {
    pub from: usize,
    pub weight: f64,
    pub model: &'a [f64],
}

/// Everything agent `n` aggregates in one round.
#[derive(Debug, Clone)]
pub struct InboundSet<'a> {
    agent: usize,
    own: &'a [f64],
    own_weight: f64,
    received: Vec<Inbound<'a>>,
}

impl<'a> InboundSet<'a> {
    pub fn new(agent: usize, own: &'a [f64], own_weight: f64, mut received: Vec<Inbound<'a>>) -> Result<Self> {
        received.sort_by_key(|m| m.from);
        for pair in received.windows(2) {
            if pair[0].from == pair[1].from {
                return Err(Error::invalid(format!("agent {agent} received two messages from {}", pair[0].from)));
            }
        }
        for m in &received {
            if m.from == agent {
                return Err(Error::invalid(format!("agent {agent} listed as its own neighbour")));
            }
            if m.model.len() != own.len() {
                return Err(Error::invalid(format!(
                    "message from {} has dimension {}, expected {}",
                    m.from,
                    m.model.len(),
                    own.len()
                )));
            }
            if !(m.weight >= 0.0) {
                return Err(Error::invalid(format!("negative weight on message from {}", m.from)));
            }
        }
        Ok(InboundSet { agent, own, own_weight, received })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn own(&self) -> &'a [f64] {
        self.own
    }

    pub fn own_weight(&self) -> f64 {
        self.own_weight
    }

    pub fn received(&self) -> &[Inbound<'a>] {
        &self.received
    }

    pub fn dim(&self) -> usize {
        self.own.len()
    }

    fn weight_sum(&self) -> f64 {
        self.own_weight + self.received.iter().map(|m| m.weight).sum::<f64>()
    }

    fn check_stochastic(&self) -> Result<()> {
        let s = self.weight_sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights of agent {} sum to {s}, expected 1", self.agent)));
        }
        Ok(())
    }
}

/// `Σ w x̃` over own and received messages.
pub fn weighted_mean(set: &InboundSet) -> Result<Vec<f64>> {
    set.check_stochastic()?;
    let mut out = vec![0.0; set.dim()];
    vector::axpy(&mut out, set.own_weight, set.own);
    for m in &set.received {
        vector::axpy(&mut out, m.weight, m.model);
    }
    Ok(out)
}

/// Coordinate-wise trimmed mean with unit weights.
pub fn trimmed_mean(set: &InboundSet, q: usize) -> Result<Vec<f64>> {
    trimmed_mean_detailed(set, q).map(|(out, _)| out)
}

/// Trimmed mean plus the ids of received messages that survived trimming in
/// at least one coordinate.
///
/// Per coordinate the received values are ordered by `(value, sender id)`,
/// the `q` lowest and `q` highest are dropped, and the survivors are averaged
/// together with the agent's own value.
pub fn trimmed_mean_detailed(set: &InboundSet, q: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let r = set.received.len();
    if r < 2 * q {
        return Err(Error::invalid(format!(
            "trimmed mean at agent {} needs at least {} neighbours for q = {q}, has {r}",
            set.agent,
            2 * q
        )));
    }
    let denom = (r - 2 * q + 1) as f64;
    let mut survived = vec![false; r];
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(r);
    let out = (0..set.dim())
        .map(|d| {
            column.clear();
            column.extend(set.received.iter().enumerate().map(|(i, m)| (m.model[d], i)));
            // received is id-sorted, so a stable sort by value breaks ties by id
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut sum = set.own[d];
            for &(v, i) in &column[q..r - q] {
                sum += v;
                survived[i] = true;
            }
            sum / denom
        })
        .collect();
    let ids = set.received.iter().zip(&survived).filter(|(_, s)| **s).map(|(m, _)| m.from).collect();
    Ok((out, ids))
}

/// `min(1, τ/‖z‖)·z`; the zero vector is returned unchanged for any `τ`.
pub fn clip(z: &[f64], tau: f64) -> Vec<f64> {
    let norm = vector::norm(z);
    let factor = if norm <= tau || norm == 0.0 { 1.0 } else { tau / norm };
    z.iter().map(|v| v * factor).collect()
}

/// Self-centred clipping: `x̃_nn + Σ_m w'_nm Clip(x̃_mn − x̃_nn, τ)`.
///
/// Equal to `Σ w'(x̃_nn + Clip(·))` over the closed neighbourhood when the
/// weights sum to one, which is checked. `τ = ∞` disables clipping.
pub fn scc(set: &InboundSet, tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::invalid(format!("clipping radius must be nonnegative, got {tau}")));
    }
    set.check_stochastic()?;
    let mut out = set.own.to_vec();
    for m in &set.received {
        let offset = clip(&vector::sub(m.model, set.own), tau);
        vector::axpy(&mut out, m.weight, &offset);
    }
    Ok(out)
}

/// Clipping radius that makes the SCC contraction bound hold:
/// `τ = (Σ_{R_n} w' ‖x̃_nn − x̃_mn‖² / Σ_{B_n} w')^½`.
///
/// Needs the Byzantine identities, so it is only meaningful for analysis.
pub fn scc_oracle_tau(set: &InboundSet, is_byzantine: impl Fn(usize) -> bool) -> Result<f64> {
    let byz_mass: f64 = set.received.iter().filter(|m| is_byzantine(m.from)).map(|m| m.weight).sum();
    if byz_mass <= 0.0 {
        return Err(Error::regime(format!(
            "agent {} has no Byzantine weight; the oracle clipping radius is undefined",
            set.agent
        )));
    }
    let spread: f64 = set
        .received
        .iter()
        .filter(|m| !is_byzantine(m.from))
        .map(|m| m.weight * vector::dist_sq(set.own, m.model))
        .sum();
    Ok((spread / byz_mass).sqrt())
}

/// Iterative outlier scissor.
pub fn ios(set: &InboundSet, q: usize) -> Result<Vec<f64>> {
    ios_detailed(set, q).map(|(out, _)| out)
}

/// IOS plus the discarded sender ids in discard order.
///
/// Starting from the full closed neighbourhood, `q` times: average the
/// trusted set with renormalised weights and discard the received message
/// farthest from that average (ties to the lowest id). The agent's own model
/// is never discarded. The output is the renormalised weighted average of
/// the survivors.
pub fn ios_detailed(set: &InboundSet, q: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let r = set.received.len();
    if q > r {
        return Err(Error::invalid(format!("IOS at agent {} cannot discard {q} of {r} messages", set.agent)));
    }
    let mut trusted = vec![true; r];
    let mut discarded = Vec::with_capacity(q);
    let mut avg = trusted_average(set, &trusted)?;
    for _ in 0..q {
        let mut far: Option<(usize, f64)> = None;
        for (i, m) in set.received.iter().enumerate() {
            if !trusted[i] {
                continue;
            }
            let d = vector::dist_sq(m.model, &avg);
            if far.is_none_or(|(_, best)| d.total_cmp(&best) == Ordering::Greater) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("q <= number of received messages");
        trusted[i] = false;
        discarded.push(set.received[i].from);
        avg = trusted_average(set, &trusted)?;
    }
    Ok((avg, discarded))
}

fn trusted_average(set: &InboundSet, trusted: &[bool]) -> Result<Vec<f64>> {
    let mut total = set.own_weight;
    let mut out = vec![0.0; set.dim()];
    vector::axpy(&mut out, set.own_weight, set.own);
    for (m, _) in set.received.iter().zip(trusted).filter(|(_, t)| **t) {
        total += m.weight;
        vector::axpy(&mut out, m.weight, m.model);
    }
    if total <= 0.0 {
        return Err(Error::invalid(format!("trusted set of agent {} has zero total weight", set.agent)));
    }
    vector::scale(&mut out, 1.0 / total);
    Ok(out)
}

/// Rule family without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Mean,
    TrimmedMean,
    Scc,
    Ios,
}

impl RuleKind {
    pub const ROBUST: [RuleKind; 3] = [RuleKind::TrimmedMean, RuleKind::Scc, RuleKind::Ios];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Mean => "mean",
            RuleKind::TrimmedMean => "tm",
            RuleKind::Scc => "scc",
            RuleKind::Ios => "ios",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mean" => Ok(RuleKind::Mean),
            "tm" => Ok(RuleKind::TrimmedMean),
            "scc" => Ok(RuleKind::Scc),
            "ios" => Ok(RuleKind::Ios),
            other => Err(Error::invalid(format!("unknown rule `{other}` (expected mean, tm, scc or ios)"))),
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of messages trimmed or discarded per agent.
#[derive(Debug, Clone, PartialEq)]
pub enum TrimCount {
    Global(usize),
    /// Indexed by agent id; Byzantine entries are ignored.
    PerAgent(Vec<usize>),
    /// `q_n = |B_n|`, the count the contraction lemmas assume.
    ByzantineNeighbors,
}

impl TrimCount {
    pub fn resolve(&self, topo: &Topology, agent: usize) -> usize {
        match self {
            TrimCount::Global(q) => *q,
            TrimCount::PerAgent(qs) => qs[agent],
            TrimCount::ByzantineNeighbors => topo.byzantine_neighbors(agent).count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipRadius {
    Constant(f64),
    /// Oracle radius from the Byzantine identities; `∞` for agents without
    /// Byzantine neighbours.
    Oracle,
}

/// An aggregation rule with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    Mean,
    TrimmedMean { q: TrimCount },
    Scc { tau: ClipRadius },
    Ios { q: TrimCount },
}

impl Rule {
    /// The parameterisation the contraction lemmas are stated for.
    pub fn lemma(kind: RuleKind) -> Rule {
        match kind {
            RuleKind::Mean => Rule::Mean,
            RuleKind::TrimmedMean => Rule::TrimmedMean { q: TrimCount::ByzantineNeighbors },
            RuleKind::Scc => Rule::Scc { tau: ClipRadius::Oracle },
            RuleKind::Ios => Rule::Ios { q: TrimCount::ByzantineNeighbors },
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Rule::Mean => RuleKind::Mean,
            Rule::TrimmedMean { .. } => RuleKind::TrimmedMean,
            Rule::Scc { .. } => RuleKind::Scc,
            Rule::Ios { .. } => RuleKind::Ios,
        }
    }

    /// Checks that every honest agent can run the rule on `topo`.
    pub fn check(&self, topo: &Topology) -> Result<()> {
        match self {
            Rule::Mean => Ok(()),
            Rule::Scc { tau: ClipRadius::Constant(t) } if t.is_nan() || *t < 0.0 => {
                Err(Error::invalid(format!("clipping radius must be nonnegative, got {t}")))
            }
            Rule::Scc { .. } => Ok(()),
            Rule::TrimmedMean { q } | Rule::Ios { q } => {
                if let TrimCount::PerAgent(qs) = q {
                    if qs.len() != topo.num_agents() {
                        return Err(Error::invalid(format!(
                            "per-agent q has {} entries for {} agents",
                            qs.len(),
                            topo.num_agents()
                        )));
                    }
                }
                let factor = if matches!(self, Rule::TrimmedMean { .. }) { 2 } else { 1 };
                for n in topo.honest() {
                    let qn = q.resolve(topo, n);
                    if topo.degree(n) < factor * qn {
                        return Err(Error::invalid(format!(
                            "{} at agent {n}: q = {qn} needs at least {} neighbours, has {}",
                            self.kind(),
                            factor * qn,
                            topo.degree(n)
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Aggregates for the agent named in `set`, resolving per-agent
    /// parameters against `topo`.
    pub fn aggregate(&self, set: &InboundSet, topo: &Topology) -> Result<Vec<f64>> {
        match self {
            Rule::Mean => weighted_mean(set),
            Rule::TrimmedMean { q } => trimmed_mean(set, q.resolve(topo, set.agent())),
            Rule::Ios { q } => ios(set, q.resolve(topo, set.agent())),
            Rule::Scc { tau } => scc(set, self.radius(*tau, set, topo)?),
        }
    }

    fn radius(&self, tau: ClipRadius, set: &InboundSet, topo: &Topology) -> Result<f64> {
        match tau {
            ClipRadius::Constant(t) => Ok(t),
            ClipRadius::Oracle => {
                if set.received().iter().any(|m| topo.is_byzantine(m.from)) {
                    scc_oracle_tau(set, |m| topo.is_byzantine(m))
                } else {
                    Ok(f64::INFINITY)
                }
            }
        }
    }
}

/// Ids of received messages that survived aggregation, for the rules where
/// that notion exists. `None` for mean and SCC.
pub(crate) fn survivors(rule: &Rule, set: &InboundSet, topo: &Topology) -> Result<(Vec<f64>, Option<BTreeSet<usize>>)> {
    match rule {
        Rule::TrimmedMean { q } => {
            let (out, ids) = trimmed_mean_detailed(set, q.resolve(topo, set.agent()))?;
            Ok((out, Some(ids.into_iter().collect())))
        }
        Rule::Ios { q } => {
            let (out, gone) = ios_detailed(set, q.resolve(topo, set.agent()))?;
            let gone: BTreeSet<usize> = gone.into_iter().collect();
            let kept = set.received().iter().map(|m| m.from).filter(|m| !gone.contains(m)).collect();
            Ok((out, Some(kept)))
        }
        _ => Ok((rule.aggregate(set, topo)?, None)),
    }
}
