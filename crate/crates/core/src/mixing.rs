//! Mixing analysis of robust aggregation rules.
//!
//! A rule `A_n` contracts towards a virtual mixing matrix `W` with constant
//! `ρ` when, for every honest `n`,
//!
//! ```text
//! ‖A_n(x̃_nn, {x̃_mn}) − x̂_n‖ ≤ ρ · max_{m ∈ R_n ∪ {n}} ‖x̃_mn − x̂_n‖,   x̂_n = Σ_m w_nm x̃_mn.
//! ```
//!
//! This module builds the `W` each rule contracts to, the closed-form upper
//! bounds on `ρ`, the spectral gap `λ` and skewness `χ²` of `W`, the
//! consensus threshold `ρ* = λ / (8 √|R|)`, and a randomized estimator that
//! searches for violations of the inequality.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::aggregation::{self, Inbound, InboundSet, Rule, RuleKind};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::topology::{Topology, TrustWeights};
use crate::vector;

const ROW_SUM_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const ROUND_OFF: f64 = 1e-12;

/// Row-stochastic matrix over the honest agents (in increasing id order).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    honest: Vec<usize>,
    w: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn new(honest: Vec<usize>, w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != honest.len() || w.ncols() != honest.len() {
            return Err(Error::invalid(format!(
                "mixing matrix is {}x{} for {} honest agents",
                w.nrows(),
                w.ncols(),
                honest.len()
            )));
        }
        check_row_stochastic(&w, ROW_SUM_TOL)?;
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mixing matrix entries must lie in [0, 1]"));
        }
        Ok(MixingMatrix { honest, w })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    /// Row/column index of an honest agent.
    pub fn index_of(&self, agent: usize) -> Option<usize> {
        self.honest.binary_search(&agent).ok()
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        match (self.index_of(n), self.index_of(m)) {
            (Some(i), Some(j)) => self.w[(i, j)],
            _ => 0.0,
        }
    }

    pub fn spectral_gap(&self) -> SpectralGap {
        spectral_gap_unchecked(&self.w)
    }

    pub fn skewness(&self) -> f64 {
        skewness(&self.w)
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        (0..self.w.ncols()).all(|j| (self.w.column(j).sum() - 1.0).abs() <= tol)
    }
}

fn check_row_stochastic(w: &DMatrix<f64>, tol: f64) -> Result<()> {
    for (i, row) in w.row_iter().enumerate() {
        let s = row.sum();
        if !((s - 1.0).abs() <= tol) {
            return Err(Error::invalid(format!("row {i} of the mixing matrix sums to {s}")));
        }
    }
    Ok(())
}

/// `λ = 1 − ‖(I − 11ᵀ/|R|) W‖²` with the spectral norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGap {
    pub lambda: f64,
    /// Power iterations used to find the top singular value.
    pub iterations: usize,
}

impl SpectralGap {
    /// `λ ∉ (0, 1]`: honest agents cannot be guaranteed to reach consensus.
    pub fn violated(&self) -> bool {
        !(self.lambda > 0.0 && self.lambda <= 1.0 + 1e-12)
    }
}

/// Spectral gap of a row-stochastic matrix.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<SpectralGap> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::invalid("spectral gap needs a nonempty square matrix"));
    }
    check_row_stochastic(w, 1e-9)?;
    Ok(spectral_gap_unchecked(w))
}

fn spectral_gap_unchecked(w: &DMatrix<f64>) -> SpectralGap {
    let n = w.nrows();
    let centering = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let a = centering * w;
    let gram = a.transpose() * &a;
    let (top, iterations) = top_eigenvalue(&gram);
    SpectralGap { lambda: 1.0 - top, iterations }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration with a Rayleigh-quotient stopping rule.
fn top_eigenvalue(g: &DMatrix<f64>) -> (f64, usize) {
    let n = g.nrows();
    // A non-constant start: centred matrices annihilate the all-ones vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for iter in 1..=POWER_MAX_ITERS {
        let next = g * &v;
        let rayleigh = v.dot(&next);
        let norm = next.norm();
        if norm == 0.0 {
            return (0.0, iter);
        }
        v = next / norm;
        if (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs().max(1.0) && iter > 1 {
            return (rayleigh, iter);
        }
        estimate = rayleigh;
    }
    (estimate, POWER_MAX_ITERS)
}

/// `χ² = ‖Wᵀ1 − 1‖² / |R|`; zero exactly for doubly stochastic matrices.
pub fn skewness(w: &DMatrix<f64>) -> f64 {
    let n = w.ncols();
    let total: f64 = (0..n).map(|j| (w.column(j).sum() - 1.0).powi(2)).sum();
    total / n as f64
}

/// `ρ* = λ / (8 √|R|)`; contraction constants below it guarantee the
/// disagreement among honest agents decays.
pub fn rho_star(lambda: f64, honest_count: usize) -> f64 {
    lambda / (8.0 * (honest_count as f64).sqrt())
}

/// The virtual mixing matrix a rule contracts to under the lemma
/// parameterisation (`q_n = |B_n|` for TM and IOS, oracle radius for SCC).
///
/// * TM: uniform `1/(|R_n|+1)` over each honest closed neighbourhood.
/// * SCC, IOS and mean: `w'` restricted to honest agents with each row's
///   Byzantine mass folded onto the diagonal.
///
/// IOS additionally requires the `|B_n|` largest neighbour weights of every
/// honest agent to sum below 1/3.
pub fn virtual_mixing_matrix(kind: RuleKind, topo: &Topology, weights: &TrustWeights) -> Result<MixingMatrix> {
    let honest = topo.honest();
    let index = |a: usize| honest.binary_search(&a).expect("honest id");
    let mut w = DMatrix::zeros(honest.len(), honest.len());
    if kind == RuleKind::Ios {
        for &n in &honest {
            ios_heavy_mass(topo, weights, n)?;
        }
    }
    for (i, &n) in honest.iter().enumerate() {
        match kind {
            RuleKind::TrimmedMean => {
                let share = 1.0 / (topo.honest_neighbors(n).count() + 1) as f64;
                w[(i, i)] = share;
                for m in topo.honest_neighbors(n) {
                    w[(i, index(m))] = share;
                }
            }
            RuleKind::Mean | RuleKind::Scc | RuleKind::Ios => {
                w[(i, i)] = weights.get(n, n) + weights.byzantine_mass(topo, n);
                for m in topo.honest_neighbors(n) {
                    w[(i, index(m))] = weights.get(n, m);
                }
            }
        }
    }
    MixingMatrix::new(honest, w)
}

/// Sum of the `|B_n|` largest neighbour weights of agent `n`, checked to be
/// below 1/3.
fn ios_heavy_mass(topo: &Topology, weights: &TrustWeights, n: usize) -> Result<f64> {
    let q = topo.byzantine_neighbors(n).count();
    let mut ws: Vec<f64> = topo.neighbors(n).iter().map(|&m| weights.get(n, m)).collect();
    ws.sort_by(|a, b| b.total_cmp(a));
    let heavy: f64 = ws.iter().take(q).sum();
    if heavy >= 1.0 / 3.0 {
        return Err(Error::regime(format!(
            "IOS at agent {n}: the {q} largest neighbour weights sum to {heavy:.6} >= 1/3"
        )));
    }
    Ok(heavy)
}

/// Closed-form upper bound on the contraction constant, maximised over
/// honest agents.
///
/// `all_byzantine_removed` selects the tighter branch for TM and IOS, valid
/// only when the rule discards every Byzantine message; SCC and mean ignore it.
/// Mean has no finite bound once any honest agent has a Byzantine neighbour.
pub fn contraction_bound(
    kind: RuleKind,
    topo: &Topology,
    weights: &TrustWeights,
    dim: usize,
    all_byzantine_removed: bool,
) -> Result<f64> {
    if dim == 0 {
        return Err(Error::invalid("model dimension must be positive"));
    }
    let mut bound: f64 = 0.0;
    for n in topo.honest() {
        let q = topo.byzantine_neighbors(n).count();
        let rn = topo.honest_neighbors(n).count();
        let here = match kind {
            RuleKind::Mean => {
                if q == 0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            RuleKind::TrimmedMean => {
                let nn = topo.degree(n);
                if nn + 1 < 2 * q + 1 || rn < q {
                    return Err(Error::regime(format!(
                        "trimmed mean at agent {n}: {q} Byzantine neighbours but only {rn} honest"
                    )));
                }
                let spread = (dim as f64).sqrt().min(((rn + 1) as f64).sqrt());
                let q = q as f64;
                let nn = nn as f64;
                let removed = 2.0 * q / (nn - q + 1.0);
                if all_byzantine_removed {
                    removed * spread
                } else {
                    (2.0 * q / (nn - 2.0 * q + 1.0) + 2.0 * removed) * spread
                }
            }
            RuleKind::Scc => 4.0 * (weights.byzantine_mass(topo, n) * weights.honest_neighbor_mass(topo, n)).sqrt(),
            RuleKind::Ios => {
                let s = ios_heavy_mass(topo, weights, n)?;
                if all_byzantine_removed {
                    s / (1.0 - s)
                } else {
                    15.0 * s / (1.0 - 3.0 * s)
                }
            }
        };
        bound = bound.max(here);
    }
    Ok(bound)
}

/// SCC bound with the agent's self-weight counted in the honest mass,
/// `4 max_n √(Σ_{B_n} w' · (w'_nn + Σ_{R_n} w'))`. This is the variant that
/// reproduces the fully connected closed form `4√(|R||B|)/|N|`.
pub fn scc_bound_with_self_weight(topo: &Topology, weights: &TrustWeights) -> f64 {
    topo.honest()
        .into_iter()
        .map(|n| {
            let honest = weights.get(n, n) + weights.honest_neighbor_mass(topo, n);
            4.0 * (weights.byzantine_mass(topo, n) * honest).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Result of [`empirical_contraction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    /// Largest observed ratio over all trials and honest agents.
    pub rho_hat: f64,
    /// Largest ratio among cases where every Byzantine message was discarded
    /// (TM: in every coordinate). Zero if there were none.
    pub rho_hat_removed: f64,
    pub cases: usize,
    pub removed_cases: usize,
}

/// Searches for the worst contraction ratio
/// `‖A_n − x̂_n‖ / max_m ‖x̃_mn − x̂_n‖` over random rounds. Deviations below
/// `1e-12` times the largest honest message norm are treated as exact zeros,
/// so `0/0 = 0`.
///
/// Honest messages come from a mixture of Gaussian clusters. Each Byzantine
/// sender picks, per trial, one of: honest-looking draws, 10×-scale outliers,
/// a sign-flipped copy of the honest cluster, or values placed on the edge of
/// the target's honest neighbourhood. Trials use independent keyed streams
/// and run in parallel.
pub fn empirical_contraction(
    kind: RuleKind,
    topo: &Topology,
    weights: &TrustWeights,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if dim == 0 {
        return Err(Error::invalid("model dimension must be positive"));
    }
    let rule = Rule::lemma(kind);
    rule.check(topo)?;
    let mixing = virtual_mixing_matrix(kind, topo, weights)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| contraction_trial(&rule, topo, weights, &mixing, dim, seed, t as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().fold(
        ContractionEstimate { rho_hat: 0.0, rho_hat_removed: 0.0, cases: 0, removed_cases: 0 },
        |acc, t| ContractionEstimate {
            rho_hat: acc.rho_hat.max(t.rho_hat),
            rho_hat_removed: acc.rho_hat_removed.max(t.rho_hat_removed),
            cases: acc.cases + t.cases,
            removed_cases: acc.removed_cases + t.removed_cases,
        },
    ))
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>()
}

fn contraction_trial(
    rule: &Rule,
    topo: &Topology,
    weights: &TrustWeights,
    mixing: &MixingMatrix,
    dim: usize,
    seed: u64,
    trial: u64,
) -> Result<ContractionEstimate> {
    let mut rng = rng::stream(seed, Purpose::Contraction, trial, 0, 0);
    let n_agents = topo.num_agents();

    // honest messages: a few clusters, occasionally all identical
    let clusters: Vec<Vec<f64>> = (0..rng.random_range(1..=3)).map(|_| gaussian(&mut rng, dim, 5.0)).collect();
    let spread = [0.0, 0.01, 0.1, 1.0, 3.0][rng.random_range(0..5)];
    let mut msgs: Vec<Vec<f64>> = vec![Vec::new(); n_agents];
    for n in topo.honest() {
        let c = &clusters[rng.random_range(0..clusters.len())];
        let noise = gaussian(&mut rng, dim, spread);
        msgs[n] = c.iter().zip(&noise).map(|(a, b)| a + b).collect();
    }
    let honest_mean = vector::mean(topo.honest().iter().map(|&n| msgs[n].as_slice()), dim);

    let mut est = ContractionEstimate { rho_hat: 0.0, rho_hat_removed: 0.0, cases: 0, removed_cases: 0 };
    for n in topo.honest() {
        let mut byz_msgs = Vec::new();
        for b in topo.byzantine_neighbors(n) {
            byz_msgs.push((b, byzantine_message(&mut rng, topo, &msgs, &honest_mean, n, dim)));
        }
        let mut received: Vec<Inbound> =
            topo.honest_neighbors(n).map(|m| Inbound { from: m, weight: weights.get(n, m), model: &msgs[m] }).collect();
        received.extend(byz_msgs.iter().map(|(b, v)| Inbound { from: *b, weight: weights.get(n, *b), model: v }));
        let set = InboundSet::new(n, &msgs[n], weights.get(n, n), received)?;
        let (out, kept) = aggregation::survivors(rule, &set, topo)?;

        let mut xhat = vec![0.0; dim];
        vector::axpy(&mut xhat, mixing.get(n, n), &msgs[n]);
        for m in topo.honest_neighbors(n) {
            vector::axpy(&mut xhat, mixing.get(n, m), &msgs[m]);
        }
        let radius = std::iter::once(n)
            .chain(topo.honest_neighbors(n))
            .map(|m| vector::dist(&msgs[m], &xhat))
            .fold(0.0, f64::max);
        let deviation = vector::dist(&out, &xhat);
        // Deviations at the level of floating-point round-off count as zero.
        let scale =
            std::iter::once(n).chain(topo.honest_neighbors(n)).map(|m| vector::norm(&msgs[m])).fold(1.0, f64::max);
        let ratio = if deviation <= ROUND_OFF * scale {
            0.0
        } else if radius == 0.0 {
            f64::INFINITY
        } else {
            deviation / radius
        };
        let removed = match kept {
            Some(kept) => !kept.iter().any(|m| topo.is_byzantine(*m)),
            None => false,
        };
        est.cases += 1;
        est.rho_hat = est.rho_hat.max(ratio);
        if removed {
            est.removed_cases += 1;
            est.rho_hat_removed = est.rho_hat_removed.max(ratio);
        }
    }
    Ok(est)
}

fn byzantine_message(
    rng: &mut impl Rng,
    topo: &Topology,
    msgs: &[Vec<f64>],
    honest_mean: &[f64],
    target: usize,
    dim: usize,
) -> Vec<f64> {
    let closed: Vec<&[f64]> =
        std::iter::once(target).chain(topo.honest_neighbors(target)).map(|m| msgs[m].as_slice()).collect();
    let local_mean = vector::mean(closed.iter().copied(), dim);
    let local_spread = closed.iter().map(|v| vector::dist(v, &local_mean)).fold(0.0, f64::max).max(1e-3);
    match rng.random_range(0..5) {
        // honest-looking
        0 => {
            let noise = gaussian(rng, dim, local_spread);
            local_mean.iter().zip(&noise).map(|(a, b)| a + b).collect()
        }
        // far outlier
        1 => {
            let noise = gaussian(rng, dim, 10.0 * (local_spread + vector::norm(honest_mean) / (dim as f64).sqrt()));
            local_mean.iter().zip(&noise).map(|(a, b)| a + b).collect()
        }
        // sign-flipped cluster
        2 => honest_mean.iter().map(|v| -10.0 * v).collect(),
        // coordinate-wise extreme of the honest neighbourhood
        3 => (0..dim)
            .map(|d| {
                let col = closed.iter().map(|v| v[d]);
                if rng.random_bool(0.5) {
                    col.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    col.fold(f64::INFINITY, f64::min)
                }
            })
            .collect(),
        // just outside the honest ball around the local mean
        _ => {
            let dir = gaussian(rng, dim, 1.0);
            let len = vector::norm(&dir).max(1e-12);
            let r = local_spread * rng.random_range(0.5..1.5);
            local_mean.iter().zip(&dir).map(|(m, d)| m + r * d / len).collect()
        }
    }
}

/// One row of the mixing-analysis report.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingAnalysis {
    pub rule: RuleKind,
    pub lambda: f64,
    pub chi_squared: f64,
    pub rho_bound: f64,
    pub rho_star: f64,
    pub rho_hat: Option<f64>,
}

impl MixingAnalysis {
    pub const CSV_HEADER: &'static str = "rule,lambda,chi2,rho_bound,rho_star,rho_hat,satisfies_theorem1";

    /// Computes every quantity for `kind` on `topo`. With `estimate =
    /// Some((trials, seed))` the empirical contraction is included.
    pub fn compute(
        kind: RuleKind,
        topo: &Topology,
        weights: &TrustWeights,
        dim: usize,
        all_byzantine_removed: bool,
        estimate: Option<(usize, u64)>,
    ) -> Result<Self> {
        let w = virtual_mixing_matrix(kind, topo, weights)?;
        let gap = w.spectral_gap();
        let rho_bound = contraction_bound(kind, topo, weights, dim, all_byzantine_removed)?;
        let rho_hat = match estimate {
            Some((trials, seed)) => Some(empirical_contraction(kind, topo, weights, dim, trials, seed)?.rho_hat),
            None => None,
        };
        Ok(MixingAnalysis {
            rule: kind,
            lambda: gap.lambda,
            chi_squared: w.skewness(),
            rho_bound,
            rho_star: rho_star(gap.lambda, w.honest().len()),
            rho_hat,
        })
    }

    /// `ρ < ρ*`, the condition under which disagreement provably decays.
    pub fn satisfies_theorem1(&self) -> bool {
        self.rho_bound < self.rho_star
    }

    pub fn csv_row(&self) -> String {
        let hat = self.rho_hat.map(|v| format!("{v:.16e}")).unwrap_or_default();
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            self.rule,
            self.lambda,
            self.chi_squared,
            self.rho_bound,
            self.rho_star,
            hat,
            self.satisfies_theorem1()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete12() -> (Topology, TrustWeights) {
        let t = Topology::complete(12).unwrap().with_byzantine(&[10, 11]).unwrap();
        let w = TrustWeights::metropolis(&t);
        (t, w)
    }

    #[test]
    fn tm_on_complete_graph_is_uniform() {
        let (t, w) = complete12();
        let m = virtual_mixing_matrix(RuleKind::TrimmedMean, &t, &w).unwrap();
        assert!(m.matrix().iter().all(|v| (v - 0.1).abs() < 1e-15));
        assert!(m.skewness() < 1e-28);
    }

    #[test]
    fn scc_on_complete_graph_matches_closed_form() {
        let (t, w) = complete12();
        for kind in [RuleKind::Scc, RuleKind::Ios] {
            let m = virtual_mixing_matrix(kind, &t, &w).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    let expected = 1.0 / 12.0 + if i == j { 2.0 / 12.0 } else { 0.0 };
                    assert!((m.matrix()[(i, j)] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn attack_free_matrix_is_trust_weights() {
        let t = Topology::erdos_renyi(8, 0.6, 3).unwrap();
        let w = TrustWeights::metropolis(&t);
        for kind in [RuleKind::Mean, RuleKind::Scc, RuleKind::Ios] {
            let m = virtual_mixing_matrix(kind, &t, &w).unwrap();
            assert_eq!(m.matrix(), w.matrix());
        }
    }

    #[test]
    fn gap_of_averaging_and_identity() {
        let avg = DMatrix::from_element(4, 4, 0.25);
        assert!((spectral_gap(&avg).unwrap().lambda - 1.0).abs() < 1e-12);
        let id = DMatrix::<f64>::identity(4, 4);
        let gap = spectral_gap(&id).unwrap();
        assert!(gap.lambda.abs() < 1e-12);
        assert!(gap.violated());
    }

    #[test]
    fn gap_of_two_by_two() {
        // (I - J/2) W = [[1/4, -1/4], [-1/4, 1/4]], singular values {1/√8·... }:
        // its only nonzero singular value is the Frobenius norm √(4/16) = 1/2.
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let gap = spectral_gap(&w).unwrap();
        assert!((gap.lambda - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gap_rejects_non_stochastic() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]);
        assert!(spectral_gap(&w).is_err());
    }

    #[test]
    fn skewness_example() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!((skewness(&w) - 0.25).abs() < 1e-15);
        assert_eq!(skewness(&DMatrix::from_element(3, 3, 1.0 / 3.0)), skewness(&DMatrix::identity(3, 3)));
    }

    #[test]
    fn rho_star_examples() {
        assert_eq!(rho_star(1.0, 16), 0.03125);
        assert_eq!(rho_star(1.0, 1), 0.125);
        assert!((rho_star(0.5, 100) - 0.00625).abs() < 1e-18);
    }

    #[test]
    fn ios_bounds_on_complete_graph() {
        let (t, w) = complete12();
        let removed = contraction_bound(RuleKind::Ios, &t, &w, 784, true).unwrap();
        assert!((removed - 0.2).abs() < 1e-12);
        let kept = contraction_bound(RuleKind::Ios, &t, &w, 784, false).unwrap();
        assert!((kept - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tm_bound_on_complete_graph() {
        let (t, w) = complete12();
        let b = contraction_bound(RuleKind::TrimmedMean, &t, &w, 784, true).unwrap();
        assert!((b - 0.4 * 10f64.sqrt()).abs() < 1e-12);
        let b1 = contraction_bound(RuleKind::TrimmedMean, &t, &w, 1, true).unwrap();
        assert!((b1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ios_regime_violation_names_agent() {
        // star centre 0 is Byzantine; leaves put weight 1/4 on it -> fine;
        // a pair with one Byzantine gives weight 1/2 -> violation
        let t = Topology::path(3).unwrap().with_byzantine(&[2]).unwrap();
        let w = TrustWeights::metropolis(&t);
        let err = virtual_mixing_matrix(RuleKind::Ios, &t, &w).unwrap_err();
        assert!(err.to_string().contains("agent 1"), "{err}");
        assert!(contraction_bound(RuleKind::Ios, &t, &w, 3, true).is_err());
    }

    #[test]
    fn mean_bound_is_zero_or_infinite() {
        let t = Topology::complete(5).unwrap();
        let w = TrustWeights::metropolis(&t);
        assert_eq!(contraction_bound(RuleKind::Mean, &t, &w, 3, false).unwrap(), 0.0);
        let t = t.with_byzantine(&[4]).unwrap();
        assert!(contraction_bound(RuleKind::Mean, &t, &w, 3, false).unwrap().is_infinite());
    }

    #[test]
    fn mean_rule_without_byzantine_has_zero_contraction() {
        let t = Topology::erdos_renyi(7, 0.6, 5).unwrap();
        let w = TrustWeights::metropolis(&t);
        let est = empirical_contraction(RuleKind::Mean, &t, &w, 3, 50, 1).unwrap();
        assert_eq!(est.rho_hat, 0.0);
    }

    #[test]
    fn ios_estimate_below_bound_on_complete_graph() {
        let (t, w) = complete12();
        let est = empirical_contraction(RuleKind::Ios, &t, &w, 5, 1000, 42).unwrap();
        assert!(est.rho_hat <= 5.0, "rho_hat = {}", est.rho_hat);
        assert!(est.rho_hat_removed <= 0.2 + 1e-12, "rho_hat_removed = {}", est.rho_hat_removed);
        assert!(est.removed_cases > 0);
    }

    #[test]
    fn estimator_is_deterministic() {
        let (t, w) = complete12();
        let a = empirical_contraction(RuleKind::TrimmedMean, &t, &w, 4, 64, 9).unwrap();
        let b = empirical_contraction(RuleKind::TrimmedMean, &t, &w, 4, 64, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analysis_row_format() {
        let (t, w) = complete12();
        let a = MixingAnalysis::compute(RuleKind::Ios, &t, &w, 10, true, None).unwrap();
        let row = a.csv_row();
        assert!(row.starts_with("ios,"));
        assert_eq!(row.split(',').count(), MixingAnalysis::CSV_HEADER.split(',').count());
        assert!(!a.satisfies_theorem1());
    }
}
