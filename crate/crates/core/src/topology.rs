//! Communication graph, Byzantine/honest split and trust weights.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Undirected graph over agents `0..n` with a designated Byzantine subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    byzantine: BTreeSet<usize>,
}

/// Honest agents split into mutually unreachable components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityViolation {
    pub components: Vec<Vec<usize>>,
}

impl fmt::Display for ConnectivityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} honest components:", self.components.len())?;
        for (i, c) in self.components.iter().enumerate() {
            let ids: Vec<String> = c.iter().map(ToString::to_string).collect();
            write!(f, "{} {{{}}}", if i == 0 { "" } else { " vs" }, ids.join(","))?;
        }
        Ok(())
    }
}

impl Topology {
    /// Builds a topology from an edge list. Edges are unordered; `(a, b)` and
    /// `(b, a)` name the same edge and may not both appear.
    pub fn from_edges(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::invalid("topology needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on agent {a}")));
            }
            if a >= num_agents || b >= num_agents {
                return Err(Error::invalid(format!("edge ({a},{b}) out of range for {num_agents} agents")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate edge ({a},{b})")));
            }
        }
        let mut adjacency = vec![Vec::new(); num_agents];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Topology { num_agents, edges: set, adjacency, byzantine: BTreeSet::new() })
    }

    /// Each unordered pair is included independently with probability `p`.
    /// No Byzantine agents are assigned and connectivity is not checked.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("Erdős–Rényi graph needs n >= 2, got {n}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
        }
        let mut rng = rng::stream(seed, Purpose::Topology, 0, n as u64, 0);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                // one draw per pair keeps the stream aligned for every p
                let u: f64 = rng.random();
                if u < p {
                    edges.push((a, b));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|b| (b - 1, b)))
    }

    /// Agent 0 is the centre, `1..=leaves` the leaves.
    pub fn star(leaves: usize) -> Result<Self> {
        Self::from_edges(leaves + 1, (1..=leaves).map(|b| (0, b)))
    }

    /// Marks `ids` as Byzantine, replacing any previous assignment.
    pub fn with_byzantine(mut self, ids: &[usize]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &id in ids {
            if id >= self.num_agents {
                return Err(Error::invalid(format!("byzantine id {id} out of range for {} agents", self.num_agents)));
            }
            if !set.insert(id) {
                return Err(Error::invalid(format!("duplicate byzantine id {id}")));
            }
        }
        self.byzantine = set;
        Ok(self)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Sorted neighbour ids of `agent`.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.adjacency[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.adjacency[agent].len()
    }

    pub fn is_byzantine(&self, agent: usize) -> bool {
        self.byzantine.contains(&agent)
    }

    pub fn byzantine(&self) -> &BTreeSet<usize> {
        &self.byzantine
    }

    /// Honest agents in increasing id order.
    pub fn honest(&self) -> Vec<usize> {
        (0..self.num_agents).filter(|a| !self.is_byzantine(*a)).collect()
    }

    pub fn honest_neighbors(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[agent].iter().copied().filter(|m| !self.is_byzantine(*m))
    }

    pub fn byzantine_neighbors(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[agent].iter().copied().filter(|m| self.is_byzantine(*m))
    }

    /// Connected components of the honest-only subgraph, each sorted, ordered
    /// by smallest member.
    pub fn honest_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.num_agents];
        let mut components = Vec::new();
        for start in self.honest() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(a) = queue.pop_front() {
                for b in self.honest_neighbors(a) {
                    if !seen[b] {
                        seen[b] = true;
                        comp.push(b);
                        queue.push_back(b);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    /// Ok iff there is at least one honest agent and the honest subgraph is
    /// connected.
    pub fn validate(&self) -> std::result::Result<(), ConnectivityViolation> {
        let components = self.honest_components();
        if components.len() == 1 {
            Ok(())
        } else {
            Err(ConnectivityViolation { components })
        }
    }

    /// Plain-text audit listing: header, Byzantine set, then one edge per line.
    pub fn to_listing(&self) -> String {
        let mut out = format!("agents {}\n", self.num_agents);
        out.push_str("byzantine");
        for b in &self.byzantine {
            out.push_str(&format!(" {b}"));
        }
        out.push('\n');
        for (a, b) in &self.edges {
            out.push_str(&format!("edge {a} {b}\n"));
        }
        out
    }

    pub fn parse_listing(text: &str) -> Result<Self> {
        let mut agents = None;
        let mut byz = Vec::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let bad = |what: &str| Error::invalid(format!("listing line {}: {what}", lineno + 1));
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok()).ok_or_else(|| bad("expected an agent id"))
            };
            match parts.next() {
                None => continue,
                Some("agents") => agents = Some(parse(parts.next())?),
                Some("byzantine") => {
                    for p in parts {
                        byz.push(p.parse().map_err(|_| bad("bad byzantine id"))?);
                    }
                }
                Some("edge") => edges.push((parse(parts.next())?, parse(parts.next())?)),
                Some(other) => return Err(bad(&format!("unknown record `{other}`"))),
            }
        }
        let n = agents.ok_or_else(|| Error::invalid("listing has no `agents` line"))?;
        Topology::from_edges(n, edges)?.with_byzantine(&byz)
    }
}

/// Trust weights `w'` assigned by each agent to itself and its neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustWeights {
    matrix: DMatrix<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl TrustWeights {
    /// Metropolis–Hastings weights: `1 / (1 + max(deg a, deg b))` on every
    /// edge and the remaining mass on the diagonal.
    pub fn metropolis(topo: &Topology) -> Self {
        let n = topo.num_agents();
        let mut m = DMatrix::zeros(n, n);
        for (a, b) in topo.edges() {
            let w = 1.0 / (1.0 + topo.degree(a).max(topo.degree(b)) as f64);
            m[(a, b)] = w;
            m[(b, a)] = w;
        }
        for a in 0..n {
            let off: f64 = topo.neighbors(a).iter().map(|&b| m[(a, b)]).sum();
            m[(a, a)] = 1.0 - off;
        }
        TrustWeights { matrix: m }
    }

    /// Uniform weights `1/(deg+1)` over each closed neighbourhood. On a
    /// complete graph this is `1/N` everywhere.
    pub fn uniform(topo: &Topology) -> Self {
        let n = topo.num_agents();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            let w = 1.0 / (topo.degree(a) + 1) as f64;
            m[(a, a)] = w;
            for &b in topo.neighbors(a) {
                m[(a, b)] = w;
            }
        }
        TrustWeights { matrix: m }
    }

    /// Accepts an explicit matrix. Honest rows must be nonnegative,
    /// supported exactly on the closed neighbourhood, strictly positive there
    /// and sum to one.
    pub fn from_matrix(topo: &Topology, matrix: DMatrix<f64>) -> Result<Self> {
        let n = topo.num_agents();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::invalid(format!(
                "weight matrix is {}x{}, expected {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for a in 0..n {
            for b in 0..n {
                let w = matrix[(a, b)];
                let linked = a == b || topo.has_edge(a, b);
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::invalid(format!("weight w'[{a}][{b}] = {w} is not a nonnegative number")));
                }
                if !linked && w != 0.0 {
                    return Err(Error::invalid(format!("weight w'[{a}][{b}] = {w} but ({a},{b}) is not an edge")));
                }
                if linked && w == 0.0 && !topo.is_byzantine(a) {
                    return Err(Error::invalid(format!(
                        "weight w'[{a}][{b}] must be positive on the closed neighbourhood"
                    )));
                }
            }
            if !topo.is_byzantine(a) {
                let sum: f64 = matrix.row(a).iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::invalid(format!("weights of agent {a} sum to {sum}, expected 1")));
                }
            }
        }
        Ok(TrustWeights { matrix })
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[(a, b)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_agents(&self) -> usize {
        self.matrix.nrows()
    }

    /// Total weight agent `n` places on its Byzantine neighbours.
    pub fn byzantine_mass(&self, topo: &Topology, n: usize) -> f64 {
        topo.byzantine_neighbors(n).map(|b| self.get(n, b)).sum()
    }

    /// Total weight agent `n` places on its honest neighbours (self excluded).
    pub fn honest_neighbor_mass(&self, topo: &Topology, n: usize) -> f64 {
        topo.honest_neighbors(n).map(|m| self.get(n, m)).sum()
    }

    /// Listing with one `weight a b value` line per nonzero entry.
    pub fn to_listing(&self) -> String {
        let n = self.num_agents();
        let mut out = String::new();
        for a in 0..n {
            for b in 0..n {
                let w = self.matrix[(a, b)];
                if w != 0.0 {
                    out.push_str(&format!("weight {a} {b} {w:.17e}\n"));
                }
            }
        }
        out
    }
}
