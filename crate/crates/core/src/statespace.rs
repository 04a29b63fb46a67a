//! State spaces, transition graphs, composable partitions and configuration
//! vectors.
//!
//! States are dense 0-based indices `0..s` throughout the library. File
//! formats and parameter names shift them to the 1-based numbering used in
//! the literature (`1..s`).
//!
//! A [`Structure`] is the validated combination of a [`TransitionGraph`] and a
//! [`Partition`]. It precomputes everything the measure needs: the ordered
//! block pairs that carry at least one cross edge, the source states of each
//! pair, and the destination groups over which the multinomial weights are
//! defined.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graphs shipped with the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuiltinGraph {
    /// Alive -> Dead.
    Survival,
    /// Healthy -> Ill, Healthy -> Dead, Ill -> Dead.
    IllnessDeath,
    /// Illness-death with the recovery edge Ill -> Healthy.
    BidirectionalIllnessDeath,
    /// One live state and `L` absorbing causes of failure.
    CompetingRisks(usize),
    /// `L` binary risk processes (every subset of acquired conditions is a
    /// state) plus an absorbing death state reachable from every live state.
    Comorbidity(usize),
    /// Cardiac allograft vasculopathy: NoCAV, Mild, Severe, Dead.
    Cav,
}

impl FromStr for BuiltinGraph {
    type Err = Error;

    /// Accepts `survival`, `illness_death`, `bidirectional_illness_death`,
    /// `cav`, `competing_risks(L)` and `comorbidity(L)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let with_arg = |prefix: &str| -> Option<Result<usize>> {
            let rest = s.strip_prefix(prefix)?;
            let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                inner
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidGraph(format!("bad argument in `{s}`"))),
            )
        };
        match s {
            "survival" => Ok(BuiltinGraph::Survival),
            "illness_death" => Ok(BuiltinGraph::IllnessDeath),
            "bidirectional_illness_death" => Ok(BuiltinGraph::BidirectionalIllnessDeath),
            "cav" => Ok(BuiltinGraph::Cav),
            _ => {
                if let Some(l) = with_arg("competing_risks") {
                    Ok(BuiltinGraph::CompetingRisks(l?))
                } else if let Some(l) = with_arg("comorbidity") {
                    Ok(BuiltinGraph::Comorbidity(l?))
                } else {
                    Err(Error::InvalidGraph(format!("unknown builtin graph `{s}`")))
                }
            }
        }
    }
}

impl fmt::Display for BuiltinGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinGraph::Survival => write!(f, "survival"),
            BuiltinGraph::IllnessDeath => write!(f, "illness_death"),
            BuiltinGraph::BidirectionalIllnessDeath => write!(f, "bidirectional_illness_death"),
            BuiltinGraph::CompetingRisks(l) => write!(f, "competing_risks({l})"),
            BuiltinGraph::Comorbidity(l) => write!(f, "comorbidity({l})"),
            BuiltinGraph::Cav => write!(f, "cav"),
        }
    }
}

/// A directed transition graph on `0..s` with at least one absorbing state.
///
/// Absorbing states are exactly the vertices without outgoing edges, and
/// every live state has a directed path into some absorbing state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    n_states: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<String>,
    out_edges: Vec<Vec<usize>>,
    absorbing: Vec<bool>,
}

impl TransitionGraph {
    /// Builds a graph from 0-based edges. Edges are stored sorted.
    pub fn from_edges(n_states: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let labels = (1..=n_states).map(|i| i.to_string()).collect();
        Self::with_labels(n_states, edges, labels)
    }

    pub fn with_labels(
        n_states: usize,
        edges: &[(usize, usize)],
        labels: Vec<String>,
    ) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::InvalidGraph(format!(
                "a survival state space needs at least 2 states, got {n_states}"
            )));
        }
        if labels.len() != n_states {
            return Err(Error::InvalidGraph(format!(
                "{} labels given for {n_states} states",
                labels.len()
            )));
        }
        let mut sorted = edges.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    w[0].0 + 1,
                    w[0].1 + 1
                )));
            }
        }
        let mut out_edges = vec![Vec::new(); n_states];
        for (e, &(from, to)) in sorted.iter().enumerate() {
            if from >= n_states || to >= n_states {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a vertex outside 1..{n_states}",
                    from + 1,
                    to + 1
                )));
            }
            if from == to {
                return Err(Error::InvalidGraph(format!(
                    "self-loop at state {}: jumps occur between distinct states",
                    from + 1
                )));
            }
            out_edges[from].push(e);
        }
        let absorbing: Vec<bool> = out_edges.iter().map(|o| o.is_empty()).collect();
        if !absorbing.iter().any(|&a| a) {
            return Err(Error::InvalidGraph(
                "no absorbing state: at least one state must have no outgoing edges".into(),
            ));
        }
        let graph = TransitionGraph { n_states, edges: sorted, labels, out_edges, absorbing };
        graph.check_reaches_absorbing()?;
        Ok(graph)
    }

    pub fn builtin(kind: BuiltinGraph) -> Result<Self> {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match kind {
            BuiltinGraph::Survival => Self::with_labels(2, &[(0, 1)], owned(&["Alive", "Dead"])),
            BuiltinGraph::IllnessDeath => Self::with_labels(
                3,
                &[(0, 1), (0, 2), (1, 2)],
                owned(&["Healthy", "Ill", "Dead"]),
            ),
            BuiltinGraph::BidirectionalIllnessDeath => Self::with_labels(
                3,
                &[(0, 1), (1, 0), (0, 2), (1, 2)],
                owned(&["Healthy", "Ill", "Dead"]),
            ),
            BuiltinGraph::CompetingRisks(l) => {
                if l == 0 {
                    return Err(Error::InvalidGraph("competing_risks needs L >= 1".into()));
                }
                let edges: Vec<_> = (1..=l).map(|k| (0, k)).collect();
                let mut labels = vec!["Alive".to_string()];
                labels.extend((1..=l).map(|k| format!("Cause{k}")));
                Self::with_labels(l + 1, &edges, labels)
            }
            BuiltinGraph::Comorbidity(l) => {
                if l == 0 || l > 10 {
                    return Err(Error::InvalidGraph("comorbidity needs 1 <= L <= 10".into()));
                }
                let live = 1usize << l;
                let dead = live;
                let mut edges = Vec::new();
                for mask in 0..live {
                    for risk in 0..l {
                        if mask & (1 << risk) == 0 {
                            edges.push((mask, mask | (1 << risk)));
                        }
                    }
                    edges.push((mask, dead));
                }
                let mut labels: Vec<String> = (0..live)
                    .map(|mask| {
                        let held: Vec<String> = (0..l)
                            .filter(|r| mask & (1 << r) != 0)
                            .map(|r| (r + 1).to_string())
                            .collect();
                        format!("{{{}}}", held.join(","))
                    })
                    .collect();
                labels.push("Dead".into());
                Self::with_labels(live + 1, &edges, labels)
            }
            BuiltinGraph::Cav => Self::with_labels(
                4,
                &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 3), (1, 3), (2, 3)],
                owned(&["NoCAV", "Mild", "Severe", "Dead"]),
            ),
        }
    }

    fn check_reaches_absorbing(&self) -> Result<()> {
        // Backward search from the absorbing set.
        let mut reaches = self.absorbing.clone();
        let mut queue: VecDeque<usize> = (0..self.n_states).filter(|&i| reaches[i]).collect();
        while let Some(v) = queue.pop_front() {
            for &(from, to) in &self.edges {
                if to == v && !reaches[from] {
                    reaches[from] = true;
                    queue.push_back(from);
                }
            }
        }
        match reaches.iter().position(|&r| !r) {
            Some(i) => Err(Error::InvalidGraph(format!(
                "state {} has no directed path to an absorbing state",
                i + 1
            ))),
            None => Ok(()),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.edges.binary_search(&(from, to)).ok()
    }

    /// Edge indices leaving `state`.
    pub fn out_edges(&self, state: usize) -> &[usize] {
        &self.out_edges[state]
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state]
    }

    pub fn absorbing_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&i| self.absorbing[i]).collect()
    }

    pub fn live_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&i| !self.absorbing[i]).collect()
    }

    /// Shortest directed path `from -> to` whose intermediate vertices are all
    /// live states. Returns the visited states including both endpoints.
    pub fn shortest_live_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from == to {
            return Some(vec![from]);
        }
        let mut parent = vec![usize::MAX; self.n_states];
        let mut queue = VecDeque::from([from]);
        parent[from] = from;
        while let Some(v) = queue.pop_front() {
            if self.absorbing[v] {
                continue;
            }
            for &e in &self.out_edges[v] {
                let w = self.edges[e].1;
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    if w == to {
                        let mut path = vec![to];
                        let mut cur = to;
                        while cur != from {
                            cur = parent[cur];
                            path.push(cur);
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(w);
                }
            }
        }
        None
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        if state < self.n_states {
            Ok(())
        } else {
            Err(Error::StateOutOfRange { state, size: self.n_states })
        }
    }
}

/// How a graph is specified: a builtin name or an explicit 1-based edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GraphSpec {
    Builtin {
        builtin: String,
    },
    Explicit {
        states: usize,
        /// 1-based `(from, to)` pairs.
        edges: Vec<(usize, usize)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
    },
}

/// Builds and validates a graph from its specification.
pub fn build_graph(spec: &GraphSpec) -> Result<TransitionGraph> {
    match spec {
        GraphSpec::Builtin { builtin } => TransitionGraph::builtin(builtin.parse()?),
        GraphSpec::Explicit { states, edges, labels } => {
            let mut zero_based = Vec::with_capacity(edges.len());
            for &(a, b) in edges {
                if a == 0 || b == 0 {
                    return Err(Error::InvalidGraph(format!(
                        "edge ({a}, {b}): states are numbered from 1"
                    )));
                }
                zero_based.push((a - 1, b - 1));
            }
            match labels {
                Some(l) => TransitionGraph::with_labels(*states, &zero_based, l.clone()),
                None => TransitionGraph::from_edges(*states, &zero_based),
            }
        }
    }
}

/// A partition of `0..s` into blocks, each with a representative state.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    representatives: Vec<usize>,
    block_of: Vec<usize>,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>, representatives: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        if representatives.len() != blocks.len() {
            return Err(Error::InvalidPartition(format!(
                "{} representatives for {} blocks",
                representatives.len(),
                blocks.len()
            )));
        }
        let n_states = blocks.iter().flatten().copied().max().unwrap_or(0) + 1;
        let mut block_of = vec![usize::MAX; n_states];
        for (j, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidPartition(format!("block {} is empty", j + 1)));
            }
            for &state in block {
                if block_of[state] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "state {} appears in more than one block",
                        state + 1
                    )));
                }
                block_of[state] = j;
            }
            if !block.contains(&representatives[j]) {
                return Err(Error::InvalidPartition(format!(
                    "representative {} is not in block {}",
                    representatives[j] + 1,
                    j + 1
                )));
            }
        }
        if let Some(missing) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidPartition(format!(
                "state {} is not covered by any block",
                missing + 1
            )));
        }
        let mut blocks = blocks;
        for block in &mut blocks {
            block.sort_unstable();
        }
        Ok(Partition { blocks, representatives, block_of })
    }

    /// Blocks with their smallest member as representative.
    pub fn from_blocks(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let reps = blocks.iter().map(|b| b.iter().copied().min().unwrap_or(0)).collect();
        Self::new(blocks, reps)
    }

    /// The all-singletons partition.
    pub fn degenerate(n_states: usize) -> Self {
        let blocks: Vec<Vec<usize>> = (0..n_states).map(|i| vec![i]).collect();
        let reps = (0..n_states).collect();
        Self::new(blocks, reps).expect("singletons always partition the state space")
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    pub fn representative(&self, j: usize) -> usize {
        self.representatives[j]
    }

    pub fn block_of(&self, state: usize) -> usize {
        self.block_of[state]
    }

    pub fn n_states(&self) -> usize {
        self.block_of.len()
    }
}

/// Cross-block edge sets for every ordered block pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `cross_edges[j][j2]` lists the edge indices from block `j` into `j2`.
    pub cross_edges: Vec<Vec<Vec<usize>>>,
}

/// Checks the partition against the graph and reports cross-block edges.
pub fn validate(graph: &TransitionGraph, partition: &Partition) -> Result<ValidationReport> {
    if partition.n_states() != graph.n_states() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} states but the graph has {}",
            partition.n_states(),
            graph.n_states()
        )));
    }
    for (j, block) in partition.blocks().iter().enumerate() {
        let absorbing = block.iter().filter(|&&i| graph.is_absorbing(i)).count();
        if absorbing != 0 && absorbing != block.len() {
            return Err(Error::InvalidPartition(format!(
                "block {} mixes absorbing and live states",
                j + 1
            )));
        }
    }
    let k = partition.n_blocks();
    let mut cross_edges = vec![vec![Vec::new(); k]; k];
    for (e, &(from, to)) in graph.edges().iter().enumerate() {
        cross_edges[partition.block_of(from)][partition.block_of(to)].push(e);
    }
    Ok(ValidationReport { cross_edges })
}

/// Number of units in each state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigurationVector(pub Vec<u32>);

impl ConfigurationVector {
    pub fn zeros(n_states: usize) -> Self {
        ConfigurationVector(vec![0; n_states])
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }
}

impl std::ops::Index<usize> for ConfigurationVector {
    type Output = u32;
    fn index(&self, i: usize) -> &u32 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ConfigurationVector {
    fn index_mut(&mut self, i: usize) -> &mut u32 {
        &mut self.0[i]
    }
}

/// Summarises a vector of (0-based) unit states as per-state counts.
pub fn configuration_of(states: &[usize], n_states: usize) -> Result<ConfigurationVector> {
    let mut x = ConfigurationVector::zeros(n_states);
    for &state in states {
        if state >= n_states {
            return Err(Error::StateOutOfRange { state, size: n_states });
        }
        x[state] += 1;
    }
    Ok(x)
}

/// An ordered block pair `(j, j')` with at least one cross edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPair {
    pub from_block: usize,
    pub to_block: usize,
    /// Edge indices from `from_block` into `to_block`.
    pub edges: Vec<usize>,
    /// States of `from_block` with at least one edge into `to_block`.
    pub sources: Vec<usize>,
    /// Source whose relative log-risk is pinned to 1.
    pub reference: usize,
}

/// Destinations of one source state within one block pair; the weights
/// over these edges sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGroup {
    pub source: usize,
    pub pair: usize,
    pub edges: Vec<usize>,
}

/// A validated graph and partition with derived indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    graph: TransitionGraph,
    partition: Partition,
    pairs: Vec<BlockPair>,
    pair_of_edge: Vec<usize>,
    groups: Vec<AlphaGroup>,
    group_of_edge: Vec<usize>,
    pair_index: Vec<Vec<Option<usize>>>,
}

impl Structure {
    pub fn new(graph: TransitionGraph, partition: Partition) -> Result<Self> {
        let report = validate(&graph, &partition)?;
        let k = partition.n_blocks();
        let mut pairs = Vec::new();
        let mut pair_index = vec![vec![None; k]; k];
        let mut pair_of_edge = vec![usize::MAX; graph.n_edges()];
        for j in 0..k {
            for j2 in 0..k {
                let edges = &report.cross_edges[j][j2];
                if edges.is_empty() {
                    continue;
                }
                let mut sources: Vec<usize> = edges.iter().map(|&e| graph.edges()[e].0).collect();
                sources.sort_unstable();
                sources.dedup();
                let rep = partition.representative(j);
                let reference = if sources.contains(&rep) { rep } else { sources[0] };
                let idx = pairs.len();
                for &e in edges {
                    pair_of_edge[e] = idx;
                }
                pair_index[j][j2] = Some(idx);
                pairs.push(BlockPair {
                    from_block: j,
                    to_block: j2,
                    edges: edges.clone(),
                    sources,
                    reference,
                });
            }
        }
        let mut groups = Vec::new();
        let mut group_of_edge = vec![usize::MAX; graph.n_edges()];
        for (p, pair) in pairs.iter().enumerate() {
            for &source in &pair.sources {
                let edges: Vec<usize> = pair
                    .edges
                    .iter()
                    .copied()
                    .filter(|&e| graph.edges()[e].0 == source)
                    .collect();
                for &e in &edges {
                    group_of_edge[e] = groups.len();
                }
                groups.push(AlphaGroup { source, pair: p, edges });
            }
        }
        Ok(Structure { graph, partition, pairs, pair_of_edge, groups, group_of_edge, pair_index })
    }

    pub fn graph(&self) -> &TransitionGraph {
        &self.graph
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n_states(&self) -> usize {
        self.graph.n_states()
    }

    pub fn pairs(&self) -> &[BlockPair] {
        &self.pairs
    }

    pub fn pair(&self, p: usize) -> &BlockPair {
        &self.pairs[p]
    }

    /// Index of the block pair `(from_block, to_block)`, if it has edges.
    pub fn pair_index(&self, from_block: usize, to_block: usize) -> Option<usize> {
        self.pair_index.get(from_block)?.get(to_block).copied().flatten()
    }

    pub fn pair_of_edge(&self, edge: usize) -> usize {
        self.pair_of_edge[edge]
    }

    pub fn groups(&self) -> &[AlphaGroup] {
        &self.groups
    }

    pub fn group_of_edge(&self, edge: usize) -> usize {
        self.group_of_edge[edge]
    }

    /// The destination group of `source` in `pair`.
    pub fn group_index(&self, source: usize, pair: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.source == source && g.pair == pair)
    }

    /// `(pair, state)` combinations whose relative log-risk is a free
    /// parameter.
    pub fn free_gammas(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .enumerate()
            .flat_map(|(p, pair)| {
                pair.sources.iter().filter(move |&&l| l != pair.reference).map(move |&l| (p, l))
            })
            .collect()
    }

    /// `nu[j,j']` with 1-based block numbers.
    pub fn pair_name(&self, p: usize) -> String {
        let pair = &self.pairs[p];
        format!("{},{}", pair.from_block + 1, pair.to_block + 1)
    }
}
