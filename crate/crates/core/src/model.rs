//! Domain types for payment channel networks: transactions, costs,
//! topologies, channel states and exact replay of a decision sequence.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for every balance and LP comparison in the crate.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transaction {index}: source equals target ({node})")]
    SelfLoop { index: usize, node: NodeId },
    #[error("transaction {index}: amount must be strictly positive, got {amount}")]
    NonPositiveAmount { index: usize, amount: f64 },
    #[error("transaction {index}: node {node} outside 0..{party_count}")]
    UnknownNode {
        index: usize,
        node: NodeId,
        party_count: usize,
    },
    #[error("transaction at position {position} carries index {found}")]
    BadIndex { position: usize, found: usize },
    #[error("cost parameters must be non-negative: {0:?}")]
    NegativeCost(CostParams),
    #[error("topology is not connected")]
    Disconnected,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("no path from {from} to {to}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("decision sequence has {found} verdicts for {expected} transactions")]
    DecisionLength { expected: usize, found: usize },
    #[error("transaction {index}: {from} holds {available} on channel {edge}, needs {required}")]
    Infeasible {
        index: usize,
        edge: Edge,
        from: NodeId,
        available: f64,
        required: f64,
    },
    #[error("channel {edge}: sides {side_u} + {side_v} do not match total {total}")]
    BrokenChannel {
        edge: Edge,
        total: f64,
        side_u: f64,
        side_v: f64,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(value: usize) -> Self {
        NodeId(value)
    }
}

/// An unordered node pair, stored with the smaller id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    lo: NodeId,
    hi: NodeId,
}

impl Edge {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Edge { lo: a, hi: b }
        } else {
            Edge { lo: b, hi: a }
        }
    }

    pub fn lo(self) -> NodeId {
        self.lo
    }

    pub fn hi(self) -> NodeId {
        self.hi
    }

    pub fn contains(self, v: NodeId) -> bool {
        self.lo == v || self.hi == v
    }

    pub fn other(self, v: NodeId) -> NodeId {
        if self.lo == v {
            self.hi
        } else {
            self.lo
        }
    }

    /// Parses the `"u-v"` form used in JSON maps.
    pub fn parse(s: &str) -> Option<Edge> {
        let (a, b) = s.split_once('-')?;
        Some(Edge::new(
            NodeId(a.trim().parse().ok()?),
            NodeId(b.trim().parse().ok()?),
        ))
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl Serialize for Edge {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Edge::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad edge key {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    #[serde(rename = "i")]
    pub index: usize,
    #[serde(rename = "s")]
    pub source: NodeId,
    #[serde(rename = "t")]
    pub target: NodeId,
    #[serde(rename = "x")]
    pub amount: f64,
}

/// An ordered transaction sequence over `party_count` nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransactionSequence {
    items: Vec<Transaction>,
    party_count: usize,
}

impl TransactionSequence {
    /// Builds a sequence from `(source, target, amount)` triples, assigning
    /// indices in order.
    pub fn from_triples(
        party_count: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, ModelError> {
        let items = triples
            .into_iter()
            .enumerate()
            .map(|(index, (s, t, x))| Transaction {
                index,
                source: NodeId(s),
                target: NodeId(t),
                amount: x,
            })
            .collect();
        Self::new(party_count, items)
    }

    pub fn new(party_count: usize, items: Vec<Transaction>) -> Result<Self, ModelError> {
        for (position, tx) in items.iter().enumerate() {
            if tx.index != position {
                return Err(ModelError::BadIndex {
                    position,
                    found: tx.index,
                });
            }
            if tx.source == tx.target {
                return Err(ModelError::SelfLoop {
                    index: tx.index,
                    node: tx.source,
                });
            }
            if !tx.amount.is_finite() || tx.amount <= 0.0 {
                return Err(ModelError::NonPositiveAmount {
                    index: tx.index,
                    amount: tx.amount,
                });
            }
            for node in [tx.source, tx.target] {
                if node.0 >= party_count {
                    return Err(ModelError::UnknownNode {
                        index: tx.index,
                        node,
                        party_count,
                    });
                }
            }
        }
        Ok(TransactionSequence { items, party_count })
    }

    pub fn items(&self) -> &[Transaction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    pub fn get(&self, index: usize) -> Option<&Transaction> {
        self.items.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transaction> {
        self.items.iter()
    }

    pub fn total_volume(&self) -> f64 {
        self.items.iter().map(|tx| tx.amount).sum()
    }

    /// Reads JSON Lines, one `{"i","s","t","x"}` object per line. Blank lines
    /// are skipped. Without an explicit party count, it is one past the
    /// largest node id seen.
    pub fn read_jsonl<R: BufRead>(reader: R, party_count: Option<usize>) -> Result<Self, ModelError> {
        let mut items = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tx: Transaction = serde_json::from_str(&line).map_err(|source| ModelError::Json {
                line: line_no + 1,
                source,
            })?;
            items.push(tx);
        }
        let p = party_count.unwrap_or_else(|| {
            items
                .iter()
                .map(|tx| tx.source.0.max(tx.target.0) + 1)
                .max()
                .unwrap_or(0)
        });
        Self::new(p, items)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), ModelError> {
        for tx in &self.items {
            serde_json::to_writer(&mut writer, tx).map_err(|source| ModelError::Json {
                line: tx.index + 1,
                source,
            })?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TransactionSequence {
    type Item = &'a Transaction;
    type IntoIter = std::slice::Iter<'a, Transaction>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Channel creation cost `k`, proportional rejection fee `f` and fixed
/// rejection fee `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostParams {
    pub k: f64,
    pub f: f64,
    pub m: f64,
}

impl CostParams {
    pub fn new(k: f64, f: f64, m: f64) -> Result<Self, ModelError> {
        let params = CostParams { k, f, m };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = [self.k, self.f, self.m].iter().all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(ModelError::NegativeCost(*self))
        }
    }
}

pub fn rejection_cost(amount: f64, costs: &CostParams) -> f64 {
    costs.f * amount + costs.m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Star {
        center: NodeId,
    },
    DoubleStar {
        center: NodeId,
        /// `(middle, leaves)` per cluster.
        clusters: Vec<(NodeId, Vec<NodeId>)>,
    },
    Arbitrary,
}

/// A connected channel graph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: BTreeSet<Edge>,
    adjacency: Vec<Vec<NodeId>>,
    kind: TopologyKind,
}

impl Topology {
    fn build(node_count: usize, edges: BTreeSet<Edge>, kind: TopologyKind) -> Result<Self, ModelError> {
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &edges {
            if e.lo == e.hi {
                return Err(ModelError::InvalidTopology(format!("self loop at {}", e.lo)));
            }
            if e.hi.0 >= node_count {
                return Err(ModelError::InvalidTopology(format!("edge {e} outside 0..{node_count}")));
            }
            adjacency[e.lo.0].push(e.hi);
            adjacency[e.hi.0].push(e.lo);
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        let top = Topology {
            node_count,
            edges,
            adjacency,
            kind,
        };
        if !top.is_connected() {
            return Err(ModelError::Disconnected);
        }
        Ok(top)
    }

    pub fn complete(node_count: usize) -> Result<Self, ModelError> {
        let mut edges = BTreeSet::new();
        for a in 0..node_count {
            for b in a + 1..node_count {
                edges.insert(Edge::new(NodeId(a), NodeId(b)));
            }
        }
        Self::build(node_count, edges, TopologyKind::Complete)
    }

    pub fn star(node_count: usize, center: NodeId) -> Result<Self, ModelError> {
        if center.0 >= node_count {
            return Err(ModelError::InvalidTopology(format!(
                "center {center} outside 0..{node_count}"
            )));
        }
        let edges = (0..node_count)
            .map(NodeId)
            .filter(|&v| v != center)
            .map(|v| Edge::new(v, center))
            .collect();
        Self::build(node_count, edges, TopologyKind::Star { center })
    }

    /// A center joined to one middle node per cluster, each middle joined to
    /// its cluster's leaves. Every node id in `0..node_count` must appear
    /// exactly once.
    pub fn double_star(
        node_count: usize,
        center: NodeId,
        clusters: Vec<(NodeId, Vec<NodeId>)>,
    ) -> Result<Self, ModelError> {
        let mut seen = vec![false; node_count];
        let mut mark = |v: NodeId| -> Result<(), ModelError> {
            match seen.get_mut(v.0) {
                Some(flag) if !*flag => {
                    *flag = true;
                    Ok(())
                }
                Some(_) => Err(ModelError::InvalidTopology(format!("node {v} used twice"))),
                None => Err(ModelError::InvalidTopology(format!("node {v} outside 0..{node_count}"))),
            }
        };
        mark(center)?;
        let mut edges = BTreeSet::new();
        for (middle, leaves) in &clusters {
            mark(*middle)?;
            edges.insert(Edge::new(*middle, center));
            for &leaf in leaves {
                mark(leaf)?;
                edges.insert(Edge::new(leaf, *middle));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::InvalidTopology(format!(
                "node {missing} not placed in the double star"
            )));
        }
        Self::build(node_count, edges, TopologyKind::DoubleStar { center, clusters })
    }

    pub fn arbitrary(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, ModelError> {
        let edges = edges
            .into_iter()
            .map(|(a, b)| Edge::new(NodeId(a), NodeId(b)))
            .collect();
        Self::build(node_count, edges, TopologyKind::Arbitrary)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.0]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&Edge::new(a, b))
    }

    fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return true;
        }
        let dist = self.bfs(NodeId(0)).0;
        dist.iter().all(|d| d.is_some())
    }

    /// Breadth-first search with neighbours visited in increasing id order.
    fn bfs(&self, from: NodeId) -> (Vec<Option<usize>>, Vec<Option<NodeId>>) {
        let mut dist = vec![None; self.node_count];
        let mut parent = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        dist[from.0] = Some(0);
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.0].unwrap_or(0);
            for &w in &self.adjacency[v.0] {
                if dist[w.0].is_none() {
                    dist[w.0] = Some(d + 1);
                    parent[w.0] = Some(v);
                    queue.push_back(w);
                }
            }
        }
        (dist, parent)
    }

    /// True when every pair of nodes is joined by exactly one simple path.
    pub fn is_tree(&self) -> bool {
        self.edges.len() + 1 == self.node_count
    }

    pub fn diameter(&self) -> usize {
        (0..self.node_count)
            .map(|v| self.bfs(NodeId(v)).0.into_iter().flatten().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// A shortest path from `s` to `t`, both endpoints included. Ties go to
    /// the lowest-id neighbour discovered first by BFS.
    pub fn path(&self, s: NodeId, t: NodeId) -> Result<Vec<NodeId>, ModelError> {
        if s.0 >= self.node_count || t.0 >= self.node_count {
            return Err(ModelError::Unreachable { from: s, to: t });
        }
        if s == t {
            return Ok(vec![s]);
        }
        if matches!(self.kind, TopologyKind::Complete) {
            return Ok(vec![s, t]);
        }
        let parent = self.bfs(s).1;
        let mut path = vec![t];
        let mut cur = t;
        while cur != s {
            cur = parent[cur.0].ok_or(ModelError::Unreachable { from: s, to: t })?;
            path.push(cur);
        }
        path.reverse();
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ChannelState {
    pub total: f64,
    /// Balance of the edge's lower-id endpoint.
    pub side_u: f64,
    /// Balance of the edge's higher-id endpoint.
    pub side_v: f64,
}

impl ChannelState {
    pub fn new(side_u: f64, side_v: f64) -> Self {
        ChannelState {
            total: side_u + side_v,
            side_u,
            side_v,
        }
    }

    /// Balance held by `node`, one of the channel's endpoints.
    pub fn side(&self, edge: Edge, node: NodeId) -> f64 {
        if node == edge.lo {
            self.side_u
        } else {
            self.side_v
        }
    }

    fn check(&self, edge: Edge) -> Result<(), ModelError> {
        let ok = self.side_u >= -EPS
            && self.side_v >= -EPS
            && (self.side_u + self.side_v - self.total).abs() <= EPS * (1.0 + self.total.abs());
        if ok {
            Ok(())
        } else {
            Err(ModelError::BrokenChannel {
                edge,
                total: self.total,
                side_u: self.side_u,
                side_v: self.side_v,
            })
        }
    }

    /// Moves `amount` from `from` to the opposite endpoint.
    fn transfer(&mut self, edge: Edge, from: NodeId, amount: f64) {
        if from == edge.lo {
            self.side_u -= amount;
            self.side_v += amount;
        } else {
            self.side_v -= amount;
            self.side_u += amount;
        }
        // absorb rounding so sides stay non-negative and sum to the total
        if self.side_u < 0.0 {
            self.side_u = 0.0;
            self.side_v = self.total;
        } else if self.side_v < 0.0 {
            self.side_v = 0.0;
            self.side_u = self.total;
        }
    }
}

pub type ChannelMap = BTreeMap<Edge, ChannelState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct DecisionSequence(pub Vec<Verdict>);

impl DecisionSequence {
    pub fn all(verdict: Verdict, n: usize) -> Self {
        DecisionSequence(vec![verdict; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn accepted(&self, index: usize) -> bool {
        self.0[index] == Verdict::Accept
    }

    pub fn accept_count(&self) -> usize {
        self.0.iter().filter(|v| **v == Verdict::Accept).count()
    }

    pub fn rejection_cost(&self, seq: &TransactionSequence, costs: &CostParams) -> f64 {
        seq.iter()
            .zip(&self.0)
            .filter(|(_, v)| **v == Verdict::Reject)
            .map(|(tx, _)| rejection_cost(tx.amount, costs))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostBreakdown {
    pub creation: f64,
    pub capacity: f64,
    pub rejection: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(creation: f64, capacity: f64, rejection: f64) -> Self {
        CostBreakdown {
            creation,
            capacity,
            rejection,
            total: creation + capacity + rejection,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub final_states: ChannelMap,
    pub cost: CostBreakdown,
}

/// Replays `decisions` over `top` from the `initial` channel states.
///
/// Accepted transactions move their amount along the topology path, the
/// forwarding side of every hop losing it and the receiving side gaining it.
/// Channels absent from `initial` start empty. Fails on the first accepted
/// hop whose forwarding side cannot cover the amount.
pub fn replay(
    top: &Topology,
    seq: &TransactionSequence,
    decisions: &DecisionSequence,
    initial: &ChannelMap,
    costs: &CostParams,
) -> Result<ReplayOutcome, ModelError> {
    if decisions.len() != seq.len() {
        return Err(ModelError::DecisionLength {
            expected: seq.len(),
            found: decisions.len(),
        });
    }
    let mut states: ChannelMap = top
        .edges()
        .iter()
        .map(|&e| (e, initial.get(&e).copied().unwrap_or_default()))
        .collect();
    for (e, st) in &states {
        st.check(*e)?;
    }
    let capacity: f64 = states.values().map(|st| st.total).sum();
    let mut rejection = 0.0;

    for (tx, verdict) in seq.iter().zip(&decisions.0) {
        match verdict {
            Verdict::Reject => rejection += rejection_cost(tx.amount, costs),
            Verdict::Accept => {
                let path = top.path(tx.source, tx.target)?;
                for hop in path.windows(2) {
                    let edge = Edge::new(hop[0], hop[1]);
                    let st = states.get_mut(&edge).ok_or(ModelError::Unreachable {
                        from: tx.source,
                        to: tx.target,
                    })?;
                    let available = st.side(edge, hop[0]);
                    if available + EPS < tx.amount {
                        return Err(ModelError::Infeasible {
                            index: tx.index,
                            edge,
                            from: hop[0],
                            available,
                            required: tx.amount,
                        });
                    }
                    st.transfer(edge, hop[0], tx.amount);
                    st.check(edge)?;
                }
            }
        }
    }

    let creation = costs.k * top.edges().len() as f64;
    Ok(ReplayOutcome {
        final_states: states,
        cost: CostBreakdown::new(creation, capacity, rejection),
    })
}
