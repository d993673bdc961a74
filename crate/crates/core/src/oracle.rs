//! Exhaustive ground truth at desk scale: minimal capacities for fixed
//! decisions, optimal decisions by enumeration and small-graph sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{build_topology_lp, LpError};
use crate::model::{
    rejection_cost, ChannelMap, ChannelState, CostBreakdown, CostParams, DecisionSequence, Edge, ModelError, NodeId,
    Topology, TopologyKind, TransactionSequence, Verdict, EPS,
};

/// Largest sequence `optimal_decisions` enumerates.
pub const MAX_ENUMERATED_TRANSACTIONS: usize = 20;
/// Largest node count `enumerate_connected_graphs` accepts.
pub const MAX_ENUMERATED_NODES: usize = 4;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{n} transactions exceed the enumeration limit of {limit}")]
    TooManyTransactions { n: usize, limit: usize },
    #[error("{p} nodes exceed the graph enumeration limit of {limit}")]
    TooManyNodes { p: usize, limit: usize },
    #[error("unsupported topology: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn has_unique_paths(top: &Topology) -> bool {
    match top.kind() {
        TopologyKind::Star { .. } | TopologyKind::DoubleStar { .. } | TopologyKind::Complete => true,
        TopologyKind::Arbitrary => top.is_tree(),
    }
}

/// Signed flow into the lower side of each edge, in transaction order.
struct EdgeEvents {
    edges: Vec<Edge>,
    /// events[e] = [(tx index, signed amount into lo)]
    events: Vec<Vec<(usize, f64)>>,
    /// per transaction, the edges its path uses
    touches: Vec<Vec<usize>>,
}

impl EdgeEvents {
    fn new(top: &Topology, seq: &TransactionSequence) -> Result<Self, OracleError> {
        if !has_unique_paths(top) {
            return Err(OracleError::Unsupported(
                "multi-path topology; use the topology LP".into(),
            ));
        }
        let edges: Vec<Edge> = top.edges().iter().copied().collect();
        let index: BTreeMap<Edge, usize> = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut events = vec![Vec::new(); edges.len()];
        let mut touches = Vec::with_capacity(seq.len());
        for tx in seq {
            let path = top.path(tx.source, tx.target)?;
            let mut used = Vec::new();
            for hop in path.windows(2) {
                let e = Edge::new(hop[0], hop[1]);
                let k = index[&e];
                let into_lo = if hop[0] == e.lo() { -tx.amount } else { tx.amount };
                events[k].push((tx.index, into_lo));
                used.push(k);
            }
            touches.push(used);
        }
        Ok(EdgeEvents { edges, events, touches })
    }

    /// Minimal (lo side, hi side) making the accepted flows on edge `k`
    /// feasible.
    fn requirement(&self, k: usize, accepted: impl Fn(usize) -> bool) -> (f64, f64) {
        let (mut cum, mut lo, mut hi) = (0.0_f64, 0.0_f64, 0.0_f64);
        for &(i, d) in &self.events[k] {
            if accepted(i) {
                cum += d;
                lo = lo.min(cum);
                hi = hi.max(cum);
            }
        }
        (-lo, hi)
    }
}

/// Smallest initial balances under which `decisions` replay without an
/// overdraft, per channel and side.
pub fn min_capacity_given_decisions(
    top: &Topology,
    seq: &TransactionSequence,
    decisions: &DecisionSequence,
) -> Result<ChannelMap, OracleError> {
    if decisions.len() != seq.len() {
        return Err(ModelError::DecisionLength {
            expected: seq.len(),
            found: decisions.len(),
        }
        .into());
    }
    let ev = EdgeEvents::new(top, seq)?;
    Ok(ev
        .edges
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let (lo, hi) = ev.requirement(k, |i| decisions.accepted(i));
            (e, ChannelState::new(lo, hi))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub decisions: DecisionSequence,
    pub capacities: ChannelMap,
    pub cost: CostBreakdown,
    pub explored: u64,
}

#[derive(Clone, Copy)]
struct Candidate {
    /// bit `i` set means transaction `i` is accepted
    mask: u64,
    cost: f64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let tol = 1e-9 * (1.0 + a.cost.abs().max(b.cost.abs()));
    if (a.cost - b.cost).abs() > tol {
        return a.cost < b.cost;
    }
    let (ca, cb) = (a.mask.count_ones(), b.mask.count_ones());
    if ca != cb {
        return ca > cb;
    }
    let diff = a.mask ^ b.mask;
    // Accept sorts before Reject at the first differing index
    diff != 0 && a.mask & (1 << diff.trailing_zeros()) != 0
}

/// Exhaustive search over all `2^n` decision vectors. Ties go to more
/// acceptances, then to the lexicographically smallest vector with Accept
/// ordered before Reject.
pub fn optimal_decisions(
    top: &Topology,
    seq: &TransactionSequence,
    costs: &CostParams,
) -> Result<OracleResult, OracleError> {
    let n = seq.len();
    if n > MAX_ENUMERATED_TRANSACTIONS {
        return Err(OracleError::TooManyTransactions {
            n,
            limit: MAX_ENUMERATED_TRANSACTIONS,
        });
    }
    costs.validate()?;
    let ev = EdgeEvents::new(top, seq)?;
    let creation = costs.k * top.edges().len() as f64;
    let reject: Vec<f64> = seq.iter().map(|tx| rejection_cost(tx.amount, costs)).collect();

    // the top bits pick a chunk, each chunk walks its low bits in Gray order
    let high = n.min(6);
    let low = n - high;
    let chunks: Vec<Candidate> = (0..1u64 << high)
        .into_par_iter()
        .map(|chunk| {
            let base = chunk << low;
            let mut mask = base;
            let mut req: Vec<f64> = (0..ev.edges.len())
                .map(|k| {
                    let (a, b) = ev.requirement(k, |i| mask >> i & 1 == 1);
                    a + b
                })
                .collect();
            let mut rej: f64 = (0..n).filter(|&i| mask >> i & 1 == 0).map(|i| reject[i]).sum();
            let mut best = Candidate {
                mask,
                cost: req.iter().sum::<f64>() + rej,
            };
            for g in 1..1u64 << low {
                let bit = g.trailing_zeros() as usize;
                mask ^= 1 << bit;
                if mask >> bit & 1 == 1 {
                    rej -= reject[bit];
                } else {
                    rej += reject[bit];
                }
                for &k in &ev.touches[bit] {
                    let (a, b) = ev.requirement(k, |i| mask >> i & 1 == 1);
                    req[k] = a + b;
                }
                let cand = Candidate {
                    mask,
                    cost: req.iter().sum::<f64>() + rej,
                };
                if better(&cand, &best) {
                    best = cand;
                }
            }
            best
        })
        .collect();
    let mut best = chunks[0];
    for cand in &chunks[1..] {
        if better(cand, &best) {
            best = *cand;
        }
    }

    let decisions = DecisionSequence(
        (0..n)
            .map(|i| {
                if best.mask >> i & 1 == 1 {
                    Verdict::Accept
                } else {
                    Verdict::Reject
                }
            })
            .collect(),
    );
    let capacities = min_capacity_given_decisions(top, seq, &decisions)?;
    let capacity: f64 = capacities.values().map(|st| st.total).sum();
    let rejection = decisions.rejection_cost(seq, costs);
    Ok(OracleResult {
        decisions,
        capacities,
        cost: CostBreakdown::new(creation, capacity, rejection),
        explored: 1u64 << n,
    })
}

/// Minimal all-accept capacity on `top`. Unique-path topologies use the
/// running-deficit computation, others the all-accept LP over their edges.
pub fn ac_all_accept(top: &Topology, seq: &TransactionSequence) -> Result<f64, OracleError> {
    let unique = match top.kind() {
        TopologyKind::Complete => false,
        _ => has_unique_paths(top),
    };
    if unique {
        let all = DecisionSequence::all(Verdict::Accept, seq.len());
        Ok(min_capacity_given_decisions(top, seq, &all)?
            .values()
            .map(|st| st.total)
            .sum())
    } else {
        Ok(build_topology_lp(seq, top)?.solve()?.objective.max(0.0))
    }
}

/// Every connected labeled graph on `p` nodes.
pub fn enumerate_connected_graphs(p: usize) -> Result<Vec<Topology>, OracleError> {
    if p > MAX_ENUMERATED_NODES {
        return Err(OracleError::TooManyNodes {
            p,
            limit: MAX_ENUMERATED_NODES,
        });
    }
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for subset in 0..1u32 << pairs.len() {
        let edges = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| subset >> i & 1 == 1)
            .map(|(_, &e)| e);
        match Topology::arbitrary(p, edges) {
            Ok(g) => out.push(g),
            Err(ModelError::Disconnected) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Tolerance-aware `a <= b`.
pub fn le_tol(a: f64, b: f64) -> bool {
    a <= b + EPS * (1.0 + b.abs())
}

/// Node ids of a star's leaves, center excluded.
pub fn star_leaves(top: &Topology) -> Vec<NodeId> {
    match top.kind() {
        TopologyKind::Star { center } => (0..top.node_count()).map(NodeId).filter(|v| v != center).collect(),
        _ => Vec::new(),
    }
}
