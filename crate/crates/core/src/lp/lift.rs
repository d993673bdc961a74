//! Lifting an all-accept complete-graph solution onto another topology.
//!
//! Every pair channel of the complete graph becomes a bucket on each edge of
//! a shortest path between the pair in the target. A bucket carries the pair
//! channel's capacity and mirrors its side split, so the pair's balance
//! trajectory is replayed bucket by bucket.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CompletePlan, LpError};
use crate::model::{ChannelMap, ChannelState, Edge, NodeId, Topology, EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// The complete-graph channel this bucket stands for.
    pub pair: Edge,
    pub edge: Edge,
    /// Endpoint of `edge` on the `pair.lo()` end of the path.
    pub near_lo: NodeId,
    pub capacity: f64,
}

impl Bucket {
    fn state(&self, pair_state: &ChannelState) -> ChannelState {
        if self.near_lo == self.edge.lo() {
            ChannelState::new(pair_state.side_u, pair_state.side_v)
        } else {
            ChannelState::new(pair_state.side_v, pair_state.side_u)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedCapacities {
    pub buckets: Vec<Bucket>,
    /// Per-edge sum of the buckets' initial states.
    pub channels: ChannelMap,
    pub total: f64,
}

impl LiftedCapacities {
    pub fn capacities(&self) -> BTreeMap<Edge, f64> {
        self.channels.iter().map(|(&e, st)| (e, st.total)).collect()
    }
}

pub fn lift_solution(target: &Topology, plan: &CompletePlan) -> Result<LiftedCapacities, LpError> {
    let initial = plan.steps.first().cloned().unwrap_or_default();
    let mut buckets = Vec::new();
    let mut channels: ChannelMap = target.edges().iter().map(|&e| (e, ChannelState::default())).collect();
    for (&pair, st) in &initial {
        if st.total <= EPS {
            continue;
        }
        let path = target.path(pair.lo(), pair.hi())?;
        for hop in path.windows(2) {
            let bucket = Bucket {
                pair,
                edge: Edge::new(hop[0], hop[1]),
                near_lo: hop[0],
                capacity: st.total,
            };
            let b = bucket.state(st);
            let slot = channels.entry(bucket.edge).or_default();
            *slot = ChannelState::new(slot.side_u + b.side_u, slot.side_v + b.side_v);
            buckets.push(bucket);
        }
    }
    let total = channels.values().map(|st| st.total).sum();
    Ok(LiftedCapacities {
        buckets,
        channels,
        total,
    })
}

/// Replays every step of `plan` through the buckets, checking that no bucket
/// side goes negative and bucket totals stay fixed. Returns the aggregated
/// per-edge states after each step.
pub fn replay_buckets(lifted: &LiftedCapacities, plan: &CompletePlan) -> Result<Vec<ChannelMap>, LpError> {
    let mut out = Vec::with_capacity(plan.steps.len());
    for (i, step) in plan.steps.iter().enumerate() {
        let mut agg: ChannelMap = lifted.channels.keys().map(|&e| (e, ChannelState::default())).collect();
        for bucket in &lifted.buckets {
            let pair_state = step.get(&bucket.pair).copied().unwrap_or_default();
            let st = bucket.state(&pair_state);
            let tol = EPS * (1.0 + bucket.capacity);
            for (node, balance) in [(bucket.edge.lo(), st.side_u), (bucket.edge.hi(), st.side_v)] {
                if balance < -tol {
                    return Err(LpError::NegativeBalance {
                        index: i.saturating_sub(1),
                        edge: bucket.edge,
                        node,
                        balance,
                    });
                }
            }
            if (st.total - bucket.capacity).abs() > tol {
                return Err(LpError::Model(crate::model::ModelError::BrokenChannel {
                    edge: bucket.edge,
                    total: bucket.capacity,
                    side_u: st.side_u,
                    side_v: st.side_v,
                }));
            }
            let slot = agg.entry(bucket.edge).or_default();
            *slot = ChannelState::new(slot.side_u + st.side_u, slot.side_v + st.side_v);
        }
        out.push(agg);
    }
    Ok(out)
}
