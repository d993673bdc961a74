//! Linear programs over channel networks: the all-accept flow LP on a fixed
//! edge set, the fractional-acceptance LP on unique-path topologies (star and
//! double star) and the lift of complete-graph solutions onto other graphs.

mod lift;
pub mod simplex;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster_alg::Clustering;
use crate::model::{
    ChannelMap, ChannelState, CostParams, Edge, ModelError, NodeId, Topology, TransactionSequence, EPS,
};

pub use lift::{lift_solution, replay_buckets, Bucket, LiftedCapacities};
pub use simplex::{solve, Constraint, LinearProgram, LpSolution, Relation, VarId, Variable};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("LP is infeasible")]
    Infeasible,
    #[error("LP is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("constraint {row} references undeclared variable {var}")]
    UnknownVariable { row: usize, var: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("plan has {found} fractions for {expected} transactions")]
    PlanLength { expected: usize, found: usize },
    #[error("transaction {index}: fraction {y} outside [0, {x}]")]
    FractionOutOfRange { index: usize, y: f64, x: f64 },
    #[error("transaction {index}: side {node} of channel {edge} drops to {balance}")]
    NegativeBalance {
        index: usize,
        edge: Edge,
        node: NodeId,
        balance: f64,
    },
    #[error("topology has {nodes} nodes but the sequence uses {parties}")]
    PartyMismatch { nodes: usize, parties: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `1` at the target, `-1` at the source, `0` elsewhere (and for `s == t`).
pub fn delta(v: NodeId, s: NodeId, t: NodeId) -> i8 {
    if v == t && v != s {
        1
    } else if v == s && v != t {
        -1
    } else {
        0
    }
}

/// Largest absolute net change of `v`'s balance over any contiguous window.
pub fn star_capacity_lower_bound(seq: &TransactionSequence, v: NodeId, center: NodeId) -> f64 {
    if v == center {
        return 0.0;
    }
    // max |prefix(j) - prefix(k)| = max prefix - min prefix, empty prefix included
    let (mut cum, mut lo, mut hi) = (0.0_f64, 0.0_f64, 0.0_f64);
    for tx in seq {
        cum += f64::from(delta(v, tx.source, tx.target)) * tx.amount;
        lo = lo.min(cum);
        hi = hi.max(cum);
    }
    hi - lo
}

fn snap(y: f64, x: f64) -> f64 {
    if y <= EPS * (1.0 + x) {
        0.0
    } else if y >= x - EPS * (1.0 + x) {
        x
    } else {
        y
    }
}

/// A solved fractional-acceptance LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalPlan {
    pub y: Vec<f64>,
    pub capacities: BTreeMap<Edge, f64>,
    pub initial_sides: ChannelMap,
    pub capacity_cost: f64,
    pub rejection_cost: f64,
}

impl FractionalPlan {
    pub fn objective(&self) -> f64 {
        self.capacity_cost + self.rejection_cost
    }

    pub fn capacity(&self, e: Edge) -> f64 {
        self.capacities.get(&e).copied().unwrap_or(0.0)
    }

    pub fn fractional_rejection_cost(seq: &TransactionSequence, y: &[f64], costs: &CostParams) -> f64 {
        seq.iter()
            .zip(y)
            .map(|(tx, &yi)| {
                let gap = tx.amount - yi;
                costs.f * gap + costs.m * gap / tx.amount
            })
            .sum()
    }

    /// Recomputes the rejection cost after `y` has been modified.
    pub fn refresh_rejection_cost(&mut self, seq: &TransactionSequence, costs: &CostParams) {
        self.rejection_cost = Self::fractional_rejection_cost(seq, &self.y, costs);
    }

    pub fn check_fractions(&self, seq: &TransactionSequence) -> Result<(), LpError> {
        if self.y.len() != seq.len() {
            return Err(LpError::PlanLength {
                expected: seq.len(),
                found: self.y.len(),
            });
        }
        for (tx, &y) in seq.iter().zip(&self.y) {
            if !(y >= -EPS && y <= tx.amount + EPS) {
                return Err(LpError::FractionOutOfRange {
                    index: tx.index,
                    y,
                    x: tx.amount,
                });
            }
        }
        Ok(())
    }

    /// Side balances after every step when each transaction moves `y_i`
    /// along its path. Entry `0` holds the initial sides.
    pub fn side_balances(&self, top: &Topology, seq: &TransactionSequence) -> Result<Vec<ChannelMap>, LpError> {
        self.check_fractions(seq)?;
        let mut state: ChannelMap = top
            .edges()
            .iter()
            .map(|&e| (e, self.initial_sides.get(&e).copied().unwrap_or_default()))
            .collect();
        let mut trace = Vec::with_capacity(seq.len() + 1);
        trace.push(state.clone());
        for (tx, &y) in seq.iter().zip(&self.y) {
            if y > 0.0 {
                let path = top.path(tx.source, tx.target)?;
                for hop in path.windows(2) {
                    let e = Edge::new(hop[0], hop[1]);
                    let st = state.entry(e).or_default();
                    if hop[0] == e.lo() {
                        st.side_u -= y;
                        st.side_v += y;
                    } else {
                        st.side_v -= y;
                        st.side_u += y;
                    }
                    let balance = st.side(e, hop[0]);
                    if balance < -EPS * (1.0 + st.total) {
                        return Err(LpError::NegativeBalance {
                            index: tx.index,
                            edge: e,
                            node: hop[0],
                            balance,
                        });
                    }
                }
            }
            trace.push(state.clone());
        }
        Ok(trace)
    }

    /// True when simulating the fractional flows never overdraws a side.
    pub fn is_feasible(&self, top: &Topology, seq: &TransactionSequence) -> bool {
        self.side_balances(top, seq).is_ok()
    }
}

/// Fractional-acceptance LP on a unique-path topology.
///
/// Every transaction moves `y_i` along its path. Each channel on the path
/// must hold at least `x_i` in total, and every side stays non-negative at
/// every step. Per-step balances are substituted out: a side after step `i`
/// is its initial value plus the signed sum of earlier fractions, so only
/// the initial split of each touched channel is a variable.
#[derive(Debug, Clone)]
pub struct PathLp {
    program: LinearProgram,
    topology: Topology,
    seq: TransactionSequence,
    costs: CostParams,
    sides: BTreeMap<Edge, (VarId, VarId)>,
}

impl PathLp {
    pub fn new(topology: Topology, seq: &TransactionSequence, costs: &CostParams) -> Result<Self, LpError> {
        costs.validate()?;
        if seq.party_count() > topology.node_count() {
            return Err(LpError::PartyMismatch {
                nodes: topology.node_count(),
                parties: seq.party_count(),
            });
        }
        let mut program = LinearProgram::new();
        let mut offset = 0.0;
        for tx in seq {
            let unit = costs.f + costs.m / tx.amount;
            offset += unit * tx.amount;
            let y = program.add_variable(format!("y{}", tx.index), -unit);
            program.set_upper(y, tx.amount);
        }
        program.objective_offset = offset;

        // (edge) -> [(tx index, node losing y on this edge)]
        let mut hops: BTreeMap<Edge, Vec<(usize, NodeId)>> = BTreeMap::new();
        let mut need: BTreeMap<Edge, f64> = BTreeMap::new();
        for tx in seq {
            let path = topology.path(tx.source, tx.target)?;
            for hop in path.windows(2) {
                let e = Edge::new(hop[0], hop[1]);
                hops.entry(e).or_default().push((tx.index, hop[0]));
                let slot = need.entry(e).or_insert(0.0);
                *slot = slot.max(tx.amount);
            }
        }

        let mut sides = BTreeMap::new();
        for (&e, list) in &hops {
            let lo = program.add_variable(format!("b0[{e}].{}", e.lo()), 1.0);
            let hi = program.add_variable(format!("b0[{e}].{}", e.hi()), 1.0);
            sides.insert(e, (lo, hi));
            program.add_constraint(vec![(lo, 1.0), (hi, 1.0)], Relation::Ge, need[&e])?;

            // running signed flow into the lower side
            let mut flow: Vec<(VarId, f64)> = Vec::new();
            for &(index, from) in list {
                let y = VarId(index);
                let into_lo = if from == e.lo() { -1.0 } else { 1.0 };
                flow.push((y, into_lo));
                // the side that just paid must stay non-negative:
                // init + sum(±y) >= 0, written as -init - sum(±y) <= 0
                let (init, sign) = if from == e.lo() { (lo, 1.0) } else { (hi, -1.0) };
                let mut row = vec![(init, -1.0)];
                row.extend(flow.iter().map(|&(v, s)| (v, -sign * s)));
                program.add_constraint(row, Relation::Le, 0.0)?;
            }
        }

        Ok(PathLp {
            program,
            topology,
            seq: seq.clone(),
            costs: *costs,
            sides,
        })
    }

    pub fn program(&self) -> &LinearProgram {
        &self.program
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn solve(&self) -> Result<FractionalPlan, LpError> {
        let sol = solve(&self.program)?;
        let y: Vec<f64> = self
            .seq
            .iter()
            .map(|tx| snap(sol.values[tx.index], tx.amount))
            .collect();
        let mut capacities = BTreeMap::new();
        let mut initial_sides = ChannelMap::new();
        for (&e, &(lo, hi)) in &self.sides {
            let st = ChannelState::new(sol.values[lo.0], sol.values[hi.0]);
            capacities.insert(e, st.total);
            initial_sides.insert(e, st);
        }
        let capacity_cost = capacities.values().sum();
        let rejection_cost = FractionalPlan::fractional_rejection_cost(&self.seq, &y, &self.costs);
        Ok(FractionalPlan {
            y,
            capacities,
            initial_sides,
            capacity_cost,
            rejection_cost,
        })
    }
}

/// Fractional LP on the star over the sequence's parties centered at `center`.
pub fn build_star_lp(seq: &TransactionSequence, center: NodeId, costs: &CostParams) -> Result<PathLp, LpError> {
    let star = Topology::star(seq.party_count().max(center.0 + 1), center)?;
    PathLp::new(star, seq, costs)
}

/// Fractional LP on the double star induced by `clustering`. Middle channels
/// are only touched, and only constrained, by between-cluster transactions.
pub fn build_double_star_lp(
    seq: &TransactionSequence,
    clustering: &Clustering,
    costs: &CostParams,
) -> Result<PathLp, LpError> {
    PathLp::new(clustering.topology()?, seq, costs)
}

/// All-accept LP on a fixed edge set: per-step side balances on every
/// channel, constant channel totals and node totals that change by
/// `delta * x` per step.
#[derive(Debug, Clone)]
pub struct FlowLp {
    program: LinearProgram,
    edges: Vec<Edge>,
    /// `vars[i][e]` = (lower side, higher side) after step `i`.
    vars: Vec<Vec<(VarId, VarId)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletePlan {
    pub capacities: BTreeMap<Edge, f64>,
    /// Side balances after each step, index `0` being the initial state.
    pub steps: Vec<ChannelMap>,
    pub objective: f64,
}

impl CompletePlan {
    /// Per-node total balance after each step.
    pub fn total_balance_trace(&self, node_count: usize) -> TotalBalanceTrace {
        let totals = self
            .steps
            .iter()
            .map(|state| {
                let mut s = vec![0.0; node_count];
                for (e, st) in state {
                    s[e.lo().0] += st.side_u;
                    s[e.hi().0] += st.side_v;
                }
                s
            })
            .collect();
        TotalBalanceTrace { totals }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalBalanceTrace {
    /// `totals[i][v]` is node `v`'s summed balance after step `i`.
    pub totals: Vec<Vec<f64>>,
}

impl TotalBalanceTrace {
    /// Largest deviation from `S^i - delta x_i = S^{i-1}` over all steps.
    pub fn max_residual(&self, seq: &TransactionSequence) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, tx) in seq.iter().enumerate() {
            for (v, (&now, &prev)) in self.totals[i + 1].iter().zip(&self.totals[i]).enumerate() {
                let d = f64::from(delta(NodeId(v), tx.source, tx.target));
                worst = worst.max((now - d * tx.amount - prev).abs());
            }
        }
        worst
    }
}

impl FlowLp {
    pub fn new(seq: &TransactionSequence, top: &Topology) -> Result<Self, LpError> {
        if seq.party_count() > top.node_count() {
            return Err(LpError::PartyMismatch {
                nodes: top.node_count(),
                parties: seq.party_count(),
            });
        }
        let edges: Vec<Edge> = top.edges().iter().copied().collect();
        let mut program = LinearProgram::new();
        let mut vars = Vec::with_capacity(seq.len() + 1);
        for i in 0..=seq.len() {
            let cost = if i == 0 { 1.0 } else { 0.0 };
            let step: Vec<(VarId, VarId)> = edges
                .iter()
                .map(|e| {
                    (
                        program.add_variable(format!("b{i}[{e}].{}", e.lo()), cost),
                        program.add_variable(format!("b{i}[{e}].{}", e.hi()), cost),
                    )
                })
                .collect();
            vars.push(step);
        }
        for (i, tx) in seq.iter().enumerate() {
            let (prev, now) = (&vars[i], &vars[i + 1]);
            for k in 0..edges.len() {
                let (lo0, hi0) = vars[0][k];
                let (lo, hi) = now[k];
                program.add_constraint(vec![(lo, 1.0), (hi, 1.0), (lo0, -1.0), (hi0, -1.0)], Relation::Eq, 0.0)?;
            }
            for v in 0..top.node_count() {
                let node = NodeId(v);
                let mut row = Vec::new();
                for (k, e) in edges.iter().enumerate() {
                    if !e.contains(node) {
                        continue;
                    }
                    let pick = |pair: (VarId, VarId)| if e.lo() == node { pair.0 } else { pair.1 };
                    row.push((pick(now[k]), 1.0));
                    row.push((pick(prev[k]), -1.0));
                }
                let d = f64::from(delta(node, tx.source, tx.target)) * tx.amount;
                if row.is_empty() && d == 0.0 {
                    continue;
                }
                program.add_constraint(row, Relation::Eq, d)?;
            }
        }
        Ok(FlowLp { program, edges, vars })
    }

    pub fn program(&self) -> &LinearProgram {
        &self.program
    }

    pub fn solve(&self) -> Result<CompletePlan, LpError> {
        let sol = solve(&self.program)?;
        let steps: Vec<ChannelMap> = self
            .vars
            .iter()
            .map(|step| {
                self.edges
                    .iter()
                    .zip(step)
                    .map(|(&e, &(lo, hi))| (e, ChannelState::new(sol.values[lo.0], sol.values[hi.0])))
                    .collect()
            })
            .collect();
        let capacities = steps[0].iter().map(|(&e, st)| (e, st.total)).collect();
        Ok(CompletePlan {
            capacities,
            steps,
            objective: sol.objective,
        })
    }
}

/// All-accept LP over the complete graph on the sequence's parties.
pub fn build_complete_lp(seq: &TransactionSequence) -> Result<FlowLp, LpError> {
    FlowLp::new(seq, &Topology::complete(seq.party_count())?)
}

/// All-accept LP restricted to the edges of `top`.
pub fn build_topology_lp(seq: &TransactionSequence, top: &Topology) -> Result<FlowLp, LpError> {
    FlowLp::new(seq, top)
}
