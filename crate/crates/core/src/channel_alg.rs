//! The modified channel algorithm: integral accept/reject decisions on a
//! star that follow a fractional LP plan with per-pair reserves and a
//! pending pool of tentatively accepted transactions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{build_star_lp, FractionalPlan, LpError};
use crate::model::{
    replay, ChannelMap, ChannelState, CostBreakdown, CostParams, DecisionSequence, Edge, ModelError, NodeId, Topology,
    TopologyKind, Transaction, TransactionSequence, Verdict, EPS,
};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("plan has no fraction for transaction {index}")]
    MissingFraction { index: usize },
    #[error("transaction {index} starts or ends at the star center")]
    CenterTransaction { index: usize },
    #[error("transaction {index} is not between {u} and {v}")]
    ForeignTransaction { index: usize, u: NodeId, v: NodeId },
    #[error("topology is not a star")]
    NotAStar,
    #[error("trace output failed: {0}")]
    Trace(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn strong_ratio() -> f64 {
    let r3 = 3f64.sqrt();
    r3 / (r3 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    FullyAccepted,
    Strong,
    Weak,
    FullyRejected,
}

pub fn classify(x: f64, y: f64) -> Classification {
    let tol = EPS * (1.0 + x);
    if y >= x - tol {
        Classification::FullyAccepted
    } else if y <= tol {
        Classification::FullyRejected
    } else if y / x >= strong_ratio() {
        Classification::Strong
    } else {
        Classification::Weak
    }
}

/// Reserves of one leaf pair. `r_u + r_v` stays at `√3·m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairReserves {
    pub u: NodeId,
    pub v: NodeId,
    pub m: f64,
    pub r_u: f64,
    pub r_v: f64,
}

impl PairReserves {
    pub fn new(u: NodeId, v: NodeId, m: f64) -> Self {
        let half = 3f64.sqrt() / 2.0 * m;
        PairReserves {
            u,
            v,
            m,
            r_u: half,
            r_v: half,
        }
    }

    pub fn threshold(&self) -> f64 {
        (3f64.sqrt() - 1.0) / 2.0 * self.m
    }

    pub fn pool(&self) -> f64 {
        3f64.sqrt() * self.m
    }

    pub fn conservation_error(&self) -> f64 {
        (self.r_u + self.r_v - self.pool()).abs()
    }

    fn get(&self, side: usize) -> f64 {
        if side == 0 {
            self.r_u
        } else {
            self.r_v
        }
    }

    /// Moves `amount` of reserve from `side` to the other side.
    fn shift(&mut self, side: usize, amount: f64) {
        if side == 0 {
            self.r_u -= amount;
            self.r_v += amount;
        } else {
            self.r_v -= amount;
            self.r_u += amount;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    amount: f64,
    index: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    // largest amount first, earliest index among equals
    fn cmp(&self, other: &Self) -> Ordering {
        self.amount
            .total_cmp(&other.amount)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub i: usize,
    pub verdict: Verdict,
    #[serde(rename = "R_u")]
    pub r_u: f64,
    #[serde(rename = "R_v")]
    pub r_v: f64,
    /// Transaction being processed when this entry was written.
    #[serde(skip)]
    pub at: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRun {
    pub reserves: PairReserves,
    pub verdicts: BTreeMap<usize, Verdict>,
    pub trace: Vec<TraceEntry>,
    pub flips: usize,
    /// Largest `|R_u + R_v - √3 M|` seen after any reserve update.
    pub max_conservation_error: f64,
    /// Steps that ended with the sender below threshold and either an empty
    /// pool or a negative reserve.
    pub restoration_failures: usize,
    /// Smallest reserve of either side after any processed transaction.
    pub min_reserve: f64,
}

/// Runs the channel algorithm on the transactions between `u` and `v`.
pub fn run_pairwise(
    u: NodeId,
    v: NodeId,
    m: f64,
    txs: &[Transaction],
    plan: &FractionalPlan,
) -> Result<PairRun, ChannelError> {
    let mut res = PairReserves::new(u, v, m);
    let thr = res.threshold();
    let tol = EPS * (1.0 + m);
    let mut heaps = [BinaryHeap::<Pending>::new(), BinaryHeap::new()];
    let mut verdicts = BTreeMap::new();
    let mut trace = Vec::new();
    let mut flips = 0;
    let mut max_err: f64 = 0.0;
    let mut restoration_failures = 0;
    let mut min_reserve = res.r_u.min(res.r_v);

    for tx in txs {
        let a = if tx.source == u && tx.target == v {
            0
        } else if tx.source == v && tx.target == u {
            1
        } else {
            return Err(ChannelError::ForeignTransaction { index: tx.index, u, v });
        };
        let y = *plan
            .y
            .get(tx.index)
            .ok_or(ChannelError::MissingFraction { index: tx.index })?;
        let x = tx.amount;
        let gap = x - y;
        let class = classify(x, y);

        let verdict = if class == Classification::FullyAccepted {
            Verdict::Accept
        } else if res.get(a) - gap >= thr - tol {
            res.shift(a, gap);
            Verdict::Accept
        } else if class != Classification::Strong {
            res.shift(a, -y);
            Verdict::Reject
        } else {
            res.shift(a, gap);
            heaps[a].push(Pending {
                amount: x,
                index: tx.index,
            });
            Verdict::Accept
        };
        verdicts.insert(tx.index, verdict);
        max_err = max_err.max(res.conservation_error());
        trace.push(TraceEntry {
            i: tx.index,
            verdict,
            r_u: res.r_u,
            r_v: res.r_v,
            at: tx.index,
        });

        if res.get(a) < -tol {
            while res.get(a) < thr - tol {
                let Some(p) = heaps[a].pop() else { break };
                verdicts.insert(p.index, Verdict::Reject);
                res.shift(a, -p.amount);
                flips += 1;
                max_err = max_err.max(res.conservation_error());
                trace.push(TraceEntry {
                    i: p.index,
                    verdict: Verdict::Reject,
                    r_u: res.r_u,
                    r_v: res.r_v,
                    at: tx.index,
                });
            }
        }
        for (side, heap) in heaps.iter_mut().enumerate() {
            if res.get(side) >= thr - tol {
                heap.clear();
            }
        }
        let ra = res.get(a);
        if ra < -tol || (ra < thr - tol && heaps[a].is_empty()) {
            restoration_failures += 1;
        }
        min_reserve = min_reserve.min(res.r_u).min(res.r_v);
    }

    Ok(PairRun {
        reserves: res,
        verdicts,
        trace,
        flips,
        max_conservation_error: max_err,
        restoration_failures,
        min_reserve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarRun {
    pub center: NodeId,
    pub decisions: BTreeMap<usize, Verdict>,
    pub pairs: Vec<PairRun>,
}

impl StarRun {
    /// Decisions as a full sequence. Missing indices are rejected.
    pub fn decision_sequence(&self, n: usize) -> DecisionSequence {
        DecisionSequence(
            (0..n)
                .map(|i| self.decisions.get(&i).copied().unwrap_or(Verdict::Reject))
                .collect(),
        )
    }

    /// Sum over pairs that touch `leaf` of `√3·M` / 2.
    pub fn half_reserve_of(&self, leaf: NodeId) -> f64 {
        self.pairs
            .iter()
            .filter(|p| p.reserves.u == leaf || p.reserves.v == leaf)
            .map(|p| p.reserves.pool() / 2.0)
            .sum()
    }

    pub fn flips(&self) -> usize {
        self.pairs.iter().map(|p| p.flips).sum()
    }

    pub fn max_conservation_error(&self) -> f64 {
        self.pairs.iter().map(|p| p.max_conservation_error).fold(0.0, f64::max)
    }

    /// All pair traces merged in processing order.
    pub fn merged_trace(&self) -> Vec<&TraceEntry> {
        let mut all: Vec<(usize, usize, &TraceEntry)> = self
            .pairs
            .iter()
            .flat_map(|p| p.trace.iter().enumerate().map(|(k, e)| (e.at, k, e)))
            .collect();
        all.sort_by_key(|&(at, k, _)| (at, k));
        all.into_iter().map(|(_, _, e)| e).collect()
    }

    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<(), ChannelError> {
        for entry in self.merged_trace() {
            let line = serde_json::to_string(entry).map_err(|e| ChannelError::Trace(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| ChannelError::Trace(e.to_string()))?;
        }
        Ok(())
    }
}

/// Runs the channel algorithm for every leaf pair of the star centered at
/// `center` over `txs`, which may be any subsequence carrying original
/// indices into `plan.y`. Each pair's `M` is the smaller of its two leaf
/// channel capacities in `plan`.
pub fn run_star_subset(txs: &[Transaction], center: NodeId, plan: &FractionalPlan) -> Result<StarRun, ChannelError> {
    let mut by_pair: BTreeMap<Edge, Vec<Transaction>> = BTreeMap::new();
    for tx in txs {
        if tx.source == center || tx.target == center {
            return Err(ChannelError::CenterTransaction { index: tx.index });
        }
        by_pair.entry(Edge::new(tx.source, tx.target)).or_default().push(*tx);
    }
    let groups: Vec<(Edge, Vec<Transaction>)> = by_pair.into_iter().collect();
    let pairs: Vec<PairRun> = groups
        .par_iter()
        .map(|(pair, list)| {
            let m = plan
                .capacity(Edge::new(pair.lo(), center))
                .min(plan.capacity(Edge::new(pair.hi(), center)));
            run_pairwise(pair.lo(), pair.hi(), m, list, plan)
        })
        .collect::<Result<_, _>>()?;
    let mut decisions = BTreeMap::new();
    for run in &pairs {
        decisions.extend(run.verdicts.iter().map(|(&i, &v)| (i, v)));
    }
    Ok(StarRun {
        center,
        decisions,
        pairs,
    })
}

pub fn run_star(seq: &TransactionSequence, star: &Topology, plan: &FractionalPlan) -> Result<StarRun, ChannelError> {
    let TopologyKind::Star { center } = *star.kind() else {
        return Err(ChannelError::NotAStar);
    };
    if plan.y.len() < seq.len() {
        return Err(ChannelError::MissingFraction { index: plan.y.len() });
    }
    run_star_subset(seq.items(), center, plan)
}

/// Channel states for running `run` on top of `plan`: every leaf channel
/// gets its LP split plus half of each active pair's reserve pool on both
/// sides.
pub fn capacity_requirement(star: &Topology, plan: &FractionalPlan, run: &StarRun) -> ChannelMap {
    let center = run.center;
    star.edges()
        .iter()
        .map(|&e| {
            let leaf = e.other(center);
            let base = plan.initial_sides.get(&e).copied().unwrap_or_default();
            let extra = run.half_reserve_of(leaf);
            let (leaf_side, center_side) = if leaf == e.lo() {
                (base.side_u, base.side_v)
            } else {
                (base.side_v, base.side_u)
            };
            let (leaf_side, center_side) = (leaf_side + extra, center_side + extra);
            let st = if leaf == e.lo() {
                ChannelState::new(leaf_side, center_side)
            } else {
                ChannelState::new(center_side, leaf_side)
            };
            (e, st)
        })
        .collect()
}

/// Star LP, channel algorithm and replay in one go.
#[derive(Debug, Clone, PartialEq)]
pub struct StarSolution {
    pub star: Topology,
    pub plan: FractionalPlan,
    pub run: StarRun,
    pub decisions: DecisionSequence,
    pub channels: ChannelMap,
    pub cost: CostBreakdown,
    /// LP objective plus channel creation.
    pub lp_total: f64,
}

pub fn solve_star(seq: &TransactionSequence, center: NodeId, costs: &CostParams) -> Result<StarSolution, ChannelError> {
    let lp = build_star_lp(seq, center, costs)?;
    let plan = lp.solve()?;
    let star = lp.topology().clone();
    let run = run_star(seq, &star, &plan)?;
    let decisions = run.decision_sequence(seq.len());
    let channels = capacity_requirement(&star, &plan, &run);
    let cost = replay(&star, seq, &decisions, &channels, costs)?.cost;
    let lp_total = plan.objective() + costs.k * star.edges().len() as f64;
    Ok(StarSolution {
        star,
        plan,
        run,
        decisions,
        channels,
        cost,
        lp_total,
    })
}
