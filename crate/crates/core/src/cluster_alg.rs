//! Solving on a double star: between-cluster decisions on the star of middle
//! nodes, reserve transport inside clusters by adjusting plan fractions,
//! then the channel algorithm inside each cluster.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_alg::{run_star_subset, ChannelError, StarRun};
use crate::lp::{FractionalPlan, LpError};
use crate::model::{
    replay, ChannelMap, ChannelState, CostBreakdown, CostParams, DecisionSequence, Edge, ModelError, NodeId, Topology,
    Transaction, TransactionSequence, Verdict, EPS,
};
use crate::oracle::{min_capacity_given_decisions, OracleError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering: {0}")]
    InvalidClustering(String),
    #[error("transaction {index} touches a middle or center node")]
    NotALeaf { index: usize },
    #[error("transport stalled after moving {moved}, {shortfall} still missing")]
    TransportExhausted {
        moved: f64,
        shortfall: f64,
        y_volume_touched: f64,
    },
    #[error("transaction {index} has two verdicts")]
    DuplicateVerdict { index: usize },
    #[error("transaction {index} has no verdict")]
    MissingVerdict { index: usize },
    #[error("log output failed: {0}")]
    Log(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Cluster count bound `m`, size bound `k` and strength `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub m: usize,
    pub k: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<NodeId>>,
    pub middles: Vec<NodeId>,
    pub center: NodeId,
    pub params: ClusterParams,
}

impl Clustering {
    pub fn new(clusters: Vec<Vec<NodeId>>, middles: Vec<NodeId>, center: NodeId) -> Result<Self, ClusterError> {
        let params = ClusterParams {
            m: clusters.len(),
            k: clusters.iter().map(Vec::len).max().unwrap_or(0),
            t: 0.0,
        };
        let c = Clustering {
            clusters,
            middles,
            center,
            params,
        };
        c.validate()?;
        Ok(c)
    }

    /// Leaves keep their ids `0..p`; middles follow in cluster order and
    /// the center comes last.
    pub fn standard(partition: Vec<Vec<NodeId>>) -> Result<Self, ClusterError> {
        let p: usize = partition.iter().map(Vec::len).sum();
        let middles = (0..partition.len()).map(|i| NodeId(p + i)).collect();
        let center = NodeId(p + partition.len());
        Self::new(partition, middles, center)
    }

    pub fn with_params(mut self, params: ClusterParams) -> Result<Self, ClusterError> {
        self.params = params;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ClusterError> {
        if self.middles.len() != self.clusters.len() {
            return Err(ClusterError::InvalidClustering(format!(
                "{} clusters but {} middles",
                self.clusters.len(),
                self.middles.len()
            )));
        }
        if self.clusters.len() > self.params.m {
            return Err(ClusterError::InvalidClustering(format!(
                "{} clusters exceed m = {}",
                self.clusters.len(),
                self.params.m
            )));
        }
        if let Some(c) = self.clusters.iter().find(|c| c.len() > self.params.k) {
            return Err(ClusterError::InvalidClustering(format!(
                "cluster of size {} exceeds k = {}",
                c.len(),
                self.params.k
            )));
        }
        let mut seen = BTreeSet::new();
        let all = self
            .clusters
            .iter()
            .flatten()
            .chain(&self.middles)
            .chain(std::iter::once(&self.center));
        for v in all {
            if !seen.insert(*v) {
                return Err(ClusterError::InvalidClustering(format!("node {v} used twice")));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum::<usize>() + self.middles.len() + 1
    }

    pub fn leaf_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn topology(&self) -> Result<Topology, ModelError> {
        Topology::double_star(
            self.node_count(),
            self.center,
            self.middles
                .iter()
                .copied()
                .zip(self.clusters.iter().cloned())
                .collect(),
        )
    }

    pub fn cluster_of(&self, v: NodeId) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&v))
    }

    fn membership(&self) -> BTreeMap<NodeId, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |&v| (v, i)))
            .collect()
    }
}

/// Between-cluster transactions with endpoints rewritten to their clusters'
/// middle nodes. Original indices are kept.
pub fn between_clusters(seq: &TransactionSequence, clustering: &Clustering) -> Vec<Transaction> {
    let member = clustering.membership();
    seq.iter()
        .filter_map(|tx| {
            let (a, b) = (member.get(&tx.source)?, member.get(&tx.target)?);
            (a != b).then_some(Transaction {
                source: clustering.middles[*a],
                target: clustering.middles[*b],
                ..*tx
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// From the transaction's source toward its target: raise `y`.
    Forward,
    /// From target toward source: lower `y`.
    Backward,
}

pub fn movable(x: f64, y: f64, dir: Direction) -> f64 {
    match dir {
        Direction::Forward => (x - y).max(0.0),
        Direction::Backward => y.max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportOutcome {
    pub moved: f64,
    pub y_volume_touched: f64,
    pub augmentations: usize,
}

fn apply_shift(y: &mut f64, x: f64, delta: f64) {
    let v = *y + delta;
    *y = if v <= EPS * (1.0 + x) {
        0.0
    } else if v >= x - EPS * (1.0 + x) {
        x
    } else {
        v
    };
}

/// Moves `amount` of reserve from the node set `from` to `to` by adjusting
/// the fractions of the `window` transactions: raising `y` on a transaction
/// moves reserve from its source to its target, lowering it moves reserve
/// back. Paths are found breadth first over transactions with spare budget,
/// earliest transaction first. On a stall the adjustments made so far stay
/// applied and the error reports what is missing.
pub fn transport_between_sets(
    seq: &TransactionSequence,
    window: &[usize],
    from: &BTreeSet<NodeId>,
    to: &BTreeSet<NodeId>,
    amount: f64,
    plan: &mut FractionalPlan,
) -> Result<TransportOutcome, ClusterError> {
    let mut out = TransportOutcome {
        moved: 0.0,
        y_volume_touched: 0.0,
        augmentations: 0,
    };
    if amount <= 0.0 {
        return Ok(out);
    }
    if from.iter().any(|v| to.contains(v)) {
        out.moved = amount;
        return Ok(out);
    }
    let mut order: Vec<usize> = window.to_vec();
    order.sort_unstable();
    order.dedup();

    // every transaction gives one arc each way
    let mut adj: BTreeMap<NodeId, Vec<(usize, Direction, NodeId)>> = BTreeMap::new();
    for &i in &order {
        let tx = seq.items()[i];
        adj.entry(tx.source)
            .or_default()
            .push((i, Direction::Forward, tx.target));
        adj.entry(tx.target)
            .or_default()
            .push((i, Direction::Backward, tx.source));
    }

    let tol = EPS * (1.0 + amount);
    let mut remaining = amount;
    while remaining > tol {
        let mut parent: BTreeMap<NodeId, (NodeId, usize, Direction)> = BTreeMap::new();
        let mut visited: BTreeSet<NodeId> = from.clone();
        let mut queue: VecDeque<NodeId> = from.iter().copied().collect();
        let mut hit = None;
        'bfs: while let Some(a) = queue.pop_front() {
            for &(i, dir, b) in adj.get(&a).map(Vec::as_slice).unwrap_or(&[]) {
                if visited.contains(&b) {
                    continue;
                }
                let tx = seq.items()[i];
                if movable(tx.amount, plan.y[i], dir) <= EPS * (1.0 + tx.amount) {
                    continue;
                }
                visited.insert(b);
                parent.insert(b, (a, i, dir));
                if to.contains(&b) {
                    hit = Some(b);
                    break 'bfs;
                }
                queue.push_back(b);
            }
        }
        let Some(end) = hit else {
            return Err(ClusterError::TransportExhausted {
                moved: out.moved,
                shortfall: remaining,
                y_volume_touched: out.y_volume_touched,
            });
        };
        let mut path = Vec::new();
        let mut cur = end;
        while let Some(&(prev, i, dir)) = parent.get(&cur) {
            path.push((i, dir));
            cur = prev;
        }
        let bottleneck = path
            .iter()
            .map(|&(i, dir)| movable(seq.items()[i].amount, plan.y[i], dir))
            .fold(f64::INFINITY, f64::min);
        let mn = bottleneck.min(remaining);
        for &(i, dir) in &path {
            let x = seq.items()[i].amount;
            let delta = match dir {
                Direction::Forward => mn,
                Direction::Backward => -mn,
            };
            apply_shift(&mut plan.y[i], x, delta);
        }
        remaining -= mn;
        out.moved += mn;
        out.y_volume_touched += mn * path.len() as f64;
        out.augmentations += 1;
    }
    Ok(out)
}

pub fn transport(
    seq: &TransactionSequence,
    window: &[usize],
    from: NodeId,
    to: NodeId,
    amount: f64,
    plan: &mut FractionalPlan,
) -> Result<TransportOutcome, ClusterError> {
    transport_between_sets(
        seq,
        window,
        &BTreeSet::from([from]),
        &BTreeSet::from([to]),
        amount,
        plan,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRecord {
    pub cluster: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub moved: f64,
    pub y_volume_touched: f64,
}

/// Initial cluster reserve pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReserves {
    /// Per cluster, the middle node's pool `⌈√p⌉·(√3/2)·M_mid`.
    pub middle_pool: Vec<f64>,
    /// Per leaf, the pool `(√3/2)·C_v` held on each side of its channel.
    pub leaf_pool: BTreeMap<NodeId, f64>,
}

impl ClusterReserves {
    pub fn from_plan(clustering: &Clustering, plan: &FractionalPlan) -> Self {
        let half = 3f64.sqrt() / 2.0;
        let root_p = (clustering.leaf_count() as f64).sqrt().ceil();
        let middle_pool = clustering
            .middles
            .iter()
            .map(|&mid| root_p * half * plan.capacity(Edge::new(mid, clustering.center)))
            .collect();
        let leaf_pool = clustering
            .clusters
            .iter()
            .zip(&clustering.middles)
            .flat_map(|(c, &mid)| c.iter().map(move |&v| (v, half * plan.capacity(Edge::new(v, mid)))))
            .collect();
        ClusterReserves { middle_pool, leaf_pool }
    }
}

/// Spare reserve per leaf on both sides of its leaf channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LeafLedger {
    pub leaf_side: f64,
    pub middle_side: f64,
    pub drawn_from_pool: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutcome {
    pub cluster: usize,
    pub ledger: BTreeMap<NodeId, LeafLedger>,
    pub pool_left: f64,
    pub transports: Vec<TransportRecord>,
    /// Deficit that neither the pool nor transport could cover.
    pub uncovered: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Leaf,
    Middle,
}

/// Walks the cluster's incident transactions in order, charging each imposed
/// between-cluster verdict to the leaf's ledger. A leaf that runs short is
/// refilled from the middle pool first, then by transport from the leaves
/// with the largest surplus over the within-cluster transactions seen since
/// the previous rebalance. Fractions of within-cluster transactions in
/// `plan` are modified in place.
pub fn balance_in_cluster(
    seq: &TransactionSequence,
    between: &BTreeMap<usize, Verdict>,
    clustering: &Clustering,
    cluster: usize,
    plan: &mut FractionalPlan,
    reserves: &ClusterReserves,
) -> Result<BalanceOutcome, ClusterError> {
    let members: BTreeSet<NodeId> = clustering.clusters[cluster].iter().copied().collect();
    let mut ledger: BTreeMap<NodeId, LeafLedger> = members
        .iter()
        .map(|&v| {
            let pool = reserves.leaf_pool.get(&v).copied().unwrap_or(0.0);
            (
                v,
                LeafLedger {
                    leaf_side: pool,
                    middle_side: pool,
                    drawn_from_pool: 0.0,
                },
            )
        })
        .collect();
    let mut pool = reserves.middle_pool[cluster];
    let mut window: Vec<usize> = Vec::new();
    let mut transports = Vec::new();
    let mut uncovered = 0.0;

    for tx in seq {
        let (s_in, t_in) = (members.contains(&tx.source), members.contains(&tx.target));
        if s_in && t_in {
            window.push(tx.index);
            continue;
        }
        if !s_in && !t_in {
            continue;
        }
        let Some(&verdict) = between.get(&tx.index) else {
            continue;
        };
        let y = plan.y[tx.index];
        let gap = tx.amount - y;
        let (leaf, d) = match (s_in, verdict) {
            (true, Verdict::Accept) => (tx.source, -gap),
            (true, Verdict::Reject) => (tx.source, y),
            (false, Verdict::Accept) => (tx.target, gap),
            (false, Verdict::Reject) => (tx.target, -y),
        };
        {
            let entry = ledger.get_mut(&leaf).expect("member");
            entry.leaf_side += d;
            entry.middle_side -= d;
        }
        for side in [Side::Leaf, Side::Middle] {
            let value = match side {
                Side::Leaf => ledger[&leaf].leaf_side,
                Side::Middle => ledger[&leaf].middle_side,
            };
            let tol = EPS * (1.0 + tx.amount);
            if value >= -tol {
                continue;
            }
            let mut need = -value;

            let draw = pool.min(need);
            pool -= draw;
            need -= draw;
            {
                let entry = ledger.get_mut(&leaf).expect("member");
                entry.drawn_from_pool += draw;
                match side {
                    Side::Leaf => entry.leaf_side += draw,
                    Side::Middle => entry.middle_side += draw,
                }
            }

            if need > tol {
                let mut donors: Vec<(NodeId, f64)> = ledger
                    .iter()
                    .filter(|(&v, _)| v != leaf)
                    .map(|(&v, l)| {
                        let surplus = match side {
                            Side::Leaf => l.leaf_side,
                            Side::Middle => l.middle_side,
                        };
                        (v, surplus)
                    })
                    .filter(|&(_, s)| s > tol)
                    .collect();
                donors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for (donor, surplus) in donors {
                    if need <= tol {
                        break;
                    }
                    let ask = surplus.min(need);
                    // leaf-side deficits pull reserve toward the leaf,
                    // middle-side deficits push it away
                    let (from, to) = match side {
                        Side::Leaf => (donor, leaf),
                        Side::Middle => (leaf, donor),
                    };
                    let got = match transport(seq, &window, from, to, ask, plan) {
                        Ok(o) => o,
                        Err(ClusterError::TransportExhausted {
                            moved,
                            y_volume_touched,
                            ..
                        }) => TransportOutcome {
                            moved,
                            y_volume_touched,
                            augmentations: 0,
                        },
                        Err(e) => return Err(e),
                    };
                    let moved = got.moved;
                    if moved > 0.0 {
                        for (v, sign) in [(from, -1.0), (to, 1.0)] {
                            let entry = ledger.get_mut(&v).expect("member");
                            entry.leaf_side += sign * moved;
                            entry.middle_side -= sign * moved;
                        }
                        transports.push(TransportRecord {
                            cluster,
                            from,
                            to,
                            moved,
                            y_volume_touched: got.y_volume_touched,
                        });
                    }
                    need -= moved;
                }
                window.clear();
            }
            if need > tol {
                uncovered += need;
                let entry = ledger.get_mut(&leaf).expect("member");
                match side {
                    Side::Leaf => entry.leaf_side = 0.0,
                    Side::Middle => entry.middle_side = 0.0,
                }
            }
        }
    }

    Ok(BalanceOutcome {
        cluster,
        ledger,
        pool_left: pool,
        transports,
        uncovered,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleStarRun {
    pub decisions: DecisionSequence,
    pub between: StarRun,
    pub within: Vec<StarRun>,
    pub balance: Vec<BalanceOutcome>,
    pub modified_plan: FractionalPlan,
    /// Capacity the algorithm provisions per channel before any top-up.
    pub budget: BTreeMap<Edge, f64>,
    /// Final channel states used for replay.
    pub channels: ChannelMap,
    /// Capacity added beyond the budget to make the replay feasible.
    pub top_up: f64,
    pub cost: CostBreakdown,
}

impl DoubleStarRun {
    pub fn transports(&self) -> impl Iterator<Item = &TransportRecord> {
        self.balance.iter().flat_map(|b| &b.transports)
    }

    pub fn write_transport_log<W: Write>(&self, mut out: W) -> Result<(), ClusterError> {
        for rec in self.transports() {
            let line = serde_json::to_string(rec).map_err(|e| ClusterError::Log(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| ClusterError::Log(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn run_double_star(
    seq: &TransactionSequence,
    clustering: &Clustering,
    plan: &FractionalPlan,
    costs: &CostParams,
) -> Result<DoubleStarRun, ClusterError> {
    let top = clustering.topology()?;
    let member = clustering.membership();
    for tx in seq {
        if !member.contains_key(&tx.source) || !member.contains_key(&tx.target) {
            return Err(ClusterError::NotALeaf { index: tx.index });
        }
    }
    plan.check_fractions(seq)?;

    let projected = between_clusters(seq, clustering);
    let between = run_star_subset(&projected, clustering.center, plan)?;
    let reserves = ClusterReserves::from_plan(clustering, plan);

    let per_cluster: Vec<(BalanceOutcome, Vec<(usize, f64)>)> = (0..clustering.clusters.len())
        .into_par_iter()
        .map(|c| {
            let mut local = plan.clone();
            let outcome = balance_in_cluster(seq, &between.decisions, clustering, c, &mut local, &reserves)?;
            let changed = seq
                .iter()
                .filter(|tx| member[&tx.source] == c && member[&tx.target] == c)
                .map(|tx| (tx.index, local.y[tx.index]))
                .collect();
            Ok((outcome, changed))
        })
        .collect::<Result<_, ClusterError>>()?;

    let mut modified = plan.clone();
    let mut balance = Vec::new();
    for (outcome, changed) in per_cluster {
        for (i, y) in changed {
            modified.y[i] = y;
        }
        balance.push(outcome);
    }
    modified.refresh_rejection_cost(seq, costs);

    let within: Vec<StarRun> = clustering
        .clusters
        .par_iter()
        .enumerate()
        .map(|(c, _)| {
            let txs: Vec<Transaction> = seq
                .iter()
                .filter(|tx| member[&tx.source] == c && member[&tx.target] == c)
                .copied()
                .collect();
            run_star_subset(&txs, clustering.middles[c], &modified)
        })
        .collect::<Result<_, _>>()?;

    let mut verdicts: Vec<Option<Verdict>> = vec![None; seq.len()];
    for run in std::iter::once(&between).chain(&within) {
        for (&i, &v) in &run.decisions {
            if verdicts[i].replace(v).is_some() {
                return Err(ClusterError::DuplicateVerdict { index: i });
            }
        }
    }
    let decisions = DecisionSequence(
        verdicts
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or(ClusterError::MissingVerdict { index: i }))
            .collect::<Result<_, _>>()?,
    );

    // provisioned capacity: LP + channel-algorithm reserves + cluster pools
    let mut budget: BTreeMap<Edge, f64> = top.edges().iter().map(|&e| (e, plan.capacity(e))).collect();
    for (c, (leaves, &mid)) in clustering.clusters.iter().zip(&clustering.middles).enumerate() {
        let mid_edge = Edge::new(mid, clustering.center);
        *budget.get_mut(&mid_edge).expect("middle channel") += 2.0 * between.half_reserve_of(mid);
        let outcome = &balance[c];
        let funded: Vec<NodeId> = leaves
            .iter()
            .copied()
            .filter(|&v| plan.capacity(Edge::new(v, mid)) > 0.0)
            .collect();
        for &v in leaves {
            let e = Edge::new(v, mid);
            let extra = 2.0 * within[c].half_reserve_of(v)
                + 2.0 * reserves.leaf_pool.get(&v).copied().unwrap_or(0.0)
                + outcome.ledger[&v].drawn_from_pool;
            *budget.get_mut(&e).expect("leaf channel") += extra;
        }
        // the undrawn part of the middle pool stays committed in the cluster
        if outcome.pool_left > 0.0 {
            if funded.is_empty() {
                *budget.get_mut(&mid_edge).expect("middle channel") += outcome.pool_left;
            } else {
                let share = outcome.pool_left / funded.len() as f64;
                for &v in &funded {
                    *budget.get_mut(&Edge::new(v, mid)).expect("leaf channel") += share;
                }
            }
        }
    }

    let needed = min_capacity_given_decisions(&top, seq, &decisions)?;
    let mut channels = ChannelMap::new();
    let mut top_up = 0.0;
    for (&e, &b) in &budget {
        let need = needed.get(&e).copied().unwrap_or_default();
        let floor = need.side_u + need.side_v;
        let total = b.max(floor);
        if floor > b {
            top_up += floor - b;
        }
        let spare = (total - floor) / 2.0;
        channels.insert(e, ChannelState::new(need.side_u + spare, need.side_v + spare));
    }
    let outcome = replay(&top, seq, &decisions, &channels, costs)?;

    Ok(DoubleStarRun {
        decisions,
        between,
        within,
        balance,
        modified_plan: modified,
        budget,
        channels,
        top_up,
        cost: outcome.cost,
    })
}
