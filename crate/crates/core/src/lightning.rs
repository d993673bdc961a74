//! Lightning snapshot reduction: low-degree users, hub-mediated costs,
//! inverse-cost volumes, label-propagation clusters and a cluster table.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ratio_format;

/// Exact currency arithmetic in millisatoshi.
pub type Exact = Ratio<i128>;

pub const DEFAULT_AMOUNT_MSAT: u64 = 100;
pub const DEFAULT_DEGREE_THRESHOLD: usize = 2;
pub const MIN_CLUSTER_SIZE: usize = 3;

#[derive(Debug, Error)]
pub enum LightningError {
    #[error("channel {index} references unknown node {id:?}")]
    UnknownNode { index: usize, id: String },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("channel {index} is a self-loop on {id:?}")]
    SelfLoop { index: usize, id: String },
    #[error("partition does not cover the user graph: {0}")]
    BadPartition(String),
    #[error("malformed snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotChannel {
    pub u: String,
    pub v: String,
    #[serde(default)]
    pub base_fee_msat: u64,
    #[serde(default)]
    pub fee_rate_ppm: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_sat: Option<u64>,
    /// Only `u -> v` is usable.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oneway: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub nodes: Vec<String>,
    pub channels: Vec<SnapshotChannel>,
}

/// `base + rate * amount / 10^6`, exactly.
pub fn channel_cost(channel: &SnapshotChannel, amount_msat: u64) -> Exact {
    Exact::from_integer(channel.base_fee_msat as i128)
        + Exact::new(channel.fee_rate_ppm as i128 * amount_msat as i128, 1_000_000)
}

/// Directed cheapest-channel costs with node ids resolved to indices.
struct Indexed {
    ids: Vec<String>,
    cost: BTreeMap<(usize, usize), Exact>,
}

impl Snapshot {
    pub fn from_json(text: &str) -> Result<Self, LightningError> {
        Ok(serde_json::from_str(text)?)
    }

    fn index(&self, amount_msat: u64) -> Result<Indexed, LightningError> {
        let mut pos = BTreeMap::new();
        for (i, id) in self.nodes.iter().enumerate() {
            if pos.insert(id.as_str(), i).is_some() {
                return Err(LightningError::DuplicateNode(id.clone()));
            }
        }
        let mut cost: BTreeMap<(usize, usize), Exact> = BTreeMap::new();
        for (index, ch) in self.channels.iter().enumerate() {
            let lookup = |id: &String| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| LightningError::UnknownNode { index, id: id.clone() })
            };
            let (a, b) = (lookup(&ch.u)?, lookup(&ch.v)?);
            if a == b {
                return Err(LightningError::SelfLoop {
                    index,
                    id: ch.u.clone(),
                });
            }
            let c = channel_cost(ch, amount_msat);
            let dirs: &[(usize, usize)] = if ch.oneway { &[(a, b)] } else { &[(a, b), (b, a)] };
            for &d in dirs {
                cost.entry(d).and_modify(|old| *old = (*old).min(c)).or_insert(c);
            }
        }
        Ok(Indexed {
            ids: self.nodes.clone(),
            cost,
        })
    }
}

fn scc_indices(ix: &Indexed) -> Vec<usize> {
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let nodes: Vec<NodeIndex> = ix.ids.iter().map(|_| g.add_node(())).collect();
    for &(a, b) in ix.cost.keys() {
        g.add_edge(nodes[a], nodes[b], ());
    }
    let mut best: Option<Vec<usize>> = None;
    let key = |c: &[usize]| -> Vec<&str> {
        let mut k: Vec<&str> = c.iter().map(|&i| ix.ids[i].as_str()).collect();
        k.sort_unstable();
        k
    };
    for comp in tarjan_scc(&g) {
        let comp: Vec<usize> = comp.into_iter().map(|n| n.index()).collect();
        let better = match &best {
            None => true,
            Some(b) => comp.len() > b.len() || (comp.len() == b.len() && key(&comp) < key(b)),
        };
        if better {
            best = Some(comp);
        }
    }
    let mut out = best.unwrap_or_default();
    out.sort_unstable();
    out
}

/// Members of the largest strongly connected component, sorted by id. Equal
/// sizes go to the lexicographically smallest sorted member list.
pub fn largest_scc(snapshot: &Snapshot) -> Result<Vec<String>, LightningError> {
    let ix = snapshot.index(DEFAULT_AMOUNT_MSAT)?;
    let mut ids: Vec<String> = scc_indices(&ix).into_iter().map(|i| ix.ids[i].clone()).collect();
    ids.sort();
    Ok(ids)
}

mod exact_format {
    use super::Exact;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Exact, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", v.numer(), v.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Exact, D::Error> {
        let text = String::deserialize(d)?;
        let (n, dd) = text.split_once('/').unwrap_or((text.as_str(), "1"));
        let parse = |x: &str| x.trim().parse::<i128>().map_err(serde::de::Error::custom);
        let (n, dd) = (parse(n)?, parse(dd)?);
        if dd == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Exact::new(n, dd))
    }
}

pub fn to_f64(v: Exact) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEdge {
    /// Indices into `UserGraph::users`, `a < b`.
    pub a: usize,
    pub b: usize,
    #[serde(with = "exact_format")]
    pub cost: Exact,
    #[serde(with = "exact_format")]
    pub vol: Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGraph {
    pub users: Vec<String>,
    pub edges: Vec<UserEdge>,
    pub scc_size: usize,
    pub hub_count: usize,
    /// Pair evaluations inside the hub loop.
    pub cost_updates: u64,
    /// Upper bound on `cost_updates`: ordered user pairs around each hub.
    pub update_bound: u64,
    /// User pairs sharing a hub but with no directed route through it.
    pub unreachable_pairs: usize,
    pub amount_msat: u64,
    pub degree_threshold: usize,
}

impl UserGraph {
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn vol(&self, a: usize, b: usize) -> Option<Exact> {
        let (a, b) = (a.min(b), a.max(b));
        self.edges.iter().find(|e| e.a == a && e.b == b).map(|e| e.vol)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.users.len()];
        for e in &self.edges {
            let w = to_f64(e.vol);
            adj[e.a].push((e.b, w));
            adj[e.b].push((e.a, w));
        }
        adj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReduceOptions {
    pub amount_msat: u64,
    pub degree_threshold: usize,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            amount_msat: DEFAULT_AMOUNT_MSAT,
            degree_threshold: DEFAULT_DEGREE_THRESHOLD,
        }
    }
}

/// Two-hop routes found around one hub, its update count and bound.
type HubRoutes = (Vec<((usize, usize), Option<Exact>)>, u64, u64);

/// Restricts to the largest SCC, keeps nodes with between one and
/// `degree_threshold` distinct neighbours as users, links users that are
/// adjacent or share a hub, and prices each link at its cheapest direct or
/// one-hub route in either direction.
pub fn reduce_to_user_graph(snapshot: &Snapshot, opts: &ReduceOptions) -> Result<UserGraph, LightningError> {
    let ix = snapshot.index(opts.amount_msat)?;
    let scc = scc_indices(&ix);
    let in_scc: BTreeSet<usize> = scc.iter().copied().collect();
    let mut nbrs: BTreeMap<usize, BTreeSet<usize>> = scc.iter().map(|&v| (v, BTreeSet::new())).collect();
    for &(a, b) in ix.cost.keys() {
        if in_scc.contains(&a) && in_scc.contains(&b) {
            nbrs.get_mut(&a).unwrap().insert(b);
            nbrs.get_mut(&b).unwrap().insert(a);
        }
    }
    let is_user = |v: usize| {
        let d = nbrs[&v].len();
        (1..=opts.degree_threshold).contains(&d)
    };
    let users: Vec<usize> = scc.iter().copied().filter(|&v| is_user(v)).collect();
    let local: BTreeMap<usize, usize> = users.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let hubs: Vec<usize> = scc.iter().copied().filter(|&v| !is_user(v)).collect();
    let directed = |a: usize, b: usize| ix.cost.get(&(a, b)).copied();
    let min_opt = |x: Option<Exact>, y: Option<Exact>| match (x, y) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    };

    // None stands for an infinite cost on a pair that is still an edge
    let mut cost: BTreeMap<(usize, usize), Option<Exact>> = BTreeMap::new();
    for (&u, &i) in &local {
        for &w in &nbrs[&u] {
            if let Some(&j) = local.get(&w) {
                if i < j {
                    cost.insert((i, j), min_opt(directed(u, w), directed(w, u)));
                }
            }
        }
    }
    let per_hub: Vec<HubRoutes> = hubs
        .par_iter()
        .map(|&h| {
            let around: Vec<usize> = nbrs[&h].iter().copied().filter(|v| local.contains_key(v)).collect();
            let mut found = Vec::new();
            let mut updates = 0u64;
            for &s1 in &around {
                for &s2 in &around {
                    if s1 == s2 {
                        continue;
                    }
                    updates += 1;
                    let route = match (directed(s1, h), directed(h, s2)) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                    let (i, j) = (local[&s1], local[&s2]);
                    found.push(((i.min(j), i.max(j)), route));
                }
            }
            let bound = (around.len() * around.len()) as u64;
            (found, updates, bound)
        })
        .collect();
    let (mut cost_updates, mut update_bound) = (0, 0);
    for (found, updates, bound) in per_hub {
        cost_updates += updates;
        update_bound += bound;
        for (pair, route) in found {
            let slot = cost.entry(pair).or_insert(None);
            *slot = min_opt(*slot, route);
        }
    }
    let one = Exact::from_integer(1);
    let mut unreachable_pairs = 0;
    let edges = cost
        .into_iter()
        .filter_map(|((a, b), c)| match c {
            Some(c) => Some(UserEdge {
                a,
                b,
                cost: c,
                vol: one / (c + one),
            }),
            None => {
                unreachable_pairs += 1;
                None
            }
        })
        .collect();
    Ok(UserGraph {
        users: users.iter().map(|&v| ix.ids[v].clone()).collect(),
        edges,
        scc_size: scc.len(),
        hub_count: hubs.len(),
        cost_updates,
        update_bound,
        unreachable_pairs,
        amount_msat: opts.amount_msat,
        degree_threshold: opts.degree_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPartition {
    /// Cluster index per user.
    pub labels: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub algorithm: String,
    pub seed: u64,
    pub rounds: usize,
    /// Small clusters with no outside volume were pooled together.
    pub degenerate: bool,
}

impl UserPartition {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut clusters = vec![Vec::new(); count];
        for (v, &l) in labels.iter().enumerate() {
            clusters[l].push(v);
        }
        UserPartition {
            labels,
            clusters,
            algorithm: "given".into(),
            seed: 0,
            rounds: 0,
            degenerate: false,
        }
    }
}

const MAX_ROUNDS: usize = 100;

fn compact(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Asynchronous label propagation weighted by volume, visiting users in id
/// order. Ties keep the current label when it is among the best, otherwise
/// a seeded draw picks one. Clusters below `MIN_CLUSTER_SIZE` are then
/// merged into the neighbour cluster they share the most volume with.
pub fn cluster_user_graph(g: &UserGraph, seed: u64) -> UserPartition {
    let n = g.user_count();
    let adj = g.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).collect();
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let mut changed = false;
        for v in 0..n {
            if adj[v].is_empty() {
                continue;
            }
            let mut weight: BTreeMap<usize, f64> = BTreeMap::new();
            for &(w, vol) in &adj[v] {
                *weight.entry(labels[w]).or_insert(0.0) += vol;
            }
            let top = weight.values().copied().fold(f64::NEG_INFINITY, f64::max);
            let best: Vec<usize> = weight.iter().filter(|(_, &w)| w == top).map(|(&l, _)| l).collect();
            if best.contains(&labels[v]) {
                continue;
            }
            labels[v] = *best.choose(&mut rng).unwrap();
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let mut labels = compact(&labels);

    let mut degenerate = false;
    loop {
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut size = vec![0usize; count];
        for &l in &labels {
            size[l] += 1;
        }
        let mut small: Vec<usize> = (0..count).filter(|&c| size[c] < MIN_CLUSTER_SIZE).collect();
        small.sort_by_key(|&c| (size[c], c));
        let mut merged = false;
        for c in small {
            let mut out: BTreeMap<usize, f64> = BTreeMap::new();
            for v in (0..n).filter(|&v| labels[v] == c) {
                for &(w, vol) in &adj[v] {
                    if labels[w] != c {
                        *out.entry(labels[w]).or_insert(0.0) += vol;
                    }
                }
            }
            if let Some((&target, _)) = out.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))) {
                for l in labels.iter_mut().filter(|l| **l == c) {
                    *l = target;
                }
                merged = true;
                break;
            }
        }
        if !merged {
            break;
        }
        labels = compact(&labels);
    }
    // isolated small clusters end up pooled into one
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; count];
    for &l in &labels {
        size[l] += 1;
    }
    let isolated: BTreeSet<usize> = (0..count).filter(|&c| size[c] < MIN_CLUSTER_SIZE).collect();
    if isolated.len() > 1 || (!isolated.is_empty() && count == isolated.len()) {
        degenerate = true;
    }
    if isolated.len() > 1 {
        let pool = *isolated.iter().next().unwrap();
        for l in labels.iter_mut().filter(|l| isolated.contains(l)) {
            *l = pool;
        }
        labels = compact(&labels);
    }
    let mut part = UserPartition::from_labels(labels);
    part.algorithm = "label-propagation".into();
    part.seed = seed;
    part.rounds = rounds;
    part.degenerate = degenerate;
    part
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub size: usize,
    pub inside_volume: f64,
    pub between_volume: f64,
    #[serde(with = "ratio_format")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub rows: Vec<ClusterRow>,
    /// Sum of inside volumes.
    pub inside_total: f64,
    /// Sum of between volumes over clusters, halved so every crossing edge
    /// counts once.
    pub between_total: f64,
    #[serde(with = "ratio_format")]
    pub ratio: f64,
    pub mean_inside: f64,
    pub mean_between: f64,
    pub algorithm: String,
    pub seed: u64,
    pub degenerate: bool,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

/// Rows are sorted by size, largest first, then by cluster index.
pub fn clustering_report(g: &UserGraph, part: &UserPartition) -> Result<ClusterTable, LightningError> {
    if part.labels.len() != g.user_count() {
        return Err(LightningError::BadPartition(format!(
            "{} labels for {} users",
            part.labels.len(),
            g.user_count()
        )));
    }
    let count = part.clusters.len();
    if let Some(&l) = part.labels.iter().find(|&&l| l >= count) {
        return Err(LightningError::BadPartition(format!("label {l} out of range")));
    }
    let mut inside = vec![0.0; count];
    let mut between = vec![0.0; count];
    for e in &g.edges {
        let (ca, cb) = (part.labels[e.a], part.labels[e.b]);
        let vol = to_f64(e.vol);
        if ca == cb {
            inside[ca] += vol;
        } else {
            between[ca] += vol;
            between[cb] += vol;
        }
    }
    let mut rows: Vec<ClusterRow> = (0..count)
        .map(|c| ClusterRow {
            cluster: c,
            size: part.clusters[c].len(),
            inside_volume: inside[c],
            between_volume: between[c],
            ratio: ratio(inside[c], between[c]),
        })
        .collect();
    rows.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster.cmp(&b.cluster)));
    let inside_total: f64 = inside.iter().sum();
    let between_total = between.iter().sum::<f64>() / 2.0;
    let denom = count.max(1) as f64;
    Ok(ClusterTable {
        rows,
        inside_total,
        between_total,
        ratio: ratio(inside_total, between_total),
        mean_inside: inside_total / denom,
        mean_between: between.iter().sum::<f64>() / denom,
        algorithm: part.algorithm.clone(),
        seed: part.seed,
        degenerate: part.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(u: &str, v: &str, base: u64, rate: u64) -> SnapshotChannel {
        SnapshotChannel {
            u: u.into(),
            v: v.into(),
            base_fee_msat: base,
            fee_rate_ppm: rate,
            capacity_sat: None,
            oneway: false,
        }
    }

    fn snap(nodes: &[&str], channels: Vec<SnapshotChannel>) -> Snapshot {
        Snapshot {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            channels,
        }
    }

    fn e(n: i128, d: i128) -> Exact {
        Exact::new(n, d)
    }

    #[test]
    fn channel_cost_examples() {
        assert_eq!(channel_cost(&ch("a", "b", 0, 0), 100), e(0, 1));
        assert_eq!(channel_cost(&ch("a", "b", 1000, 0), 100), e(1000, 1));
        assert_eq!(channel_cost(&ch("a", "b", 1, 10_000), 100), e(2, 1));
        assert_eq!(channel_cost(&ch("a", "b", 0, 1), 100), e(1, 10_000));
    }

    #[test]
    fn scc_examples() {
        let full = snap(&["a", "b", "c"], vec![ch("a", "b", 0, 0), ch("b", "c", 0, 0)]);
        assert_eq!(largest_scc(&full).unwrap(), vec!["a", "b", "c"]);

        let two = snap(
            &["a", "b", "c", "d", "e", "x", "y", "z"],
            vec![
                ch("a", "b", 0, 0),
                ch("b", "c", 0, 0),
                ch("c", "d", 0, 0),
                ch("d", "e", 0, 0),
                ch("x", "y", 0, 0),
                ch("y", "z", 0, 0),
            ],
        );
        assert_eq!(largest_scc(&two).unwrap().len(), 5);

        let mut chain = snap(&["c", "b", "a"], vec![ch("c", "b", 0, 0), ch("b", "a", 0, 0)]);
        for c in &mut chain.channels {
            c.oneway = true;
        }
        assert_eq!(largest_scc(&chain).unwrap(), vec!["a"]);
        assert!(largest_scc(&Snapshot::default()).unwrap().is_empty());
    }

    #[test]
    fn triangle_of_users_keeps_direct_costs() {
        let s = snap(
            &["a", "b", "c"],
            vec![ch("a", "b", 1, 0), ch("b", "c", 2, 0), ch("a", "c", 3, 0)],
        );
        let g = reduce_to_user_graph(&s, &ReduceOptions::default()).unwrap();
        assert_eq!(g.users, vec!["a", "b", "c"]);
        assert_eq!(g.hub_count, 0);
        assert_eq!(g.vol(0, 1), Some(e(1, 2)));
        assert_eq!(g.vol(1, 2), Some(e(1, 3)));
        assert_eq!(g.vol(0, 2), Some(e(1, 4)));
    }

    #[test]
    fn hub_star_becomes_clique() {
        let s = snap(
            &["h", "l1", "l2", "l3", "l4"],
            vec![
                ch("h", "l1", 1, 0),
                ch("h", "l2", 2, 0),
                ch("h", "l3", 3, 0),
                ch("h", "l4", 4, 0),
            ],
        );
        let g = reduce_to_user_graph(&s, &ReduceOptions::default()).unwrap();
        assert_eq!(g.users, vec!["l1", "l2", "l3", "l4"]);
        assert_eq!(g.edges.len(), 6);
        for edge in &g.edges {
            let c = (edge.a + 1 + edge.b + 1) as i128;
            assert_eq!(edge.cost, e(c, 1));
            assert_eq!(edge.vol, e(1, c + 1));
        }
        assert_eq!(g.cost_updates, 12);
        assert!(g.cost_updates <= g.update_bound);
    }

    #[test]
    fn direct_and_hub_routes_take_the_minimum() {
        // direct a-b costs 10, via h costs 1 + 2
        let s = snap(
            &["h", "a", "b", "c", "d"],
            vec![
                ch("a", "b", 10, 0),
                ch("h", "a", 1, 0),
                ch("h", "b", 2, 0),
                ch("h", "c", 0, 0),
                ch("h", "d", 0, 0),
            ],
        );
        let g = reduce_to_user_graph(&s, &ReduceOptions::default()).unwrap();
        let (a, b) = (g.index_of("a").unwrap(), g.index_of("b").unwrap());
        assert_eq!(g.vol(a, b), Some(e(1, 4)));

        let cheap = snap(
            &["h", "a", "b", "c", "d"],
            vec![
                ch("a", "b", 1, 0),
                ch("h", "a", 1, 0),
                ch("h", "b", 2, 0),
                ch("h", "c", 0, 0),
                ch("h", "d", 0, 0),
            ],
        );
        let g = reduce_to_user_graph(&cheap, &ReduceOptions::default()).unwrap();
        assert_eq!(g.vol(g.index_of("a").unwrap(), g.index_of("b").unwrap()), Some(e(1, 2)));
    }

    #[test]
    fn asymmetric_directions_use_the_cheaper_one() {
        let mut s = snap(
            &["a", "b", "c"],
            vec![
                ch("a", "b", 5, 0),
                ch("b", "a", 1, 0),
                ch("b", "c", 0, 0),
                ch("c", "a", 0, 0),
            ],
        );
        for c in &mut s.channels[..2] {
            c.oneway = true;
        }
        let g = reduce_to_user_graph(&s, &ReduceOptions::default()).unwrap();
        assert_eq!(g.vol(0, 1), Some(e(1, 2)));
    }

    #[test]
    fn unknown_endpoint_is_rejected() {
        let s = snap(&["a"], vec![ch("a", "zz", 0, 0)]);
        assert!(matches!(
            reduce_to_user_graph(&s, &ReduceOptions::default()),
            Err(LightningError::UnknownNode { .. })
        ));
    }

    fn two_cliques() -> UserGraph {
        // hubless: each node has degree <= threshold when the threshold is raised
        let mut channels = Vec::new();
        let names = ["a0", "a1", "a2", "a3", "b0", "b1", "b2", "b3"];
        for block in [&names[..4], &names[4..]] {
            for i in 0..4 {
                for j in i + 1..4 {
                    channels.push(ch(block[i], block[j], 0, 0));
                }
            }
        }
        channels.push(ch("a0", "b0", 1000, 0));
        let s = snap(&names, channels);
        reduce_to_user_graph(
            &s,
            &ReduceOptions {
                degree_threshold: 10,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn two_cliques_give_two_clusters() {
        let g = two_cliques();
        let part = cluster_user_graph(&g, 0);
        assert_eq!(part.clusters.len(), 2, "{part:?}");
        assert_eq!(part.labels[..4].iter().collect::<BTreeSet<_>>().len(), 1);
        assert_ne!(part.labels[0], part.labels[4]);
        assert_eq!(cluster_user_graph(&g, 0), part);
    }

    #[test]
    fn single_clique_is_one_cluster() {
        let s = snap(
            &["a", "b", "c"],
            vec![ch("a", "b", 0, 0), ch("b", "c", 0, 0), ch("a", "c", 0, 0)],
        );
        let g = reduce_to_user_graph(&s, &ReduceOptions::default()).unwrap();
        assert_eq!(cluster_user_graph(&g, 3).clusters.len(), 1);
    }

    #[test]
    fn edgeless_graph_is_degenerate() {
        let g = UserGraph {
            users: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            edges: vec![],
            scc_size: 0,
            hub_count: 0,
            cost_updates: 0,
            update_bound: 0,
            unreachable_pairs: 0,
            amount_msat: 100,
            degree_threshold: 2,
        };
        let part = cluster_user_graph(&g, 0);
        assert!(part.degenerate);
        assert_eq!(part.clusters.len(), 1);
    }

    #[test]
    fn report_arithmetic() {
        // two triangles, inside vol 10 each, crossing vol 2
        let edge = |a, b, vol: i128| UserEdge {
            a,
            b,
            cost: Exact::from_integer(vol) - Exact::from_integer(1),
            vol: Exact::from_integer(1) / Exact::from_integer(vol),
        };
        let mut edges = Vec::new();
        for base in [0, 3] {
            edges.push(UserEdge {
                vol: e(5, 1),
                ..edge(base, base + 1, 1)
            });
            edges.push(UserEdge {
                vol: e(5, 1),
                ..edge(base + 1, base + 2, 1)
            });
        }
        edges.push(UserEdge {
            vol: e(2, 1),
            ..edge(2, 3, 1)
        });
        let g = UserGraph {
            users: (0..6).map(|i| i.to_string()).collect(),
            edges,
            scc_size: 6,
            hub_count: 0,
            cost_updates: 0,
            update_bound: 0,
            unreachable_pairs: 0,
            amount_msat: 100,
            degree_threshold: 2,
        };
        let part = UserPartition::from_labels(vec![0, 0, 0, 1, 1, 1]);
        let table = clustering_report(&g, &part).unwrap();
        for row in &table.rows {
            assert_eq!(row.inside_volume, 10.0);
            assert_eq!(row.between_volume, 2.0);
            assert_eq!(row.ratio, 5.0);
        }
        assert_eq!(table.between_total, 2.0);
        assert_eq!(table.ratio, 10.0);

        let lone = clustering_report(&g, &UserPartition::from_labels(vec![0; 6])).unwrap();
        assert!(lone.rows[0].ratio.is_infinite());
    }

    #[test]
    fn json_round_trip_keeps_exact_volumes() {
        let g = two_cliques();
        let back: UserGraph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let s: Snapshot =
            Snapshot::from_json(r#"{"nodes":["a","b"],"channels":[{"u":"a","v":"b","base_fee_msat":1}]}"#).unwrap();
        assert_eq!(s.channels[0].fee_rate_ppm, 0);
    }
}
