//! Clustering-condition verification and synthetic clustered sequences.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, NodeId, Transaction, TransactionSequence};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("empty transaction sequence")]
    EmptySequence,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Serializes ratios with `"inf"` standing in for an empty denominator.
pub mod ratio_format {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Tag(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Tag(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("bad ratio {t}"))),
        }
    }
}

pub fn x_max(seq: &TransactionSequence) -> Result<f64, ClusteringError> {
    seq.iter()
        .map(|tx| tx.amount)
        .reduce(f64::max)
        .ok_or(ClusteringError::EmptySequence)
}

/// A partition of `0..p` into non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition(Vec<Vec<NodeId>>);

impl Partition {
    pub fn new(party_count: usize, clusters: Vec<Vec<NodeId>>) -> Result<Self, ClusteringError> {
        let part = Partition(clusters);
        part.validate(party_count)?;
        Ok(part)
    }

    /// Consecutive id blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self, ClusteringError> {
        let mut next = 0;
        let clusters = sizes
            .iter()
            .map(|&s| {
                let c = (next..next + s).map(NodeId).collect();
                next += s;
                c
            })
            .collect();
        Self::new(next, clusters)
    }

    pub fn validate(&self, party_count: usize) -> Result<(), ClusteringError> {
        if self.0.is_empty() {
            return Err(ClusteringError::InvalidPartition("no clusters".into()));
        }
        let mut seen = vec![false; party_count];
        for c in &self.0 {
            if c.is_empty() {
                return Err(ClusteringError::InvalidPartition("empty cluster".into()));
            }
            for v in c {
                match seen.get_mut(v.0) {
                    None => {
                        return Err(ClusteringError::InvalidPartition(format!(
                            "node {v} outside 0..{party_count}"
                        )))
                    }
                    Some(true) => return Err(ClusteringError::InvalidPartition(format!("node {v} listed twice"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(ClusteringError::InvalidPartition(format!("node {v} not covered")));
        }
        Ok(())
    }

    pub fn clusters(&self) -> &[Vec<NodeId>] {
        &self.0
    }

    pub fn into_clusters(self) -> Vec<Vec<NodeId>> {
        self.0
    }

    pub fn node_count(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    /// Cluster index per node.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.node_count()];
        for (i, c) in self.0.iter().enumerate() {
            for v in c {
                out[v.0] = i;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Check every qualifying window instead of minimal ones plus bounded
    /// extensions.
    pub full: bool,
    /// Clusters up to this size enumerate all subsets.
    pub exact_limit: usize,
    /// Random subsets per size class for larger clusters.
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            full: false,
            exact_limit: 12,
            samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRatio {
    pub members: Vec<NodeId>,
    #[serde(with = "ratio_format")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    /// First and last sequence index of the window.
    pub start: usize,
    pub end: usize,
    pub inside_volume: f64,
    pub cross_volume: f64,
    #[serde(with = "ratio_format")]
    pub condition1_ratio: f64,
    /// Smallest between-volume over its required share; passes at ≥ 1.
    pub condition2: Option<SubsetRatio>,
    /// Smallest inbound over outbound volume; passes at ≥ 1/3.
    pub condition3: Option<SubsetRatio>,
    pub condition1_pass: bool,
    pub condition2_pass: bool,
    pub condition3_pass: bool,
}

impl WindowCheck {
    pub fn passed(&self) -> bool {
        self.condition1_pass && self.condition2_pass && self.condition3_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCheck {
    pub cluster: usize,
    pub members: Vec<NodeId>,
    pub size: usize,
    /// Whole-sequence volumes.
    pub inside_volume: f64,
    pub cross_volume: f64,
    #[serde(with = "ratio_format")]
    pub ratio: f64,
    /// Window volume threshold `|C| x_max`.
    pub threshold: f64,
    pub sampled: bool,
    pub windows: Vec<WindowCheck>,
    pub condition1: bool,
    pub condition2: bool,
    pub condition3: bool,
}

impl ClusterCheck {
    pub fn passed(&self) -> bool {
        self.condition1 && self.condition2 && self.condition3
    }

    /// The failing window with the smallest condition-1 ratio, else the
    /// first failing one.
    pub fn worst_window(&self) -> Option<&WindowCheck> {
        let failing = || self.windows.iter().filter(|w| !w.passed());
        failing()
            .filter(|w| !w.condition1_pass)
            .min_by(|a, b| a.condition1_ratio.total_cmp(&b.condition1_ratio))
            .or_else(|| failing().next())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub t: f64,
    pub x_max: f64,
    pub full: bool,
    pub clusters: Vec<ClusterCheck>,
    pub passed: bool,
}

impl ClusterReport {
    pub fn window_count(&self) -> usize {
        self.clusters.iter().map(|c| c.windows.len()).sum()
    }

    pub fn first_failure(&self) -> Option<(&ClusterCheck, &WindowCheck)> {
        self.clusters.iter().find_map(|c| c.worst_window().map(|w| (c, w)))
    }
}

/// Directed volume among one cluster's members inside a window.
struct WindowVolumes {
    /// row-major `k x k`, `flow[a * k + b]` from member `a` to member `b`
    flow: Vec<f64>,
    inside: f64,
    cross: f64,
}

impl WindowVolumes {
    fn collect(txs: &[&Transaction], local: &[Option<usize>], k: usize) -> Self {
        let mut flow = vec![0.0; k * k];
        let (mut inside, mut cross) = (0.0, 0.0);
        for tx in txs {
            match (local[tx.source.0], local[tx.target.0]) {
                (Some(a), Some(b)) => {
                    flow[a * k + b] += tx.amount;
                    inside += tx.amount;
                }
                _ => cross += tx.amount,
            }
        }
        WindowVolumes { flow, inside, cross }
    }

    /// (out of S, into S) for a member bit mask.
    fn boundary(&self, k: usize, mask: u64) -> (f64, f64) {
        let (mut out, mut inn) = (0.0, 0.0);
        for a in 0..k {
            let a_in = mask >> a & 1 == 1;
            for b in 0..k {
                let b_in = mask >> b & 1 == 1;
                match (a_in, b_in) {
                    (true, false) => out += self.flow[a * k + b],
                    (false, true) => inn += self.flow[a * k + b],
                    _ => {}
                }
            }
        }
        (out, inn)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

fn condition2_ratio(k: usize, size: usize, inside: f64, between: f64) -> f64 {
    ratio(between, size as f64 / (4.0 * k as f64) * inside)
}

/// Subset masks the conditions are tested against. Each entry is
/// (mask, test condition 2).
fn subset_family(k: usize, opts: &VerifyOptions, cluster: usize) -> (Vec<(u64, bool)>, bool) {
    let full = if k >= 64 { u64::MAX } else { (1u64 << k) - 1 };
    if k <= opts.exact_limit {
        let family = (1..full)
            .map(|mask: u64| (mask, mask.count_ones() as usize <= k / 2))
            .collect();
        return (family, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::split_seed(opts.seed, cluster as u64));
    let mut masks = BTreeSet::new();
    for v in 0..k {
        masks.insert(1u64 << v);
    }
    let ids: Vec<usize> = (0..k).collect();
    for size in 1..=k / 2 {
        for _ in 0..opts.samples {
            let mask = ids.choose_multiple(&mut rng, size).fold(0u64, |m, &v| m | 1 << v);
            masks.insert(mask);
        }
    }
    let small: Vec<u64> = masks.iter().copied().collect();
    let mut family: Vec<(u64, bool)> = small.iter().map(|&m| (m, true)).collect();
    for m in small {
        let c = full & !m;
        if !masks.contains(&c) {
            family.push((c, false));
        }
    }
    (family, true)
}

fn check_window(
    vols: &WindowVolumes,
    k: usize,
    members: &[NodeId],
    family: &[(u64, bool)],
    t: f64,
    start: usize,
    end: usize,
) -> WindowCheck {
    let c1 = ratio(vols.inside, vols.cross);
    let pass1 = vols.cross == 0.0 || vols.inside >= t * vols.cross;
    let mut c2: Option<SubsetRatio> = None;
    let mut c3: Option<SubsetRatio> = None;
    let subset = |mask: u64| -> Vec<NodeId> { (0..k).filter(|&a| mask >> a & 1 == 1).map(|a| members[a]).collect() };
    for &(mask, test2) in family {
        let (out, inn) = vols.boundary(k, mask);
        if test2 {
            let r = condition2_ratio(k, mask.count_ones() as usize, vols.inside, out + inn);
            if c2.as_ref().is_none_or(|w| r < w.ratio) {
                c2 = Some(SubsetRatio {
                    members: subset(mask),
                    ratio: r,
                });
            }
        }
        let r = ratio(inn, out);
        if c3.as_ref().is_none_or(|w| r < w.ratio) {
            c3 = Some(SubsetRatio {
                members: subset(mask),
                ratio: r,
            });
        }
    }
    let tol = 1e-12;
    let pass2 = c2.as_ref().is_none_or(|w| w.ratio >= 1.0 - tol);
    let pass3 = c3.as_ref().is_none_or(|w| w.ratio >= 1.0 / 3.0 - tol);
    WindowCheck {
        start,
        end,
        inside_volume: vols.inside,
        cross_volume: vols.cross,
        condition1_ratio: c1,
        condition2: c2,
        condition3: c3,
        condition1_pass: pass1,
        condition2_pass: pass2,
        condition3_pass: pass3,
    }
}

fn check_cluster(
    seq: &TransactionSequence,
    cluster: usize,
    members: &[NodeId],
    t: f64,
    xm: f64,
    opts: &VerifyOptions,
) -> ClusterCheck {
    let k = members.len();
    let mut local = vec![None; seq.party_count()];
    for (a, v) in members.iter().enumerate() {
        local[v.0] = Some(a);
    }
    let incident: Vec<&Transaction> = seq
        .iter()
        .filter(|tx| local[tx.source.0].is_some() || local[tx.target.0].is_some())
        .collect();
    let whole = WindowVolumes::collect(&incident, &local, k);
    let threshold = k as f64 * xm;
    let (family, sampled) = subset_family(k, opts, cluster);

    let mut prefix = vec![0.0];
    for tx in &incident {
        prefix.push(prefix.last().unwrap() + tx.amount);
    }
    let reaches = |l: usize, r: usize| prefix[r + 1] - prefix[l] >= threshold;
    let mut windows = Vec::new();
    let mut r = 0;
    for l in 0..incident.len() {
        r = r.max(l);
        while r < incident.len() && !reaches(l, r) {
            r += 1;
        }
        if r == incident.len() {
            break;
        }
        let last = if opts.full {
            incident.len() - 1
        } else {
            (r + k).min(incident.len() - 1)
        };
        for end in r..=last {
            let vols = WindowVolumes::collect(&incident[l..=end], &local, k);
            windows.push(check_window(
                &vols,
                k,
                members,
                &family,
                t,
                incident[l].index,
                incident[end].index,
            ));
        }
    }
    ClusterCheck {
        cluster,
        members: members.to_vec(),
        size: k,
        inside_volume: whole.inside,
        cross_volume: whole.cross,
        ratio: ratio(whole.inside, whole.cross),
        threshold,
        sampled,
        condition1: windows.iter().all(|w| w.condition1_pass),
        condition2: windows.iter().all(|w| w.condition2_pass),
        condition3: windows.iter().all(|w| w.condition3_pass),
        windows,
    }
}

/// Checks the three clustering conditions on every qualifying window of
/// every cluster.
pub fn verify_clustering(
    seq: &TransactionSequence,
    partition: &Partition,
    t: f64,
    opts: &VerifyOptions,
) -> Result<ClusterReport, ClusteringError> {
    partition.validate(seq.party_count())?;
    if partition.clusters().iter().any(|c| c.len() > 63) {
        return Err(ClusteringError::InvalidPartition(
            "clusters larger than 63 nodes".into(),
        ));
    }
    let xm = x_max(seq).unwrap_or(0.0);
    let clusters: Vec<ClusterCheck> = partition
        .clusters()
        .par_iter()
        .enumerate()
        .map(|(i, members)| check_cluster(seq, i, members, t, xm, opts))
        .collect();
    let passed = clusters.iter().all(ClusterCheck::passed);
    Ok(ClusterReport {
        t,
        x_max: xm,
        full: opts.full,
        clusters,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmountDist {
    Constant {
        value: f64,
    },
    /// Uniform integers in `lo..=hi`.
    UniformInt {
        lo: u32,
        hi: u32,
    },
}

impl Default for AmountDist {
    fn default() -> Self {
        AmountDist::UniformInt { lo: 1, hi: 10 }
    }
}

impl AmountDist {
    fn validate(&self) -> Result<(), ClusteringError> {
        let ok = match *self {
            AmountDist::Constant { value } => value > 0.0 && value.is_finite(),
            AmountDist::UniformInt { lo, hi } => lo >= 1 && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(ClusteringError::InvalidParams(format!(
                "bad amount distribution {self:?}"
            )))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            AmountDist::Constant { value } => value,
            AmountDist::UniformInt { lo, hi } => rng.gen_range(lo..=hi) as f64,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            AmountDist::Constant { value } => value,
            AmountDist::UniformInt { hi, .. } => hi as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub sizes: Vec<usize>,
    pub q1: f64,
    pub q2: f64,
    pub n: usize,
    #[serde(default)]
    pub amounts: AmountDist,
    #[serde(default)]
    pub seed: u64,
}

impl SbmParams {
    /// `sqrt(p)` clusters of size `sqrt(p)` with `q2 = 1/p`, `q1 = 1 - q2`.
    pub fn planted(p: usize, n: usize, amounts: AmountDist, seed: u64) -> Self {
        let k = (p as f64).sqrt().round() as usize;
        SbmParams {
            sizes: vec![k; p / k.max(1)],
            q1: 1.0 - 1.0 / p as f64,
            q2: 1.0 / p as f64,
            n,
            amounts,
            seed,
        }
    }

    pub fn party_count(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn partition(&self) -> Result<Partition, ClusteringError> {
        Partition::contiguous(&self.sizes)
    }

    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(0.0..=1.0).contains(&self.q1) || !(0.0..=self.q1).contains(&self.q2) {
            return Err(ClusteringError::InvalidParams(format!(
                "need 0 <= q2 <= q1 <= 1, got q1 = {}, q2 = {}",
                self.q1, self.q2
            )));
        }
        if self.sizes.contains(&0) || self.party_count() < 2 {
            return Err(ClusteringError::InvalidParams(
                "need non-empty clusters and p >= 2".into(),
            ));
        }
        if self.q1 == 0.0 && self.q2 == 0.0 {
            return Err(ClusteringError::InvalidParams("q1 and q2 are both zero".into()));
        }
        if self.q2 == 0.0 && self.sizes.iter().all(|&s| s < 2) {
            return Err(ClusteringError::InvalidParams("no intra-cluster pair exists".into()));
        }
        self.amounts.validate()
    }
}

/// Planted-partition sequence: a uniform source, then a target weighted by
/// `q1` inside the source's cluster and `q2` outside.
pub fn generate_sbm_sequence(params: &SbmParams) -> Result<TransactionSequence, ClusteringError> {
    params.validate()?;
    let p = params.party_count();
    let labels = params.partition()?.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut triples = Vec::with_capacity(params.n);
    while triples.len() < params.n {
        let s = rng.gen_range(0..p);
        let weight = |v: usize| {
            if v == s {
                0.0
            } else if labels[v] == labels[s] {
                params.q1
            } else {
                params.q2
            }
        };
        let total: f64 = (0..p).map(weight).sum();
        if total <= 0.0 {
            // an isolated singleton under q2 = 0
            continue;
        }
        let mut draw = rng.gen::<f64>() * total;
        let mut t = (0..p).rfind(|&v| weight(v) > 0.0).unwrap();
        for v in 0..p {
            let w = weight(v);
            if w > 0.0 && draw < w {
                t = v;
                break;
            }
            draw -= w;
        }
        triples.push((s, t, params.amounts.sample(&mut rng)));
    }
    Ok(TransactionSequence::from_triples(p, triples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclicParams {
    pub sizes: Vec<usize>,
    /// Full traversals of each cluster's cycle.
    pub rounds: usize,
    /// Between-cluster transactions per round.
    pub cross_per_round: usize,
    /// Between-cluster amount as a fraction of the largest cycle amount.
    pub cross_fraction: f64,
    #[serde(default)]
    pub amounts: AmountDist,
    #[serde(default)]
    pub seed: u64,
}

/// Each cluster repeats one fixed directed Hamiltonian cycle at one amount,
/// interleaved at random with the other clusters, plus a few small
/// between-cluster payments per round. Every window spanning a full cycle is
/// balanced in both directions.
pub fn generate_cyclic_clustered_sequence(params: &CyclicParams) -> Result<TransactionSequence, ClusteringError> {
    if params.sizes.iter().any(|&s| s < 2) {
        return Err(ClusteringError::InvalidParams(
            "cycle clusters need at least two nodes".into(),
        ));
    }
    if !(params.cross_fraction > 0.0 && params.cross_fraction <= 1.0) {
        return Err(ClusteringError::InvalidParams(
            "cross_fraction must lie in (0, 1]".into(),
        ));
    }
    params.amounts.validate()?;
    let part = Partition::contiguous(&params.sizes)?;
    let p = part.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cycles: Vec<Vec<NodeId>> = part
        .clusters()
        .iter()
        .map(|c| {
            let mut order = c.clone();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    let amounts: Vec<f64> = cycles.iter().map(|_| params.amounts.sample(&mut rng)).collect();
    let cross = amounts.iter().copied().fold(0.0, f64::max) * params.cross_fraction;
    let m = cycles.len();

    let mut triples = Vec::new();
    let mut cursor = vec![0usize; m];
    for _ in 0..params.rounds {
        let mut left: Vec<usize> = cycles.iter().map(Vec::len).collect();
        let mut schedule: Vec<usize> = (0..m).flat_map(|c| std::iter::repeat_n(c, left[c])).collect();
        schedule.shuffle(&mut rng);
        for c in schedule {
            let cyc = &cycles[c];
            let a = cyc[cursor[c] % cyc.len()];
            let b = cyc[(cursor[c] + 1) % cyc.len()];
            cursor[c] += 1;
            left[c] -= 1;
            triples.push((a.0, b.0, amounts[c]));
        }
        if m > 1 {
            for _ in 0..params.cross_per_round {
                let ca = rng.gen_range(0..m);
                let cb = (ca + rng.gen_range(1..m)) % m;
                let a = *cycles[ca].choose(&mut rng).unwrap();
                let b = *cycles[cb].choose(&mut rng).unwrap();
                triples.push((a.0, b.0, cross));
            }
        }
    }
    Ok(TransactionSequence::from_triples(p, triples)?)
}
