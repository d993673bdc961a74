use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use pcn_core::channel_alg::{solve_star, StarRun};
use pcn_core::cluster_alg::{run_double_star, Clustering};
use pcn_core::clustering::{
    generate_sbm_sequence, verify_clustering, AmountDist, ClusterReport, Partition, SbmParams, VerifyOptions,
};
use pcn_core::lightning::{
    cluster_user_graph, clustering_report, reduce_to_user_graph, ClusterTable, ReduceOptions, Snapshot, UserGraph,
    UserPartition,
};
use pcn_core::lp::build_double_star_lp;
use pcn_core::model::{replay, CostBreakdown, CostParams, DecisionSequence, NodeId, TransactionSequence};
use pcn_core::oracle::{optimal_decisions, OracleResult, MAX_ENUMERATED_TRANSACTIONS};
use pcn_core::seed::split_seed;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{
    read_partition, read_sequence, Algorithm, ExperimentConfig, SequenceSource, STREAM_CLUSTERING, STREAM_SEQUENCE,
    STREAM_VERIFY,
};
use crate::{CostArgs, GenArgs, LightningArgs, OracleArgs, ReportArgs, SolveArgs, VerifyArgs};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0:#}")]
    Input(anyhow::Error),
    #[error("{0}")]
    Verification(String),
    #[error("internal invariant breach: {0:#}")]
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

type Outcome = Result<(), Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn fmt_ratio(r: f64) -> String {
    if r.is_infinite() {
        "inf".into()
    } else {
        r.to_string()
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

fn apply_costs(base: CostParams, args: &CostArgs) -> anyhow::Result<CostParams> {
    let c = CostParams {
        k: args.k.unwrap_or(base.k),
        f: args.f.unwrap_or(base.f),
        m: args.m.unwrap_or(base.m),
    };
    c.validate()?;
    Ok(c)
}

/// Re-declares `seq` over at least `p` parties.
fn widen(seq: TransactionSequence, p: usize) -> anyhow::Result<TransactionSequence> {
    if seq.party_count() >= p {
        return Ok(seq);
    }
    Ok(TransactionSequence::new(p, seq.items().to_vec())?)
}

pub fn gen(args: GenArgs) -> Outcome {
    let mut params = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(input)?;
            serde_json::from_str::<SbmParams>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(input)?
        }
        None => SbmParams::planted(args.p.unwrap_or(16), 0, AmountDist::default(), 0),
    };
    if let Some(p) = args.p {
        if args.sizes.is_none() {
            params.sizes = SbmParams::planted(p, 0, params.amounts, 0).sizes;
            if args.q1.is_none() && args.q2.is_none() {
                params.q2 = 1.0 / p as f64;
                params.q1 = 1.0 - params.q2;
            }
        }
    }
    if let Some(s) = args.sizes {
        params.sizes = s;
    }
    if let Some(q) = args.q1 {
        params.q1 = q;
    }
    if let Some(q) = args.q2 {
        params.q2 = q;
    }
    if let Some(n) = args.n {
        params.n = n;
    }
    if let Some(v) = args.amount {
        params.amounts = AmountDist::Constant { value: v };
    } else if args.amount_lo.is_some() || args.amount_hi.is_some() {
        params.amounts = AmountDist::UniformInt {
            lo: args.amount_lo.unwrap_or(1),
            hi: args.amount_hi.unwrap_or(10),
        };
    }
    params.seed = split_seed(args.seed.unwrap_or(params.seed), STREAM_SEQUENCE);
    let seq = generate_sbm_sequence(&params).map_err(input)?;
    let mut out = create(&args.out).map_err(input)?;
    seq.write_jsonl(&mut out).map_err(input)?;
    out.flush().map_err(input)?;
    if let Some(path) = &args.partition_out {
        write_json(path, &params.partition().map_err(input)?).map_err(input)?;
    }
    eprintln!("wrote {} transactions over {} nodes", seq.len(), seq.party_count());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LpBounds {
    pub creation: f64,
    pub capacity: f64,
    pub rejection: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub algorithm: Algorithm,
    pub party_count: usize,
    pub n: usize,
    pub accepted: usize,
    pub cost: CostBreakdown,
    pub lp: LpBounds,
    /// Algorithm total over LP total.
    pub ratio: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explored: Option<u64>,
}

struct Solved {
    report: SolveReport,
    decisions: DecisionSequence,
    traces: Vec<StarRun>,
    transports: Option<Vec<String>>,
}

fn default_center(seq: &TransactionSequence, center: Option<usize>) -> Result<NodeId, Failure> {
    let c = NodeId(center.unwrap_or(seq.party_count()));
    if let Some(tx) = seq.iter().find(|tx| tx.source == c || tx.target == c) {
        return Err(input(anyhow!(
            "transaction {} touches the star center {c}; pick a center outside the parties",
            tx.index
        )));
    }
    Ok(c)
}

fn lp_bounds(creation: f64, capacity: f64, rejection: f64) -> LpBounds {
    LpBounds {
        creation,
        capacity,
        rejection,
        total: creation + capacity + rejection,
    }
}

fn solve_one(cfg: &ExperimentConfig, seq: TransactionSequence, planted: Option<Partition>) -> Result<Solved, Failure> {
    let costs = cfg.costs;
    match cfg.algorithm {
        Algorithm::Star | Algorithm::Oracle => {
            let center = default_center(&seq, cfg.center)?;
            if cfg.algorithm == Algorithm::Oracle && seq.len() > MAX_ENUMERATED_TRANSACTIONS {
                return Err(input(anyhow!(
                    "oracle mode enumerates at most {MAX_ENUMERATED_TRANSACTIONS} transactions, got {}",
                    seq.len()
                )));
            }
            let sol = solve_star(&seq, center, &costs).map_err(internal)?;
            let creation = costs.k * sol.star.edges().len() as f64;
            let lp = lp_bounds(creation, sol.plan.capacity_cost, sol.plan.rejection_cost);
            if cfg.algorithm == Algorithm::Star {
                return Ok(Solved {
                    report: SolveReport {
                        algorithm: cfg.algorithm,
                        party_count: seq.party_count(),
                        n: seq.len(),
                        accepted: sol.decisions.accept_count(),
                        cost: sol.cost,
                        ratio: fmt_ratio(ratio(sol.cost.total, lp.total)),
                        lp,
                        top_up: None,
                        explored: None,
                    },
                    decisions: sol.decisions,
                    traces: vec![sol.run],
                    transports: None,
                });
            }
            let opt: OracleResult = optimal_decisions(&sol.star, &seq, &costs).map_err(internal)?;
            let check = replay(&sol.star, &seq, &opt.decisions, &opt.capacities, &costs).map_err(internal)?;
            if (check.cost.total - opt.cost.total).abs() > 1e-6 * (1.0 + opt.cost.total) {
                return Err(internal(anyhow!("oracle cost does not replay")));
            }
            Ok(Solved {
                report: SolveReport {
                    algorithm: cfg.algorithm,
                    party_count: seq.party_count(),
                    n: seq.len(),
                    accepted: opt.decisions.accept_count(),
                    cost: opt.cost,
                    ratio: fmt_ratio(ratio(opt.cost.total, lp.total)),
                    lp,
                    top_up: None,
                    explored: Some(opt.explored),
                },
                decisions: opt.decisions,
                traces: Vec::new(),
                transports: None,
            })
        }
        Algorithm::DoubleStar => {
            let part = cfg.partition(planted, seq.party_count()).map_err(input)?;
            let seq = widen(seq, part.node_count()).map_err(input)?;
            let clustering = Clustering::standard(part.into_clusters()).map_err(input)?;
            let lp = build_double_star_lp(&seq, &clustering, &costs).map_err(internal)?;
            let plan = lp.solve().map_err(internal)?;
            let creation = costs.k * lp.topology().edges().len() as f64;
            let bounds = lp_bounds(creation, plan.capacity_cost, plan.rejection_cost);
            let run = run_double_star(&seq, &clustering, &plan, &costs).map_err(internal)?;
            let transports = run
                .transports()
                .map(serde_json::to_string)
                .collect::<Result<Vec<_>, _>>()
                .map_err(internal)?;
            let mut traces = vec![run.between.clone()];
            traces.extend(run.within.iter().cloned());
            Ok(Solved {
                report: SolveReport {
                    algorithm: cfg.algorithm,
                    party_count: seq.party_count(),
                    n: seq.len(),
                    accepted: run.decisions.accept_count(),
                    cost: run.cost,
                    ratio: fmt_ratio(ratio(run.cost.total, bounds.total)),
                    lp: bounds,
                    top_up: Some(run.top_up),
                    explored: None,
                },
                decisions: run.decisions,
                traces,
                transports: Some(transports),
            })
        }
    }
}

fn solve_config(args: &SolveArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &args.seq {
        cfg.sequence = Some(SequenceSource::File(s.clone()));
    }
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    if args.center.is_some() {
        cfg.center = args.center;
    }
    if let Some(p) = &args.partition {
        cfg.partition = Some(p.clone());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    cfg.costs = apply_costs(cfg.costs, &args.costs)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn solve(args: SolveArgs) -> Outcome {
    let cfg = solve_config(&args).map_err(input)?;
    let (seq, planted) = cfg.sequence(cfg.seed).map_err(input)?;
    let solved = solve_one(&cfg, seq, planted)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(input)?;
        write_json(&dir.join("report.json"), &solved.report).map_err(input)?;
        write_json(&dir.join("decisions.json"), &solved.decisions).map_err(input)?;
        let mut trace = create(&dir.join("trace.jsonl")).map_err(input)?;
        for run in &solved.traces {
            run.write_trace(&mut trace).map_err(internal)?;
        }
        trace.flush().map_err(input)?;
        if let Some(lines) = &solved.transports {
            let mut out = create(&dir.join("transports.jsonl")).map_err(input)?;
            for l in lines {
                writeln!(out, "{l}").map_err(input)?;
            }
            out.flush().map_err(input)?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&solved.report).map_err(internal)?);
    Ok(())
}

fn print_cluster_table(report: &ClusterReport) {
    println!("cluster,size,inside_volume,between_volume,ratio,windows,sampled,condition1,condition2,condition3");
    for c in &report.clusters {
        println!(
            "{},{},{},{},{},{},{},{},{},{}",
            c.cluster,
            c.size,
            c.inside_volume,
            c.cross_volume,
            fmt_ratio(c.ratio),
            c.windows.len(),
            c.sampled,
            c.condition1,
            c.condition2,
            c.condition3
        );
    }
}

pub fn verify(args: VerifyArgs) -> Outcome {
    let seq = read_sequence(&args.seq).map_err(input)?;
    let part = read_partition(&args.partition, seq.party_count()).map_err(input)?;
    let seq = widen(seq, part.node_count()).map_err(input)?;
    let opts = VerifyOptions {
        full: args.full,
        seed: split_seed(args.seed, STREAM_VERIFY),
        ..Default::default()
    };
    let report = verify_clustering(&seq, &part, args.t, &opts).map_err(input)?;
    if let Some(out) = &args.out {
        write_json(out, &report).map_err(input)?;
    }
    print_cluster_table(&report);
    match report.first_failure() {
        None => Ok(()),
        Some((c, w)) => Err(Failure::Verification(format!(
            "cluster {} fails on transactions {}..={}: inside {}, cross {}, condition 1 ratio {} (needs {}), condition 2 {}, condition 3 {}",
            c.cluster,
            w.start,
            w.end,
            w.inside_volume,
            w.cross_volume,
            fmt_ratio(w.condition1_ratio),
            report.t,
            w.condition2.as_ref().map_or("n/a".into(), |s| fmt_ratio(s.ratio)),
            w.condition3.as_ref().map_or("n/a".into(), |s| fmt_ratio(s.ratio)),
        ))),
    }
}

#[derive(Debug, Serialize)]
struct OracleComparison {
    oracle: OracleResult,
    algorithm: CostBreakdown,
    lp_total: f64,
    algorithm_over_optimum: String,
    lp_over_optimum: String,
}

pub fn oracle(args: OracleArgs) -> Outcome {
    let seq = read_sequence(&args.seq).map_err(input)?;
    let costs = apply_costs(CostParams::default(), &args.costs).map_err(input)?;
    let center = default_center(&seq, args.center)?;
    if seq.len() > MAX_ENUMERATED_TRANSACTIONS {
        return Err(input(anyhow!(
            "the oracle enumerates at most {MAX_ENUMERATED_TRANSACTIONS} transactions, got {}",
            seq.len()
        )));
    }
    let sol = solve_star(&seq, center, &costs).map_err(internal)?;
    let opt = optimal_decisions(&sol.star, &seq, &costs).map_err(internal)?;
    let cmp = OracleComparison {
        algorithm_over_optimum: fmt_ratio(ratio(sol.cost.total, opt.cost.total)),
        lp_over_optimum: fmt_ratio(ratio(sol.lp_total, opt.cost.total)),
        algorithm: sol.cost,
        lp_total: sol.lp_total,
        oracle: opt,
    };
    if let Some(out) = &args.out {
        write_json(out, &cmp).map_err(input)?;
    }
    println!("{}", serde_json::to_string_pretty(&cmp).map_err(internal)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct LightningReport<'a> {
    users: usize,
    user_edges: usize,
    scc_size: usize,
    hubs: usize,
    cost_updates: u64,
    update_bound: u64,
    unreachable_pairs: usize,
    amount_msat: u64,
    degree_threshold: usize,
    partition: &'a UserPartition,
    table: &'a ClusterTable,
}

fn write_table(path: &Path, table: &ClusterTable) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["cluster", "cluster_size", "inside_volume", "between_volume", "ratio"])?;
    for row in &table.rows {
        w.write_record([
            row.cluster.to_string(),
            row.size.to_string(),
            row.inside_volume.to_string(),
            row.between_volume.to_string(),
            fmt_ratio(row.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn lightning(args: LightningArgs) -> Outcome {
    let text = fs::read_to_string(&args.snapshot)
        .with_context(|| format!("reading {}", args.snapshot.display()))
        .map_err(input)?;
    let snapshot = Snapshot::from_json(&text).map_err(input)?;
    let opts = ReduceOptions {
        amount_msat: args.amount_msat,
        degree_threshold: args.degree_threshold,
    };
    let graph: UserGraph = reduce_to_user_graph(&snapshot, &opts).map_err(input)?;
    let part = cluster_user_graph(&graph, split_seed(args.seed, STREAM_CLUSTERING));
    let table = clustering_report(&graph, &part).map_err(internal)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(input)?;
    write_json(&args.out_dir.join("user_graph.json"), &graph).map_err(input)?;
    write_table(&args.out_dir.join("clusters.csv"), &table).map_err(input)?;
    let report = LightningReport {
        users: graph.user_count(),
        user_edges: graph.edges.len(),
        scc_size: graph.scc_size,
        hubs: graph.hub_count,
        cost_updates: graph.cost_updates,
        update_bound: graph.update_bound,
        unreachable_pairs: graph.unreachable_pairs,
        amount_msat: graph.amount_msat,
        degree_threshold: graph.degree_threshold,
        partition: &part,
        table: &table,
    };
    write_json(&args.out_dir.join("report.json"), &report).map_err(input)?;
    println!(
        "{} users, {} clusters, inside {}, between {}, ratio {}",
        graph.user_count(),
        part.clusters.len(),
        table.inside_total,
        table.between_total,
        fmt_ratio(table.ratio)
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Outcome {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(input)?;
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if cfg.seeds.is_empty() {
        cfg.seeds = vec![cfg.seed];
    }
    cfg.validate().map_err(input)?;
    let rows: Vec<Result<Vec<String>, Failure>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (seq, planted) = cfg.sequence(seed).map_err(input)?;
            let solved = solve_one(&cfg, seq, planted)?;
            let r = solved.report;
            Ok(vec![
                seed.to_string(),
                serde_json::to_value(r.algorithm)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                r.party_count.to_string(),
                r.n.to_string(),
                r.accepted.to_string(),
                r.cost.creation.to_string(),
                r.cost.capacity.to_string(),
                r.cost.rejection.to_string(),
                r.cost.total.to_string(),
                r.lp.total.to_string(),
                r.ratio,
            ])
        })
        .collect();
    let mut w = csv::Writer::from_writer(create(&args.out).map_err(input)?);
    w.write_record([
        "seed",
        "algorithm",
        "p",
        "n",
        "accepted",
        "creation",
        "capacity",
        "rejection",
        "total",
        "lp_total",
        "ratio",
    ])
    .map_err(input)?;
    for row in rows {
        w.write_record(row?).map_err(input)?;
    }
    w.flush().map_err(input)?;
    Ok(())
}
