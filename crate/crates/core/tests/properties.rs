use pcn_core::channel_alg::solve_star;
use pcn_core::clustering::{verify_clustering, x_max, Partition, VerifyOptions};
use pcn_core::model::{replay, CostParams, DecisionSequence, NodeId, Topology, TransactionSequence, Verdict};
use pcn_core::oracle::{min_capacity_given_decisions, optimal_decisions};
use proptest::prelude::*;

fn leaf_sequence(leaves: usize, max_len: usize) -> impl Strategy<Value = TransactionSequence> {
    prop::collection::vec((0..leaves, 1..leaves, 1u32..=10), 0..=max_len).prop_map(move |raw| {
        let triples: Vec<_> = raw
            .into_iter()
            .map(|(s, d, x)| (s, (s + d) % leaves, x as f64))
            .collect();
        TransactionSequence::from_triples(leaves, triples).unwrap()
    })
}

fn costs() -> impl Strategy<Value = CostParams> {
    (0u32..3, 0u32..5, 0u32..3).prop_map(|(k, f, m)| CostParams::new(k as f64, f as f64 / 2.0, m as f64).unwrap())
}

fn star_over(seq: &TransactionSequence) -> Topology {
    let p = seq.party_count() + 1;
    Topology::star(p, NodeId(p - 1)).unwrap()
}

fn decode(mask: u64, n: usize) -> DecisionSequence {
    DecisionSequence(
        (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    Verdict::Accept
                } else {
                    Verdict::Reject
                }
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn min_capacity_replays_and_is_tight(seq in leaf_sequence(4, 10), mask in any::<u64>()) {
        let top = star_over(&seq);
        let dec = decode(mask, seq.len());
        let caps = min_capacity_given_decisions(&top, &seq, &dec).unwrap();
        prop_assert!(replay(&top, &seq, &dec, &caps, &CostParams::default()).is_ok());
        for (edge, st) in &caps {
            for lower_side in [true, false] {
                let mut cut = caps.clone();
                let s = cut.get_mut(edge).unwrap();
                if lower_side && st.side_u > 1e-6 {
                    s.side_u -= 1e-3;
                } else if !lower_side && st.side_v > 1e-6 {
                    s.side_v -= 1e-3;
                } else {
                    continue;
                }
                s.total = s.side_u + s.side_v;
                prop_assert!(replay(&top, &seq, &dec, &cut, &CostParams::default()).is_err());
            }
        }
    }

    #[test]
    fn oracle_matches_exhaustive_search(seq in leaf_sequence(3, 8), c in costs()) {
        let top = star_over(&seq);
        let result = optimal_decisions(&top, &seq, &c).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0..1u64 << seq.len() {
            let dec = decode(mask, seq.len());
            let caps = min_capacity_given_decisions(&top, &seq, &dec).unwrap();
            best = best.min(replay(&top, &seq, &dec, &caps, &c).unwrap().cost.total);
        }
        prop_assert!((result.cost.total - best).abs() <= 1e-9 * (1.0 + best));
        let caps = min_capacity_given_decisions(&top, &seq, &result.decisions).unwrap();
        let again = replay(&top, &seq, &result.decisions, &caps, &c).unwrap().cost.total;
        prop_assert!((again - result.cost.total).abs() <= 1e-9 * (1.0 + best));
    }

    #[test]
    fn star_algorithm_replays_feasibly(seq in leaf_sequence(5, 30), c in costs()) {
        let sol = solve_star(&seq, NodeId(seq.party_count()), &c).unwrap();
        prop_assert_eq!(sol.decisions.len(), seq.len());
        prop_assert!(replay(&sol.star, &seq, &sol.decisions, &sol.channels, &c).is_ok());
        let b = sol.cost;
        prop_assert!((b.creation + b.capacity + b.rejection - b.total).abs() < 1e-9);
        prop_assert!(b.capacity >= 0.0 && b.rejection >= 0.0);
    }

    #[test]
    fn full_verifier_agrees_with_window_brute_force(
        raw in prop::collection::vec((0usize..6, 1usize..6, 1u32..=4), 1..=120),
        t in 1u32..4,
    ) {
        let triples: Vec<_> = raw.into_iter().map(|(s, d, x)| (s, (s + d) % 6, x as f64)).collect();
        let seq = TransactionSequence::from_triples(6, triples).unwrap();
        let part = Partition::contiguous(&[3, 3]).unwrap();
        let opts = VerifyOptions { full: true, ..VerifyOptions::default() };
        let report = verify_clustering(&seq, &part, t as f64, &opts).unwrap();
        let xm = x_max(&seq).unwrap();
        for (check, members) in report.clusters.iter().zip(part.clusters()) {
            let (c1, c3) = brute_force(&seq, members, t as f64, xm);
            prop_assert_eq!(check.condition1, c1);
            prop_assert_eq!(check.condition3, c3);
        }
    }
}

/// All windows of cluster-incident transactions, each checked for
/// condition 1 and for condition 3 over every proper subset.
fn brute_force(seq: &TransactionSequence, members: &[NodeId], t: f64, xm: f64) -> (bool, bool) {
    let inside = |v: NodeId| members.contains(&v);
    let incident: Vec<_> = seq.iter().filter(|tx| inside(tx.source) || inside(tx.target)).collect();
    let k = members.len();
    let (mut c1, mut c3) = (true, true);
    for l in 0..incident.len() {
        for r in l..incident.len() {
            let w = &incident[l..=r];
            let volume: f64 = w.iter().map(|tx| tx.amount).sum();
            if volume < k as f64 * xm {
                continue;
            }
            let intra: f64 = w
                .iter()
                .filter(|tx| inside(tx.source) && inside(tx.target))
                .map(|tx| tx.amount)
                .sum();
            let cross = volume - intra;
            if cross > 0.0 && intra < t * cross {
                c1 = false;
            }
            for mask in 1..(1u32 << k) - 1 {
                let in_s = |v: NodeId| members.iter().position(|&m| m == v).is_some_and(|a| mask >> a & 1 == 1);
                let (mut out, mut inn) = (0.0, 0.0);
                for tx in w.iter().filter(|tx| inside(tx.source) && inside(tx.target)) {
                    match (in_s(tx.source), in_s(tx.target)) {
                        (true, false) => out += tx.amount,
                        (false, true) => inn += tx.amount,
                        _ => {}
                    }
                }
                if out > 0.0 && inn / out < 1.0 / 3.0 - 1e-12 {
                    c3 = false;
                }
            }
        }
    }
    (c1, c3)
}
