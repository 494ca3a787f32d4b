//! Invariants checked over randomly generated inputs.

use proptest::prelude::*;
use robust_dsgd::aggregation::{self, Inbound, InboundSet};
use robust_dsgd::metrics::{self, MetricsLog};
use robust_dsgd::mixing;
use robust_dsgd::privacy::{self, PrivacyParams};
use robust_dsgd::tasks::{self, PartitionMode};
use robust_dsgd::{RuleKind, Topology, TrustWeights};

fn messages(count: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, dim), count)
}

/// Own message plus `received` messages, all with equal weights.
fn uniform_set<'a>(own: &'a [f64], received: &'a [Vec<f64>], order: &[usize]) -> InboundSet<'a> {
    let w = 1.0 / (received.len() + 1) as f64;
    let inbound = order.iter().map(|&i| Inbound { from: i + 1, weight: w, model: &received[i] }).collect();
    InboundSet::new(0, own, w, inbound).unwrap()
}

fn aggregate(kind: &str, set: &InboundSet) -> Vec<f64> {
    match kind {
        "mean" => aggregation::weighted_mean(set),
        "tm" => aggregation::trimmed_mean(set, 1),
        "scc" => aggregation::scc(set, 3.0),
        _ => aggregation::ios(set, 1),
    }
    .unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn connected_topology() -> impl Strategy<Value = (Topology, u64)> {
    (4usize..14, 0.2..1.0f64, any::<u64>(), 0usize..3).prop_filter_map(
        "honest part disconnected",
        |(n, p, seed, nb)| {
            let byz: Vec<usize> = (0..nb).map(|i| (i * 5 + 1) % n).collect();
            let topo = Topology::erdos_renyi(n, p, seed).ok()?.with_byzantine(&byz).ok()?;
            topo.validate().ok().map(|_| (topo, seed))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rules_ignore_arrival_order(own in prop::collection::vec(-50.0..50.0f64, 3), rec in messages(5, 3), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..rec.len()).collect();
        let identity = order.clone();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        for kind in ["mean", "tm", "scc", "ios"] {
            let a = aggregate(kind, &uniform_set(&own, &rec, &identity));
            let b = aggregate(kind, &uniform_set(&own, &rec, &order));
            prop_assert_eq!(a, b, "{}", kind);
        }
    }

    #[test]
    fn rules_are_translation_equivariant(own in prop::collection::vec(-50.0..50.0f64, 4), rec in messages(6, 4), shift in prop::collection::vec(-100.0..100.0f64, 4)) {
        let order: Vec<usize> = (0..rec.len()).collect();
        let add = |v: &[f64]| -> Vec<f64> { v.iter().zip(&shift).map(|(a, b)| a + b).collect() };
        let own2 = add(&own);
        let rec2: Vec<Vec<f64>> = rec.iter().map(|m| add(m)).collect();
        for kind in ["mean", "tm", "scc", "ios"] {
            let base = add(&aggregate(kind, &uniform_set(&own, &rec, &order)));
            let moved = aggregate(kind, &uniform_set(&own2, &rec2, &order));
            prop_assert!(close(&base, &moved, 1e-9), "{kind}: {base:?} vs {moved:?}");
        }
    }

    #[test]
    fn trimmed_and_ios_stay_in_coordinate_hull(own in prop::collection::vec(-50.0..50.0f64, 3), rec in messages(6, 3)) {
        let order: Vec<usize> = (0..rec.len()).collect();
        for kind in ["tm", "ios"] {
            let out = aggregate(kind, &uniform_set(&own, &rec, &order));
            for (j, v) in out.iter().enumerate() {
                let col = rec.iter().map(|m| m[j]).chain([own[j]]);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
                prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn trust_weights_are_row_stochastic((topo, _) in connected_topology()) {
        for w in [TrustWeights::metropolis(&topo), TrustWeights::uniform(&topo)] {
            for n in 0..topo.num_agents() {
                let row: f64 = w.matrix().row(n).iter().sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
                prop_assert!(w.matrix().row(n).iter().all(|&x| x >= 0.0));
                for m in 0..topo.num_agents() {
                    if m != n && !topo.has_edge(n, m) {
                        prop_assert_eq!(w.get(n, m), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn metropolis_weights_are_symmetric((topo, _) in connected_topology()) {
        let w = TrustWeights::metropolis(&topo);
        let m = w.matrix();
        prop_assert!((m - m.transpose()).amax() < 1e-15);
    }

    #[test]
    fn virtual_matrices_are_row_stochastic((topo, _) in connected_topology()) {
        let w = TrustWeights::metropolis(&topo);
        for kind in [RuleKind::Mean, RuleKind::TrimmedMean, RuleKind::Scc, RuleKind::Ios] {
            let Ok(vm) = mixing::virtual_mixing_matrix(kind, &topo, &w) else { continue };
            let mat = vm.matrix();
            for r in 0..mat.nrows() {
                prop_assert!((mat.row(r).sum() - 1.0).abs() < 1e-12, "{kind}");
            }
            prop_assert!(vm.skewness() >= 0.0);
            let gap = vm.spectral_gap();
            prop_assert!(gap.lambda <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn listing_round_trips((topo, _) in connected_topology()) {
        let back = Topology::parse_listing(&topo.to_listing()).unwrap();
        prop_assert_eq!(&back, &topo);
        prop_assert_eq!(back.to_listing(), topo.to_listing());
    }

    #[test]
    fn epsilon_monotone_in_k_and_c(c in 0.5..8.0f64, k in 1u64..100_000, dk in 1u64..10_000, dc in 0.01..4.0f64) {
        let eps = |c: f64, k: u64| {
            privacy::compose_and_convert(&PrivacyParams::new(c, 1.0, 1000, 1000, k, 1e-5).unwrap()).unwrap().epsilon
        };
        prop_assert!(eps(c, k + dk) > eps(c, k));
        prop_assert!(eps(c + dc, k) < eps(c, k));
    }

    #[test]
    fn disagreement_nonnegative_and_quadratic(models in messages(5, 3), c in -10.0..10.0f64, shift in -10.0..10.0f64) {
        let refs: Vec<&[f64]> = models.iter().map(Vec::as_slice).collect();
        let h = metrics::disagreement(&refs);
        prop_assert!(h >= 0.0);
        let scaled: Vec<Vec<f64>> = models.iter().map(|m| m.iter().map(|x| c * x + shift).collect()).collect();
        let refs2: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let h2 = metrics::disagreement(&refs2);
        prop_assert!((h2 - c * c * h).abs() <= 1e-9 * (1.0 + h2.abs()));
    }

    #[test]
    fn f_best_is_monotone(losses in prop::collection::vec(prop_oneof![9 => 0.0..10.0f64, 1 => Just(f64::NAN)], 1..40)) {
        let mut log = MetricsLog::new();
        for (k, &l) in losses.iter().enumerate() {
            log.record(k as u64, 0.0, l, f64::NAN, 0.1, 0.0).unwrap();
        }
        let best: Vec<f64> = log.rows().iter().map(|r| r.f_best).collect();
        prop_assert!(best.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(best, metrics::running_best(&losses));
    }

    #[test]
    fn iid_partition_is_disjoint_and_covering(labels in prop::collection::vec(0u8..10, 20..300), seed in any::<u64>(), skip in 0usize..12) {
        let honest: Vec<usize> = (0..12).filter(|&n| n != skip && n != (skip + 5) % 12).collect();
        let p = tasks::make_partition(&labels, 12, &honest, PartitionMode::Iid, seed).unwrap();
        let mut all: Vec<usize> = p.shards.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = honest.iter().map(|&n| p.shards[n].len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(p.shards[skip].is_empty());
    }
}
