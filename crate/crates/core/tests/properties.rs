use std::collections::BTreeSet;

use grbe::config;
use grbe::eda::{augment_pair, bridge_budget, mix_environments, sample_mixed_environment};
use grbe::graph::{partition, EdgeMask, Graph, MergedEdge};
use grbe::io::GraphRecord;
use grbe::metrics::{js_divergence, rationale_auc, roc_auc, AucPooling};
use grbe::num::{Matrix, Tape};
use grbe::prse::{infonce, ConcreteSampleConfig};
use grbe::trainer::TrainConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_graph(id: u64) -> impl Strategy<Value = Graph> {
    (2usize..10).prop_flat_map(move |n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let k = pairs.len();
        (
            proptest::sample::subsequence(pairs, 1..=k),
            proptest::collection::vec(-1.0f64..1.0, n * 2),
            0usize..3,
        )
            .prop_map(move |(edges, x, y)| Graph::new(id, n, edges, Matrix::from_vec(n, 2, x).unwrap(), y).unwrap())
    })
}

fn arb_split_input(id: u64) -> impl Strategy<Value = (Graph, Vec<bool>, Vec<f64>)> {
    arb_graph(id).prop_flat_map(|g| {
        let m = g.edge_count();
        (
            Just(g),
            proptest::collection::vec(any::<bool>(), m),
            proptest::collection::vec(0.0f64..=1.0, m),
        )
    })
}

/// All-pairs AUC: P(score+ > score−) + ½ P(tie).
fn pairwise_auc(scores: &[f64], flags: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &fi) in flags.iter().enumerate() {
        for (j, &fj) in flags.iter().enumerate() {
            if fi && !fj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_parts_reassemble_the_parent((g, hard, relaxed) in arb_split_input(3)) {
        let s = partition(&g, hard.clone(), relaxed).unwrap();
        prop_assert_eq!(s.reassemble().unwrap(), g.clone());
        let r = s.rationale_part().unwrap();
        let e = s.environment_part().unwrap();
        prop_assert_eq!(r.edge_count() + e.edge_count(), g.edge_count());
        let nodes: BTreeSet<usize> = r.node_origin.iter().chain(&e.node_origin).map(|o| o.node).collect();
        prop_assert_eq!(nodes.len(), g.node_count());
        prop_assert!(r.edge_origin.iter().all(|o| hard[o.edge]));
        prop_assert!(e.edge_origin.iter().all(|o| !hard[o.edge]));
    }

    #[test]
    fn mixing_is_block_diagonal_and_weighted(
        (gi, hi, ri) in arb_split_input(1),
        (gj, hj, rj) in arb_split_input(2),
        lambda in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let si = partition(&gi, hi, ri.clone()).unwrap();
        let sj = partition(&gj, hj, rj.clone()).unwrap();
        let (mi, mj) = (EdgeMask::new(ri).unwrap(), EdgeMask::new(rj).unwrap());
        let Ok(spec) = mix_environments(&si, &sj, lambda, &mi, &mj) else { return Ok(()) };
        for (k, &(u, v)) in spec.extended.edges.iter().enumerate() {
            let first = k < spec.first_block_edges;
            prop_assert_eq!(u < spec.first_block_nodes, first);
            prop_assert_eq!(v < spec.first_block_nodes, first);
            let o = spec.extended.edge_origin[k];
            let expected = if first {
                lambda * (1.0 - mi.values()[o.edge])
            } else {
                (1.0 - lambda) * (1.0 - mj.values()[o.edge])
            };
            prop_assert!((spec.mixed_mask[k] - expected).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_mixed_environment(&spec, &ConcreteSampleConfig::relaxed(1.0), &mut rng).unwrap();
        prop_assert_eq!(s.environment.edge_count(), s.kept.len());
    }

    #[test]
    fn augmented_graphs_keep_label_and_bridge_budget(
        (gi, hi, ri) in arb_split_input(1),
        (gj, hj, rj) in arb_split_input(2),
        lambda in 0.0f64..=1.0,
        r_add in 0.05f64..=1.0,
        seed in any::<u64>(),
    ) {
        let si = partition(&gi, hi, ri.clone()).unwrap();
        let sj = partition(&gj, hj, rj.clone()).unwrap();
        let (mi, mj) = (EdgeMask::new(ri).unwrap(), EdgeMask::new(rj).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ConcreteSampleConfig::relaxed(1.0);
        let Some(p) = augment_pair(9, &si, &sj, &mi, &mj, lambda, &cfg, r_add, &mut rng).unwrap() else {
            return Ok(());
        };
        let a = &p.augmented;
        prop_assert_eq!(a.graph.label, gi.label);
        let budget = bridge_budget(r_add, gi.edge_count(), gj.edge_count());
        prop_assert_eq!(a.provenance.requested_bridges, budget);
        let env_nodes = a.graph.node_count() - a.rationale_node_count();
        let capacity = a.rationale_node_count() * env_nodes;
        prop_assert_eq!(a.provenance.bridge_edges.len(), budget.min(capacity));
        let bridges = a.edge_kinds().iter().filter(|k| matches!(k, MergedEdge::Bridge(_))).count();
        prop_assert_eq!(bridges, a.provenance.bridge_edges.len());
        prop_assert_eq!(
            a.graph.edge_count(),
            si.rationale_edges().len() + a.provenance.environment_edge_count + bridges
        );
    }

    #[test]
    fn auc_matches_pairwise_oracle(
        cases in proptest::collection::vec((0u8..5, any::<bool>()), 2..40),
    ) {
        let scores: Vec<f64> = cases.iter().map(|c| f64::from(c.0) / 4.0).collect();
        let flags: Vec<bool> = cases.iter().map(|c| c.1).collect();
        prop_assume!(flags.iter().any(|&f| f) && flags.iter().any(|&f| !f));
        let auc = roc_auc(&scores, &flags).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &flags)).abs() < 1e-12);
        let micro = rationale_auc(std::slice::from_ref(&scores), std::slice::from_ref(&flags), AucPooling::Micro).unwrap();
        prop_assert!((micro - auc).abs() < 1e-12);
    }

    #[test]
    fn js_is_symmetric_bounded_and_zero_on_self(
        raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..12),
    ) {
        let sp: f64 = raw.iter().map(|r| r.0).sum();
        let sq: f64 = raw.iter().map(|r| r.1).sum();
        prop_assume!(sp > 1e-6 && sq > 1e-6);
        let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
        let pq = js_divergence(&p, &q).unwrap();
        prop_assert!((pq - js_divergence(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(pq >= -1e-15 && pq <= 2f64.ln() + 1e-12);
        prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn infonce_never_exceeds_zero(
        n in 2usize..8,
        data in proptest::collection::vec(-3.0f64..3.0, 8 * 8 * 2),
        tau in 0.05f64..2.0,
        normalize in any::<bool>(),
    ) {
        let d = 8;
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_vec(n, d, data[..n * d].to_vec()).unwrap());
        let b = t.constant(Matrix::from_vec(n, d, data[64..64 + n * d].to_vec()).unwrap());
        let v = infonce(&mut t, a, b, tau, normalize).unwrap();
        prop_assert!(t.value(v).item() <= 1e-12);
    }

    #[test]
    fn corpus_records_round_trip(g in arb_graph(5)) {
        let line = serde_json::to_string(&GraphRecord::from_graph(&g, None)).unwrap();
        let back: GraphRecord = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(back.into_graph().unwrap(), g);
    }

    #[test]
    fn config_text_round_trips(
        alpha in 0.0f64..2.0,
        beta in 0.0f64..2.0,
        r_aug in 0.0f64..=1.0,
        hidden in 1usize..300,
        lr in 1e-5f64..1e-1,
    ) {
        let cfg = TrainConfig { alpha, beta, r_aug, hidden, learning_rate: lr, ..TrainConfig::default() };
        prop_assert_eq!(config::parse_text(&config::render(&cfg)).unwrap(), cfg);
    }
}
