//! Mix the environments of two graphs and attach a sampled environment to
//! the rationale of the first.
//!
//! cargo run --release --example environment_mixup -- [lambda]

use grbe::eda::{augment_pair, mix_environments};
use grbe::graph::{partition, EdgeMask, Graph, MergedEdge, SubgraphSplit};
use grbe::num::Matrix;
use grbe::prse::ConcreteSampleConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ring_with_tail(id: u64, tail: usize, label: usize) -> Graph {
    let n = 3 + tail;
    let mut edges = vec![(0, 1), (1, 2), (0, 2)];
    edges.extend((2..n - 1).map(|v| (v, v + 1)));
    Graph::new(id, n, edges, Matrix::filled(n, 1, id as f64), label).unwrap()
}

/// The ring is the rationale, the tail the environment.
fn split(g: &Graph) -> grbe::Result<SubgraphSplit<'_>> {
    let hard: Vec<bool> = (0..g.edge_count()).map(|e| e < 3).collect();
    let relaxed = hard.iter().map(|&h| if h { 0.9 } else { 0.1 }).collect();
    partition(g, hard, relaxed)
}

fn main() -> grbe::Result<()> {
    let lambda: f64 = std::env::args().nth(1).map_or(0.5, |a| a.parse().expect("lambda"));
    let (gi, gj) = (ring_with_tail(1, 4, 0), ring_with_tail(2, 6, 2));
    let (si, sj) = (split(&gi)?, split(&gj)?);
    let mask = |g: &Graph| EdgeMask::for_graph(g, (0..g.edge_count()).map(|e| if e < 3 { 0.9 } else { 0.2 }).collect());
    let (mi, mj) = (mask(&gi)?, mask(&gj)?);

    let spec = mix_environments(&si, &sj, lambda, &mi, &mj)?;
    println!(
        "extended environment: {} edges ({} from graph 1), probabilities {:?}",
        spec.edge_count(),
        spec.first_block_edges,
        spec.mixed_mask
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sample_cfg = ConcreteSampleConfig::relaxed(1.0);
    match augment_pair(100, &si, &sj, &mi, &mj, lambda, &sample_cfg, 0.1, &mut rng)? {
        Some(p) => {
            let a = &p.augmented;
            let count = |f: fn(&MergedEdge) -> bool| a.edge_kinds().iter().filter(|k| f(k)).count();
            println!(
                "augmented graph {}: label {}, {} nodes, rationale {} / environment {} / bridge {} edges",
                a.graph.id,
                a.graph.label,
                a.graph.node_count(),
                count(|k| matches!(k, MergedEdge::Rationale(_))),
                count(|k| matches!(k, MergedEdge::Environment(_))),
                count(|k| matches!(k, MergedEdge::Bridge(_))),
            );
            let from_i = a.environment_edge_origin.iter().filter(|&&e| spec.in_first_block(e)).count();
            println!("{from_i} environment edges come from graph 1, the rest from graph 2");
            println!("{}", serde_json::to_string(&a.provenance)?);
        }
        None => println!("pair skipped: sampled environment stayed empty"),
    }
    Ok(())
}
