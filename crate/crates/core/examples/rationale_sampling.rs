//! Split a graph into rationale and environment parts by sampling its edge
//! mask, and check that hard samples occur at the mask rate.
//!
//! cargo run --release --example rationale_sampling

use grbe::graph::{EdgeMask, Graph};
use grbe::num::Matrix;
use grbe::prse::{draw_indicators, sample_rationale, ConcreteSampleConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> grbe::Result<()> {
    // a triangle (0,1,2) hanging off a path 2-3-4-5
    let edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5)];
    let g = Graph::new(0, 6, edges, Matrix::filled(6, 2, 1.0), 1)?;
    let mask = EdgeMask::for_graph(&g, vec![0.95, 0.9, 0.92, 0.2, 0.1, 0.05])?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let (split, draw) = sample_rationale(&g, &mask, &ConcreteSampleConfig::relaxed(1.0), &mut rng)?;
    println!("relaxed  {:?}", draw.relaxed.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("rationale edges   {:?}", split.rationale_edges());
    println!("environment edges {:?}", split.environment_edges());
    let r = split.rationale_part()?;
    let e = split.environment_part()?;
    println!("parts: {} + {} nodes, {} + {} edges", r.node_count(), e.node_count(), r.edge_count(), e.edge_count());
    assert_eq!(split.reassemble()?, g);

    let (hard, _) = sample_rationale(&g, &mask, &ConcreteSampleConfig::hard(), &mut rng)?;
    println!("eval-hard rationale {:?}", hard.rationale_edges());

    let n = 100_000;
    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let d = draw_indicators(&vec![p; n], &ConcreteSampleConfig::relaxed(0.5), &mut rng)?;
        let rate = d.hard.iter().filter(|&&h| h).count() as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        println!("M = {p}: hard rate {rate:.4} ({:+.1} sigma)", (rate - p) / sigma);
    }
    Ok(())
}
