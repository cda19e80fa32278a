//! Generate a biased Spurious-Motifs corpus, print per-split statistics and
//! write it as JSON Lines.
//!
//! cargo run --release --example generate_spmotif -- [bias] [out.jsonl]

use std::path::PathBuf;

use grbe::graph::SplitTag;
use grbe::io::{write_corpus, write_json};
use grbe::spmotif::{generate_spmotif, SpmotifConfig};

fn main() -> grbe::Result<()> {
    let mut args = std::env::args().skip(1);
    let bias: f64 = args.next().map_or(0.9, |a| a.parse().expect("bias"));
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("spmotif.jsonl"), PathBuf::from);

    let data = generate_spmotif(&SpmotifConfig {
        bias,
        ..SpmotifConfig::default()
    })?;
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let s = data.stats(tag);
        println!(
            "{:<5} {:>5} graphs  classes {:?}  matched base {:.3}  {:.1} nodes / {:.1} edges",
            format!("{tag:?}").to_lowercase(),
            s.graphs,
            s.class_counts,
            s.matched_base_rate,
            s.mean_nodes,
            s.mean_edges
        );
    }
    let g = &data.graphs[0];
    let motif_edges = g.gt_rationale().unwrap().iter().filter(|&&r| r).count();
    println!("graph 0: label {}, {} of {} edges belong to the motif", g.label, motif_edges, g.edge_count());

    write_corpus(&out, &data.graphs)?;
    write_json(&out.with_extension("meta.json"), &data.metadata())?;
    println!("wrote {}", out.display());
    Ok(())
}
