//! Train briefly, synthesize graphs with environment mixup and with a
//! plain environment swap, and compare how many environment categories
//! each produces.
//!
//! cargo run --release --example diversity -- [epochs]

use grbe::eda::LambdaPolicy;
use grbe::graph::SplitTag;
use grbe::metrics::{auto_bandwidth, mean_shift_count, Bandwidth};
use grbe::spmotif::{generate_spmotif, SpmotifConfig};
use grbe::trainer::{
    augment_corpus, synthesized_environment_embeddings, train, CorpusAugmentConfig, EnvironmentSource, TrainConfig,
};
use grbe::Graph;

fn main() -> grbe::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(10, |a| a.parse().expect("epochs"));
    let data = generate_spmotif(&SpmotifConfig {
        n_train: 500,
        n_val: 0,
        n_test: 0,
        ..SpmotifConfig::default()
    })?;
    let tr: Vec<Graph> = data.split(SplitTag::Train).map(|(_, g)| g.clone()).collect();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let model = train(&tr, &[], &cfg, None)?.model;

    let mut embeddings = Vec::new();
    for (name, source) in [
        ("mixup", EnvironmentSource::Mixup(LambdaPolicy::default())),
        ("swap", EnvironmentSource::Swap),
    ] {
        let made = augment_corpus(
            &model,
            &tr,
            &CorpusAugmentConfig {
                r_aug: 0.5,
                source,
                ..CorpusAugmentConfig::default()
            },
        )?;
        println!("{name}: {} graphs, {} pairs skipped", made.graphs.len(), made.skipped.len());
        embeddings.push((name, synthesized_environment_embeddings(&model, &made.graphs)?));
    }
    let pooled: Vec<Vec<f64>> = embeddings.iter().flat_map(|(_, e)| e.iter().cloned()).collect();
    let bw = auto_bandwidth(&pooled);
    for (name, e) in &embeddings {
        let r = mean_shift_count(e, Bandwidth::Fixed(bw))?;
        println!("{name}: {} environment categories at bandwidth {bw:.4}", r.count);
    }
    Ok(())
}
