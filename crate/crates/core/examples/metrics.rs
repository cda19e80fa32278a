//! Evaluation measures: rationale AUC, Jensen-Shannon distance between
//! corpora, and mean-shift category counts.
//!
//! cargo run --release --example metrics

use grbe::graph::SplitTag;
use grbe::metrics::{js_divergence, mean_shift_count, rationale_auc, AucPooling, Bandwidth};
use grbe::metrics::distribution_distance;
use grbe::spmotif::{generate_spmotif, SpmotifConfig};

fn main() -> grbe::Result<()> {
    let scores = vec![vec![0.9, 0.8, 0.3, 0.3], vec![0.7, 0.2, 0.1]];
    let flags = vec![vec![true, true, false, true], vec![true, false, false]];
    println!("micro AUC {:.4}", rationale_auc(&scores, &flags, AucPooling::Micro)?);
    println!("macro AUC {:.4}", rationale_auc(&scores, &flags, AucPooling::Macro)?);

    println!("JS((1,0),(0,1)) = {:.6} (ln 2 = {:.6})", js_divergence(&[1.0, 0.0], &[0.0, 1.0])?, 2f64.ln());

    let data = generate_spmotif(&SpmotifConfig {
        n_train: 300,
        n_val: 0,
        n_test: 300,
        ..SpmotifConfig::default()
    })?;
    let train: Vec<_> = data.split(SplitTag::Train).map(|(_, g)| g).collect();
    let test: Vec<_> = data.split(SplitTag::Test).map(|(_, g)| g).collect();
    let d = distribution_distance(&train, &test, 10)?;
    println!("biased train vs unbiased test: JS {:.4} (scaled {:.2e})", d.raw, d.scaled);
    println!("train vs itself: JS {:.4}", distribution_distance(&train, &train, 10)?.raw);

    let mut points = Vec::new();
    for k in 0..60 {
        let t = k as f64 * 0.1;
        let centre = [0.0, 10.0, 20.0][k % 3];
        points.push(vec![centre + t.sin() * 0.3, t.cos() * 0.3]);
    }
    for bw in [Bandwidth::Fixed(1.0), Bandwidth::Auto, Bandwidth::Fixed(50.0)] {
        let r = mean_shift_count(&points, bw)?;
        println!("mean shift {bw:?}: bandwidth {:.3}, {} categories", r.bandwidth, r.count);
    }
    Ok(())
}
