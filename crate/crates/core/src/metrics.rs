//! Evaluation metrics: accuracy, edge-level rationale AUC, Jensen–Shannon
//! distance between corpora and mean-shift counting of environment types.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// ROC-AUC with ties counted as half (Mann–Whitney with mid-ranks).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::contract("scores and flags differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC needs both positive and negative edges".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucPooling {
    /// One AUC over all edges of all graphs.
    #[default]
    Micro,
    /// Mean of per-graph AUCs over graphs with both edge classes.
    Macro,
}

/// Edge-level AUC of mask scores against ground-truth rationale flags.
pub fn rationale_auc(scores: &[Vec<f64>], flags: &[Vec<bool>], pooling: AucPooling) -> Result<f64> {
    if scores.len() != flags.len() {
        return Err(Error::contract("score and flag lists differ in length"));
    }
    for (s, f) in scores.iter().zip(flags) {
        if s.len() != f.len() {
            return Err(Error::contract("a graph's scores and flags differ in length"));
        }
    }
    match pooling {
        AucPooling::Micro => {
            let s: Vec<f64> = scores.iter().flatten().copied().collect();
            let f: Vec<bool> = flags.iter().flatten().copied().collect();
            roc_auc(&s, &f)
        }
        AucPooling::Macro => {
            let per: Vec<f64> = scores
                .iter()
                .zip(flags)
                .filter_map(|(s, f)| roc_auc(s, f).ok())
                .collect();
            if per.is_empty() {
                return Err(Error::Degenerate("no graph has both edge classes".into()));
            }
            Ok(per.iter().sum::<f64>() / per.len() as f64)
        }
    }
}

/// `½KL(p‖m) + ½KL(q‖m)` with `m = (p+q)/2`, natural log.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::contract("distributions must share a non-empty support"));
    }
    for d in [p, q] {
        if d.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::contract("negative or non-finite mass"));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("distribution sums to {total}")));
        }
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (2.0 * x / (x + y)).ln())
            .sum()
    };
    let js = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(js.max(0.0))
}

/// Structural descriptor of a graph: node count, edge count, fraction of
/// nodes with degree 0..=5, and the mean of every feature column.
pub fn structural_descriptor(g: &Graph) -> Vec<f64> {
    let n = g.node_count() as f64;
    let mut out = vec![n, g.edge_count() as f64];
    let mut hist = [0.0; 6];
    for d in g.degrees() {
        if d < 6 {
            hist[d] += 1.0;
        }
    }
    out.extend(hist.iter().map(|h| h / n));
    let f = g.features();
    for c in 0..f.cols() {
        out.push((0..f.rows()).map(|r| f.get(r, c)).sum::<f64>() / n);
    }
    out
}

/// Distance between two corpora, raw and divided by 1e3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub raw: f64,
    pub scaled: f64,
}

impl Distance {
    fn new(raw: f64) -> Self {
        Self { raw, scaled: raw / 1e3 }
    }
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let mut total = 0.0;
    for v in values {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        h[b] += 1.0;
        total += 1.0;
    }
    h.iter_mut().for_each(|x| *x /= total);
    h
}

/// Per-dimension JS divergence of equal-width histograms over the pooled
/// range of each dimension, averaged over dimensions.
pub fn distribution_distance_rows(a: &[Vec<f64>], b: &[Vec<f64>], bins: usize) -> Result<Distance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("distribution distance of an empty corpus"));
    }
    if bins == 0 {
        return Err(Error::contract("need at least one bin"));
    }
    let dims = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != dims) || dims == 0 {
        return Err(Error::contract("descriptor rows differ in width"));
    }
    let mut total = 0.0;
    for d in 0..dims {
        let (lo, hi) = a
            .iter()
            .chain(b)
            .map(|r| r[d])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let p = histogram(a.iter().map(|r| r[d]), lo, hi, bins);
        let q = histogram(b.iter().map(|r| r[d]), lo, hi, bins);
        total += js_divergence(&p, &q)?;
    }
    Ok(Distance::new(total / dims as f64))
}

/// [`distribution_distance_rows`] over [`structural_descriptor`]s.
pub fn distribution_distance(a: &[&Graph], b: &[&Graph], bins: usize) -> Result<Distance> {
    let da: Vec<_> = a.iter().map(|g| structural_descriptor(g)).collect();
    let db: Vec<_> = b.iter().map(|g| structural_descriptor(g)).collect();
    distribution_distance_rows(&da, &db, bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    /// 0.3-quantile of pairwise distances on at most 500 evenly strided points.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftResult {
    pub count: usize,
    pub assignments: Vec<usize>,
    pub bandwidth: f64,
    pub modes: Vec<Vec<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn auto_bandwidth(points: &[Vec<f64>]) -> f64 {
    const SUBSAMPLE: usize = 500;
    let n = points.len();
    let idx: Vec<usize> = if n <= SUBSAMPLE {
        (0..n).collect()
    } else {
        (0..SUBSAMPLE).map(|i| i * n / SUBSAMPLE).collect()
    };
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (k, &i) in idx.iter().enumerate() {
        for &j in &idx[k + 1..] {
            d.push(dist2(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let q = d[((d.len() - 1) as f64 * 0.3).floor() as usize];
    if q > 0.0 {
        q
    } else {
        let max = *d.last().expect("non-empty");
        if max > 0.0 {
            max
        } else {
            1.0
        }
    }
}

/// Flat-kernel mean shift. Each point climbs to the mean of all points
/// within `bandwidth` until it moves less than 1e-4 (at most 300 steps);
/// modes closer than `bandwidth/2` are merged, scanning modes in
/// lexicographic order so the partition does not depend on input order.
pub fn mean_shift_count(points: &[Vec<f64>], bandwidth: Bandwidth) -> Result<MeanShiftResult> {
    if points.is_empty() {
        return Err(Error::contract("mean shift on no points"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::contract("points must share a positive dimension"));
    }
    let bw = match bandwidth {
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => b,
        Bandwidth::Fixed(b) => return Err(Error::contract(format!("bandwidth must be positive, got {b}"))),
        Bandwidth::Auto => auto_bandwidth(points),
    };
    let bw2 = bw * bw;
    let mut modes = Vec::with_capacity(points.len());
    for p in points {
        let mut x = p.clone();
        for _ in 0..300 {
            let mut mean = vec![0.0; dim];
            let mut count = 0usize;
            for q in points {
                if dist2(&x, q) <= bw2 {
                    count += 1;
                    for (m, v) in mean.iter_mut().zip(q) {
                        *m += v;
                    }
                }
            }
            if count == 0 {
                break;
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let shift = dist2(&mean, &x).sqrt();
            x = mean;
            if shift < 1e-4 {
                break;
            }
        }
        modes.push(x);
    }

    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| {
        modes[a]
            .iter()
            .zip(&modes[b])
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let merge2 = (bw / 2.0) * (bw / 2.0);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut assignments = vec![0; points.len()];
    for &i in &order {
        match centers.iter().position(|c| dist2(c, &modes[i]) <= merge2) {
            Some(c) => assignments[i] = c,
            None => {
                assignments[i] = centers.len();
                centers.push(modes[i].clone());
            }
        }
    }
    Ok(MeanShiftResult {
        count: centers.len(),
        assignments,
        bandwidth: bw,
        modes: centers,
    })
}

/// Accuracy and rationale quality of a model on one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub graphs: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rationale_auc: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Graphs whose hard rationale came out empty and fell back to the
    /// full graph.
    pub empty_rationale_fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub js_distance: Option<Distance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_category_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_assignments: Option<Vec<usize>>,
}
