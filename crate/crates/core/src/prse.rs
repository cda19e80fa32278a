//! Rationale extraction: mask estimation, stochastic rationale sampling
//! through a binary concrete relaxation, the sparsity penalty, and the
//! contrastive refinement built from perturbed positive and negative views.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{gin_encode, mean_readout, BoundModel, GraphBatch, Model};
use crate::error::{Error, Result};
use crate::graph::{partition, perturb_edges, Derived, EdgeMask, Graph, SubgraphSplit};
use crate::num::{relaxed_bernoulli, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Concrete relaxation with uniform noise; gradients reach the mask.
    TrainRelaxed,
    /// Deterministic threshold at 0.5.
    EvalHard,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteSampleConfig {
    pub temperature: f64,
    pub mode: SampleMode,
}

impl ConcreteSampleConfig {
    pub fn relaxed(temperature: f64) -> Self {
        Self {
            temperature,
            mode: SampleMode::TrainRelaxed,
        }
    }

    pub fn hard() -> Self {
        Self {
            temperature: 1.0,
            mode: SampleMode::EvalHard,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 {
            Ok(())
        } else {
            Err(Error::contract(format!("temperature must be > 0, got {}", self.temperature)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub positive_keep_prob: f64,
    pub negative_keep_prob: f64,
    /// L2-normalise embeddings before the InfoNCE dot products.
    pub normalize: bool,
    /// Gate view edges by their relaxed membership (`B̂` for rationale
    /// edges, `1 − B̂` for environment edges) instead of weight 1.
    pub soft_membership: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            positive_keep_prob: 0.5,
            negative_keep_prob: 0.5,
            normalize: true,
            soft_membership: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::contract(format!("tau must be > 0, got {}", self.tau)));
        }
        for p in [self.positive_keep_prob, self.negative_keep_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("keep probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// One draw of per-edge indicators.
///
/// In relaxed mode `hard[e]` is the Bernoulli event `u > 1 − p`, which is
/// exactly `relaxed[e] > 0.5` wherever `p` is not clamped; `noise` holds
/// `log(u/(1−u))` so the same relaxed values can be rebuilt on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedSample {
    pub noise: Vec<f64>,
    pub relaxed: Vec<f64>,
    pub hard: Vec<bool>,
}

fn open_uniform(rng: &mut (impl Rng + ?Sized)) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws relaxed Bernoulli indicators for probabilities `probs`.
pub fn draw_indicators(probs: &[f64], cfg: &ConcreteSampleConfig, rng: &mut (impl Rng + ?Sized)) -> Result<RelaxedSample> {
    cfg.validate()?;
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::contract(format!("probability {p} outside [0,1]")));
    }
    match cfg.mode {
        SampleMode::EvalHard => {
            let hard: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
            Ok(RelaxedSample {
                noise: vec![0.0; probs.len()],
                relaxed: hard.iter().map(|&h| f64::from(u8::from(h))).collect(),
                hard,
            })
        }
        SampleMode::TrainRelaxed => {
            let inv_t = 1.0 / cfg.temperature;
            let mut out = RelaxedSample {
                noise: Vec::with_capacity(probs.len()),
                relaxed: Vec::with_capacity(probs.len()),
                hard: Vec::with_capacity(probs.len()),
            };
            for &p in probs {
                let u = open_uniform(rng);
                let g = u.ln() - (1.0 - u).ln();
                out.noise.push(g);
                out.relaxed.push(relaxed_bernoulli(p, g, inv_t));
                out.hard.push(u > 1.0 - p);
            }
            Ok(out)
        }
    }
}

/// Rationale mask of an unweighted graph.
pub fn estimate_mask(graph: &Graph, model: &Model) -> Result<EdgeMask> {
    model.estimate_mask(graph)
}

/// Splits `graph` by sampling every edge from its mask.
pub fn sample_rationale<'g>(
    graph: &'g Graph,
    mask: &EdgeMask,
    cfg: &ConcreteSampleConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(SubgraphSplit<'g>, RelaxedSample)> {
    if mask.len() != graph.edge_count() {
        return Err(Error::contract(format!(
            "mask of length {} for {} edges",
            mask.len(),
            graph.edge_count()
        )));
    }
    let draw = draw_indicators(mask.values(), cfg, rng)?;
    let split = partition(graph, draw.hard.clone(), draw.relaxed.clone())?;
    Ok((split, draw))
}

/// `|mean(M_r) − r_s|`.
pub fn sparsity_loss(mask: &EdgeMask, target: f64) -> Result<f64> {
    check_sparsity_target(target)?;
    let mean = mask
        .mean()
        .ok_or_else(|| Error::Degenerate("sparsity of a graph without edges".into()))?;
    Ok((mean - target).abs())
}

fn check_sparsity_target(target: f64) -> Result<()> {
    if (0.0..=1.0).contains(&target) {
        Ok(())
    } else {
        Err(Error::contract(format!("sparsity level {target} outside [0,1]")))
    }
}

/// Sparsity penalty on a tape: per-graph `|mean(M_r) − r_s|`, averaged
/// over the graphs of `batch`. Graphs without edges are skipped.
pub fn sparsity_loss_on_tape(tape: &mut Tape, batch: &GraphBatch, mask: Var, target: f64) -> Result<Var> {
    check_sparsity_target(target)?;
    let edge_graph = batch.edge_graph();
    let counts: Vec<usize> = (0..batch.graph_count()).map(|g| batch.edge_range(g).len()).collect();
    let present: Vec<usize> = (0..counts.len()).filter(|&g| counts[g] > 0).collect();
    if present.is_empty() {
        return Err(Error::Degenerate("sparsity of a batch without edges".into()));
    }
    let mut remap = vec![0; counts.len()];
    for (k, &g) in present.iter().enumerate() {
        remap[g] = k;
    }
    let segment: Arc<[usize]> = edge_graph.iter().map(|&g| remap[g]).collect();
    let weight: Arc<[f64]> = vec![1.0; edge_graph.len()].into();
    let means = tape.segment_mean(mask, segment, weight, present.len())?;
    let dev = tape.affine(means, 1.0, -target);
    let dev = tape.abs(dev);
    tape.mean(dev)
}

/// Edge indices of a view plus, per kept edge, whether it is rationale.
#[derive(Clone, Debug)]
pub struct View {
    pub derived: Derived,
    pub is_rationale: Vec<bool>,
}

fn whole_graph_view(split: &SubgraphSplit) -> Result<View> {
    let g = split.parent();
    let all: Vec<usize> = (0..g.edge_count()).collect();
    let derived = g.restrict(&all, Some(&vec![true; g.node_count()]))?;
    Ok(View {
        is_rationale: split.hard_indicator().to_vec(),
        derived,
    })
}

fn assemble_view(split: &SubgraphSplit, mut edges: Vec<usize>, force: &[bool]) -> Result<View> {
    edges.sort_unstable();
    if edges.is_empty() && !force.iter().any(|&f| f) {
        return whole_graph_view(split);
    }
    let derived = split.parent().restrict(&edges, Some(force))?;
    let is_rationale = edges.iter().map(|&e| split.hard_indicator()[e]).collect();
    Ok(View { derived, is_rationale })
}

/// `G_r ∪ t_p(G_e)` twice, with independent environment dropout. An empty
/// environment yields two copies of the original graph.
pub fn make_positive_pair(split: &SubgraphSplit, cfg: &ContrastiveConfig, rng: &mut (impl Rng + ?Sized)) -> Result<(View, View)> {
    let env = split.environment_edges();
    if env.is_empty() {
        return Ok((whole_graph_view(split)?, whole_graph_view(split)?));
    }
    let rationale = split.rationale_edges();
    let force = split.rationale_nodes();
    let draw = |kept: Vec<usize>| -> Result<View> {
        let mut edges = rationale.clone();
        edges.extend(kept.iter().map(|&k| env[k]));
        assemble_view(split, edges, &force)
    };
    let first = draw(perturb_edges(env.len(), cfg.positive_keep_prob, rng)?)?;
    let second = draw(perturb_edges(env.len(), cfg.positive_keep_prob, rng)?)?;
    Ok((first, second))
}

/// `G_e + t_n(G_r)`: the environment intact, rationale edges dropped.
/// An empty rationale yields the original graph.
pub fn make_negative(split: &SubgraphSplit, cfg: &ContrastiveConfig, rng: &mut (impl Rng + ?Sized)) -> Result<View> {
    let rationale = split.rationale_edges();
    if rationale.is_empty() {
        return whole_graph_view(split);
    }
    let kept = perturb_edges(rationale.len(), cfg.negative_keep_prob, rng)?;
    let mut edges = split.environment_edges();
    edges.extend(kept.iter().map(|&k| rationale[k]));
    let force: Vec<bool> = split.rationale_nodes().iter().map(|&r| !r).collect();
    assemble_view(split, edges, &force)
}

/// InfoNCE estimate between row-paired embeddings:
/// `(1/N) Σ_i [s_ii − log Σ_j exp(s_ij)]` with `s_ij = a_i·b_j / τ`.
pub fn infonce(tape: &mut Tape, anchors: Var, partners: Var, tau: f64, normalize: bool) -> Result<Var> {
    let (sa, sb) = (tape.shape(anchors), tape.shape(partners));
    if sa != sb {
        return Err(Error::contract(format!("infonce: shapes {sa:?} and {sb:?}")));
    }
    if sa.0 < 2 {
        return Err(Error::contract("infonce needs at least two pairs for in-batch negatives"));
    }
    if !(tau > 0.0) {
        return Err(Error::contract(format!("tau must be > 0, got {tau}")));
    }
    let (a, b) = if normalize {
        (tape.normalize_rows(anchors), tape.normalize_rows(partners))
    } else {
        (anchors, partners)
    };
    let sim = tape.matmul_t(a, b)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let diag: Arc<[usize]> = (0..sa.0).collect();
    let pos = tape.pick_cols(sim, diag)?;
    let lse = tape.logsumexp_rows(sim)?;
    let terms = tape.sub(pos, lse)?;
    tape.mean(terms)
}

/// Pieces of a training batch that the contrastive term reuses.
pub struct ContrastiveInputs<'a, 'g> {
    pub batch: &'a GraphBatch,
    pub splits: &'a [SubgraphSplit<'g>],
    /// Relaxed rationale indicators of every batch edge (`edges × 1`).
    pub relaxed: Var,
    /// GNN_1 embeddings of the unperturbed graphs (`graphs × hidden`).
    pub original_embeddings: Var,
}

/// Graph embeddings of a family of views of the batch graphs.
fn embed_views(
    tape: &mut Tape,
    model: &BoundModel,
    inputs: &ContrastiveInputs,
    views: &[View],
    membership: Option<Var>,
) -> Result<Var> {
    let graphs: Vec<&Graph> = views.iter().map(|v| &v.derived.graph).collect();
    let batch = GraphBatch::new(&graphs)?;
    let weights = match membership {
        Some(stacked) => {
            let total = inputs.batch.edge_count();
            let idx: Arc<[usize]> = views
                .iter()
                .enumerate()
                .flat_map(|(g, v)| {
                    let base = inputs.batch.edge_offsets[g];
                    v.derived
                        .edge_origin
                        .iter()
                        .zip(&v.is_rationale)
                        .map(move |(&e, &r)| if r { base + e } else { total + base + e })
                })
                .collect();
            tape.gather_rows(stacked, idx)?
        }
        None => tape.constant(crate::num::Matrix::filled(batch.edge_count(), 1, 1.0)),
    };
    let h = gin_encode(tape, model, &batch, weights)?;
    mean_readout(tape, &batch, h)
}

/// `L_c = −Î(h¹⁺, h²⁺) + Î(h, h⁻)` over the batch.
pub fn contrastive_loss(
    tape: &mut Tape,
    model: &BoundModel,
    inputs: &ContrastiveInputs,
    cfg: &ContrastiveConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Var> {
    cfg.validate()?;
    let n = inputs.splits.len();
    if n < 2 {
        return Err(Error::contract("contrastive loss needs a batch of at least two graphs"));
    }
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    let mut negative = Vec::with_capacity(n);
    for split in inputs.splits {
        let (a, b) = make_positive_pair(split, cfg, rng)?;
        first.push(a);
        second.push(b);
        negative.push(make_negative(split, cfg, rng)?);
    }
    let membership = if cfg.soft_membership {
        let env = tape.affine(inputs.relaxed, -1.0, 1.0);
        Some(tape.concat_rows(&[inputs.relaxed, env])?)
    } else {
        None
    };
    let h1 = embed_views(tape, model, inputs, &first, membership)?;
    let h2 = embed_views(tape, model, inputs, &second, membership)?;
    let hn = embed_views(tape, model, inputs, &negative, membership)?;
    let positive = infonce(tape, h1, h2, cfg.tau, cfg.normalize)?;
    let negative = infonce(tape, inputs.original_embeddings, hn, cfg.tau, cfg.normalize)?;
    tape.sub(negative, positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle(n: usize) -> Graph {
        Graph::new(3, n, (0..n).map(|i| (i, (i + 1) % n)), Matrix::zeros(n, 2), 0).unwrap()
    }

    #[test]
    fn half_mask_half_noise() {
        assert_eq!(relaxed_bernoulli(0.5, 0.0, 1.0), 0.5);
    }

    #[test]
    fn eval_hard_thresholds_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = draw_indicators(&[0.2, 0.5, 0.51, 0.9], &ConcreteSampleConfig::hard(), &mut rng).unwrap();
        assert_eq!(s.hard, vec![false, false, true, true]);
        assert_eq!(s.relaxed, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn relaxed_above_half_iff_hard_event() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probs: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for t in [0.1, 1.0, 3.0] {
            let s = draw_indicators(&probs, &ConcreteSampleConfig::relaxed(t), &mut rng).unwrap();
            for (r, h) in s.relaxed.iter().zip(&s.hard) {
                assert_eq!(*r > 0.5, *h);
            }
        }
    }

    #[test]
    fn sampling_boundaries_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = draw_indicators(&[0.0, 1.0], &ConcreteSampleConfig::relaxed(1.0), &mut rng).unwrap();
        assert_eq!(s.hard, vec![false, true]);
        assert!(draw_indicators(&[0.5], &ConcreteSampleConfig::relaxed(0.0), &mut rng).is_err());
    }

    #[test]
    fn low_temperature_is_nearly_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = vec![0.3; 2000];
        let s = draw_indicators(&probs, &ConcreteSampleConfig::relaxed(0.01), &mut rng).unwrap();
        for (g, r) in s.noise.iter().zip(&s.relaxed) {
            let logit = (0.3f64 / 0.7).ln() + g;
            // u drawn away from the threshold
            if logit.abs() > 0.1 {
                assert!(r.min(1.0 - r) < 1e-3, "relaxed {r} at logit {logit}");
            }
        }
    }

    #[test]
    fn sparsity_arithmetic() {
        let m = EdgeMask::new(vec![0.6, 0.8]).unwrap();
        assert!(sparsity_loss(&m, 0.7).unwrap().abs() < 1e-15);
        let m = EdgeMask::new(vec![0.5; 4]).unwrap();
        assert!((sparsity_loss(&m, 0.7).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(sparsity_loss(&m, 0.5).unwrap(), 0.0);
        assert!(sparsity_loss(&EdgeMask::new(vec![]).unwrap(), 0.5).is_err());
        assert!(sparsity_loss(&m, 1.5).is_err());
    }

    #[test]
    fn positives_keep_rationale_and_negatives_keep_environment() {
        let g = cycle(8);
        let hard = vec![true, true, true, false, false, false, false, false];
        let split = partition(&g, hard.clone(), hard.iter().map(|&h| f64::from(u8::from(h))).collect()).unwrap();
        let cfg = ContrastiveConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b) = make_positive_pair(&split, &cfg, &mut rng).unwrap();
            for v in [&a, &b] {
                let r: Vec<usize> = v
                    .derived
                    .edge_origin
                    .iter()
                    .copied()
                    .filter(|&e| hard[e])
                    .collect();
                assert_eq!(r, split.rationale_edges());
            }
            let n = make_negative(&split, &cfg, &mut rng).unwrap();
            let e: Vec<usize> = n.derived.edge_origin.iter().copied().filter(|&e| !hard[e]).collect();
            assert_eq!(e, split.environment_edges());
        }
    }

    #[test]
    fn degenerate_views_return_original() {
        let g = cycle(5);
        let cfg = ContrastiveConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = partition(&g, vec![true; 5], vec![1.0; 5]).unwrap();
        let (a, b) = make_positive_pair(&all, &cfg, &mut rng).unwrap();
        assert_eq!(a.derived.graph, g);
        assert_eq!(b.derived.graph, g);
        let none = partition(&g, vec![false; 5], vec![0.0; 5]).unwrap();
        assert_eq!(make_negative(&none, &cfg, &mut rng).unwrap().derived.graph, g);
        let identity = ContrastiveConfig {
            negative_keep_prob: 1.0,
            ..cfg
        };
        let some = partition(&g, vec![true, true, false, false, false], vec![0.9, 0.9, 0.1, 0.1, 0.1]).unwrap();
        assert_eq!(make_negative(&some, &identity, &mut rng).unwrap().derived.graph, g);
    }

    fn identical_rows(n: usize) -> Matrix {
        Matrix::from_rows(&vec![vec![0.3, -0.2, 0.9]; n]).unwrap()
    }

    #[test]
    fn infonce_identical_embeddings() {
        for n in [2usize, 8] {
            let mut t = Tape::new();
            let a = t.constant(identical_rows(n));
            let b = t.constant(identical_rows(n));
            let i = infonce(&mut t, a, b, 0.5, true).unwrap();
            assert!((t.value(i).item() + (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn infonce_orthonormal_pairs() {
        let n = 4;
        let mut rows = vec![vec![0.0; n]; n];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        let m = Matrix::from_rows(&rows).unwrap();
        let mut t = Tape::new();
        let a = t.constant(m.clone());
        let b = t.constant(m);
        let i = infonce(&mut t, a, b, 0.1, true).unwrap();
        let e10 = 10f64.exp();
        let expected = (e10 / (e10 + (n as f64 - 1.0))).ln();
        assert!((t.value(i).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn infonce_needs_two_rows() {
        let mut t = Tape::new();
        let a = t.constant(identical_rows(1));
        assert!(infonce(&mut t, a, a, 0.5, true).is_err());
    }
}
