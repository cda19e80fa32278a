//! Environment diversity augmentation: two graphs' environment pieces are
//! placed side by side (block-diagonal extended graph), each edge is kept
//! with probability `λ·M_{i,e}` or `(1−λ)·M_{j,e}`, and the sampled
//! environment is attached to the rationale of graph `i` with bridge edges
//! whose endpoints are drawn in proportion to node degree.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{merge, EdgeMask, Graph, Merged, MergedEdge, Subgraph, SubgraphSplit};
use crate::prse::{draw_indicators, ConcreteSampleConfig, RelaxedSample};

/// Attempts at drawing a non-empty mixed environment before a pair is skipped.
pub const MAX_ENVIRONMENT_RETRIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaPolicy {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Fixed { value: 0.5 }
    }
}

impl LambdaPolicy {
    pub fn draw(&self, rng: &mut (impl Rng + ?Sized)) -> f64 {
        match *self {
            LambdaPolicy::Fixed { value } => value,
            LambdaPolicy::Uniform { low, high } => rng.gen_range(low..=high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LambdaPolicy::Fixed { value } => (0.0..=1.0).contains(&value),
            LambdaPolicy::Uniform { low, high } => 0.0 <= low && low <= high && high <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid lambda policy {self:?}")))
        }
    }
}

/// Block-diagonal extended environment with its mixed sampling mask.
#[derive(Clone, Debug)]
pub struct MixedEnvironmentSpec {
    /// Environment piece of `i` followed by that of `j`; no edge crosses.
    pub extended: Subgraph,
    /// Sampling probability of every extended edge.
    pub mixed_mask: Vec<f64>,
    /// Nodes and edges belonging to the first block.
    pub first_block_nodes: usize,
    pub first_block_edges: usize,
    pub lambda: f64,
    pub sources: (u64, u64),
    /// Edge counts of the full source graphs, used for the bridge budget.
    pub source_edge_counts: (usize, usize),
}

impl MixedEnvironmentSpec {
    pub fn edge_count(&self) -> usize {
        self.extended.edge_count()
    }

    /// Whether extended edge `e` lies in the first block.
    pub fn in_first_block(&self, e: usize) -> bool {
        e < self.first_block_edges
    }
}

/// Mixes the environments of two splits with weight `lambda` on the first.
///
/// Both masks are the rationale masks of their graphs; the environment
/// probability of an edge is `1 − M_r`.
pub fn mix_environments(
    split_i: &SubgraphSplit,
    split_j: &SubgraphSplit,
    lambda: f64,
    mask_i: &EdgeMask,
    mask_j: &EdgeMask,
) -> Result<MixedEnvironmentSpec> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda {lambda} outside [0,1]")));
    }
    for (split, mask) in [(split_i, mask_i), (split_j, mask_j)] {
        if mask.len() != split.parent().edge_count() {
            return Err(Error::contract("mask length differs from edge count"));
        }
    }
    let env_i = split_i.environment_part()?;
    let env_j = split_j.environment_part()?;
    if env_i.edge_count() == 0 || env_j.edge_count() == 0 {
        return Err(Error::Degenerate(format!(
            "degenerate mix: graph {} or {} has no environment edges",
            split_i.parent().id,
            split_j.parent().id
        )));
    }
    let mut mixed_mask = Vec::with_capacity(env_i.edge_count() + env_j.edge_count());
    mixed_mask.extend(env_i.edge_origin.iter().map(|e| lambda * (1.0 - mask_i.values()[e.edge])));
    mixed_mask.extend(env_j.edge_origin.iter().map(|e| (1.0 - lambda) * (1.0 - mask_j.values()[e.edge])));
    Ok(MixedEnvironmentSpec {
        first_block_nodes: env_i.node_count(),
        first_block_edges: env_i.edge_count(),
        extended: env_i.block_union(&env_j)?,
        mixed_mask,
        lambda,
        sources: (split_i.parent().id, split_j.parent().id),
        source_edge_counts: (split_i.parent().edge_count(), split_j.parent().edge_count()),
    })
}

/// A sampled environment and the draw that produced it.
#[derive(Clone, Debug)]
pub struct MixedSample {
    pub draw: RelaxedSample,
    /// Extended-edge indices that were sampled.
    pub kept: Vec<usize>,
    /// The sampled edges and the nodes they touch.
    pub environment: Subgraph,
}

/// Samples every extended edge from its mixed probability.
pub fn sample_mixed_environment(
    spec: &MixedEnvironmentSpec,
    cfg: &ConcreteSampleConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<MixedSample> {
    let draw = draw_indicators(&spec.mixed_mask, cfg, rng)?;
    let kept: Vec<usize> = (0..draw.hard.len()).filter(|&e| draw.hard[e]).collect();
    let environment = spec.extended.edge_subset(&kept)?;
    Ok(MixedSample {
        draw,
        kept,
        environment,
    })
}

/// `round(r_add · (|E_i| + |E_j|))`.
pub fn bridge_budget(r_add: f64, edges_i: usize, edges_j: usize) -> usize {
    (r_add * (edges_i + edges_j) as f64).round() as usize
}

/// Draws `count` distinct `(rationale, environment)` pairs with endpoints
/// weighted by their degrees inside each piece.
pub fn sample_bridges(
    rationale: &Subgraph,
    environment: &Subgraph,
    count: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Vec<(usize, usize)>> {
    let (nr, ne) = (rationale.node_count(), environment.node_count());
    let capacity = nr * ne;
    if count > capacity {
        return Err(Error::contract(format!(
            "{count} bridges requested between parts of {nr} and {ne} nodes"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let weights = |d: Vec<usize>| -> Vec<f64> {
        // isolated nodes still get a small chance
        d.into_iter().map(|x| x.max(1) as f64).collect()
    };
    let r_dist = WeightedIndex::new(weights(rationale.degrees())).map_err(|e| Error::contract(e.to_string()))?;
    let e_dist = WeightedIndex::new(weights(environment.degrees())).map_err(|e| Error::contract(e.to_string()))?;
    let mut chosen = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    let mut attempts = 0;
    while chosen.len() < count && attempts < 64 * count {
        attempts += 1;
        let pair = (r_dist.sample(rng), e_dist.sample(rng));
        if seen.insert(pair) {
            chosen.push(pair);
        }
    }
    if chosen.len() < count {
        // dense request: finish uniformly from the pairs still free
        let mut free: Vec<(usize, usize)> = (0..nr)
            .flat_map(|r| (0..ne).map(move |e| (r, e)))
            .filter(|p| !seen.contains(p))
            .collect();
        free.shuffle(rng);
        chosen.extend(free.into_iter().take(count - chosen.len()));
    }
    Ok(chosen)
}

/// Where an augmented graph came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub i: u64,
    pub j: u64,
    pub lambda: f64,
    /// Bridge edges as node pairs of the augmented graph.
    pub bridge_edges: Vec<(usize, usize)>,
    pub environment_edge_count: usize,
    /// Bridges asked for by the budget; more than `bridge_edges.len()`
    /// only when the two parts cannot host that many distinct pairs.
    pub requested_bridges: usize,
    pub disconnected: bool,
}

/// A synthesized training graph: rationale of `i`, new environment, bridges.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    pub graph: Graph,
    pub provenance: Provenance,
    pub merged: Merged,
    /// Rationale-piece edge index → edge of graph `i`.
    pub rationale_edge_origin: Vec<usize>,
    /// Environment-piece edge index → extended edge of the mixing spec.
    pub environment_edge_origin: Vec<usize>,
}

impl AugmentedGraph {
    /// Number of leading nodes taken from the rationale of `i`.
    pub fn rationale_node_count(&self) -> usize {
        self.merged.rationale_nodes
    }

    pub fn edge_kinds(&self) -> &[MergedEdge] {
        &self.merged.edge_kind
    }
}

/// Attaches `environment` to the rationale of `split_i` with degree-weighted
/// bridges. `bridge_edges_total` is `|E_i| + |E_j|`.
pub fn attach_environment(
    id: u64,
    split_i: &SubgraphSplit,
    environment: &Subgraph,
    bridge_budget_edges: usize,
    r_add: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(Merged, Vec<usize>, usize)> {
    if !(r_add > 0.0 && r_add <= 1.0) {
        return Err(Error::contract(format!("r_add {r_add} outside (0,1]")));
    }
    let rationale = split_i.rationale_part()?;
    if rationale.is_empty() {
        return Err(Error::Degenerate(format!("graph {} has an empty rationale", split_i.parent().id)));
    }
    let requested = (r_add * bridge_budget_edges as f64).round() as usize;
    let count = requested.min(rationale.node_count() * environment.node_count());
    let bridges = sample_bridges(&rationale, environment, count, rng)?;
    let merged = merge(id, split_i.parent().label, &rationale, environment, &bridges)?;
    let origin = rationale.edge_origin.iter().map(|e| e.edge).collect();
    Ok((merged, origin, requested))
}

/// Builds `G_{i,r} + G_{mix,e}` plus `N_add` bridges, labelled like `i`.
pub fn synthesize_augmented(
    id: u64,
    split_i: &SubgraphSplit,
    spec: &MixedEnvironmentSpec,
    mixed: &MixedSample,
    r_add: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<AugmentedGraph> {
    if mixed.environment.edge_count() == 0 {
        return Err(Error::Degenerate("sampled environment is empty".into()));
    }
    let (ei, ej) = spec.source_edge_counts;
    let (merged, rationale_edge_origin, requested) =
        attach_environment(id, split_i, &mixed.environment, ei + ej, r_add, rng)?;
    let offset = merged.rationale_nodes;
    let bridge_edges = merged
        .edge_kind
        .iter()
        .zip(merged.graph.edges())
        .filter(|(k, _)| matches!(k, MergedEdge::Bridge(_)))
        .map(|(_, &e)| e)
        .collect::<Vec<_>>();
    debug_assert!(bridge_edges.iter().all(|&(u, v)| u < offset && v >= offset));
    Ok(AugmentedGraph {
        provenance: Provenance {
            i: spec.sources.0,
            j: spec.sources.1,
            lambda: spec.lambda,
            disconnected: bridge_edges.is_empty(),
            bridge_edges,
            environment_edge_count: mixed.environment.edge_count(),
            requested_bridges: requested,
        },
        graph: merged.graph.clone(),
        merged,
        rationale_edge_origin,
        environment_edge_origin: mixed.kept.clone(),
    })
}

/// Augmentation pairs for one pass over `train_size` graphs:
/// `round(r_aug · train_size)` pairs, `i` uniform, `j` uniform among the rest.
pub fn plan_augmentation(train_size: usize, r_aug: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&r_aug) {
        return Err(Error::contract(format!("r_aug {r_aug} outside [0,1]")));
    }
    let count = (r_aug * train_size as f64).round() as usize;
    if count == 0 {
        return Ok(Vec::new());
    }
    if train_size < 2 {
        return Err(Error::contract("augmentation needs at least two training graphs"));
    }
    Ok((0..count)
        .map(|_| {
            let i = rng.gen_range(0..train_size);
            let mut j = rng.gen_range(0..train_size - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect())
}

/// Result of augmenting one pair, including the draw used.
#[derive(Clone, Debug)]
pub struct PairAugmentation {
    pub spec: MixedEnvironmentSpec,
    pub sample: MixedSample,
    pub augmented: AugmentedGraph,
}

/// Mix → sample (retrying empty environments) → synthesize. `Ok(None)`
/// means the pair was skipped as degenerate.
#[allow(clippy::too_many_arguments)]
pub fn augment_pair(
    id: u64,
    split_i: &SubgraphSplit,
    split_j: &SubgraphSplit,
    mask_i: &EdgeMask,
    mask_j: &EdgeMask,
    lambda: f64,
    sample_cfg: &ConcreteSampleConfig,
    r_add: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Option<PairAugmentation>> {
    if split_i.rationale_edges().is_empty() {
        return Ok(None);
    }
    let spec = match mix_environments(split_i, split_j, lambda, mask_i, mask_j) {
        Ok(s) => s,
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    for _ in 0..MAX_ENVIRONMENT_RETRIES {
        let sample = sample_mixed_environment(&spec, sample_cfg, rng)?;
        if sample.environment.edge_count() == 0 {
            continue;
        }
        let augmented = synthesize_augmented(id, split_i, &spec, &sample, r_add, rng)?;
        return Ok(Some(PairAugmentation {
            spec,
            sample,
            augmented,
        }));
    }
    Ok(None)
}

/// Baseline: the full environment of `j` swapped in without mixing.
pub fn swap_environment(
    id: u64,
    split_i: &SubgraphSplit,
    split_j: &SubgraphSplit,
    r_add: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Option<Merged>> {
    if split_i.rationale_edges().is_empty() {
        return Ok(None);
    }
    let env = split_j.environment_part()?;
    if env.edge_count() == 0 {
        return Ok(None);
    }
    let total = split_i.parent().edge_count() + split_j.parent().edge_count();
    let (merged, _, _) = attach_environment(id, split_i, &env, total, r_add, rng)?;
    Ok(Some(merged))
}
