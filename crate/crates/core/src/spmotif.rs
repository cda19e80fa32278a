//! Spurious-Motif graphs: a label-defining motif attached to a base whose
//! type is correlated with the label at bias `b` in training and
//! independent of it in the test split.
//!
//! Motifs (label = index): 5-cycle, house, crane. Bases: binary tree,
//! ladder, wheel; the base "matching" motif `k` is base `k`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SplitTag};
use crate::num::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motif {
    Cycle,
    House,
    Crane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Tree,
    Ladder,
    Wheel,
}

impl Motif {
    pub const ALL: [Motif; 3] = [Motif::Cycle, Motif::House, Motif::Crane];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn matched_base(self) -> Base {
        Base::ALL[self as usize]
    }
}

impl Base {
    pub const ALL: [Base; 3] = [Base::Tree, Base::Ladder, Base::Wheel];
}

/// Node count and edge list of a small graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Shape {
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

pub fn cycle(n: usize) -> Shape {
    Shape {
        nodes: n,
        edges: (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect(),
    }
}

/// Square 0-1-2-3 with roof node 4 on 0 and 1.
pub fn house() -> Shape {
    Shape {
        nodes: 5,
        edges: vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)],
    }
}

/// Two triangles 0-1-2 and 1-2-3 sharing an edge, with a tail 3-4.
pub fn crane() -> Shape {
    Shape {
        nodes: 5,
        edges: vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (3, 4)],
    }
}

/// Complete binary tree of the given depth (root at depth 0).
pub fn binary_tree(depth: u32) -> Shape {
    let nodes = (1usize << (depth + 1)) - 1;
    Shape {
        nodes,
        edges: (1..nodes).map(|v| ((v - 1) / 2, v)).collect(),
    }
}

/// Two rails of `rungs` nodes joined rung by rung.
pub fn ladder(rungs: usize) -> Shape {
    let mut edges = Vec::new();
    for i in 0..rungs {
        edges.push((i, i + rungs));
        if i + 1 < rungs {
            edges.push((i, i + 1));
            edges.push((i + rungs, i + rungs + 1));
        }
    }
    Shape {
        nodes: 2 * rungs,
        edges,
    }
}

/// Hub node 0 joined to every node of a `spokes`-cycle.
pub fn wheel(spokes: usize) -> Shape {
    let mut edges: Vec<(usize, usize)> = (1..=spokes).map(|v| (0, v)).collect();
    edges.extend(cycle(spokes).edges.into_iter().map(|(u, v)| (u + 1, v + 1)));
    Shape {
        nodes: spokes + 1,
        edges,
    }
}

/// Canonical shapes of every motif and base.
#[derive(Clone, Debug)]
pub struct ShapeCatalog {
    pub cycle: Shape,
    pub house: Shape,
    pub crane: Shape,
    pub tree: Shape,
    pub ladder: Shape,
    pub wheel: Shape,
}

pub fn motif_library() -> ShapeCatalog {
    ShapeCatalog {
        cycle: cycle(5),
        house: house(),
        crane: crane(),
        tree: binary_tree(3),
        ladder: ladder(3),
        wheel: wheel(6),
    }
}

pub fn motif_shape(m: Motif) -> Shape {
    match m {
        Motif::Cycle => cycle(5),
        Motif::House => house(),
        Motif::Crane => crane(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpmotifConfig {
    pub bias: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Base size knob: tree depth `scale + 1`, ladders of `3·scale + U{0,1,2}`
    /// rungs, wheels with `6·scale + U{0,1,2}` spokes.
    pub base_scale: usize,
    pub feature_dim: usize,
    pub attachment_edges: usize,
}

impl Default for SpmotifConfig {
    fn default() -> Self {
        Self {
            bias: 0.9,
            n_train: 1500,
            n_val: 500,
            n_test: 500,
            seed: 0,
            base_scale: 1,
            feature_dim: 4,
            attachment_edges: 2,
        }
    }
}

impl SpmotifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias >= 1.0 / 3.0 && self.bias <= 1.0) {
            return Err(Error::Usage(format!("bias {} outside [1/3, 1]", self.bias)));
        }
        if self.n_train == 0 {
            return Err(Error::Usage("n_train must be positive".into()));
        }
        if self.base_scale == 0 || self.feature_dim == 0 || self.attachment_edges == 0 {
            return Err(Error::Usage("base_scale, feature_dim and attachment_edges must be positive".into()));
        }
        Ok(())
    }
}

/// A generated corpus with the hidden motif/base choices kept alongside.
#[derive(Clone, Debug)]
pub struct SpmotifDataset {
    pub config: SpmotifConfig,
    pub graphs: Vec<Graph>,
    pub motifs: Vec<Motif>,
    pub bases: Vec<Base>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: SplitTag,
    pub graphs: usize,
    pub class_counts: [usize; 3],
    pub matched_base_rate: f64,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}

/// Sidecar metadata: the configuration and empirical bias per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpmotifMetadata {
    pub generator: String,
    pub config: SpmotifConfig,
    pub splits: Vec<SplitStats>,
}

impl SpmotifDataset {
    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = (usize, &Graph)> {
        self.graphs
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.split == Some(tag))
    }

    pub fn stats(&self, tag: SplitTag) -> SplitStats {
        let mut class_counts = [0; 3];
        let mut matched = 0;
        let mut n = 0;
        let (mut nodes, mut edges) = (0usize, 0usize);
        for (i, g) in self.split(tag) {
            class_counts[self.motifs[i].label()] += 1;
            matched += usize::from(self.motifs[i].matched_base() == self.bases[i]);
            nodes += g.node_count();
            edges += g.edge_count();
            n += 1;
        }
        let denom = n.max(1) as f64;
        SplitStats {
            split: tag,
            graphs: n,
            class_counts,
            matched_base_rate: matched as f64 / denom,
            mean_nodes: nodes as f64 / denom,
            mean_edges: edges as f64 / denom,
        }
    }

    pub fn metadata(&self) -> SpmotifMetadata {
        SpmotifMetadata {
            generator: "spmotif".into(),
            config: self.config.clone(),
            splits: [SplitTag::Train, SplitTag::Val, SplitTag::Test]
                .into_iter()
                .map(|t| self.stats(t))
                .collect(),
        }
    }
}

fn graph_rng(seed: u64, split: SplitTag, index: usize) -> ChaCha8Rng {
    let tag = match split {
        SplitTag::Train => 1u64,
        SplitTag::Val => 2,
        SplitTag::Test => 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | index as u64);
    rng
}

fn draw_base(motif: Motif, bias: Option<f64>, rng: &mut (impl Rng + ?Sized)) -> Base {
    let matched = motif.matched_base();
    match bias {
        Some(b) => {
            if rng.gen::<f64>() < b {
                matched
            } else {
                let others: Vec<Base> = Base::ALL.into_iter().filter(|&x| x != matched).collect();
                others[rng.gen_range(0..2)]
            }
        }
        None => Base::ALL[rng.gen_range(0..3)],
    }
}

fn base_shape(base: Base, scale: usize, rng: &mut (impl Rng + ?Sized)) -> Shape {
    match base {
        Base::Tree => binary_tree(scale as u32 + 1),
        Base::Ladder => ladder(3 * scale + rng.gen_range(0..=2)),
        Base::Wheel => wheel(6 * scale + rng.gen_range(0..=2)),
    }
}

/// One graph. `bias = None` draws the base independently of the motif.
pub fn generate_graph(
    cfg: &SpmotifConfig,
    id: u64,
    split: SplitTag,
    index: usize,
    bias: Option<f64>,
) -> Result<(Graph, Motif, Base)> {
    let mut rng = graph_rng(cfg.seed, split, index);
    let motif = Motif::ALL[rng.gen_range(0..3)];
    let base = draw_base(motif, bias, &mut rng);
    let bshape = base_shape(base, cfg.base_scale, &mut rng);
    let mshape = motif_shape(motif);
    let nb = bshape.nodes;
    let n = nb + mshape.nodes;

    let mut edges: Vec<((usize, usize), bool)> = bshape.edges.iter().map(|&e| (e, false)).collect();
    edges.extend(mshape.edges.iter().map(|&(u, v)| ((u + nb, v + nb), true)));
    let mut attached = std::collections::HashSet::new();
    let wanted = cfg.attachment_edges.min(nb * mshape.nodes);
    while attached.len() < wanted {
        let pair = (rng.gen_range(0..nb), nb + rng.gen_range(0..mshape.nodes));
        if attached.insert(pair) {
            edges.push((pair, false));
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut features = Matrix::zeros(n, cfg.feature_dim);
    for v in features.data_mut() {
        *v = rng.gen::<f64>();
    }
    let graph = Graph::new(
        id,
        n,
        edges.iter().map(|&((u, v), _)| (perm[u], perm[v])),
        features,
        motif.label(),
    )?
    .with_gt_rationale(edges.iter().map(|&(_, r)| r).collect())?
    .with_split(split);
    Ok((graph, motif, base))
}

pub fn generate_spmotif(cfg: &SpmotifConfig) -> Result<SpmotifDataset> {
    cfg.validate()?;
    let mut out = SpmotifDataset {
        config: cfg.clone(),
        graphs: Vec::with_capacity(cfg.n_train + cfg.n_val + cfg.n_test),
        motifs: Vec::new(),
        bases: Vec::new(),
    };
    let plan = [
        (SplitTag::Train, cfg.n_train, Some(cfg.bias)),
        (SplitTag::Val, cfg.n_val, Some(cfg.bias)),
        (SplitTag::Test, cfg.n_test, None),
    ];
    for (tag, count, bias) in plan {
        for index in 0..count {
            let id = out.graphs.len() as u64;
            let (g, m, b) = generate_graph(cfg, id, tag, index, bias)?;
            out.graphs.push(g);
            out.motifs.push(m);
            out.bases.push(b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_shapes() {
        let c = motif_library();
        assert_eq!((c.house.nodes, c.house.edges.len()), (5, 6));
        assert_eq!(c.cycle.edges.len(), 5);
        assert!(c.cycle.degrees().iter().all(|&d| d == 2));
        assert_eq!(c.wheel.degrees()[0], 6);
        assert_eq!(c.tree.nodes, 15);
        assert_eq!(c.tree.edges.len(), 14);
        assert_eq!((c.ladder.nodes, c.ladder.edges.len()), (6, 7));
        let mut house = c.house.degrees();
        let mut crane = c.crane.degrees();
        house.sort_unstable();
        crane.sort_unstable();
        assert_ne!(house, crane);
    }

    #[test]
    fn rationale_flags_mark_exactly_the_motif() {
        let cfg = SpmotifConfig {
            n_train: 30,
            n_val: 3,
            n_test: 30,
            ..SpmotifConfig::default()
        };
        let ds = generate_spmotif(&cfg).unwrap();
        for (g, m) in ds.graphs.iter().zip(&ds.motifs) {
            let gt = g.gt_rationale().unwrap();
            let motif_edges: Vec<_> = g.edges().iter().zip(gt).filter(|(_, &f)| f).map(|(e, _)| *e).collect();
            let shape = motif_shape(*m);
            assert_eq!(motif_edges.len(), shape.edges.len());
            let mut nodes: Vec<usize> = motif_edges.iter().flat_map(|&(u, v)| [u, v]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            assert_eq!(nodes.len(), shape.nodes);
            let mut deg = vec![0; g.node_count()];
            for &(u, v) in &motif_edges {
                deg[u] += 1;
                deg[v] += 1;
            }
            let mut got: Vec<usize> = nodes.iter().map(|&v| deg[v]).collect();
            let mut want = shape.degrees();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
            assert_eq!(g.label, m.label());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SpmotifConfig {
            n_train: 20,
            n_val: 5,
            n_test: 5,
            seed: 42,
            ..SpmotifConfig::default()
        };
        let a = generate_spmotif(&cfg).unwrap();
        let b = generate_spmotif(&cfg).unwrap();
        assert_eq!(a.graphs, b.graphs);
    }

    #[test]
    fn bias_below_uniform_is_rejected() {
        let cfg = SpmotifConfig {
            bias: 0.2,
            ..SpmotifConfig::default()
        };
        assert!(matches!(generate_spmotif(&cfg), Err(Error::Usage(_))));
    }
}
