//! Undirected attributed graphs and the rationale/environment edge split.
//!
//! Edges are stored once as `(u, v)` with `u < v`; masks and indicators
//! attach to that stored edge and apply to both message directions.
//!
//! Both parts are edge-induced. The rationale part holds the rationale
//! edges and the nodes they touch; the environment part holds the
//! environment edges, the nodes they touch and every node outside the
//! rationale part. Boundary nodes appear in both, so the parent is
//! recovered by gluing the parts on node identity.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub id: u64,
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    pub label: usize,
    gt_rationale: Option<Vec<bool>>,
    pub split: Option<SplitTag>,
}

impl Graph {
    /// Validates and canonicalises an edge list. Pairs may be given in
    /// either orientation; self-loops and repeated pairs are rejected.
    pub fn new(
        id: u64,
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        label: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::contract(format!("graph {id}: no nodes")));
        }
        if features.rows() != node_count {
            return Err(Error::contract(format!(
                "graph {id}: {} feature rows for {node_count} nodes",
                features.rows()
            )));
        }
        let mut seen = HashSet::new();
        let mut stored = Vec::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::contract(format!(
                    "graph {id}: edge ({a},{b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(Error::contract(format!("graph {id}: self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::contract(format!("graph {id}: duplicate edge {e:?}")));
            }
            stored.push(e);
        }
        Ok(Self {
            id,
            node_count,
            edges: stored,
            features,
            label,
            gt_rationale: None,
            split: None,
        })
    }

    pub fn with_gt_rationale(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.edges.len() {
            return Err(Error::contract(format!(
                "graph {}: {} rationale flags for {} edges",
                self.id,
                flags.len(),
                self.edges.len()
            )));
        }
        self.gt_rationale = Some(flags);
        Ok(self)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = Some(split);
        self
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn gt_rationale(&self) -> Option<&[bool]> {
        self.gt_rationale.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Sorted edge list, for order-independent comparisons.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let mut e = self.edges.clone();
        e.sort_unstable();
        e
    }

    /// Graph on a subset of edges. Kept nodes are those touching a kept
    /// edge plus any with `force_node[v]` set, in original order.
    pub fn restrict(&self, keep_edges: &[usize], force_node: Option<&[bool]>) -> Result<Derived> {
        let mut keep_node = vec![false; self.node_count];
        if let Some(f) = force_node {
            for (k, &f) in keep_node.iter_mut().zip(f) {
                *k |= f;
            }
        }
        for &e in keep_edges {
            let (u, v) = *self
                .edges
                .get(e)
                .ok_or_else(|| Error::contract(format!("edge index {e} out of range")))?;
            keep_node[u] = true;
            keep_node[v] = true;
        }
        let mut local = vec![usize::MAX; self.node_count];
        let mut node_origin = Vec::new();
        for (v, &k) in keep_node.iter().enumerate() {
            if k {
                local[v] = node_origin.len();
                node_origin.push(v);
            }
        }
        if node_origin.is_empty() {
            return Err(Error::Degenerate(format!("graph {}: restriction keeps no nodes", self.id)));
        }
        let edges = keep_edges.iter().map(|&e| {
            let (u, v) = self.edges[e];
            (local[u], local[v])
        });
        let rows: Vec<f64> = node_origin
            .iter()
            .flat_map(|&v| self.features.row(v).iter().copied())
            .collect();
        let features = Matrix::from_vec(node_origin.len(), self.feature_dim(), rows)?;
        let mut graph = Graph::new(self.id, node_origin.len(), edges, features, self.label)?;
        if let Some(gt) = &self.gt_rationale {
            graph.gt_rationale = Some(keep_edges.iter().map(|&e| gt[e]).collect());
        }
        graph.split = self.split;
        Ok(Derived {
            graph,
            node_origin,
            edge_origin: keep_edges.to_vec(),
        })
    }
}

/// A graph derived from a parent by keeping a subset of its edges.
#[derive(Clone, Debug)]
pub struct Derived {
    pub graph: Graph,
    /// Parent node index of every node.
    pub node_origin: Vec<usize>,
    /// Parent edge index of every edge.
    pub edge_origin: Vec<usize>,
}

/// Where a node of a [`Subgraph`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub graph: u64,
    pub node: usize,
}

/// Where an edge of a [`Subgraph`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeRef {
    pub graph: u64,
    pub edge: usize,
}

/// Free-standing piece of one or more graphs with local node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub node_origin: Vec<NodeRef>,
    pub edge_origin: Vec<EdgeRef>,
}

impl Subgraph {
    pub fn node_count(&self) -> usize {
        self.node_origin.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_origin.is_empty()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count()];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Edge-induced piece of `g`: the given edges plus forced nodes.
    pub fn from_edges(g: &Graph, edge_idx: &[usize], force_node: Option<&[bool]>) -> Result<Self> {
        let mut keep = vec![false; g.node_count()];
        if let Some(f) = force_node {
            keep.copy_from_slice(f);
        }
        for &e in edge_idx {
            let (u, v) = g.edges()[e];
            keep[u] = true;
            keep[v] = true;
        }
        let mut local = vec![usize::MAX; g.node_count()];
        let mut node_origin = Vec::new();
        let mut rows = Vec::new();
        for (v, &k) in keep.iter().enumerate() {
            if k {
                local[v] = node_origin.len();
                node_origin.push(NodeRef { graph: g.id, node: v });
                rows.extend_from_slice(g.features().row(v));
            }
        }
        let features = Matrix::from_vec(node_origin.len(), g.feature_dim(), rows)?;
        Ok(Self {
            edges: edge_idx
                .iter()
                .map(|&e| {
                    let (u, v) = g.edges()[e];
                    (local[u], local[v])
                })
                .collect(),
            features,
            node_origin,
            edge_origin: edge_idx.iter().map(|&e| EdgeRef { graph: g.id, edge: e }).collect(),
        })
    }

    /// Keeps the listed edges and the nodes they touch.
    pub fn edge_subset(&self, edge_idx: &[usize]) -> Result<Subgraph> {
        let mut keep = vec![false; self.node_count()];
        for &e in edge_idx {
            let (u, v) = *self
                .edges
                .get(e)
                .ok_or_else(|| Error::contract(format!("edge index {e} out of range")))?;
            keep[u] = true;
            keep[v] = true;
        }
        let mut local = vec![usize::MAX; self.node_count()];
        let mut node_origin = Vec::new();
        let mut rows = Vec::new();
        for (v, &k) in keep.iter().enumerate() {
            if k {
                local[v] = node_origin.len();
                node_origin.push(self.node_origin[v]);
                rows.extend_from_slice(self.features.row(v));
            }
        }
        Ok(Subgraph {
            edges: edge_idx
                .iter()
                .map(|&e| {
                    let (u, v) = self.edges[e];
                    (local[u], local[v])
                })
                .collect(),
            features: Matrix::from_vec(node_origin.len(), self.features.cols(), rows)?,
            node_origin,
            edge_origin: edge_idx.iter().map(|&e| self.edge_origin[e]).collect(),
        })
    }

    /// Disjoint union; nodes of `other` follow those of `self`.
    pub fn block_union(&self, other: &Subgraph) -> Result<Subgraph> {
        if self.features.cols() != other.features.cols() && !self.is_empty() && !other.is_empty() {
            return Err(Error::contract("block union of pieces with different feature widths"));
        }
        let cols = if self.is_empty() {
            other.features.cols()
        } else {
            self.features.cols()
        };
        let offset = self.node_count();
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        Ok(Subgraph {
            edges: self
                .edges
                .iter()
                .copied()
                .chain(other.edges.iter().map(|&(u, v)| (u + offset, v + offset)))
                .collect(),
            features: Matrix::from_vec(offset + other.node_count(), cols, data)?,
            node_origin: self.node_origin.iter().chain(&other.node_origin).copied().collect(),
            edge_origin: self.edge_origin.iter().chain(&other.edge_origin).copied().collect(),
        })
    }
}

/// A graph whose edges are split into rationale and environment sets.
#[derive(Clone, Debug)]
pub struct SubgraphSplit<'g> {
    parent: &'g Graph,
    hard: Vec<bool>,
    relaxed: Vec<f64>,
}

/// Splits `graph` by a per-edge hard indicator (`true` = rationale).
pub fn partition<'g>(graph: &'g Graph, hard: Vec<bool>, relaxed: Vec<f64>) -> Result<SubgraphSplit<'g>> {
    let m = graph.edge_count();
    if hard.len() != m || relaxed.len() != m {
        return Err(Error::contract(format!(
            "partition of graph {}: indicators of length {}/{} for {m} edges",
            graph.id,
            hard.len(),
            relaxed.len()
        )));
    }
    if let Some(bad) = relaxed.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::contract(format!("relaxed indicator {bad} outside [0,1]")));
    }
    Ok(SubgraphSplit {
        parent: graph,
        hard,
        relaxed,
    })
}

impl<'g> SubgraphSplit<'g> {
    pub fn parent(&self) -> &'g Graph {
        self.parent
    }

    pub fn hard_indicator(&self) -> &[bool] {
        &self.hard
    }

    pub fn relaxed_indicator(&self) -> &[f64] {
        &self.relaxed
    }

    pub fn rationale_edges(&self) -> Vec<usize> {
        (0..self.hard.len()).filter(|&e| self.hard[e]).collect()
    }

    pub fn environment_edges(&self) -> Vec<usize> {
        (0..self.hard.len()).filter(|&e| !self.hard[e]).collect()
    }

    /// `true` for nodes touching a rationale edge.
    pub fn rationale_nodes(&self) -> Vec<bool> {
        let mut r = vec![false; self.parent.node_count()];
        for (&(u, v), &h) in self.parent.edges().iter().zip(&self.hard) {
            if h {
                r[u] = true;
                r[v] = true;
            }
        }
        r
    }

    pub fn rationale_part(&self) -> Result<Subgraph> {
        Subgraph::from_edges(self.parent, &self.rationale_edges(), None)
    }

    /// Environment edges with the nodes they touch, plus every node outside
    /// the rationale part. Nodes on the boundary belong to both parts.
    pub fn environment_part(&self) -> Result<Subgraph> {
        let force: Vec<bool> = self.rationale_nodes().iter().map(|&r| !r).collect();
        Subgraph::from_edges(self.parent, &self.environment_edges(), Some(&force))
    }

    /// Glues the two parts back together on their parent node identities.
    pub fn reassemble(&self) -> Result<Graph> {
        let r = self.rationale_part()?;
        let e = self.environment_part()?;
        let n = self.parent.node_count();
        let mut rows = vec![None; n];
        let mut edges = Vec::with_capacity(self.parent.edge_count());
        for part in [&r, &e] {
            for (local, origin) in part.node_origin.iter().enumerate() {
                if origin.graph != self.parent.id || origin.node >= n {
                    return Err(Error::contract("part node does not belong to the parent"));
                }
                rows[origin.node] = Some(part.features.row(local).to_vec());
            }
            for (&(u, v), o) in part.edges.iter().zip(&part.edge_origin) {
                edges.push((o.edge, (part.node_origin[u].node, part.node_origin[v].node)));
            }
        }
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::contract("a parent node is missing from both parts"))?;
        edges.sort_unstable_by_key(|p| p.0);
        let mut g = Graph::new(
            self.parent.id,
            n,
            edges.into_iter().map(|(_, e)| e),
            Matrix::from_rows(&rows)?,
            self.parent.label,
        )?;
        g.gt_rationale = self.parent.gt_rationale.clone();
        g.split = self.parent.split;
        Ok(g)
    }
}

/// Provenance of each edge in a merged graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergedEdge {
    Rationale(usize),
    Environment(usize),
    Bridge(usize),
}

#[derive(Clone, Debug)]
pub struct Merged {
    pub graph: Graph,
    pub node_origin: Vec<NodeRef>,
    pub edge_kind: Vec<MergedEdge>,
    /// Number of leading nodes that came from the rationale side.
    pub rationale_nodes: usize,
}

impl Merged {
    /// Edge set expressed in source node identities, sorted.
    pub fn canonical_source_edges(&self) -> Vec<(NodeRef, NodeRef)> {
        let mut e: Vec<_> = self
            .graph
            .edges()
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (self.node_origin[u], self.node_origin[v]);
                (a.min(b), a.max(b))
            })
            .collect();
        e.sort_unstable();
        e
    }
}

/// Joins a rationale piece and an environment piece with bridge edges
/// given as `(rationale-local, environment-local)` pairs. Rationale nodes
/// come first; the label is `label`.
pub fn merge(
    id: u64,
    label: usize,
    rationale: &Subgraph,
    environment: &Subgraph,
    bridges: &[(usize, usize)],
) -> Result<Merged> {
    if rationale.is_empty() {
        return Err(Error::Degenerate("merge with an empty rationale side".into()));
    }
    let offset = rationale.node_count();
    for &(r, e) in bridges {
        if r >= offset || e >= environment.node_count() {
            return Err(Error::contract(format!(
                "bridge ({r},{e}) out of range for parts of {offset} and {} nodes",
                environment.node_count()
            )));
        }
    }
    let union = rationale.block_union(environment)?;
    let mut kinds = Vec::with_capacity(union.edge_count() + bridges.len());
    kinds.extend((0..rationale.edge_count()).map(MergedEdge::Rationale));
    kinds.extend((0..environment.edge_count()).map(MergedEdge::Environment));
    kinds.extend((0..bridges.len()).map(MergedEdge::Bridge));
    let edges = union
        .edges
        .iter()
        .copied()
        .chain(bridges.iter().map(|&(r, e)| (r, e + offset)));
    let graph = Graph::new(id, union.node_count(), edges, union.features, label)?;
    Ok(Merged {
        graph,
        node_origin: union.node_origin,
        edge_kind: kinds,
        rationale_nodes: offset,
    })
}

/// Keeps each of `edge_count` edges independently with `keep_probability`;
/// returns the kept indices in order.
pub fn perturb_edges(edge_count: usize, keep_probability: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&keep_probability) {
        return Err(Error::contract(format!(
            "keep probability {keep_probability} outside [0,1]"
        )));
    }
    Ok((0..edge_count)
        .filter(|_| rng.gen::<f64>() < keep_probability)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1));
        Graph::new(7, n, edges, Matrix::zeros(n, 2), 1).unwrap()
    }

    #[test]
    fn rejects_self_loops_duplicates_and_out_of_range() {
        let f = || Matrix::zeros(3, 1);
        assert!(Graph::new(0, 3, [(1, 1)], f(), 0).is_err());
        assert!(Graph::new(0, 3, [(0, 1), (1, 0)], f(), 0).is_err());
        assert!(Graph::new(0, 3, [(0, 3)], f(), 0).is_err());
        assert!(Graph::new(0, 0, [], Matrix::zeros(0, 1), 0).is_err());
        let g = Graph::new(0, 3, [(2, 0)], f(), 0).unwrap();
        assert_eq!(g.edges(), &[(0, 2)]);
    }

    #[test]
    fn gt_flags_must_cover_every_edge() {
        assert!(path(4).with_gt_rationale(vec![true]).is_err());
        assert!(path(4).with_gt_rationale(vec![true, false, true]).is_ok());
    }

    #[test]
    fn partition_splits_by_indicator() {
        let g = path(5);
        let s = partition(&g, vec![true, true, false, false], vec![0.9, 0.8, 0.1, 0.2]).unwrap();
        assert_eq!(s.rationale_edges(), vec![0, 1]);
        assert_eq!(s.environment_edges(), vec![2, 3]);
        assert_eq!(s.rationale_nodes(), vec![true, true, true, false, false]);
        let env = s.environment_part().unwrap();
        assert_eq!(env.node_origin.iter().map(|o| o.node).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(s.reassemble().unwrap(), g);
    }

    #[test]
    fn all_rationale_leaves_empty_environment() {
        let g = path(4);
        let s = partition(&g, vec![true; 3], vec![1.0; 3]).unwrap();
        assert!(s.environment_edges().is_empty());
        assert!(s.environment_part().unwrap().is_empty());
        assert_eq!(s.rationale_part().unwrap().edge_count(), 3);
    }

    #[test]
    fn partition_rejects_bad_indicators() {
        let g = path(3);
        assert!(matches!(
            partition(&g, vec![true], vec![0.5]),
            Err(Error::Contract(_))
        ));
        assert!(partition(&g, vec![true, false], vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn merge_counts_edges_and_inherits_label() {
        let r = Subgraph::from_edges(&path(6), &[0, 1, 2, 3, 4], None).unwrap();
        let env_graph = Graph::new(9, 8, (0..7).map(|i| (i, i + 1)), Matrix::zeros(8, 2), 2).unwrap();
        let e = Subgraph::from_edges(&env_graph, &(0..7).collect::<Vec<_>>(), None).unwrap();
        let m = merge(100, 1, &r, &e, &[(0, 0), (5, 7)]).unwrap();
        assert_eq!(m.graph.edge_count(), 14);
        assert_eq!(m.graph.node_count(), 14);
        assert_eq!(m.graph.label, 1);
        assert!(matches!(m.edge_kind[13], MergedEdge::Bridge(1)));
    }

    #[test]
    fn merge_errors() {
        let g = path(4);
        let r = Subgraph::from_edges(&g, &[0], None).unwrap();
        let e = Subgraph::from_edges(&g, &[2], None).unwrap();
        assert!(matches!(merge(0, 0, &r, &e, &[(0, 5)]), Err(Error::Contract(_))));
        let empty = Subgraph::from_edges(&g, &[], None).unwrap();
        assert!(matches!(merge(0, 0, &empty, &e, &[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn merge_without_bridges_is_disconnected() {
        let g = path(5);
        let s = partition(&g, vec![true, false, false, true], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // boundary nodes 1 and 3 are copied into the environment block
        let m = merge(0, 0, &s.rationale_part().unwrap(), &s.environment_part().unwrap(), &[]).unwrap();
        assert_eq!(m.graph.edge_count(), 4);
        assert_eq!(m.graph.node_count(), 7);
    }

    #[test]
    fn perturb_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_edges(12, 1.0, &mut rng).unwrap(), (0..12).collect::<Vec<_>>());
        assert!(perturb_edges(12, 0.0, &mut rng).unwrap().is_empty());
        assert!(perturb_edges(12, 1.2, &mut rng).is_err());
    }

    #[test]
    fn restrict_drops_untouched_nodes() {
        let g = path(5);
        let d = g.restrict(&[3], None).unwrap();
        assert_eq!(d.node_origin, vec![3, 4]);
        assert_eq!(d.graph.edges(), &[(0, 1)]);
        let d = g.restrict(&[3], Some(&[true, false, false, false, false])).unwrap();
        assert_eq!(d.node_origin, vec![0, 3, 4]);
    }
}

/// Per-edge rationale probabilities, one per stored undirected edge.
/// The environment probability of an edge is `1 − p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeMask(Vec<f64>);

impl EdgeMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("mask value {v} outside [0,1]")));
        }
        Ok(Self(values))
    }

    pub fn for_graph(graph: &Graph, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.edge_count() {
            return Err(Error::contract(format!(
                "mask of length {} for graph {} with {} edges",
                values.len(),
                graph.id,
                graph.edge_count()
            )));
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn environment(&self) -> Vec<f64> {
        self.0.iter().map(|p| 1.0 - p).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.0.is_empty()).then(|| self.0.iter().sum::<f64>() / self.0.len() as f64)
    }
}
