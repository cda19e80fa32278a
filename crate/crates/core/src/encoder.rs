//! Edge-weighted GIN encoder shared by every view of a graph, plus the
//! mask head (edge scorer) and the classifier head.
//!
//! Layer update: `h_v ← MLP_l((1+ε)·h_v + Σ_{u∈N(v)} w_uv·h_u)` with a
//! two-layer ReLU MLP per layer, ReLU between layers and ε = 0. Graph
//! embeddings are (weighted) means of node embeddings.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeMask, Graph};
use crate::num::{shared, BoundParams, Matrix, ParamId, ParamStore, Tape, Var};

/// Shape of a model; stored in checkpoint headers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub layers: usize,
    pub feature_dim: usize,
    pub classes: usize,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct TwoLayer {
    first: Linear,
    second: Linear,
}

/// GNN_1 layers, mask head and classifier head.
#[derive(Clone, Debug)]
pub struct Model {
    arch: Architecture,
    gin_eps: f64,
    params: ParamStore,
    gin: Vec<TwoLayer>,
    mask_head: TwoLayer,
    classifier: TwoLayer,
}

fn linear(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Linear {
    Linear {
        weight: p.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng),
        bias: p.add(format!("{name}.bias"), Matrix::zeros(1, fan_out)),
    }
}

fn two_layer(p: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut ChaCha8Rng) -> TwoLayer {
    TwoLayer {
        first: linear(p, &format!("{name}.lin1"), dims[0], dims[1], rng),
        second: linear(p, &format!("{name}.lin2"), dims[1], dims[2], rng),
    }
}

impl Model {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.hidden == 0 || arch.layers == 0 || arch.feature_dim == 0 || arch.classes < 2 {
            return Err(Error::contract(format!("invalid architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let h = arch.hidden;
        let gin = (0..arch.layers)
            .map(|l| {
                let input = if l == 0 { arch.feature_dim } else { h };
                two_layer(&mut params, &format!("gnn.{l}"), [input, h, h], &mut rng)
            })
            .collect();
        let mask_head = two_layer(&mut params, "mask_head", [2 * h, h, 1], &mut rng);
        let classifier = two_layer(&mut params, "classifier", [h, h, arch.classes], &mut rng);
        Ok(Self {
            arch,
            gin_eps: 0.0,
            params,
            gin,
            mask_head,
            classifier,
        })
    }

    /// Rebuilds a model around stored parameter values.
    pub fn from_params(arch: Architecture, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind<'m>(&'m self, tape: &mut Tape) -> BoundModel<'m> {
        BoundModel {
            model: self,
            params: self.params.bind(tape),
        }
    }

    /// Sets every mask-head weight and bias to zero, which makes every
    /// mask value exactly 0.5.
    pub fn zero_mask_head(&mut self) {
        for l in [self.mask_head.first, self.mask_head.second] {
            for id in [l.weight, l.bias] {
                let m = self.params.get_mut(id);
                m.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Parameter handles of the mask head's output layer.
    pub fn mask_output_layer(&self) -> (ParamId, ParamId) {
        (self.mask_head.second.weight, self.mask_head.second.bias)
    }

    /// Parameter handles of the classifier's output layer.
    pub fn classifier_output_layer(&self) -> (ParamId, ParamId) {
        (self.classifier.second.weight, self.classifier.second.bias)
    }
}

/// A [`Model`] whose parameters are recorded on a tape.
pub struct BoundModel<'m> {
    pub model: &'m Model,
    pub params: BoundParams,
}

impl BoundModel<'_> {
    fn linear(&self, tape: &mut Tape, l: Linear, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.params.var(l.weight))?;
        tape.add_row(z, self.params.var(l.bias))
    }

    fn two_layer(&self, tape: &mut Tape, m: TwoLayer, x: Var) -> Result<Var> {
        let a = self.linear(tape, m.first, x)?;
        let a = tape.relu(a);
        self.linear(tape, m.second, a)
    }
}

/// Disjoint union of graphs, the unit of every forward pass.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Matrix,
    pub edges: Arc<[(usize, usize)]>,
    pub node_graph: Arc<[usize]>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::contract("empty graph batch"));
        };
        let dim = first.feature_dim();
        let mut data = Vec::new();
        let mut edges = Vec::new();
        let mut node_graph = Vec::new();
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        for (gi, g) in graphs.iter().enumerate() {
            if g.feature_dim() != dim {
                return Err(Error::contract(format!(
                    "graph {} has feature width {}, batch uses {dim}",
                    g.id,
                    g.feature_dim()
                )));
            }
            let off = node_graph.len();
            data.extend_from_slice(g.features().data());
            edges.extend(g.edges().iter().map(|&(u, v)| (u + off, v + off)));
            node_graph.extend(std::iter::repeat_n(gi, g.node_count()));
            node_offsets.push(node_graph.len());
            edge_offsets.push(edges.len());
        }
        Ok(Self {
            features: Matrix::from_vec(node_graph.len(), dim, data)?,
            edges: edges.into(),
            node_graph: node_graph.into(),
            node_offsets,
            edge_offsets,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }

    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    /// Graph index of every edge.
    pub fn edge_graph(&self) -> Vec<usize> {
        (0..self.graph_count())
            .flat_map(|g| std::iter::repeat_n(g, self.edge_range(g).len()))
            .collect()
    }
}

/// Node embeddings of every graph in `batch` (`nodes × hidden`).
///
/// `edge_weights` is an `edges × 1` column gating each message; both
/// directions of an edge share its weight.
pub fn gin_encode(tape: &mut Tape, model: &BoundModel, batch: &GraphBatch, edge_weights: Var) -> Result<Var> {
    let arch = model.model.arch;
    if batch.features.cols() != arch.feature_dim {
        return Err(Error::contract(format!(
            "feature width {} does not match the first layer ({})",
            batch.features.cols(),
            arch.feature_dim
        )));
    }
    let mut h = tape.constant(batch.features.clone());
    let last = model.model.gin.len() - 1;
    for (l, layer) in model.model.gin.iter().enumerate() {
        let agg = tape.propagate(h, edge_weights, batch.edges.clone(), 1.0 + model.model.gin_eps)?;
        h = model.two_layer(tape, *layer, agg)?;
        if l != last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Weighted mean pooling per graph. Fails with [`Error::Degenerate`] when
/// some graph selects no node.
pub fn readout(tape: &mut Tape, batch: &GraphBatch, node_embeddings: Var, node_weights: &[f64]) -> Result<Var> {
    tape.segment_mean(
        node_embeddings,
        batch.node_graph.clone(),
        shared(node_weights),
        batch.graph_count(),
    )
}

/// Unweighted mean pooling per graph.
pub fn mean_readout(tape: &mut Tape, batch: &GraphBatch, node_embeddings: Var) -> Result<Var> {
    readout(tape, batch, node_embeddings, &vec![1.0; batch.node_count()])
}

/// Rationale probability of every edge (`edges × 1`): the mean of
/// `σ(MLP_1([h_u; h_v]))` and `σ(MLP_1([h_v; h_u]))`.
pub fn mask_head(tape: &mut Tape, model: &BoundModel, node_embeddings: Var, edges: &[(usize, usize)]) -> Result<Var> {
    let src: Arc<[usize]> = edges.iter().map(|e| e.0).collect();
    let dst: Arc<[usize]> = edges.iter().map(|e| e.1).collect();
    let hu = tape.gather_rows(node_embeddings, src)?;
    let hv = tape.gather_rows(node_embeddings, dst)?;
    let forward = tape.concat_cols(hu, hv)?;
    let backward = tape.concat_cols(hv, hu)?;
    let head = model.model.mask_head;
    let a = model.two_layer(tape, head, forward)?;
    let b = model.two_layer(tape, head, backward)?;
    let a = tape.sigmoid(a);
    let b = tape.sigmoid(b);
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 0.5))
}

/// Class logits (`graphs × classes`) from graph embeddings.
pub fn classify(tape: &mut Tape, model: &BoundModel, graph_embeddings: Var) -> Result<Var> {
    let hidden = model.model.arch.hidden;
    if tape.shape(graph_embeddings).1 != hidden {
        return Err(Error::contract(format!(
            "embedding width {} does not match hidden size {hidden}",
            tape.shape(graph_embeddings).1
        )));
    }
    model.two_layer(tape, model.model.classifier, graph_embeddings)
}

/// Eager single-graph helpers built on a throwaway tape.
impl Model {
    pub fn node_embeddings(&self, graph: &Graph, edge_weights: &[f64]) -> Result<Matrix> {
        if edge_weights.len() != graph.edge_count() {
            return Err(Error::contract("edge weight count differs from edge count"));
        }
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let w = tape.constant(Matrix::column(edge_weights));
        let h = gin_encode(&mut tape, &bound, &batch, w)?;
        Ok(tape.value(h).clone())
    }

    /// Rationale mask of `graph` computed on the unweighted graph.
    pub fn estimate_mask(&self, graph: &Graph) -> Result<EdgeMask> {
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let ones = tape.constant(Matrix::filled(graph.edge_count(), 1, 1.0));
        let h = gin_encode(&mut tape, &bound, &batch, ones)?;
        let m = mask_head(&mut tape, &bound, h, &batch.edges)?;
        EdgeMask::for_graph(graph, tape.value(m).data().to_vec())
    }

    /// Logits of the weighted readout of `graph` under message weights.
    pub fn logits(&self, graph: &Graph, edge_weights: &[f64], node_weights: &[f64]) -> Result<Vec<f64>> {
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let w = tape.constant(Matrix::column(edge_weights));
        let h = gin_encode(&mut tape, &bound, &batch, w)?;
        let g = readout(&mut tape, &batch, h, node_weights)?;
        let y = classify(&mut tape, &bound, g)?;
        Ok(tape.value(y).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture {
            hidden: 8,
            layers: 3,
            feature_dim: 4,
            classes: 3,
        }
    }

    fn graph(features: Matrix, edges: &[(usize, usize)]) -> Graph {
        Graph::new(1, features.rows(), edges.iter().copied(), features, 0).unwrap()
    }

    fn random_features(n: usize, seed: u64) -> Matrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_edge_weights_remove_neighbour_mixing() {
        let model = Model::new(arch(), 3).unwrap();
        let x = random_features(4, 1);
        let g = graph(x.clone(), &[(0, 1), (1, 2), (2, 3)]);
        let with_edges = model.node_embeddings(&g, &[0.0; 3]).unwrap();
        let isolated = graph(x, &[]);
        let alone = model.node_embeddings(&isolated, &[]).unwrap();
        assert_eq!(with_edges, alone);
    }

    #[test]
    fn permutation_equivariant() {
        let model = Model::new(arch(), 5).unwrap();
        let x = random_features(5, 2);
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)];
        let w = [0.3, 1.0, 0.7, 0.2, 0.9, 0.5];
        let base = model.node_embeddings(&graph(x.clone(), &edges), &w).unwrap();

        let perm = [3, 0, 4, 1, 2]; // old node i becomes perm[i]
        let mut px = Matrix::zeros(5, 4);
        for i in 0..5 {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let pedges: Vec<_> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let permuted = model.node_embeddings(&graph(px, &pedges), &w).unwrap();
        for i in 0..5 {
            for (a, b) in base.row(i).iter().zip(permuted.row(perm[i])) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_triangle_gives_equal_embeddings() {
        let model = Model::new(arch(), 9).unwrap();
        let x = Matrix::from_rows(&vec![vec![0.2, 0.4, 0.6, 0.8]; 3]).unwrap();
        let h = model.node_embeddings(&graph(x, &[(0, 1), (1, 2), (0, 2)]), &[1.0; 3]).unwrap();
        assert_eq!(h.row(0), h.row(1));
        assert_eq!(h.row(1), h.row(2));
    }

    #[test]
    fn zero_mask_head_gives_half() {
        let mut model = Model::new(arch(), 1).unwrap();
        model.zero_mask_head();
        let g = graph(random_features(4, 3), &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let m = model.estimate_mask(&g).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mask_is_orientation_symmetric_and_open_interval() {
        let model = Model::new(arch(), 4).unwrap();
        let x = random_features(3, 4);
        let a = model.estimate_mask(&graph(x.clone(), &[(0, 1), (1, 2)])).unwrap();
        // same graph, node order reversed so stored orientation flips
        let mut rx = Matrix::zeros(3, 4);
        for i in 0..3 {
            rx.row_mut(2 - i).copy_from_slice(x.row(i));
        }
        let b = model.estimate_mask(&graph(rx, &[(2, 1), (1, 0)])).unwrap();
        assert_eq!(a.values()[0], b.values()[0]);
        assert_eq!(a.values()[1], b.values()[1]);
        assert!(a.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn readout_identities() {
        let mut tape = Tape::new();
        let g1 = graph(Matrix::zeros(1, 4), &[]);
        let b = GraphBatch::new(&[&g1]).unwrap();
        let h = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let r = mean_readout(&mut tape, &b, h).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0]);

        let g2 = graph(Matrix::zeros(3, 4), &[]);
        let b = GraphBatch::new(&[&g2]).unwrap();
        let h = tape.constant(Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0], vec![2.0, 2.0]]).unwrap());
        let plain = mean_readout(&mut tape, &b, h).unwrap();
        let uniform = readout(&mut tape, &b, h, &[0.4, 0.4, 0.4]).unwrap();
        for (x, y) in tape.value(plain).data().iter().zip(tape.value(uniform).data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(readout(&mut tape, &b, h, &[0.0; 3]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn classifier_shape_and_zero_weights() {
        let mut model = Model::new(arch(), 2).unwrap();
        let (w, bias) = model.classifier_output_layer();
        model.params_mut().get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
        model.params_mut().get_mut(bias).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let g = graph(random_features(3, 8), &[(0, 1), (1, 2)]);
        let logits = model.logits(&g, &[1.0, 1.0], &[1.0; 3]).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
    }

    #[test]
    fn feature_width_mismatch_is_rejected() {
        let model = Model::new(arch(), 2).unwrap();
        let g = Graph::new(0, 2, [(0, 1)], Matrix::zeros(2, 3), 0).unwrap();
        assert!(model.estimate_mask(&g).is_err());
    }
}
