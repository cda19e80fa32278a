//! Loss assembly, the mini-batch training loop, and inference.
//!
//! One training step encodes the batch once on unit edge weights, scores
//! every edge with the mask head, draws relaxed rationale indicators and
//! then builds four losses on the same tape:
//!
//! * `L_r`: cross-entropy of predictions read out from rationale nodes of a
//!   second pass whose messages are gated by the relaxed indicators;
//! * `L_a`: cross-entropy on environment-mixed graphs synthesized from
//!   pairs of batch graphs;
//! * `L_c`: the contrastive term;
//! * `L_s`: the sparsity penalty.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eda::{
    augment_pair, bridge_budget, plan_augmentation, swap_environment, AugmentedGraph, LambdaPolicy, PairAugmentation,
    Provenance,
};
use crate::encoder::{classify, gin_encode, mask_head, mean_readout, readout, Architecture, BoundModel, GraphBatch, Model};
use crate::error::{Error, Result};
use crate::graph::{partition, EdgeMask, Graph, Merged, MergedEdge, SubgraphSplit};
use crate::metrics::{accuracy, distribution_distance, rationale_auc, AucPooling, EvalReport};
use crate::num::{grad_check, shared, AdamConfig, AdamState, Fault, GradCheckConfig, GradCheckReport, Matrix, Tape, Var};
use crate::spmotif::{generate_spmotif, SpmotifConfig};
use crate::prse::{contrastive_loss, draw_indicators, sample_rationale, sparsity_loss_on_tape, ConcreteSampleConfig, ContrastiveConfig, ContrastiveInputs};

/// Which readout produces the training and inference prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Readout over rationale nodes of the mask-gated graph.
    #[default]
    Rationale,
    /// Plain mean readout over the whole unweighted graph (ERM baseline).
    FullGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub r_s: f64,
    pub r_aug: f64,
    pub r_add: f64,
    pub lambda: LambdaPolicy,
    /// Concrete temperature at the first epoch.
    pub temperature: f64,
    /// When set, the temperature moves linearly to this value by the last epoch.
    pub temperature_final: Option<f64>,
    pub contrastive: ContrastiveConfig,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub prediction: PredictionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            gamma: 0.5,
            r_s: 0.7,
            r_aug: 0.2,
            r_add: 0.1,
            lambda: LambdaPolicy::default(),
            temperature: 1.0,
            temperature_final: None,
            contrastive: ContrastiveConfig::default(),
            hidden: 32,
            layers: 3,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            prediction: PredictionMode::Rationale,
        }
    }
}

impl TrainConfig {
    /// The ERM baseline: no mask, augmentation or contrastive terms.
    pub fn erm(self) -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            r_aug: 0.0,
            prediction: PredictionMode::FullGraph,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("r_s", self.r_s), ("r_aug", self.r_aug), ("r_add", self.r_add)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.r_aug > 0.0 && self.alpha > 0.0 && self.r_add == 0.0 {
            return Err(Error::contract("r_add must be > 0 when augmentation is on"));
        }
        for t in std::iter::once(self.temperature).chain(self.temperature_final) {
            if !(t > 0.0) {
                return Err(Error::contract(format!("temperature must be > 0, got {t}")));
            }
        }
        self.lambda.validate()?;
        self.contrastive.validate()?;
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::contract("hidden and layers must be >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn temperature_at(&self, epoch: usize) -> f64 {
        match self.temperature_final {
            Some(end) if self.epochs > 1 => {
                let f = epoch as f64 / (self.epochs - 1) as f64;
                self.temperature + (end - self.temperature) * f
            }
            _ => self.temperature,
        }
    }

    fn uses_mask(&self) -> bool {
        self.prediction == PredictionMode::Rationale || self.alpha > 0.0 || self.beta > 0.0 || self.gamma > 0.0
    }
}

/// The loss terms of one batch, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_r: Var,
    pub l_a: Var,
    pub l_c: Var,
    pub l_s: Var,
    pub total: Var,
    /// Class logits of the batch graphs (`graphs × classes`).
    pub logits: Var,
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_r: f64,
    pub l_a: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn read(tape: &Tape, v: &LossVars) -> Self {
        Self {
            l_r: tape.value(v.l_r).item(),
            l_a: tape.value(v.l_a).item(),
            l_c: tape.value(v.l_c).item(),
            l_s: tape.value(v.l_s).item(),
            total: tape.value(v.total).item(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_r, self.l_a, self.l_c, self.l_s, self.total].iter().all(|x| x.is_finite())
    }
}

/// Mean softmax cross-entropy of `logits` rows against `labels`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let lse = tape.logsumexp_rows(logits)?;
    let picked = tape.pick_cols(logits, shared(labels))?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

/// Node weights selecting, per graph, the nodes touched by a rationale
/// edge; graphs without any fall back to all their nodes.
fn rationale_node_weights(batch: &GraphBatch, hard: &[bool]) -> Vec<f64> {
    let mut w = vec![0.0; batch.node_count()];
    for (&(u, v), &h) in batch.edges.iter().zip(hard) {
        if h {
            w[u] = 1.0;
            w[v] = 1.0;
        }
    }
    for g in 0..batch.graph_count() {
        let r = batch.node_range(g);
        if w[r.clone()].iter().all(|&x| x == 0.0) {
            w[r].iter_mut().for_each(|x| *x = 1.0);
        }
    }
    w
}

/// Augmented graphs of one batch with the tape variable of their edge gates.
struct AugmentedBatch {
    graphs: Vec<AugmentedGraph>,
    weights: Var,
}

/// Environment mixup for `pairs` of batch positions. Edge gates of the
/// synthesized graphs stay on the tape: rationale edges reuse the relaxed
/// rationale indicator of their source edge, environment edges the relaxed
/// draw from the mixed mask, bridges are constant 1.
#[allow(clippy::too_many_arguments)]
fn augment_batch(
    tape: &mut Tape,
    batch: &GraphBatch,
    splits: &[SubgraphSplit],
    masks: &[EdgeMask],
    mask: Var,
    relaxed: Var,
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
    temperature: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Option<AugmentedBatch>> {
    let sample_cfg = ConcreteSampleConfig::relaxed(temperature);
    let mut done: Vec<(usize, usize, PairAugmentation)> = Vec::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let lambda = cfg.lambda.draw(rng);
        let id = (1u64 << 48) + k as u64;
        if let Some(p) = augment_pair(id, &splits[i], &splits[j], &masks[i], &masks[j], lambda, &sample_cfg, cfg.r_add, rng)? {
            done.push((i, j, p));
        }
    }
    if done.is_empty() {
        return Ok(None);
    }
    let batch_edges = batch.edge_count();
    let mut parts = vec![relaxed];
    let mut offset = batch_edges;
    let mut mixed_offsets = Vec::with_capacity(done.len());
    for &(pi, pj, ref p) in &done {
        let spec = &p.spec;
        let first: Arc<[usize]> = spec.extended.edge_origin[..spec.first_block_edges]
            .iter()
            .map(|e| batch.edge_offsets[pi] + e.edge)
            .collect();
        let second: Arc<[usize]> = spec.extended.edge_origin[spec.first_block_edges..]
            .iter()
            .map(|e| batch.edge_offsets[pj] + e.edge)
            .collect();
        let lambda = spec.lambda;
        let mut blocks = Vec::with_capacity(2);
        if !first.is_empty() {
            let m = tape.gather_rows(mask, first)?;
            blocks.push(tape.affine(m, -lambda, lambda));
        }
        if !second.is_empty() {
            let m = tape.gather_rows(mask, second)?;
            blocks.push(tape.affine(m, -(1.0 - lambda), 1.0 - lambda));
        }
        let mixed = tape.concat_rows(&blocks)?;
        let gate = tape.concrete(mixed, &p.sample.draw.noise, temperature)?;
        parts.push(gate);
        mixed_offsets.push(offset);
        offset += spec.edge_count();
    }
    let one = offset;
    parts.push(tape.constant(Matrix::scalar(1.0)));
    let stacked = tape.concat_rows(&parts)?;

    let mut idx = Vec::new();
    for (k, (i, _, p)) in done.iter().enumerate() {
        let a = &p.augmented;
        for kind in a.edge_kinds() {
            idx.push(match *kind {
                MergedEdge::Rationale(r) => batch.edge_offsets[*i] + a.rationale_edge_origin[r],
                MergedEdge::Environment(e) => mixed_offsets[k] + a.environment_edge_origin[e],
                MergedEdge::Bridge(_) => one,
            });
        }
    }
    let weights = tape.gather_rows(stacked, idx.into())?;
    Ok(Some(AugmentedBatch {
        graphs: done.into_iter().map(|(_, _, p)| p.augmented).collect(),
        weights,
    }))
}

/// Extra products of a loss computation besides the tape variables.
pub struct BatchProducts {
    pub vars: LossVars,
    /// Graphs synthesized for `L_a`.
    pub augmented: Vec<AugmentedGraph>,
}

/// Builds every loss term of one batch on `tape`.
///
/// All randomness (concrete noise, view perturbations, augmentation pairs,
/// λ draws, bridges) comes from `rng`, so re-running with an identically
/// seeded generator and the same parameters rebuilds the same function.
pub fn compute_losses(
    tape: &mut Tape,
    model: &BoundModel,
    graphs: &[&Graph],
    cfg: &TrainConfig,
    temperature: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<BatchProducts> {
    if graphs.len() < 2 {
        return Err(Error::contract("a training batch needs at least two graphs"));
    }
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let batch = GraphBatch::new(graphs)?;
    let ones = tape.constant(Matrix::filled(batch.edge_count(), 1, 1.0));
    let h = gin_encode(tape, model, &batch, ones)?;
    let zero = tape.constant(Matrix::scalar(0.0));

    if !cfg.uses_mask() {
        let g = mean_readout(tape, &batch, h)?;
        let logits = classify(tape, model, g)?;
        let l_r = cross_entropy(tape, logits, &labels)?;
        return Ok(BatchProducts {
            vars: LossVars {
                l_r,
                l_a: zero,
                l_c: zero,
                l_s: zero,
                total: l_r,
                logits,
            },
            augmented: Vec::new(),
        });
    }

    let mask = mask_head(tape, model, h, &batch.edges)?;
    let mask_values = tape.value(mask).data().to_vec();
    let sample_cfg = ConcreteSampleConfig::relaxed(temperature);
    let mut noise = Vec::with_capacity(batch.edge_count());
    let mut hard = Vec::with_capacity(batch.edge_count());
    let mut splits = Vec::with_capacity(graphs.len());
    let mut masks = Vec::with_capacity(graphs.len());
    for (g, graph) in graphs.iter().enumerate() {
        let m = &mask_values[batch.edge_range(g)];
        let draw = draw_indicators(m, &sample_cfg, rng)?;
        noise.extend_from_slice(&draw.noise);
        hard.extend_from_slice(&draw.hard);
        splits.push(partition(graph, draw.hard, draw.relaxed)?);
        masks.push(EdgeMask::for_graph(graph, m.to_vec())?);
    }
    let relaxed = tape.concrete(mask, &noise, temperature)?;

    let logits = match cfg.prediction {
        PredictionMode::Rationale => {
            let hr = gin_encode(tape, model, &batch, relaxed)?;
            let node_w = rationale_node_weights(&batch, &hard);
            let gr = readout(tape, &batch, hr, &node_w)?;
            classify(tape, model, gr)?
        }
        PredictionMode::FullGraph => {
            let g = mean_readout(tape, &batch, h)?;
            classify(tape, model, g)?
        }
    };
    let l_r = cross_entropy(tape, logits, &labels)?;

    let l_c = if cfg.beta > 0.0 {
        let original_embeddings = mean_readout(tape, &batch, h)?;
        let inputs = ContrastiveInputs {
            batch: &batch,
            splits: &splits,
            relaxed,
            original_embeddings,
        };
        contrastive_loss(tape, model, &inputs, &cfg.contrastive, rng)?
    } else {
        zero
    };

    let mut augmented = Vec::new();
    let l_a = if cfg.alpha > 0.0 && cfg.r_aug > 0.0 {
        let pairs = plan_augmentation(graphs.len(), cfg.r_aug, rng)?;
        match augment_batch(tape, &batch, &splits, &masks, mask, relaxed, &pairs, cfg, temperature, rng)? {
            Some(aug) => {
                let refs: Vec<&Graph> = aug.graphs.iter().map(|a| &a.graph).collect();
                let ab = GraphBatch::new(&refs)?;
                let ha = gin_encode(tape, model, &ab, aug.weights)?;
                let ga = mean_readout(tape, &ab, ha)?;
                let la = classify(tape, model, ga)?;
                let labels: Vec<usize> = refs.iter().map(|g| g.label).collect();
                augmented = aug.graphs;
                cross_entropy(tape, la, &labels)?
            }
            None => zero,
        }
    } else {
        zero
    };

    let l_s = sparsity_loss_on_tape(tape, &batch, mask, cfg.r_s)?;

    let mut total = l_r;
    for (coef, term) in [(cfg.alpha, l_a), (cfg.beta, l_c), (cfg.gamma, l_s)] {
        if coef != 0.0 {
            let scaled = tape.scale(term, coef);
            total = tape.add(total, scaled)?;
        }
    }
    Ok(BatchProducts {
        vars: LossVars {
            l_r,
            l_a,
            l_c,
            l_s,
            total,
            logits,
        },
        augmented,
    })
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_r: f64,
    pub l_a: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub total: f64,
    /// Accuracy of the relaxed training predictions seen during the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub rationale_auc: Option<f64>,
    /// Distance between this epoch's augmented graphs and the training corpus.
    pub aug_distance: Option<f64>,
    pub augmented_graphs: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffled batches; a trailing singleton joins the previous batch so the
/// contrastive term always has a negative.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(2)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Architecture implied by a training corpus and config.
pub fn architecture_for(train: &[Graph], cfg: &TrainConfig) -> Result<Architecture> {
    let first = train.first().ok_or_else(|| Error::Data("empty training split".into()))?;
    let feature_dim = first.feature_dim();
    if train.iter().any(|g| g.feature_dim() != feature_dim) {
        return Err(Error::Data("training graphs differ in feature width".into()));
    }
    let classes = train.iter().map(|g| g.label).max().unwrap_or(0) + 1;
    Ok(Architecture {
        hidden: cfg.hidden,
        layers: cfg.layers,
        feature_dim,
        classes: classes.max(2),
    })
}

/// Trains a fresh model. Progress lines go to `log` when given.
pub fn train(
    train: &[Graph],
    val: &[Graph],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Data("training needs at least two graphs".into()));
    }
    let arch = architecture_for(train, cfg)?;
    let mut model = Model::new(arch, cfg.seed)?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let train_refs: Vec<&Graph> = train.iter().collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let t = cfg.temperature_at(epoch);
        order.shuffle(&mut epoch_rng(cfg.seed ^ 0x5f3759df, epoch as u64));
        let mut sums = LossBundle::default();
        let mut seen = 0usize;
        let mut hits = 0usize;
        let mut augmented = Vec::new();
        let plan = batches(&order, cfg.batch_size);
        for (b, idx) in plan.iter().enumerate() {
            let graphs: Vec<&Graph> = idx.iter().map(|&i| &train[i]).collect();
            let mut rng = epoch_rng(cfg.seed, ((epoch as u64) << 32) | b as u64);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let products = compute_losses(&mut tape, &bound, &graphs, cfg, t, &mut rng)?;
            let values = LossBundle::read(&tape, &products.vars);
            if !values.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: {values:?}"
                )));
            }
            let grads = tape.backward(products.vars.total)?;
            let grads = bound.params.gradients(&tape, &grads);
            adam.step(model.params_mut(), &grads)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;

            let n = graphs.len() as f64;
            sums.l_r += values.l_r * n;
            sums.l_a += values.l_a * n;
            sums.l_c += values.l_c * n;
            sums.l_s += values.l_s * n;
            sums.total += values.total * n;
            let logits = tape.value(products.vars.logits);
            for (r, g) in graphs.iter().enumerate() {
                if argmax(logits.row(r)) == g.label {
                    hits += 1;
                }
            }
            seen += graphs.len();
            augmented.extend(products.augmented.into_iter().map(|a| a.graph));
        }
        let n = seen as f64;
        let (val_acc, auc) = if val.is_empty() {
            (None, None)
        } else {
            let report = evaluate(&model, val, cfg.prediction)?;
            (Some(report.accuracy), report.rationale_auc)
        };
        let aug_distance = if augmented.is_empty() {
            None
        } else {
            let refs: Vec<&Graph> = augmented.iter().collect();
            Some(distribution_distance(&refs, &train_refs, 10)?.raw)
        };
        let record = EpochRecord {
            epoch,
            l_r: sums.l_r / n,
            l_a: sums.l_a / n,
            l_c: sums.l_c / n,
            l_s: sums.l_s / n,
            total: sums.total / n,
            train_acc: hits as f64 / n,
            val_acc,
            rationale_auc: auc,
            aug_distance,
            augmented_graphs: augmented.len(),
        };
        if let Some(f) = log.as_mut() {
            f(&record);
        }
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Deterministic prediction for one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub label: usize,
    pub logits: Vec<f64>,
    pub mask: EdgeMask,
    /// Edges kept by thresholding the mask at 0.5.
    pub rationale: Vec<bool>,
    /// The thresholded rationale was empty and the full graph was used.
    pub fallback: bool,
}

impl Inference {
    pub fn split<'g>(&self, graph: &'g Graph) -> Result<SubgraphSplit<'g>> {
        let relaxed = self.rationale.iter().map(|&h| f64::from(u8::from(h))).collect();
        partition(graph, self.rationale.clone(), relaxed)
    }
}

const INFER_CHUNK: usize = 64;

/// Eval-hard inference for many graphs, batched internally.
pub fn infer_all(model: &Model, graphs: &[Graph], mode: PredictionMode) -> Result<Vec<Inference>> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(INFER_CHUNK) {
        let refs: Vec<&Graph> = chunk.iter().collect();
        out.extend(infer_batch(model, &refs, mode)?);
    }
    Ok(out)
}

/// Eval-hard inference for one graph.
pub fn infer(model: &Model, graph: &Graph, mode: PredictionMode) -> Result<Inference> {
    Ok(infer_batch(model, &[graph], mode)?.remove(0))
}

fn infer_batch(model: &Model, graphs: &[&Graph], mode: PredictionMode) -> Result<Vec<Inference>> {
    let batch = GraphBatch::new(graphs)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let ones = tape.constant(Matrix::filled(batch.edge_count(), 1, 1.0));
    let h = gin_encode(&mut tape, &bound, &batch, ones)?;
    let m = mask_head(&mut tape, &bound, h, &batch.edges)?;
    let mask = tape.value(m).data().to_vec();
    let hard: Vec<bool> = mask.iter().map(|&p| p > 0.5).collect();
    let fallback: Vec<bool> = (0..graphs.len())
        .map(|g| !hard[batch.edge_range(g)].iter().any(|&x| x))
        .collect();
    let logits = match mode {
        PredictionMode::FullGraph => {
            let g = mean_readout(&mut tape, &batch, h)?;
            classify(&mut tape, &bound, g)?
        }
        PredictionMode::Rationale => {
            let edge_graph = batch.edge_graph();
            let gate: Vec<f64> = hard
                .iter()
                .zip(&edge_graph)
                .map(|(&k, &g)| if k || fallback[g] { 1.0 } else { 0.0 })
                .collect();
            let w = tape.constant(Matrix::column(&gate));
            let hr = gin_encode(&mut tape, &bound, &batch, w)?;
            let node_w = rationale_node_weights(&batch, &hard);
            let g = readout(&mut tape, &batch, hr, &node_w)?;
            classify(&mut tape, &bound, g)?
        }
    };
    let lv = tape.value(logits);
    graphs
        .iter()
        .enumerate()
        .map(|(g, graph)| {
            let r = batch.edge_range(g);
            Ok(Inference {
                label: argmax(lv.row(g)),
                logits: lv.row(g).to_vec(),
                mask: EdgeMask::for_graph(graph, mask[r.clone()].to_vec())?,
                rationale: hard[r].to_vec(),
                fallback: fallback[g],
            })
        })
        .collect()
}

/// Accuracy, per-class accuracy and (when ground truth exists) pooled
/// rationale AUC of `model` on `graphs`.
pub fn evaluate(model: &Model, graphs: &[Graph], mode: PredictionMode) -> Result<EvalReport> {
    evaluate_with(model, graphs, mode, AucPooling::Micro)
}

pub fn evaluate_with(model: &Model, graphs: &[Graph], mode: PredictionMode, pooling: AucPooling) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(Error::Data("evaluation corpus is empty".into()));
    }
    let inf = infer_all(model, graphs, mode)?;
    let preds: Vec<usize> = inf.iter().map(|i| i.label).collect();
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    let classes = model.architecture().classes;
    let per_class = (0..classes)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                None
            } else {
                Some(idx.iter().filter(|&&i| preds[i] == c).count() as f64 / idx.len() as f64)
            }
        })
        .collect();
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for (g, i) in graphs.iter().zip(&inf) {
        if let Some(gt) = g.gt_rationale() {
            scores.push(i.mask.values().to_vec());
            flags.push(gt.to_vec());
        }
    }
    let auc = if scores.is_empty() {
        None
    } else {
        Some(rationale_auc(&scores, &flags, pooling)?)
    };
    Ok(EvalReport {
        graphs: graphs.len(),
        accuracy: accuracy(&preds, &labels)?,
        rationale_auc: auc,
        per_class_accuracy: per_class,
        empty_rationale_fallbacks: inf.iter().filter(|i| i.fallback).count(),
        js_distance: None,
        env_category_count: None,
        cluster_assignments: None,
    })
}

/// Mean GNN_1 embedding of each graph's environment nodes (nodes not
/// touched by a thresholded rationale edge); all nodes when none remain.
pub fn environment_embeddings(model: &Model, graphs: &[Graph]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(INFER_CHUNK) {
        let refs: Vec<&Graph> = chunk.iter().collect();
        let batch = GraphBatch::new(&refs)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let ones = tape.constant(Matrix::filled(batch.edge_count(), 1, 1.0));
        let h = gin_encode(&mut tape, &bound, &batch, ones)?;
        let m = mask_head(&mut tape, &bound, h, &batch.edges)?;
        let hard: Vec<bool> = tape.value(m).data().iter().map(|&p| p > 0.5).collect();
        let mut w = vec![1.0; batch.node_count()];
        for (&(u, v), &k) in batch.edges.iter().zip(&hard) {
            if k {
                w[u] = 0.0;
                w[v] = 0.0;
            }
        }
        for g in 0..batch.graph_count() {
            let r = batch.node_range(g);
            if w[r.clone()].iter().all(|&x| x == 0.0) {
                w[r].iter_mut().for_each(|x| *x = 1.0);
            }
        }
        let e = readout(&mut tape, &batch, h, &w)?;
        let ev = tape.value(e);
        out.extend((0..ev.rows()).map(|r| ev.row(r).to_vec()));
    }
    Ok(out)
}

/// Mean GNN_1 embedding of a fixed node set per graph, e.g. the
/// environment block of synthesized graphs.
pub fn node_set_embeddings(model: &Model, graphs: &[&Graph], members: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    if graphs.len() != members.len() {
        return Err(Error::contract("one membership vector per graph"));
    }
    let mut out = Vec::with_capacity(graphs.len());
    for (gs, ms) in graphs.chunks(INFER_CHUNK).zip(members.chunks(INFER_CHUNK)) {
        let batch = GraphBatch::new(gs)?;
        let mut w = Vec::with_capacity(batch.node_count());
        for (g, m) in gs.iter().zip(ms) {
            if m.len() != g.node_count() {
                return Err(Error::contract("membership length differs from node count"));
            }
            w.extend(m.iter().map(|&x| f64::from(u8::from(x))));
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let ones = tape.constant(Matrix::filled(batch.edge_count(), 1, 1.0));
        let h = gin_encode(&mut tape, &bound, &batch, ones)?;
        let e = readout(&mut tape, &batch, h, &w)?;
        let ev = tape.value(e);
        out.extend((0..ev.rows()).map(|r| ev.row(r).to_vec()));
    }
    Ok(out)
}

/// Where the environment of a synthesized graph comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvironmentSource {
    /// Sampled from the λ-mixed environments of both graphs.
    Mixup(LambdaPolicy),
    /// The whole environment of `j`, no mixing.
    Swap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusAugmentConfig {
    pub r_aug: f64,
    pub r_add: f64,
    /// Temperature of the mixed-environment draw.
    pub temperature: f64,
    pub seed: u64,
    pub source: EnvironmentSource,
}

impl Default for CorpusAugmentConfig {
    fn default() -> Self {
        Self {
            r_aug: 0.2,
            r_add: 0.1,
            temperature: 1.0,
            seed: 0,
            source: EnvironmentSource::Mixup(LambdaPolicy::default()),
        }
    }
}

/// One synthesized graph; nodes `rationale_nodes..` form its environment.
#[derive(Clone, Debug)]
pub struct Synthesized {
    pub merged: Merged,
    pub provenance: Provenance,
}

impl Synthesized {
    pub fn graph(&self) -> &Graph {
        &self.merged.graph
    }

    pub fn environment_nodes(&self) -> Vec<bool> {
        (0..self.merged.graph.node_count())
            .map(|v| v >= self.merged.rationale_nodes)
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct CorpusAugmentation {
    pub graphs: Vec<Synthesized>,
    /// Source ids of pairs dropped as degenerate.
    pub skipped: Vec<(u64, u64)>,
}

/// Synthesizes `round(r_aug · |graphs|)` graphs with a trained model.
/// Rationales are sampled from the mask as during training. Pair `k` draws from its own random stream, so a
/// skipped pair does not shift the others.
pub fn augment_corpus(model: &Model, graphs: &[Graph], cfg: &CorpusAugmentConfig) -> Result<CorpusAugmentation> {
    if !(cfg.r_add > 0.0 && cfg.r_add <= 1.0) {
        return Err(Error::Usage(format!("r_add {} outside (0,1]", cfg.r_add)));
    }
    if let EnvironmentSource::Mixup(l) = cfg.source {
        l.validate().map_err(|e| Error::Usage(e.to_string()))?;
    }
    let pairs = plan_augmentation(graphs.len(), cfg.r_aug, &mut epoch_rng(cfg.seed, 0))
        .map_err(|e| Error::Usage(e.to_string()))?;
    if pairs.is_empty() {
        return Ok(CorpusAugmentation::default());
    }
    let inf = infer_all(model, graphs, PredictionMode::FullGraph)?;
    let first_id = graphs.iter().map(|g| g.id).max().unwrap_or(0) + 1;
    let sample_cfg = ConcreteSampleConfig::relaxed(cfg.temperature);
    let mut out = CorpusAugmentation::default();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let mut rng = epoch_rng(cfg.seed, k as u64 + 1);
        let id = first_id + k as u64;
        let (split_i, _) = sample_rationale(&graphs[i], &inf[i].mask, &sample_cfg, &mut rng)?;
        let (split_j, _) = sample_rationale(&graphs[j], &inf[j].mask, &sample_cfg, &mut rng)?;
        let made = match cfg.source {
            EnvironmentSource::Mixup(policy) => {
                let lambda = policy.draw(&mut rng);
                augment_pair(
                    id, &split_i, &split_j, &inf[i].mask, &inf[j].mask, lambda, &sample_cfg, cfg.r_add, &mut rng,
                )?
                .map(|p| Synthesized {
                    merged: p.augmented.merged,
                    provenance: p.augmented.provenance,
                })
            }
            EnvironmentSource::Swap => swap_environment(id, &split_i, &split_j, cfg.r_add, &mut rng)?.map(|merged| {
                let bridge_edges: Vec<(usize, usize)> = merged
                    .edge_kind
                    .iter()
                    .zip(merged.graph.edges())
                    .filter(|(k, _)| matches!(k, MergedEdge::Bridge(_)))
                    .map(|(_, &e)| e)
                    .collect();
                let provenance = Provenance {
                    i: graphs[i].id,
                    j: graphs[j].id,
                    lambda: 0.0,
                    environment_edge_count: merged
                        .edge_kind
                        .iter()
                        .filter(|k| matches!(k, MergedEdge::Environment(_)))
                        .count(),
                    requested_bridges: bridge_budget(cfg.r_add, graphs[i].edge_count(), graphs[j].edge_count()),
                    disconnected: bridge_edges.is_empty(),
                    bridge_edges,
                };
                Synthesized { merged, provenance }
            }),
        };
        match made {
            Some(s) => out.graphs.push(s),
            None => out.skipped.push((graphs[i].id, graphs[j].id)),
        }
    }
    Ok(out)
}

/// Environment embeddings of synthesized graphs: the mean GNN_1
/// embedding of each graph's environment block.
pub fn synthesized_environment_embeddings(model: &Model, synthesized: &[Synthesized]) -> Result<Vec<Vec<f64>>> {
    let graphs: Vec<&Graph> = synthesized.iter().map(Synthesized::graph).collect();
    let members: Vec<Vec<bool>> = synthesized.iter().map(Synthesized::environment_nodes).collect();
    node_set_embeddings(model, &graphs, &members)
}

/// Settings of [`full_loss_gradcheck`].
#[derive(Clone, Debug)]
pub struct FullLossCheck {
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Coordinates per parameter tensor; `None` checks every one.
    pub coordinates_per_param: Option<usize>,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for FullLossCheck {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: 8,
            layers: 2,
            coordinates_per_param: None,
            fault: None,
        }
    }
}

/// Finite-difference check of the whole training objective on a two-graph
/// Spmotif batch with every loss term switched on and all noise frozen.
pub fn full_loss_gradcheck(check: &FullLossCheck) -> Result<GradCheckReport> {
    let data = generate_spmotif(&SpmotifConfig {
        n_train: 2,
        n_val: 0,
        n_test: 0,
        seed: check.seed,
        ..SpmotifConfig::default()
    })?;
    let graphs = data.graphs;
    let refs: Vec<&Graph> = graphs.iter().collect();
    let cfg = TrainConfig {
        hidden: check.hidden,
        layers: check.layers,
        r_aug: 0.5,
        seed: check.seed,
        ..TrainConfig::default()
    };
    let mut model = Model::new(architecture_for(&graphs, &cfg)?, check.seed)?;
    // a few updates move the mask away from its symmetric start
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        },
        model.params(),
    );
    for step in 0..3 {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let p = compute_losses(&mut tape, &bound, &refs, &cfg, 1.0, &mut epoch_rng(check.seed, step))?;
        let grads = tape.backward(p.vars.total)?;
        let g = bound.params.gradients(&tape, &grads);
        adam.step(model.params_mut(), &g)?;
    }
    let gc = GradCheckConfig {
        coordinates_per_param: check.coordinates_per_param,
        seed: check.seed,
        fault: check.fault,
        ..GradCheckConfig::default()
    };
    let noise_stream = 1 << 40;
    grad_check(model.params(), &gc, |tape, bound| {
        let bm = BoundModel {
            model: &model,
            params: bound.clone(),
        };
        let p = compute_losses(tape, &bm, &refs, &cfg, 1.0, &mut epoch_rng(check.seed, noise_stream))?;
        Ok(p.vars.total)
    })
}
