//! Graph policy over master-problem states: edge-conditioned convolutions,
//! global sum pooling, dense layers and an output head, with hand-written
//! reverse-mode gradients and an Adam optimizer.
//!
//! Two heads share the trunk. The combination head emits one logit per
//! admissible assignment and is trained with softmax cross-entropy (stage 1)
//! or with logits penalized by feasibility-cut violation scores (stage 2).
//! The independent head emits one value per binary variable through a
//! sigmoid and is trained with per-variable binary cross-entropy; it exists
//! as the baseline that predicts variables independently of the admissible
//! structure.
//!
//! Everything is deterministic: initialization and minibatch order come
//! from seeded generators, and evaluation is single-threaded f64.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::cuts::scores_from_rows;
use crate::graph::{BipartiteGraph, DatasetSample, EDGE_SCALE, NODE_FEATURES, RHS_SCALE};
use crate::problem::{Assignment, NUM_Y};

/// Schema tag for weight files.
pub const MODEL_SCHEMA: &str = "v1";
/// Rejection thresholds of the independent head: at or below the first the
/// variable is 0, at or above the second it is 1, anything between rejects
/// the whole prediction.
pub const INDEPENDENT_THRESHOLDS: (f64, f64) = (0.25, 0.75);

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("operation requires the {expected:?} head, model has {found:?}")]
    WrongHead { found: HeadKind, expected: HeadKind },
    #[error("{path}: {message}")]
    Model { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One logit per admissible assignment.
    Combination,
    /// One sigmoid output per binary variable.
    Independent,
}

/// Architecture description carried in every weight file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub input_dim: usize,
    pub ecc_hidden: Vec<usize>,
    pub dense: Vec<usize>,
    pub n_outputs: usize,
    pub head: HeadKind,
}

impl Descriptor {
    /// The standard combination-head network: three 64-wide graph layers,
    /// dense layers of 64 and 32, one logit per admissible assignment.
    pub fn combination(n_actions: usize) -> Self {
        Self {
            input_dim: NODE_FEATURES,
            ecc_hidden: vec![64, 64, 64],
            dense: vec![64, 32],
            n_outputs: n_actions,
            head: HeadKind::Combination,
        }
    }

    /// The independent-head baseline: same trunk, five sigmoid outputs.
    pub fn independent() -> Self {
        Self {
            input_dim: NODE_FEATURES,
            ecc_hidden: vec![64, 64, 64],
            dense: vec![64, 32],
            n_outputs: NUM_Y,
            head: HeadKind::Independent,
        }
    }

    /// Narrow variant used by gradient checks.
    pub fn reduced(head: HeadKind, n_actions: usize) -> Self {
        Self {
            input_dim: NODE_FEATURES,
            ecc_hidden: vec![8, 8, 8],
            dense: vec![8, 4],
            n_outputs: match head {
                HeadKind::Combination => n_actions,
                HeadKind::Independent => NUM_Y,
            },
            head,
        }
    }
}

/// Feature scale factors the graphs were encoded with; stored in the model
/// file so training and inference cannot disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub rhs: f64,
    pub edge: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            rhs: RHS_SCALE,
            edge: EDGE_SCALE,
        }
    }
}

/// One edge-conditioned convolution: the neighbor message weight matrix is
/// affine in the scalar edge feature, `W(e) = W0 + e * W1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EccLayer {
    pub w_root: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub descriptor: Descriptor,
    pub scaling: Scaling,
    pub ecc: Vec<EccLayer>,
    pub dense: Vec<DenseLayer>,
    pub output: DenseLayer,
    /// Training provenance, e.g. `["stage1", "stage2(omega=0.1)"]`.
    pub stages: Vec<String>,
}

/// Gradient container mirroring [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub ecc: Vec<EccLayer>,
    pub dense: Vec<DenseLayer>,
    pub output: DenseLayer,
}

fn zero_ecc(d_out: usize, d_in: usize) -> EccLayer {
    EccLayer {
        w_root: DMatrix::zeros(d_out, d_in),
        w0: DMatrix::zeros(d_out, d_in),
        w1: DMatrix::zeros(d_out, d_in),
        bias: DVector::zeros(d_out),
    }
}

fn zero_dense(d_out: usize, d_in: usize) -> DenseLayer {
    DenseLayer {
        w: DMatrix::zeros(d_out, d_in),
        bias: DVector::zeros(d_out),
    }
}

impl PolicyGrads {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            ecc: params
                .ecc
                .iter()
                .map(|l| zero_ecc(l.w_root.nrows(), l.w_root.ncols()))
                .collect(),
            dense: params
                .dense
                .iter()
                .map(|l| zero_dense(l.w.nrows(), l.w.ncols()))
                .collect(),
            output: zero_dense(params.output.w.nrows(), params.output.w.ncols()),
        }
    }

    /// Adds `other`, used for minibatch accumulation.
    pub fn accumulate(&mut self, other: &PolicyGrads) {
        for (a, b) in self.ecc.iter_mut().zip(other.ecc.iter()) {
            a.w_root += &b.w_root;
            a.w0 += &b.w0;
            a.w1 += &b.w1;
            a.bias += &b.bias;
        }
        for (a, b) in self.dense.iter_mut().zip(other.dense.iter()) {
            a.w += &b.w;
            a.bias += &b.bias;
        }
        self.output.w += &other.output.w;
        self.output.bias += &other.output.bias;
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.ecc.iter_mut() {
            l.w_root *= factor;
            l.w0 *= factor;
            l.w1 *= factor;
            l.bias *= factor;
        }
        for l in self.dense.iter_mut() {
            l.w *= factor;
            l.bias *= factor;
        }
        self.output.w *= factor;
        self.output.bias *= factor;
    }

    /// Zeroes the graph-layer gradients; the second training stage updates
    /// only the dense part of the network.
    pub fn freeze_ecc(&mut self) {
        for l in self.ecc.iter_mut() {
            l.w_root.fill(0.0);
            l.w0.fill(0.0);
            l.w1.fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

/// Ordered tensor views; the order fixes the layout of optimizer state and
/// weight files.
macro_rules! tensor_list {
    ($self:ident, $slice_fn:ident, $ty:ty) => {{
        let mut out: Vec<(String, $ty)> = Vec::new();
        for (i, l) in $self.ecc.iter().enumerate() {
            out.push((format!("ecc{i}.w_root"), l.w_root.$slice_fn()));
            out.push((format!("ecc{i}.w0"), l.w0.$slice_fn()));
            out.push((format!("ecc{i}.w1"), l.w1.$slice_fn()));
            out.push((format!("ecc{i}.bias"), l.bias.$slice_fn()));
        }
        for (i, l) in $self.dense.iter().enumerate() {
            out.push((format!("dense{i}.w"), l.w.$slice_fn()));
            out.push((format!("dense{i}.bias"), l.bias.$slice_fn()));
        }
        out.push(("out.w".to_string(), $self.output.w.$slice_fn()));
        out.push(("out.bias".to_string(), $self.output.bias.$slice_fn()));
        out
    }};
}

impl PolicyParams {
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        tensor_list!(self, as_slice, &[f64])
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, l) in self.ecc.iter_mut().enumerate() {
            out.push((format!("ecc{i}.w_root"), l.w_root.as_mut_slice()));
            out.push((format!("ecc{i}.w0"), l.w0.as_mut_slice()));
            out.push((format!("ecc{i}.w1"), l.w1.as_mut_slice()));
            out.push((format!("ecc{i}.bias"), l.bias.as_mut_slice()));
        }
        for (i, l) in self.dense.iter_mut().enumerate() {
            out.push((format!("dense{i}.w"), l.w.as_mut_slice()));
            out.push((format!("dense{i}.bias"), l.bias.as_mut_slice()));
        }
        out.push(("out.w".to_string(), self.output.w.as_mut_slice()));
        out.push(("out.bias".to_string(), self.output.bias.as_mut_slice()));
        out
    }
}

impl PolicyGrads {
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        tensor_list!(self, as_slice, &[f64])
    }
}

/// Deterministic initialization: every parameter of a layer is drawn
/// uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from one ChaCha8
/// stream, tensors in the fixed enumeration order, elements column-major.
pub fn init_params(descriptor: &Descriptor, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_mat = |rows: usize, cols: usize, fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
    };

    let mut ecc = Vec::new();
    let mut d_in = descriptor.input_dim;
    for &d_out in &descriptor.ecc_hidden {
        let w_root = draw_mat(d_out, d_in, d_in);
        let w0 = draw_mat(d_out, d_in, d_in);
        let w1 = draw_mat(d_out, d_in, d_in);
        let bias = DVector::from_column_slice(draw_mat(d_out, 1, d_in).as_slice());
        ecc.push(EccLayer {
            w_root,
            w0,
            w1,
            bias,
        });
        d_in = d_out;
    }

    let mut dense = Vec::new();
    for &d_out in &descriptor.dense {
        let w = draw_mat(d_out, d_in, d_in);
        let bias = DVector::from_column_slice(draw_mat(d_out, 1, d_in).as_slice());
        dense.push(DenseLayer { w, bias });
        d_in = d_out;
    }

    let w = draw_mat(descriptor.n_outputs, d_in, d_in);
    let bias = DVector::from_column_slice(draw_mat(descriptor.n_outputs, 1, d_in).as_slice());
    let output = DenseLayer { w, bias };

    PolicyParams {
        descriptor: descriptor.clone(),
        scaling: Scaling::default(),
        ecc,
        dense,
        output,
        stages: Vec::new(),
    }
}

struct ForwardCache {
    /// Neighbor lists (node, edge weight) per node, var nodes first.
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Activations per layer; `activations[0]` is the input features.
    activations: Vec<Vec<DVector<f64>>>,
    /// Pre-activation signs per ECC layer (relu mask).
    masks: Vec<Vec<DVector<f64>>>,
    /// Mean-aggregated neighbor sums feeding W0 and W1 per layer.
    agg0: Vec<Vec<DVector<f64>>>,
    agg1: Vec<Vec<DVector<f64>>>,
    dense_in: Vec<DVector<f64>>,
    dense_masks: Vec<DVector<f64>>,
    outputs: DVector<f64>,
}

fn build_adjacency(graph: &BipartiteGraph) -> Vec<Vec<(usize, f64)>> {
    let n_var = graph.var_nodes.len();
    let n = n_var + graph.cut_nodes.len();
    let mut adj = vec![Vec::new(); n];
    for e in &graph.edges {
        let c = n_var + e.cut;
        adj[e.var].push((c, e.weight));
        adj[c].push((e.var, e.weight));
    }
    adj
}

fn forward_cached(params: &PolicyParams, graph: &BipartiteGraph) -> ForwardCache {
    let adjacency = build_adjacency(graph);
    let n = adjacency.len();

    let mut h0 = Vec::with_capacity(n);
    for feat in graph.var_nodes.iter().chain(graph.cut_nodes.iter()) {
        h0.push(DVector::from_row_slice(feat));
    }

    let mut activations = vec![h0];
    let mut masks = Vec::new();
    let mut agg0 = Vec::new();
    let mut agg1 = Vec::new();

    for layer in &params.ecc {
        let h = activations.last().expect("input present");
        let d_in = layer.w_root.ncols();
        let mut m0 = vec![DVector::zeros(d_in); n];
        let mut m1 = vec![DVector::zeros(d_in); n];
        for v in 0..n {
            let deg = adjacency[v].len();
            if deg == 0 {
                continue;
            }
            let c = 1.0 / deg as f64;
            for (u, w) in &adjacency[v] {
                m0[v].axpy(c, &h[*u], 1.0);
                m1[v].axpy(c * w, &h[*u], 1.0);
            }
        }
        let mut new_h = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for v in 0..n {
            let mut z = &layer.w_root * &h[v] + &layer.bias;
            if !adjacency[v].is_empty() {
                z += &layer.w0 * &m0[v] + &layer.w1 * &m1[v];
            }
            let m = z.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
            new_h.push(z.component_mul(&m));
            mask.push(m);
        }
        activations.push(new_h);
        masks.push(mask);
        agg0.push(m0);
        agg1.push(m1);
    }

    let last = activations.last().expect("layers ran");
    let width = params
        .descriptor
        .ecc_hidden
        .last()
        .copied()
        .unwrap_or(params.descriptor.input_dim);
    let mut pooled = DVector::zeros(width);
    for h in last {
        pooled += h;
    }

    let mut dense_in = vec![pooled.clone()];
    let mut dense_masks = Vec::new();
    for layer in &params.dense {
        let z = &layer.w * dense_in.last().expect("input") + &layer.bias;
        let m = z.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        dense_in.push(z.component_mul(&m));
        dense_masks.push(m);
    }
    let outputs = &params.output.w * dense_in.last().expect("input") + &params.output.bias;

    ForwardCache {
        adjacency,
        activations,
        masks,
        agg0,
        agg1,
        dense_in,
        dense_masks,
        outputs,
    }
}

/// Raw network outputs: logits for the combination head, pre-sigmoid values
/// for the independent head.
pub fn forward(params: &PolicyParams, graph: &BipartiteGraph) -> DVector<f64> {
    forward_cached(params, graph).outputs
}

/// Backpropagates from an output gradient through the cached forward pass.
fn backward(params: &PolicyParams, cache: &ForwardCache, d_out: &DVector<f64>) -> PolicyGrads {
    let mut grads = PolicyGrads::zeros_like(params);

    // Output layer.
    let last_dense = cache.dense_in.last().expect("dense input");
    grads.output.w.ger(1.0, d_out, last_dense, 1.0);
    grads.output.bias += d_out;
    let mut d_hidden = params.output.w.transpose() * d_out;

    // Hidden dense layers, in reverse.
    for (idx, layer) in params.dense.iter().enumerate().rev() {
        let dz = d_hidden.component_mul(&cache.dense_masks[idx]);
        grads.dense[idx].w.ger(1.0, &dz, &cache.dense_in[idx], 1.0);
        grads.dense[idx].bias += &dz;
        d_hidden = layer.w.transpose() * dz;
    }

    // Sum pooling broadcasts the gradient to every node.
    let n = cache.adjacency.len();
    let mut d_nodes: Vec<DVector<f64>> = vec![d_hidden; n];

    for (idx, layer) in params.ecc.iter().enumerate().rev() {
        let h_prev = &cache.activations[idx];
        let d_in = layer.w_root.ncols();
        let mut d_prev = vec![DVector::zeros(d_in); n];
        let w_root_t = layer.w_root.transpose();
        let w0_t = layer.w0.transpose();
        let w1_t = layer.w1.transpose();
        for v in 0..n {
            let dz = d_nodes[v].component_mul(&cache.masks[idx][v]);
            grads.ecc[idx].w_root.ger(1.0, &dz, &h_prev[v], 1.0);
            grads.ecc[idx].bias += &dz;
            d_prev[v] += &w_root_t * &dz;
            let deg = cache.adjacency[v].len();
            if deg == 0 {
                continue;
            }
            grads.ecc[idx].w0.ger(1.0, &dz, &cache.agg0[idx][v], 1.0);
            grads.ecc[idx].w1.ger(1.0, &dz, &cache.agg1[idx][v], 1.0);
            let t0 = &w0_t * &dz;
            let t1 = &w1_t * &dz;
            let c = 1.0 / deg as f64;
            for (u, w) in &cache.adjacency[v] {
                d_prev[*u].axpy(c, &t0, 1.0);
                d_prev[*u].axpy(c * w, &t1, 1.0);
            }
        }
        d_nodes = d_prev;
    }

    grads
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// Plain cross-entropy against the expert index (or per-variable binary
    /// cross-entropy for the independent head).
    Stage1,
    /// Logits shifted by `-omega * s_j` before the softmax, where `s_j` is
    /// the total feasibility-cut violation of admissible assignment `j`.
    /// The graph layers are frozen in this mode. The independent head has
    /// no per-assignment logits to adjust, so it falls back to its stage-1
    /// loss.
    Stage2 { omega: f64 },
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let exps = logits.map(|l| (l - max).exp());
    let total: f64 = exps.iter().sum();
    exps / total
}

fn log_sum_exp(logits: &DVector<f64>) -> f64 {
    let max = logits.max();
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Loss and exact parameter gradients on one sample.
pub fn loss_and_grad(
    params: &PolicyParams,
    sample: &DatasetSample,
    mode: LossMode,
    admissible: &[Assignment],
) -> (f64, PolicyGrads) {
    let cache = forward_cached(params, &sample.graph);
    let outputs = &cache.outputs;

    let (loss, d_out) = match params.descriptor.head {
        HeadKind::Combination => {
            let mut adjusted = outputs.clone();
            if let LossMode::Stage2 { omega } = mode {
                let rows: Vec<(f64, [f64; NUM_Y])> = sample
                    .feasibility_cuts
                    .iter()
                    .map(|r| (r.alpha, r.beta))
                    .collect();
                let scores = scores_from_rows(&rows, admissible);
                for (a, s) in adjusted.iter_mut().zip(scores.iter()) {
                    *a -= omega * s;
                }
            }
            let target = sample.label_index;
            let loss = log_sum_exp(&adjusted) - adjusted[target];
            let mut d = softmax(&adjusted);
            d[target] -= 1.0;
            (loss, d)
        }
        HeadKind::Independent => {
            // Binary cross-entropy with logits, summed over the variables.
            let bits = admissible[sample.label_index].as_f64();
            let mut loss = 0.0;
            let mut d = DVector::zeros(outputs.len());
            for i in 0..outputs.len() {
                let o = outputs[i];
                let t = bits[i];
                loss += o.max(0.0) - o * t + (-o.abs()).exp().ln_1p();
                d[i] = 1.0 / (1.0 + (-o).exp()) - t;
            }
            (loss, d)
        }
    };

    let mut grads = backward(params, &cache, &d_out);
    if matches!(mode, LossMode::Stage2 { .. }) {
        grads.freeze_ecc();
    }
    (loss, grads)
}

/// Combination-head prediction: softmax probabilities over the admissible
/// assignments and the argmax index (first index on exact ties).
pub fn predict(
    params: &PolicyParams,
    graph: &BipartiteGraph,
    admissible: &[Assignment],
) -> Result<(usize, Vec<f64>), PolicyError> {
    if params.descriptor.head != HeadKind::Combination {
        return Err(PolicyError::WrongHead {
            found: params.descriptor.head,
            expected: HeadKind::Combination,
        });
    }
    debug_assert_eq!(params.descriptor.n_outputs, admissible.len());
    let logits = forward(params, graph);
    let probs = softmax(&logits);
    let mut best = 0;
    for j in 1..probs.len() {
        if probs[j] > probs[best] {
            best = j;
        }
    }
    Ok((best, probs.iter().copied().collect()))
}

/// Independent-head prediction with the dead-zone thresholds: any output in
/// the open band rejects the whole prediction.
pub fn independent_predict(
    params: &PolicyParams,
    graph: &BipartiteGraph,
    thresholds: (f64, f64),
) -> Result<Option<Assignment>, PolicyError> {
    if params.descriptor.head != HeadKind::Independent {
        return Err(PolicyError::WrongHead {
            found: params.descriptor.head,
            expected: HeadKind::Independent,
        });
    }
    let raw = forward(params, graph);
    let mut bits = [0u8; NUM_Y];
    for i in 0..NUM_Y {
        let p = 1.0 / (1.0 + (-raw[i]).exp());
        if p >= thresholds.1 {
            bits[i] = 1;
        } else if p <= thresholds.0 {
            bits[i] = 0;
        } else {
            return Ok(None);
        }
    }
    Ok(Some(Assignment(bits)))
}

/// Adam state; moment vectors are laid out in the tensor enumeration order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }
}

/// One Adam update with bias correction. A zero gradient on fresh state
/// leaves the parameter bits untouched.
pub fn adam_step(state: &mut OptimizerState, params: &mut PolicyParams, grads: &PolicyGrads) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let grad_tensors = grads.tensors();
    for (idx, (name, slice)) in params.tensors_mut().into_iter().enumerate() {
        let (gname, g) = &grad_tensors[idx];
        debug_assert_eq!(&name, gname);
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..slice.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            slice[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    /// Column-major element order.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    descriptor: Descriptor,
    scaling: Scaling,
    stages: Vec<String>,
    tensors: Vec<TensorRecord>,
}

fn expected_shapes(descriptor: &Descriptor) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut d_in = descriptor.input_dim;
    for (i, &d_out) in descriptor.ecc_hidden.iter().enumerate() {
        out.push((format!("ecc{i}.w_root"), d_out, d_in));
        out.push((format!("ecc{i}.w0"), d_out, d_in));
        out.push((format!("ecc{i}.w1"), d_out, d_in));
        out.push((format!("ecc{i}.bias"), d_out, 1));
        d_in = d_out;
    }
    for (i, &d_out) in descriptor.dense.iter().enumerate() {
        out.push((format!("dense{i}.w"), d_out, d_in));
        out.push((format!("dense{i}.bias"), d_out, 1));
        d_in = d_out;
    }
    out.push(("out.w".to_string(), descriptor.n_outputs, d_in));
    out.push(("out.bias".to_string(), descriptor.n_outputs, 1));
    out
}

pub fn save_params(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let shapes = expected_shapes(&params.descriptor);
    let tensors: Vec<TensorRecord> = params
        .tensors()
        .into_iter()
        .zip(shapes)
        .map(|((name, data), (ename, rows, cols))| {
            debug_assert_eq!(name, ename);
            TensorRecord {
                name,
                rows,
                cols,
                data: data.to_vec(),
            }
        })
        .collect();
    let file = ModelFile {
        schema: MODEL_SCHEMA.to_string(),
        descriptor: params.descriptor.clone(),
        scaling: params.scaling.clone(),
        stages: params.stages.clone(),
        tensors,
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("model serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<PolicyParams, PolicyError> {
    let err = |message: String| PolicyError::Model {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile =
        serde_json::from_slice(&bytes).map_err(|e| err(format!("parse error: {e}")))?;
    if file.schema != MODEL_SCHEMA {
        return Err(err(format!(
            "schema {:?}, expected {MODEL_SCHEMA:?}",
            file.schema
        )));
    }
    if file.descriptor.head == HeadKind::Independent && file.descriptor.n_outputs != NUM_Y {
        return Err(err(format!(
            "independent head must have {NUM_Y} outputs, found {}",
            file.descriptor.n_outputs
        )));
    }
    let expected = expected_shapes(&file.descriptor);
    if file.tensors.len() != expected.len() {
        return Err(err(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    let mut mats = Vec::new();
    for (rec, (name, rows, cols)) in file.tensors.iter().zip(expected) {
        if rec.name != name || rec.rows != rows || rec.cols != cols {
            return Err(err(format!(
                "tensor {:?} has shape {}x{}, expected {name:?} {rows}x{cols}",
                rec.name, rec.rows, rec.cols
            )));
        }
        if rec.data.len() != rows * cols {
            return Err(err(format!(
                "tensor {:?} has {} elements, expected {}",
                rec.name,
                rec.data.len(),
                rows * cols
            )));
        }
        if !rec.data.iter().all(|x| x.is_finite()) {
            return Err(err(format!("tensor {:?} has non-finite entries", rec.name)));
        }
        mats.push(DMatrix::from_column_slice(rows, cols, &rec.data));
    }

    let mut iter = mats.into_iter();
    let mut ecc = Vec::new();
    for _ in 0..file.descriptor.ecc_hidden.len() {
        let w_root = iter.next().expect("checked");
        let w0 = iter.next().expect("checked");
        let w1 = iter.next().expect("checked");
        let bias = DVector::from_column_slice(iter.next().expect("checked").as_slice());
        ecc.push(EccLayer {
            w_root,
            w0,
            w1,
            bias,
        });
    }
    let mut dense = Vec::new();
    for _ in 0..file.descriptor.dense.len() {
        let w = iter.next().expect("checked");
        let bias = DVector::from_column_slice(iter.next().expect("checked").as_slice());
        dense.push(DenseLayer { w, bias });
    }
    let w = iter.next().expect("checked");
    let bias = DVector::from_column_slice(iter.next().expect("checked").as_slice());

    Ok(PolicyParams {
        descriptor: file.descriptor,
        scaling: file.scaling,
        ecc,
        dense,
        output: DenseLayer { w, bias },
        stages: file.stages,
    })
}
