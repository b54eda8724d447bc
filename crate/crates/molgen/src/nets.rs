//! Policy and discriminator networks over molecular graphs.
//!
//! The encoder is an edge-conditioned graph convolution: each layer
//! computes, per bond type i, `ReLU(D_i^{-1/2} (E_i + I) D_i^{-1/2} H W_i)`
//! and then aggregates the per-type results (sum / mean / max / concat).
//! The source formulation applies ReLU before aggregating, and that order
//! is kept literally here even though some GCN variants aggregate first.
//! Optional per-graph batch normalization follows each layer.
//!
//! On top of the encoder sit four action heads (first node, second node
//! conditioned on the first, edge type, stop), a value head, and — with
//! separate encoder parameters — a discriminator that scores how corpus-like
//! a molecule looks. All heads are two-layer ReLU perceptrons.
//!
//! Parameters live in a flat name -> tensor store:
//! `gcn.l{l}.w{i}`, `gcn.l{l}.bn.{gamma,beta,running_mean,running_var}`,
//! `head.{first,second,edge,stop}.{w1,b1,w2,b2}`, `value.*`, and for the
//! discriminator `gcn.*` plus `out.*`.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::env::{ActionVec, ExtendedIndex};
use crate::molgraph::{BondType, MolGraph, NODE_FEATURE_DIM, NUM_ATOM_TYPES, NUM_BOND_TYPES};
use crate::tensor::{
    batch_norm, glorot_uniform, sigmoid_stable, softplus_stable, BnMode, ParamStore, Tape,
    Tensor, TensorError, Val,
};

/// How per-edge-type messages are combined, and how node embeddings are
/// pooled into a graph embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Mean,
    Max,
    Concat,
}

impl Aggregation {
    pub fn parse(s: &str) -> Result<Aggregation, NetError> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "concat" => Ok(Aggregation::Concat),
            other => Err(NetError::Config(format!(
                "unknown aggregation '{other}' (expected sum, mean, max, or concat)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Concat => "concat",
        }
    }
}

/// Network architecture settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GcpnConfig {
    /// Graph-convolution layers.
    pub layers: usize,
    /// Node embedding width k.
    pub embed_dim: usize,
    /// Message aggregation across edge types.
    pub agg: Aggregation,
    /// Per-graph batch normalization after each layer.
    pub batch_norm: bool,
    /// Atom cap of the paired environment; fixes the padded row count.
    pub atom_cap: usize,
}

impl Default for GcpnConfig {
    fn default() -> Self {
        GcpnConfig {
            layers: 3,
            embed_dim: 64,
            agg: Aggregation::Sum,
            batch_norm: true,
            atom_cap: crate::env::DEFAULT_ATOM_CAP,
        }
    }
}

impl GcpnConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers == 0 || self.embed_dim == 0 || self.atom_cap == 0 {
            return Err(NetError::Config(format!(
                "layers, embed_dim, and atom_cap must be positive (got {}, {}, {})",
                self.layers, self.embed_dim, self.atom_cap
            )));
        }
        Ok(())
    }

    /// Width of a layer's output: concat keeps all edge-type blocks.
    pub fn embed_width(&self) -> usize {
        match self.agg {
            Aggregation::Concat => NUM_BOND_TYPES * self.embed_dim,
            _ => self.embed_dim,
        }
    }

    /// Input width of layer `l`.
    fn layer_input_width(&self, l: usize) -> usize {
        if l == 0 {
            NODE_FEATURE_DIM
        } else {
            self.embed_width()
        }
    }

    /// Rows of a fully padded extended graph: atom cap plus scaffold count.
    pub fn pad_rows(&self) -> usize {
        self.atom_cap + NUM_ATOM_TYPES
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("network configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

fn init_gcn(store: &mut ParamStore, cfg: &GcpnConfig, rng: &mut impl Rng) {
    for l in 0..cfg.layers {
        let k_in = cfg.layer_input_width(l);
        for i in 0..NUM_BOND_TYPES {
            store.insert(
                format!("gcn.l{l}.w{i}"),
                glorot_uniform(k_in, cfg.embed_dim, rng),
            );
        }
        if cfg.batch_norm {
            let w = cfg.embed_width();
            store.insert(
                format!("gcn.l{l}.bn.gamma"),
                Tensor::new(vec![1, w], vec![1.0; w]).expect("shape"),
            );
            store.insert(format!("gcn.l{l}.bn.beta"), Tensor::zeros(vec![1, w]));
            store.insert(
                format!("gcn.l{l}.bn.running_mean"),
                Tensor::zeros(vec![1, w]),
            );
            store.insert(
                format!("gcn.l{l}.bn.running_var"),
                Tensor::new(vec![1, w], vec![1.0; w]).expect("shape"),
            );
        }
    }
}

fn init_mlp(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    d_out: usize,
    zero_output: bool,
    rng: &mut impl Rng,
) {
    store.insert(format!("{prefix}.w1"), glorot_uniform(d_in, hidden, rng));
    store.insert(format!("{prefix}.b1"), Tensor::zeros(vec![1, hidden]));
    let w2 = if zero_output {
        Tensor::zeros(vec![hidden, d_out])
    } else {
        glorot_uniform(hidden, d_out, rng)
    };
    store.insert(format!("{prefix}.w2"), w2);
    store.insert(format!("{prefix}.b2"), Tensor::zeros(vec![1, d_out]));
}

/// Fresh policy parameters: GCN encoder, four action heads, value head.
/// The stop and value output layers start at zero so the initial policy
/// stops with probability 1/2 and the initial value estimate is 0.
pub fn init_policy_params(cfg: &GcpnConfig, rng: &mut impl Rng) -> Result<ParamStore, NetError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_gcn(&mut store, cfg, rng);
    let dx = cfg.embed_width();
    let k = cfg.embed_dim;
    init_mlp(&mut store, "head.first", dx, k, 1, false, rng);
    init_mlp(&mut store, "head.second", 2 * dx, k, 1, false, rng);
    init_mlp(&mut store, "head.edge", 2 * dx, k, NUM_BOND_TYPES, false, rng);
    init_mlp(&mut store, "head.stop", dx, k, 2, true, rng);
    init_mlp(&mut store, "value", dx, k, 1, true, rng);
    Ok(store)
}

/// Fresh discriminator parameters: its own GCN encoder plus a scoring
/// perceptron whose output layer starts at zero, so every molecule scores
/// exactly 0.5 before training.
pub fn init_discriminator_params(
    cfg: &GcpnConfig,
    rng: &mut impl Rng,
) -> Result<ParamStore, NetError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_gcn(&mut store, cfg, rng);
    init_mlp(&mut store, "out", cfg.embed_width(), cfg.embed_dim, 1, true, rng);
    Ok(store)
}

// ---------------------------------------------------------------------------
// Tape plumbing
// ---------------------------------------------------------------------------

/// Trainable parameters copied onto a tape, addressable by name. Running
/// batch-norm moments are buffers, not parameters, and stay in the store.
pub struct TapeParams {
    vals: BTreeMap<String, Val>,
}

impl TapeParams {
    /// Copy every trainable entry of the store onto the tape as a leaf.
    pub fn load(tape: &mut Tape, store: &ParamStore) -> TapeParams {
        let mut vals = BTreeMap::new();
        for (name, tensor) in store.iter() {
            if name.contains(".running_") {
                continue;
            }
            vals.insert(name.clone(), tape.param(tensor.clone()));
        }
        TapeParams { vals }
    }

    pub fn get(&self, name: &str) -> Result<Val, NetError> {
        self.vals
            .get(name)
            .copied()
            .ok_or_else(|| NetError::Config(format!("missing parameter '{name}'")))
    }

    /// Iterate (name, leaf) pairs for gradient extraction.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Val)> {
        self.vals.iter()
    }
}

/// Symmetrically normalized adjacency with self-loops for one bond type,
/// padded to `rows` (padding rows keep an isolated self-loop).
fn normalized_adjacency(g: &MolGraph, t: BondType, rows: usize) -> Tensor {
    let n = g.n();
    let mut e = vec![0.0; rows * rows];
    for u in 0..rows {
        e[u * rows + u] = 1.0;
    }
    for u in 0..n {
        for (v, b) in g.neighbors(u) {
            if b == t {
                e[u * rows + v] = 1.0;
            }
        }
    }
    let mut inv_sqrt_deg = vec![0.0; rows];
    for (u, d) in inv_sqrt_deg.iter_mut().enumerate() {
        let deg: f64 = e[u * rows..(u + 1) * rows].iter().sum();
        *d = deg.powf(-0.5);
    }
    for u in 0..rows {
        for v in 0..rows {
            e[u * rows + v] *= inv_sqrt_deg[u] * inv_sqrt_deg[v];
        }
    }
    Tensor::new(vec![rows, rows], e).expect("square shape")
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Run the graph-convolution encoder over a graph, optionally padded with
/// zero rows up to `pad_to`. Returns the `rows x embed_width` node
/// embedding matrix. Padding rows never influence real rows: they carry no
/// bonds, and batch-norm statistics weight them at zero.
#[allow(clippy::too_many_arguments)]
pub fn node_embeddings(
    tape: &mut Tape,
    tp: &TapeParams,
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g: &MolGraph,
    pad_to: Option<usize>,
    mode: BnMode,
) -> Result<Val, NetError> {
    cfg.validate()?;
    let n = g.n();
    let rows = pad_to.unwrap_or(n);
    if rows < n {
        return Err(NetError::Contract(format!(
            "pad_to {rows} is smaller than the graph ({n} nodes)"
        )));
    }

    // H^(0): node features, zero on padding rows.
    let feats = g.node_features();
    let mut h0 = vec![0.0; rows * NODE_FEATURE_DIM];
    h0[..n * NODE_FEATURE_DIM].copy_from_slice(feats.data());
    let mut h = tape.constant(Tensor::new(vec![rows, NODE_FEATURE_DIM], h0)?);

    // Normalized per-edge-type adjacencies are structure, not parameters.
    let adj: Vec<Val> = BondType::ALL
        .iter()
        .map(|&t| tape.constant(normalized_adjacency(g, t, rows)))
        .collect();

    // Real rows share batch-norm statistics equally; pads are excluded.
    let row_weights: Vec<f64> = (0..rows)
        .map(|u| if u < n { 1.0 / n as f64 } else { 0.0 })
        .collect();

    for l in 0..cfg.layers {
        let mut terms = Vec::with_capacity(NUM_BOND_TYPES);
        for (i, &a) in adj.iter().enumerate() {
            let w = tp.get(&format!("gcn.l{l}.w{i}"))?;
            let hw = tape.matmul(h, w)?;
            let prop = tape.matmul(a, hw)?;
            terms.push(tape.relu(prop));
        }
        let mut out = match cfg.agg {
            Aggregation::Sum | Aggregation::Mean => {
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = tape.add(acc, t)?;
                }
                if cfg.agg == Aggregation::Mean {
                    acc = tape.scale(acc, 1.0 / NUM_BOND_TYPES as f64);
                }
                acc
            }
            Aggregation::Max => {
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = tape.max2(acc, t)?;
                }
                acc
            }
            Aggregation::Concat => {
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = tape.concat_cols(acc, t)?;
                }
                acc
            }
        };
        if cfg.batch_norm {
            let gamma = tp.get(&format!("gcn.l{l}.bn.gamma"))?;
            let beta = tp.get(&format!("gcn.l{l}.bn.beta"))?;
            // Split borrows: moments are separate store entries.
            let mut mean = store.get_mut(&format!("gcn.l{l}.bn.running_mean"))?.clone();
            let mut var = store.get_mut(&format!("gcn.l{l}.bn.running_var"))?.clone();
            out = batch_norm(
                tape,
                out,
                gamma,
                beta,
                &mut mean,
                &mut var,
                BN_EPS,
                BN_MOMENTUM,
                mode,
                Some(&row_weights),
            )?;
            if mode == BnMode::Train {
                *store.get_mut(&format!("gcn.l{l}.bn.running_mean"))? = mean;
                *store.get_mut(&format!("gcn.l{l}.bn.running_var"))? = var;
            }
        }
        h = out;
    }
    Ok(h)
}

/// Pool a set of node-embedding rows into a single graph embedding. Uses
/// the configured aggregation; concat degenerates to sum because the node
/// count varies.
fn readout_rows(
    tape: &mut Tape,
    x: Val,
    indices: &[usize],
    agg: Aggregation,
) -> Result<Val, NetError> {
    let used = tape.gather_rows(x, indices)?;
    let out = match agg {
        Aggregation::Sum | Aggregation::Concat => tape.sum_rows(used)?,
        Aggregation::Mean => tape.mean_rows(used)?,
        Aggregation::Max => tape.max_rows(used)?,
    };
    Ok(out)
}

/// Pool node embeddings over the first `n_used` rows.
fn readout(
    tape: &mut Tape,
    x: Val,
    n_used: usize,
    agg: Aggregation,
) -> Result<Val, NetError> {
    let idx: Vec<usize> = (0..n_used).collect();
    readout_rows(tape, x, &idx, agg)
}

/// Two-layer ReLU perceptron applied row-wise.
fn mlp(tape: &mut Tape, tp: &TapeParams, prefix: &str, x: Val) -> Result<Val, NetError> {
    let w1 = tp.get(&format!("{prefix}.w1"))?;
    let b1 = tp.get(&format!("{prefix}.b1"))?;
    let w2 = tp.get(&format!("{prefix}.w2"))?;
    let b2 = tp.get(&format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, w2)?;
    Ok(tape.add_row(o, b2)?)
}

// ---------------------------------------------------------------------------
// Action heads
// ---------------------------------------------------------------------------

/// Flip a column of per-row scores into a single categorical logit row.
fn as_logit_row(tape: &mut Tape, scores: Val) -> Result<Val, NetError> {
    let rows = tape.value(scores).rows();
    Ok(tape.reshape(scores, vec![1, rows])?)
}

/// Pick one entry of a `1 x n` row as a `1 x 1` scalar.
fn pick(tape: &mut Tape, row: Val, j: usize) -> Result<Val, NetError> {
    let n = tape.value(row).cols();
    let col = tape.reshape(row, vec![n, 1])?;
    Ok(tape.gather_rows(col, &[j])?)
}

fn mask_first(idx: ExtendedIndex, rows: usize) -> Vec<bool> {
    (0..rows).map(|j| j < idx.n).collect()
}

fn mask_second(idx: ExtendedIndex, rows: usize, first: usize) -> Vec<bool> {
    (0..rows).map(|j| j < idx.total() && j != first).collect()
}

struct HeadPass<'a> {
    cfg: &'a GcpnConfig,
    idx: ExtendedIndex,
    x: Val,
    rows: usize,
}

impl HeadPass<'_> {
    fn stop_logits(&self, tape: &mut Tape, tp: &TapeParams) -> Result<Val, NetError> {
        let pooled = readout(tape, self.x, self.idx.total(), self.cfg.agg)?;
        mlp(tape, tp, "head.stop", pooled)
    }

    fn first_logits(&self, tape: &mut Tape, tp: &TapeParams) -> Result<Val, NetError> {
        let scores = mlp(tape, tp, "head.first", self.x)?;
        as_logit_row(tape, scores)
    }

    fn second_logits(&self, tape: &mut Tape, tp: &TapeParams, first: usize) -> Result<Val, NetError> {
        let xf = tape.gather_rows(self.x, &[first])?;
        let xf_rows = tape.broadcast_row(xf, self.rows)?;
        let pairs = tape.concat_cols(xf_rows, self.x)?;
        let scores = mlp(tape, tp, "head.second", pairs)?;
        as_logit_row(tape, scores)
    }

    fn edge_logits(
        &self,
        tape: &mut Tape,
        tp: &TapeParams,
        first: usize,
        second: usize,
    ) -> Result<Val, NetError> {
        let pair = tape.gather_rows(self.x, &[first, second])?;
        let xf = tape.gather_rows(pair, &[0])?;
        let xs = tape.gather_rows(pair, &[1])?;
        let cat = tape.concat_cols(xf, xs)?;
        mlp(tape, tp, "head.edge", cat)
    }

    fn value(&self, tape: &mut Tape, tp: &TapeParams) -> Result<Val, NetError> {
        let pooled = readout(tape, self.x, self.idx.total(), self.cfg.agg)?;
        mlp(tape, tp, "value", pooled)
    }
}

fn head_pass<'a>(
    tape: &mut Tape,
    tp: &TapeParams,
    store: &mut ParamStore,
    cfg: &'a GcpnConfig,
    g_ext: &MolGraph,
    idx: ExtendedIndex,
    mode: BnMode,
    pad_to: Option<usize>,
) -> Result<HeadPass<'a>, NetError> {
    if g_ext.n() != idx.total() {
        return Err(NetError::Contract(format!(
            "extended graph has {} rows but the index map says {}",
            g_ext.n(),
            idx.total()
        )));
    }
    if idx.n == 0 {
        return Err(NetError::Contract("empty state".into()));
    }
    let x = node_embeddings(tape, tp, store, cfg, g_ext, pad_to, mode)?;
    let rows = pad_to.unwrap_or(g_ext.n());
    Ok(HeadPass { cfg, idx, x, rows })
}

/// The four action distributions for a state, with the second-node and
/// edge heads conditioned on the provided (first, second) choice.
/// Probabilities of masked entries are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistributions {
    /// Over {continue, stop}.
    pub f_stop: Vec<f64>,
    /// Over real molecule nodes (length n of the padded row count; scaffold
    /// and padding entries are zero).
    pub f_first: Vec<f64>,
    /// Over extended rows excluding `first` (padding entries zero).
    pub f_second: Vec<f64>,
    /// Over bond types.
    pub f_edge: Vec<f64>,
}

/// Forward-only evaluation of all four heads (eval-mode batch norm).
pub fn action_distributions(
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g_ext: &MolGraph,
    idx: ExtendedIndex,
    first: usize,
    second: usize,
) -> Result<ActionDistributions, NetError> {
    if first >= idx.n || second >= idx.total() {
        return Err(NetError::Contract(format!(
            "conditioning out of range: first={first}, second={second}, n={}, total={}",
            idx.n,
            idx.total()
        )));
    }
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, store);
    let pass = head_pass(&mut tape, &tp, store, cfg, g_ext, idx, BnMode::Eval, None)?;

    let stop = pass.stop_logits(&mut tape, &tp)?;
    let f_stop = tape.softmax_rows(stop, None)?;
    let firsts = pass.first_logits(&mut tape, &tp)?;
    let fm = mask_first(idx, pass.rows);
    let f_first = tape.softmax_rows(firsts, Some(&fm))?;
    let seconds = pass.second_logits(&mut tape, &tp, first)?;
    let sm = mask_second(idx, pass.rows, first);
    let f_second = tape.softmax_rows(seconds, Some(&sm))?;
    let edges = pass.edge_logits(&mut tape, &tp, first, second)?;
    let f_edge = tape.softmax_rows(edges, None)?;

    Ok(ActionDistributions {
        f_stop: tape.value(f_stop).data().to_vec(),
        f_first: tape.value(f_first).data().to_vec(),
        f_second: tape.value(f_second).data().to_vec(),
        f_edge: tape.value(f_edge).data().to_vec(),
    })
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_support = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_support = j;
            acc += p;
            if draw < acc {
                return j;
            }
        }
    }
    // Rounding left a sliver of probability unassigned: take the last
    // supported entry.
    last_support
}

/// Sample a composite action: stop first; if continuing, first node, then
/// second node conditioned on it, then edge type. Returns the action and
/// the log-probability of the realized components.
pub fn sample_action(
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g_ext: &MolGraph,
    idx: ExtendedIndex,
    rng: &mut impl Rng,
) -> Result<(ActionVec, f64), NetError> {
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, store);
    let pass = head_pass(&mut tape, &tp, store, cfg, g_ext, idx, BnMode::Eval, None)?;

    let stop_logits = pass.stop_logits(&mut tape, &tp)?;
    let f_stop = tape.softmax_rows(stop_logits, None)?;
    let stop_p = tape.value(f_stop).data().to_vec();
    let stop_choice = sample_categorical(&stop_p, rng);
    if stop_choice == 1 {
        return Ok((ActionVec::stop(), stop_p[1].ln()));
    }
    let mut log_prob = stop_p[0].ln();

    let first_logits = pass.first_logits(&mut tape, &tp)?;
    let fm = mask_first(idx, pass.rows);
    let f_first = tape.softmax_rows(first_logits, Some(&fm))?;
    let first = sample_categorical(tape.value(f_first).data(), rng);
    log_prob += tape.value(f_first).data()[first].ln();

    let second_logits = pass.second_logits(&mut tape, &tp, first)?;
    let sm = mask_second(idx, pass.rows, first);
    let f_second = tape.softmax_rows(second_logits, Some(&sm))?;
    let second = sample_categorical(tape.value(f_second).data(), rng);
    log_prob += tape.value(f_second).data()[second].ln();

    let edge_logits = pass.edge_logits(&mut tape, &tp, first, second)?;
    let f_edge = tape.softmax_rows(edge_logits, None)?;
    let edge = sample_categorical(tape.value(f_edge).data(), rng);
    log_prob += tape.value(f_edge).data()[edge].ln();

    Ok((ActionVec::link(first, second, edge), log_prob))
}

/// Differentiable quantities for one (state, action) pair.
pub struct PolicyEval {
    /// Log-probability of the realized action components.
    pub log_prob: Val,
    /// Entropy along the realized conditioning path: stop actions
    /// contribute the stop head's entropy only; link actions add the
    /// first, second, and edge head entropies.
    pub entropy: Val,
    /// State value estimate.
    pub value: Val,
}

/// Entropy of a categorical head: -sum p * log p over its support. Masked
/// entries hold exact zeros in the softmax and zeros in the log-softmax
/// buffer, so the product excludes them.
fn head_entropy(
    tape: &mut Tape,
    logits: Val,
    mask: Option<&[bool]>,
) -> Result<Val, NetError> {
    let p = tape.softmax_rows(logits, mask)?;
    let lp = tape.log_softmax_rows(logits, mask)?;
    let plp = tape.mul(p, lp)?;
    let s = tape.sum_all(plp);
    Ok(tape.scale(s, -1.0))
}

/// Differentiable log-probability, entropy, and value for a (state,
/// action) pair, on the caller's tape.
#[allow(clippy::too_many_arguments)]
pub fn policy_eval(
    tape: &mut Tape,
    tp: &TapeParams,
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g_ext: &MolGraph,
    idx: ExtendedIndex,
    action: &ActionVec,
    mode: BnMode,
    pad_to: Option<usize>,
) -> Result<PolicyEval, NetError> {
    if !action.stop && (action.first >= idx.n || action.second >= idx.total()) {
        return Err(NetError::Contract(format!(
            "action ({}, {}) outside the masks (n={}, total={})",
            action.first,
            action.second,
            idx.n,
            idx.total()
        )));
    }
    let pass = head_pass(tape, tp, store, cfg, g_ext, idx, mode, pad_to)?;

    let stop_logits = pass.stop_logits(tape, tp)?;
    let stop_lp_row = tape.log_softmax_rows(stop_logits, None)?;
    let mut entropy = head_entropy(tape, stop_logits, None)?;

    let value = pass.value(tape, tp)?;

    if action.stop {
        let log_prob = pick(tape, stop_lp_row, 1)?;
        return Ok(PolicyEval {
            log_prob,
            entropy,
            value,
        });
    }

    let mut log_prob = pick(tape, stop_lp_row, 0)?;

    let first_logits = pass.first_logits(tape, tp)?;
    let fm = mask_first(idx, pass.rows);
    let first_lp = tape.log_softmax_rows(first_logits, Some(&fm))?;
    let t = pick(tape, first_lp, action.first)?;
    log_prob = tape.add(log_prob, t)?;
    let h = head_entropy(tape, first_logits, Some(&fm))?;
    entropy = tape.add(entropy, h)?;

    let second_logits = pass.second_logits(tape, tp, action.first)?;
    let sm = mask_second(idx, pass.rows, action.first);
    let second_lp = tape.log_softmax_rows(second_logits, Some(&sm))?;
    let t = pick(tape, second_lp, action.second)?;
    log_prob = tape.add(log_prob, t)?;
    let h = head_entropy(tape, second_logits, Some(&sm))?;
    entropy = tape.add(entropy, h)?;

    let edge_logits = pass.edge_logits(tape, tp, action.first, action.second)?;
    let edge_lp = tape.log_softmax_rows(edge_logits, None)?;
    let t = pick(tape, edge_lp, action.edge)?;
    log_prob = tape.add(log_prob, t)?;
    let h = head_entropy(tape, edge_logits, None)?;
    entropy = tape.add(entropy, h)?;

    Ok(PolicyEval {
        log_prob,
        entropy,
        value,
    })
}

/// Forward-only state value (eval-mode batch norm).
pub fn state_value(
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g_ext: &MolGraph,
    idx: ExtendedIndex,
) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, store);
    let pass = head_pass(&mut tape, &tp, store, cfg, g_ext, idx, BnMode::Eval, None)?;
    let v = pass.value(&mut tape, &tp)?;
    Ok(tape.value(v).item())
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// Differentiable discriminator logit for a molecule (no scaffold rows).
pub fn discriminator_logit(
    tape: &mut Tape,
    tp: &TapeParams,
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g: &MolGraph,
    mode: BnMode,
    pad_to: Option<usize>,
) -> Result<Val, NetError> {
    let x = node_embeddings(tape, tp, store, cfg, g, pad_to, mode)?;
    let pooled = readout(tape, x, g.n(), cfg.agg)?;
    mlp(tape, tp, "out", pooled)
}

/// Discriminator logits for a whole minibatch in one forward pass over the
/// disjoint union of the graphs. Normalization statistics are computed
/// across the full union, so a batch mixing structure classes stays
/// informative even when a single graph's node rows are all identical
/// (which per-graph normalization would wash out to zero).
pub fn discriminator_logits_batch(
    tape: &mut Tape,
    tp: &TapeParams,
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    graphs: &[&MolGraph],
    mode: BnMode,
) -> Result<Vec<Val>, NetError> {
    if graphs.is_empty() {
        return Err(NetError::Contract("empty discriminator batch".into()));
    }
    let (union, ranges) = MolGraph::disjoint_union(graphs);
    let x = node_embeddings(tape, tp, store, cfg, &union, None, mode)?;
    let mut logits = Vec::with_capacity(graphs.len());
    for range in &ranges {
        let idx: Vec<usize> = range.clone().collect();
        let pooled = readout_rows(tape, x, &idx, cfg.agg)?;
        logits.push(mlp(tape, tp, "out", pooled)?);
    }
    Ok(logits)
}

/// Probability the discriminator assigns to "this molecule comes from the
/// corpus". Strictly inside (0,1) for finite logits.
pub fn discriminator_score(
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g: &MolGraph,
) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, store);
    let logit = discriminator_logit(&mut tape, &tp, store, cfg, g, BnMode::Eval, None)?;
    Ok(sigmoid_stable(tape.value(logit).item()))
}

/// Clamp magnitude for the adversarial reward. At 2·ln 2 an untrained
/// discriminator (score 0.5, raw reward ln 2) lands exactly at the middle
/// of the clamp range, which the affine map sends to 0.
pub const DEFAULT_ADV_CLAMP: f64 = 2.0 * std::f64::consts::LN_2;

/// Adversarial reward in [-1, 1]: the generator-side GAN objective
/// `-log(1 - D(g))`, computed stably from the logit as softplus(logit),
/// clamped to [0, magnitude], then mapped affinely onto [-1, 1].
pub fn adversarial_reward(
    store: &mut ParamStore,
    cfg: &GcpnConfig,
    g: &MolGraph,
    magnitude: f64,
) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, store);
    let logit = discriminator_logit(&mut tape, &tp, store, cfg, g, BnMode::Eval, None)?;
    let raw = softplus_stable(tape.value(logit).item());
    let clamped = raw.clamp(0.0, magnitude);
    Ok(2.0 * clamped / magnitude - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::chemprops::PropertyFn;
    use crate::rng::{stream, STREAM_POLICY};
    use crate::smiles::parse;
    use crate::tensor::gradcheck::max_rel_err;

    fn tiny_cfg() -> GcpnConfig {
        GcpnConfig {
            layers: 2,
            embed_dim: 4,
            agg: Aggregation::Sum,
            batch_norm: true,
            atom_cap: 12,
        }
    }

    fn env12() -> Env {
        let cfg = EnvConfig::new(PropertyFn::MolecularWeight, (0.0, 100.0)).with_atom_cap(12);
        Env::new(cfg).unwrap()
    }

    fn extended(smiles: &str) -> (MolGraph, ExtendedIndex) {
        let env = env12();
        let s = env.reset(Some(&parse(smiles).unwrap())).unwrap();
        env.extended_graph(&s)
    }

    #[test]
    fn parameter_names_and_shapes_are_stable() {
        let cfg = tiny_cfg();
        let mut rng = stream(1, STREAM_POLICY);
        let store = init_policy_params(&cfg, &mut rng).unwrap();

        for l in 0..2 {
            for i in 0..3 {
                let w = store.get(&format!("gcn.l{l}.w{i}")).unwrap();
                let expect_in = if l == 0 { NODE_FEATURE_DIM } else { 4 };
                assert_eq!(w.rows(), expect_in);
                assert_eq!(w.cols(), 4);
            }
            assert_eq!(
                store.get(&format!("gcn.l{l}.bn.gamma")).unwrap().data(),
                &[1.0; 4]
            );
            assert_eq!(
                store.get(&format!("gcn.l{l}.bn.running_var")).unwrap().data(),
                &[1.0; 4]
            );
        }
        // Calibrated starts: stop, value (and discriminator out) zeroed.
        assert!(store.get("head.stop.w2").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.get("value.w2").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.get("head.first.w2").unwrap().data().iter().any(|&v| v != 0.0));
        assert_eq!(store.get("head.second.w1").unwrap().rows(), 8);
        assert_eq!(store.get("head.edge.w2").unwrap().cols(), 3);

        let disc = init_discriminator_params(&cfg, &mut rng).unwrap();
        assert!(disc.get("out.w2").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(disc.contains("gcn.l1.w2"));
    }

    #[test]
    fn concat_aggregation_widens_layer_inputs() {
        let cfg = GcpnConfig {
            agg: Aggregation::Concat,
            ..tiny_cfg()
        };
        let mut rng = stream(2, STREAM_POLICY);
        let store = init_policy_params(&cfg, &mut rng).unwrap();
        assert_eq!(store.get("gcn.l0.w0").unwrap().rows(), NODE_FEATURE_DIM);
        assert_eq!(store.get("gcn.l1.w0").unwrap().rows(), 12);
        assert_eq!(store.get("gcn.l1.bn.gamma").unwrap().cols(), 12);
        assert_eq!(store.get("head.first.w1").unwrap().rows(), 12);
        assert_eq!(store.get("head.second.w1").unwrap().rows(), 24);
    }

    #[test]
    fn single_node_embedding_matches_hand_computation() {
        // One layer, sum aggregation, no batch norm, single node: every
        // normalized adjacency is the 1x1 identity, so
        // X = sum_i ReLU(F W_i).
        let cfg = GcpnConfig {
            layers: 1,
            embed_dim: 4,
            agg: Aggregation::Sum,
            batch_norm: false,
            atom_cap: 12,
        };
        let mut rng = stream(3, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let g = parse("C").unwrap();

        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let x = node_embeddings(&mut tape, &tp, &mut store, &cfg, &g, None, BnMode::Eval).unwrap();
        let got = tape.value(x).data().to_vec();

        let f = g.node_features();
        let mut want = vec![0.0; 4];
        for i in 0..3 {
            let w = store.get(&format!("gcn.l0.w{i}")).unwrap();
            for c in 0..4 {
                let mut dot = 0.0;
                for d in 0..NODE_FEATURE_DIM {
                    dot += f.at(0, d) * w.at(d, c);
                }
                want[c] += dot.max(0.0);
            }
        }
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn bonded_pair_normalization_is_half() {
        // A single-bonded pair: for the single-bond slice, degrees are 2,
        // so every entry of the normalized adjacency is 1/2.
        let g = parse("CC").unwrap();
        let a = normalized_adjacency(&g, BondType::Single, 2);
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.at(r, c) - 0.5).abs() < 1e-15);
            }
        }
        // Other slices carry no bonds: identity.
        let d = normalized_adjacency(&g, BondType::Double, 2);
        assert_eq!(d.data(), &[1.0, 0.0, 0.0, 1.0]);
        // Padding rows are isolated self-loops.
        let p = normalized_adjacency(&g, BondType::Single, 3);
        assert_eq!(p.at(2, 2), 1.0);
        assert_eq!(p.at(0, 2), 0.0);
        assert_eq!(p.at(2, 0), 0.0);
    }

    fn permute_graph(g: &MolGraph, perm: &[usize]) -> MolGraph {
        // perm[new] = old
        let n = g.n();
        let atoms: Vec<u8> = perm.iter().map(|&o| g.atom(o) as u8).collect();
        let mut bonds = vec![None; n * n];
        for nu in 0..n {
            for nv in 0..n {
                bonds[nu * n + nv] = g.bond(perm[nu], perm[nv]);
            }
        }
        MolGraph::from_parts_unchecked(atoms, bonds)
    }

    #[test]
    fn embeddings_are_permutation_equivariant() {
        for (agg, bn, tol) in [
            (Aggregation::Sum, false, 1e-9),
            (Aggregation::Mean, false, 1e-9),
            (Aggregation::Max, false, 1e-9),
            (Aggregation::Concat, false, 1e-9),
            (Aggregation::Sum, true, 1e-6),
        ] {
            let cfg = GcpnConfig {
                agg,
                batch_norm: bn,
                ..tiny_cfg()
            };
            let mut rng = stream(4, STREAM_POLICY);
            let mut store = init_policy_params(&cfg, &mut rng).unwrap();
            let g = parse("CC(=O)O").unwrap();
            let perm = [2usize, 0, 3, 1];
            let pg = permute_graph(&g, &perm);

            let mut t1 = Tape::new();
            let tp1 = TapeParams::load(&mut t1, &store);
            let x1 = node_embeddings(&mut t1, &tp1, &mut store, &cfg, &g, None, BnMode::Eval)
                .unwrap();
            let mut t2 = Tape::new();
            let tp2 = TapeParams::load(&mut t2, &store);
            let x2 = node_embeddings(&mut t2, &tp2, &mut store, &cfg, &pg, None, BnMode::Eval)
                .unwrap();

            let a = tape_matrix(&t1, x1);
            let b = tape_matrix(&t2, x2);
            let w = cfg.embed_width();
            for new in 0..4 {
                for d in 0..w {
                    let diff = (b[new][d] - a[perm[new]][d]).abs();
                    assert!(diff < tol, "agg={agg:?} bn={bn} row {new} dim {d}: {diff}");
                }
            }
        }
    }

    fn tape_matrix(tape: &Tape, v: Val) -> Vec<Vec<f64>> {
        let t = tape.value(v);
        (0..t.rows())
            .map(|r| (0..t.cols()).map(|c| t.at(r, c)).collect())
            .collect()
    }

    #[test]
    fn padded_evaluation_matches_unpadded() {
        for agg in [
            Aggregation::Sum,
            Aggregation::Mean,
            Aggregation::Max,
            Aggregation::Concat,
        ] {
            for bn in [false, true] {
                let cfg = GcpnConfig {
                    agg,
                    batch_norm: bn,
                    ..tiny_cfg()
                };
                let mut rng = stream(5, STREAM_POLICY);
                let store = init_policy_params(&cfg, &mut rng).unwrap();
                let (g_ext, _) = extended("CCO");

                for mode in [BnMode::Eval, BnMode::Train] {
                    let mut t1 = Tape::new();
                    let tp1 = TapeParams::load(&mut t1, &store);
                    let mut s1 = store.clone();
                    let x1 =
                        node_embeddings(&mut t1, &tp1, &mut s1, &cfg, &g_ext, None, mode).unwrap();

                    let mut t2 = Tape::new();
                    let tp2 = TapeParams::load(&mut t2, &store);
                    let mut s2 = store.clone();
                    let x2 = node_embeddings(
                        &mut t2,
                        &tp2,
                        &mut s2,
                        &cfg,
                        &g_ext,
                        Some(cfg.pad_rows()),
                        mode,
                    )
                    .unwrap();

                    let a = tape_matrix(&t1, x1);
                    let b = tape_matrix(&t2, x2);
                    for r in 0..g_ext.n() {
                        for d in 0..cfg.embed_width() {
                            assert!(
                                (a[r][d] - b[r][d]).abs() < 1e-8,
                                "agg={agg:?} bn={bn} mode={mode:?} row {r}"
                            );
                        }
                    }
                    // Running moments update identically in train mode.
                    if bn {
                        for l in 0..cfg.layers {
                            let name = format!("gcn.l{l}.bn.running_mean");
                            assert_eq!(
                                s1.get(&name).unwrap().data(),
                                s2.get(&name).unwrap().data()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn train_mode_updates_running_moments_and_eval_does_not() {
        let cfg = tiny_cfg();
        let mut rng = stream(6, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, _) = extended("CCO");
        let before = store.get("gcn.l0.bn.running_mean").unwrap().clone();

        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        node_embeddings(&mut tape, &tp, &mut store, &cfg, &g_ext, None, BnMode::Eval).unwrap();
        assert_eq!(
            store.get("gcn.l0.bn.running_mean").unwrap().data(),
            before.data()
        );

        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        node_embeddings(&mut tape, &tp, &mut store, &cfg, &g_ext, None, BnMode::Train).unwrap();
        assert_ne!(
            store.get("gcn.l0.bn.running_mean").unwrap().data(),
            before.data()
        );
    }

    fn zero_link_heads(store: &mut ParamStore) {
        for head in ["head.first", "head.second", "head.edge"] {
            for p in ["w2", "b2"] {
                let t = store.get_mut(&format!("{head}.{p}")).unwrap();
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    #[test]
    fn zeroed_heads_give_uniform_distributions() {
        let cfg = tiny_cfg();
        let mut rng = stream(7, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        zero_link_heads(&mut store);
        let (g_ext, idx) = extended("CC");

        let d = action_distributions(&mut store, &cfg, &g_ext, idx, 0, 1).unwrap();
        // Stop head starts zeroed: uniform over {continue, stop}.
        assert_eq!(d.f_stop.len(), 2);
        for &p in &d.f_stop {
            assert!((p - 0.5).abs() < 1e-12);
        }
        // First: two real nodes, scaffold entries exactly zero.
        assert_eq!(d.f_first.len(), 11);
        for (j, &p) in d.f_first.iter().enumerate() {
            if j < 2 {
                assert!((p - 0.5).abs() < 1e-12);
            } else {
                assert_eq!(p, 0.0);
            }
        }
        // Second: 10 allowed entries (11 rows minus the first node).
        let support: Vec<usize> = (0..11).filter(|&j| j != 0).collect();
        for j in 0..11 {
            if support.contains(&j) {
                assert!((d.f_second[j] - 0.1).abs() < 1e-12);
            } else {
                assert_eq!(d.f_second[j], 0.0);
            }
        }
        for &p in &d.f_edge {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Distributions sum to one.
        for dist in [&d.f_stop, &d.f_first, &d.f_second, &d.f_edge] {
            let s: f64 = dist.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_log_probs_match_recomputation() {
        let cfg = tiny_cfg();
        let mut rng = stream(8, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, idx) = extended("CCO");

        for _ in 0..50 {
            let (a, lp) = sample_action(&mut store, &cfg, &g_ext, idx, &mut rng).unwrap();
            let mut tape = Tape::new();
            let tp = TapeParams::load(&mut tape, &store);
            let pe = policy_eval(
                &mut tape, &tp, &mut store, &cfg, &g_ext, idx, &a, BnMode::Eval, None,
            )
            .unwrap();
            let lp2 = tape.value(pe.log_prob).item();
            assert!((lp - lp2).abs() < 1e-10, "{lp} vs {lp2} for {a:?}");
        }
    }

    #[test]
    fn uniform_log_prob_factorizes_over_components() {
        let cfg = tiny_cfg();
        let mut rng = stream(9, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        zero_link_heads(&mut store);
        let (g_ext, idx) = extended("CC");

        let a = ActionVec::link(0, 2, 1);
        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let pe = policy_eval(
            &mut tape, &tp, &mut store, &cfg, &g_ext, idx, &a, BnMode::Eval, None,
        )
        .unwrap();
        let want = (0.5f64).ln() + (0.5f64).ln() + (0.1f64).ln() + (1.0f64 / 3.0).ln();
        assert!((tape.value(pe.log_prob).item() - want).abs() < 1e-12);

        let stop = ActionVec::stop();
        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let pe = policy_eval(
            &mut tape, &tp, &mut store, &cfg, &g_ext, idx, &stop, BnMode::Eval, None,
        )
        .unwrap();
        assert!((tape.value(pe.log_prob).item() - (0.5f64).ln()).abs() < 1e-12);
        // Stop entropy is the stop head's alone: ln 2.
        assert!((tape.value(pe.entropy).item() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_sums_realized_heads() {
        let cfg = tiny_cfg();
        let mut rng = stream(10, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        zero_link_heads(&mut store);
        let (g_ext, idx) = extended("CC");

        let a = ActionVec::link(1, 0, 0);
        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let pe = policy_eval(
            &mut tape, &tp, &mut store, &cfg, &g_ext, idx, &a, BnMode::Eval, None,
        )
        .unwrap();
        // Uniform heads: ln2 + ln2 + ln10 + ln3.
        let want = (2.0f64).ln() + (2.0f64).ln() + (10.0f64).ln() + (3.0f64).ln();
        assert!((tape.value(pe.entropy).item() - want).abs() < 1e-12);
    }

    #[test]
    fn stop_actions_leave_link_heads_without_gradient() {
        let cfg = tiny_cfg();
        let mut rng = stream(11, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, idx) = extended("CCO");

        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let pe = policy_eval(
            &mut tape,
            &tp,
            &mut store,
            &cfg,
            &g_ext,
            idx,
            &ActionVec::stop(),
            BnMode::Eval,
            None,
        )
        .unwrap();
        let grads = tape.backward(pe.log_prob).unwrap();
        for head in ["head.first.w1", "head.second.w1", "head.edge.w1"] {
            assert!(grads.get(tp.get(head).unwrap()).is_none(), "{head}");
        }
        let stop_grad = grads
            .get(tp.get("head.stop.w2").unwrap())
            .expect("stop head participates");
        assert!(stop_grad.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn initial_value_is_zero_and_permutation_invariant() {
        let cfg = tiny_cfg();
        let mut rng = stream(12, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, idx) = extended("CCO");
        assert_eq!(state_value(&mut store, &cfg, &g_ext, idx).unwrap(), 0.0);

        // Make the value head non-trivial, then check invariance.
        let mut rng2 = stream(13, STREAM_POLICY);
        *store.get_mut("value.w2").unwrap() = glorot_uniform(4, 1, &mut rng2);

        let env = env12();
        let g = parse("CC(=O)O").unwrap();
        let s = env.reset(Some(&g)).unwrap();
        let (ge, idx) = env.extended_graph(&s);
        let v1 = state_value(&mut store, &cfg, &ge, idx).unwrap();

        let perm = [3usize, 1, 0, 2];
        let pg = permute_graph(&g, &perm);
        let sp = env.reset(Some(&pg)).unwrap();
        let (gpe, idxp) = env.extended_graph(&sp);
        let v2 = state_value(&mut store, &cfg, &gpe, idxp).unwrap();
        assert!((v1 - v2).abs() < 1e-6, "{v1} vs {v2}");
    }

    #[test]
    fn discriminator_starts_at_half_and_moves_with_its_logit() {
        let cfg = tiny_cfg();
        let mut rng = stream(14, STREAM_POLICY);
        let mut store = init_discriminator_params(&cfg, &mut rng).unwrap();

        for s in ["C", "CCO", "C1CCCCC1"] {
            let g = parse(s).unwrap();
            let score = discriminator_score(&mut store, &cfg, &g).unwrap();
            assert_eq!(score, 0.5, "{s}");
            // Untrained adversarial reward is exactly 0 after scaling.
            let r = adversarial_reward(&mut store, &cfg, &g, DEFAULT_ADV_CLAMP).unwrap();
            assert!(r.abs() < 1e-12);
        }

        // Raising the output bias raises the score and the reward.
        let g = parse("CCO").unwrap();
        store.get_mut("out.b2").unwrap().data_mut()[0] = 1.0;
        let s1 = discriminator_score(&mut store, &cfg, &g).unwrap();
        let r1 = adversarial_reward(&mut store, &cfg, &g, DEFAULT_ADV_CLAMP).unwrap();
        assert!(s1 > 0.5 && s1 < 1.0);
        assert!(r1 > 0.0);

        // Saturation: a huge logit clamps to +1, never infinity.
        store.get_mut("out.b2").unwrap().data_mut()[0] = 100.0;
        let r2 = adversarial_reward(&mut store, &cfg, &g, DEFAULT_ADV_CLAMP).unwrap();
        assert_eq!(r2, 1.0);

        // Permutation invariance of the score.
        store.get_mut("out.b2").unwrap().data_mut()[0] = 0.3;
        let mut rng2 = stream(15, STREAM_POLICY);
        *store.get_mut("out.w2").unwrap() = glorot_uniform(4, 1, &mut rng2);
        let ace = parse("CC(=O)O").unwrap();
        let perm = [2usize, 3, 1, 0];
        let p = permute_graph(&ace, &perm);
        let a = discriminator_score(&mut store, &cfg, &ace).unwrap();
        let b = discriminator_score(&mut store, &cfg, &p).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn batched_discriminator_matches_per_graph_structure() {
        let cfg = tiny_cfg();
        let mut rng = stream(21, STREAM_POLICY);
        let mut store = init_discriminator_params(&cfg, &mut rng).unwrap();

        let ring = parse("C1CCCCC1").unwrap();
        let atom = parse("C").unwrap();
        let chain = parse("CCO").unwrap();

        // Zero-initialized output head: every logit in the batch is 0.
        {
            let mut tape = Tape::new();
            let tp = TapeParams::load(&mut tape, &store);
            let logits = discriminator_logits_batch(
                &mut tape,
                &tp,
                &mut store,
                &cfg,
                &[&ring, &atom, &chain],
                BnMode::Eval,
            )
            .unwrap();
            assert_eq!(logits.len(), 3);
            for &z in &logits {
                assert_eq!(tape.value(z).item(), 0.0);
            }
        }

        // Identical graphs in one batch produce identical logits, and in
        // train mode distinct structures produce distinct logits even when
        // each graph on its own has uniform node rows: the normalization
        // statistics span the whole batch.
        let mut rng2 = stream(22, STREAM_POLICY);
        *store.get_mut("out.w2").unwrap() = glorot_uniform(4, 1, &mut rng2);
        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, &store);
        let logits = discriminator_logits_batch(
            &mut tape,
            &tp,
            &mut store,
            &cfg,
            &[&ring, &ring, &atom, &atom],
            BnMode::Train,
        )
        .unwrap();
        let vals: Vec<f64> = logits.iter().map(|&z| tape.value(z).item()).collect();
        assert!((vals[0] - vals[1]).abs() < 1e-9);
        assert!((vals[2] - vals[3]).abs() < 1e-9);
        assert!(
            (vals[0] - vals[2]).abs() > 1e-6,
            "ring vs atom logits should separate in a mixed batch: {vals:?}"
        );

        // Gradients flow back to the first GCN layer from the batch loss.
        let sum = {
            let mut acc = logits[0];
            for &z in &logits[1..] {
                acc = tape.add(acc, z).unwrap();
            }
            acc
        };
        let grads = tape.backward(sum).unwrap();
        let w0 = tp.get("gcn.l0.w0").unwrap();
        let gw = grads.get(w0).expect("gcn layer gradient");
        assert!(gw.iter().any(|v| v.abs() > 1e-12));
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let cfg = tiny_cfg();
        let mut rng = stream(16, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        zero_link_heads(&mut store);
        let env = env12();
        let s = env.reset(None).unwrap();
        let (g_ext, idx) = env.extended_graph(&s);

        // Uniform heads on a single carbon: p(stop) = 1/2; a continue
        // action picks first=0 surely, second uniform over 9 scaffolds,
        // edge uniform over 3 -> each (second, edge) cell has mass 1/54.
        let draws = 20_000;
        let mut stops = 0usize;
        let mut cell = 0usize; // second = 3, edge = 1
        for _ in 0..draws {
            let (a, _) = sample_action(&mut store, &cfg, &g_ext, idx, &mut rng).unwrap();
            if a.stop {
                stops += 1;
            } else {
                assert_eq!(a.first, 0);
                assert!(a.second >= 1 && a.second <= 9);
                if a.second == 3 && a.edge == 1 {
                    cell += 1;
                }
            }
        }
        let three_sigma = |p: f64| 3.0 * (draws as f64 * p * (1.0 - p)).sqrt();
        let want_stop = draws as f64 * 0.5;
        assert!(
            (stops as f64 - want_stop).abs() < three_sigma(0.5),
            "stops {stops}"
        );
        let p_cell = 0.5 / 27.0;
        let want_cell = draws as f64 * p_cell;
        assert!(
            (cell as f64 - want_cell).abs() < three_sigma(p_cell),
            "cell {cell} vs {want_cell}"
        );
    }

    /// Finite-difference check of log_prob and value gradients for every
    /// parameter, batch norm active in train mode.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = stream(17, STREAM_POLICY);
        let store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, idx) = extended("C=CO");
        let action = ActionVec::link(1, 3, 0);

        enum Target {
            LogProb,
            Value,
        }
        let eval = |st: &ParamStore, which: &Target| -> f64 {
            let mut st = st.clone();
            let mut tape = Tape::new();
            let tp = TapeParams::load(&mut tape, &st);
            let pe = policy_eval(
                &mut tape, &tp, &mut st, &cfg, &g_ext, idx, &action, BnMode::Train, None,
            )
            .unwrap();
            match which {
                Target::LogProb => tape.value(pe.log_prob).item(),
                Target::Value => tape.value(pe.value).item(),
            }
        };

        for which in [Target::LogProb, Target::Value] {
            // Analytic gradients.
            let mut st = store.clone();
            let mut tape = Tape::new();
            let tp = TapeParams::load(&mut tape, &store);
            let pe = policy_eval(
                &mut tape, &tp, &mut st, &cfg, &g_ext, idx, &action, BnMode::Train, None,
            )
            .unwrap();
            let target = match which {
                Target::LogProb => pe.log_prob,
                Target::Value => pe.value,
            };
            let grads = tape.backward(target).unwrap();

            let h = 1e-5;
            for (name, &leaf) in tp.iter() {
                let len = store.get(name).unwrap().data().len();
                let analytic = grads.get_or_zeros(leaf, len);
                for j in 0..len {
                    let mut plus = store.clone();
                    plus.get_mut(name).unwrap().data_mut()[j] += h;
                    let mut minus = store.clone();
                    minus.get_mut(name).unwrap().data_mut()[j] -= h;
                    let fd = (eval(&plus, &which) - eval(&minus, &which)) / (2.0 * h);
                    let rel = max_rel_err(&[analytic[j]], &[fd]);
                    assert!(
                        rel < 1e-4,
                        "{name}[{j}]: analytic {} vs fd {fd}",
                        analytic[j]
                    );
                }
            }
        }
    }

    #[test]
    fn padded_policy_eval_matches_unpadded() {
        let cfg = tiny_cfg();
        let mut rng = stream(18, STREAM_POLICY);
        let mut store = init_policy_params(&cfg, &mut rng).unwrap();
        let (g_ext, idx) = extended("CCO");
        let a = ActionVec::link(2, 4, 0);

        let mut t1 = Tape::new();
        let tp1 = TapeParams::load(&mut t1, &store);
        let p1 = policy_eval(
            &mut t1, &tp1, &mut store, &cfg, &g_ext, idx, &a, BnMode::Eval, None,
        )
        .unwrap();
        let mut t2 = Tape::new();
        let tp2 = TapeParams::load(&mut t2, &store);
        let p2 = policy_eval(
            &mut t2,
            &tp2,
            &mut store,
            &cfg,
            &g_ext,
            idx,
            &a,
            BnMode::Eval,
            Some(cfg.pad_rows()),
        )
        .unwrap();
        assert!(
            (t1.value(p1.log_prob).item() - t2.value(p2.log_prob).item()).abs() < 1e-8
        );
        assert!((t1.value(p1.value).item() - t2.value(p2.value).item()).abs() < 1e-8);
        assert!((t1.value(p1.entropy).item() - t2.value(p2.entropy).item()).abs() < 1e-8);
    }
}
