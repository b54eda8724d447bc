//! Learning loops: rollout collection, generalized advantage estimation,
//! clipped-surrogate policy optimization, expert imitation pretraining,
//! discriminator training, and the joint training loop that runs all of
//! them per iteration.

pub mod hillclimb;

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, ModelCheckpoint};
use crate::chemprops::{self, ChemError};
use crate::env::{
    ActionVec, Env, EnvConfig, EnvError, ExtendedIndex, RewardHooks, ScaffoldSet, State,
};
use crate::molgraph::{connected_subgraph_sample, MolGraph};
use crate::nets::{
    adversarial_reward, discriminator_logits_batch, discriminator_score,
    init_discriminator_params, init_policy_params, policy_eval, sample_action, state_value,
    GcpnConfig, NetError, TapeParams, DEFAULT_ADV_CLAMP,
};
use crate::rng::{stream, STREAM_DISCRIMINATOR, STREAM_EXPERT, STREAM_POLICY};
use crate::tensor::{
    clip_grad_norm, AdamState, BnMode, GradMap, Gradients, ParamStore, Tape, TensorError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite quantity during training: {context}")]
    NonFinite { context: String },
    #[error("training diverged at iteration {iteration}: {detail}{}",
        last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Diverged {
        iteration: usize,
        detail: String,
        last_good: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Hyperparameters of the policy-gradient loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    /// Probability-ratio clip half-width.
    pub clip_epsilon: f64,
    /// Reward discount.
    pub gamma: f64,
    /// Advantage-estimation trace decay.
    pub gae_lambda: f64,
    /// Optimization epochs per rollout batch.
    pub epochs: usize,
    /// Minibatch size for policy, expert, and discriminator steps.
    pub minibatch: usize,
    /// Learning rate for the policy-gradient objective.
    pub policy_lr: f64,
    /// Learning rate for the expert-imitation objective.
    pub expert_lr: f64,
    /// Learning rate for the discriminator.
    pub disc_lr: f64,
    /// Weight of the squared value error in the loss.
    pub value_coef: f64,
    /// Weight of the entropy bonus in the loss.
    pub entropy_coef: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Episodes collected per iteration.
    pub episodes_per_iter: usize,
    /// Total training iterations.
    pub iterations: usize,
    /// Seed for every stream of training randomness.
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 1.0,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 32,
            policy_lr: 0.001,
            expert_lr: 0.00025,
            disc_lr: 0.001,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_clip: 0.5,
            episodes_per_iter: 32,
            iterations: 100,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must be in (0, 1), got {}", self.clip_epsilon));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.episodes_per_iter == 0 {
            return bad("epochs, minibatch, and episodes_per_iter must be positive".into());
        }
        for (name, v) in [
            ("policy_lr", self.policy_lr),
            ("expert_lr", self.expert_lr),
            ("disc_lr", self.disc_lr),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// One step of an episode as stored for optimization.
#[derive(Debug, Clone)]
pub struct Transition {
    /// Extended-graph snapshot of the state (molecule plus scaffold rows).
    pub g_ext: MolGraph,
    pub idx: ExtendedIndex,
    pub action: ActionVec,
    /// Log-probability under the parameters that sampled the action.
    pub log_prob_old: f64,
    /// Value estimate of the state under the same snapshot.
    pub value_old: f64,
    /// Reward paid by the environment for this step; at termination this
    /// includes every final reward channel.
    pub reward: f64,
    /// Whether the episode terminated at this step.
    pub done: bool,
}

/// A complete episode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// The terminal molecule.
    pub final_graph: MolGraph,
    pub total_reward: f64,
}

/// Roll out `n_episodes` full episodes with the current policy snapshot.
/// Sampling uses evaluation-mode batch statistics; parameters are not
/// modified. Deterministic given the generator state.
pub fn collect_rollouts(
    env: &Env,
    net: &GcpnConfig,
    policy: &mut ParamStore,
    n_episodes: usize,
    initial_pool: Option<&[MolGraph]>,
    hooks: &RewardHooks,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>, TrainError> {
    if matches!(initial_pool, Some([])) {
        return Err(TrainError::Config(
            "initial-molecule pool must be nonempty".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        // Each episode grows from a molecule drawn off the pool, or from a
        // bare atom when no pool is given.
        let initial = initial_pool.map(|pool| &pool[rng.gen_range(0..pool.len())]);
        let mut s = env.reset(initial)?;
        let mut transitions = Vec::new();
        let mut total = 0.0;
        while !s.done {
            let (g_ext, idx) = env.extended_graph(&s);
            let (action, log_prob_old) = sample_action(policy, net, &g_ext, idx, rng)?;
            let value_old = state_value(policy, net, &g_ext, idx)?;
            let outcome = env.step(&s, &action, hooks)?;
            let reward = outcome.reward.total;
            total += reward;
            transitions.push(Transition {
                g_ext,
                idx,
                action,
                log_prob_old,
                value_old,
                reward,
                done: outcome.next.done,
            });
            s = outcome.next;
        }
        out.push(Trajectory {
            final_graph: s.graph,
            transitions,
            total_reward: total,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

/// Generalized advantage estimation over one complete trajectory:
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done) - V(s_t)`, accumulated
/// as `A_t = sum_k (gamma * lambda)^k delta_{t+k}`. Returns the advantages
/// (unnormalized) and the value targets `A_t + V(s_t)`.
pub fn advantages_and_returns(
    traj: &Trajectory,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let tr = &traj.transitions;
    match tr.last() {
        None => return Err(TrainError::Contract("empty trajectory".into())),
        Some(last) if !last.done => {
            return Err(TrainError::Contract(
                "trajectory does not end in a terminal transition".into(),
            ))
        }
        _ => {}
    }
    let mut adv = vec![0.0; tr.len()];
    let mut acc = 0.0;
    for t in (0..tr.len()).rev() {
        let (v_next, not_done) = if tr[t].done {
            (0.0, 0.0)
        } else {
            (tr[t + 1].value_old, 1.0)
        };
        let delta = tr[t].reward + gamma * v_next - tr[t].value_old;
        acc = delta + gamma * lambda * not_done * acc;
        adv[t] = acc;
    }
    let returns = adv
        .iter()
        .zip(tr)
        .map(|(a, t)| a + t.value_old)
        .collect();
    Ok((adv, returns))
}

/// Shift and scale to zero mean and unit variance (population variance,
/// guarded below by 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

/// Advantages and returns for a whole batch of trajectories, flattened in
/// trajectory order, with the advantages normalized across the batch.
pub fn compute_advantages(
    batch: &[Trajectory],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut advantages = Vec::new();
    let mut returns = Vec::new();
    for traj in batch {
        let (a, r) = advantages_and_returns(traj, gamma, lambda)?;
        advantages.extend(a);
        returns.extend(r);
    }
    normalize_advantages(&mut advantages);
    Ok((advantages, returns))
}

// ---------------------------------------------------------------------------
// Policy optimization
// ---------------------------------------------------------------------------

/// The clipped per-sample surrogate:
/// `min(ratio * adv, clamp(ratio, 1-eps, 1+eps) * adv)`.
pub fn ppo_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    unclipped.min(clipped)
}

/// Loss components of one optimization pass, averaged over minibatches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    /// Negated mean surrogate (the quantity minimized).
    pub policy_loss: f64,
    /// Mean squared value error (unweighted).
    pub value_loss: f64,
    /// Mean policy entropy along realized conditioning paths.
    pub entropy: f64,
}

fn grads_by_name(tp: &TapeParams, grads: &Gradients) -> GradMap {
    let mut out = GradMap::new();
    for (name, &leaf) in tp.iter() {
        if let Some(g) = grads.get(leaf) {
            out.insert(name.clone(), g.to_vec());
        }
    }
    out
}

/// Several epochs of clipped-surrogate minibatch ascent over a rollout
/// batch. `advantages` and `returns` must align with the trajectories'
/// transitions flattened in order. Batch-norm layers run in training mode.
pub fn ppo_update(
    trajs: &[Trajectory],
    advantages: &[f64],
    returns: &[f64],
    net: &GcpnConfig,
    policy: &mut ParamStore,
    adam: &mut AdamState,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats, TrainError> {
    let flat: Vec<&Transition> = trajs.iter().flat_map(|t| &t.transitions).collect();
    if flat.is_empty() {
        return Err(TrainError::Contract("empty optimization batch".into()));
    }
    if flat.len() != advantages.len() || flat.len() != returns.len() {
        return Err(TrainError::Contract(format!(
            "batch size mismatch: {} transitions, {} advantages, {} returns",
            flat.len(),
            advantages.len(),
            returns.len()
        )));
    }

    let mut sum_policy = 0.0;
    let mut sum_value = 0.0;
    let mut sum_entropy = 0.0;
    let mut steps = 0usize;

    let mut order: Vec<usize> = (0..flat.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let b = chunk.len() as f64;
            let mut tape = Tape::new();
            let tp = TapeParams::load(&mut tape, policy);

            let mut surr_sum = None;
            let mut value_sum = None;
            let mut entropy_sum = None;
            for &i in chunk {
                let tr = flat[i];
                let pe = policy_eval(
                    &mut tape,
                    &tp,
                    policy,
                    net,
                    &tr.g_ext,
                    tr.idx,
                    &tr.action,
                    BnMode::Train,
                    None,
                )?;
                let shifted = tape.add_scalar(pe.log_prob, -tr.log_prob_old);
                let ratio = tape.exp(shifted);
                let unclipped = tape.scale(ratio, advantages[i]);
                let clamped = tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                let clipped = tape.scale(clamped, advantages[i]);
                let surr = tape.min2(unclipped, clipped)?;

                let verr = tape.add_scalar(pe.value, -returns[i]);
                let vsq = tape.pow_const(verr, 2.0);

                surr_sum = Some(match surr_sum {
                    None => surr,
                    Some(s) => tape.add(s, surr)?,
                });
                value_sum = Some(match value_sum {
                    None => vsq,
                    Some(s) => tape.add(s, vsq)?,
                });
                entropy_sum = Some(match entropy_sum {
                    None => pe.entropy,
                    Some(s) => tape.add(s, pe.entropy)?,
                });
            }
            let surr_mean = tape.scale(surr_sum.expect("nonempty chunk"), 1.0 / b);
            let value_mean = tape.scale(value_sum.expect("nonempty chunk"), 1.0 / b);
            let entropy_mean = tape.scale(entropy_sum.expect("nonempty chunk"), 1.0 / b);

            let neg_surr = tape.scale(surr_mean, -1.0);
            let v_term = tape.scale(value_mean, cfg.value_coef);
            let e_term = tape.scale(entropy_mean, -cfg.entropy_coef);
            let partial = tape.add(neg_surr, v_term)?;
            let loss = tape.add(partial, e_term)?;

            let loss_v = tape.value(loss).item();
            if !loss_v.is_finite() {
                return Err(TrainError::NonFinite {
                    context: format!(
                        "policy loss {loss_v} at epoch {epoch}, minibatch of {}",
                        chunk.len()
                    ),
                });
            }
            let grads = tape.backward(loss)?;
            let mut by_name = grads_by_name(&tp, &grads);
            clip_grad_norm(&mut by_name, cfg.grad_clip);
            adam.step(policy, &by_name)?;

            sum_policy += -tape.value(surr_mean).item();
            sum_value += tape.value(value_mean).item();
            sum_entropy += tape.value(entropy_mean).item();
            steps += 1;
        }
    }
    let k = steps as f64;
    Ok(PpoStats {
        policy_loss: sum_policy / k,
        value_loss: sum_value / k,
        entropy: sum_entropy / k,
    })
}

// ---------------------------------------------------------------------------
// Expert imitation
// ---------------------------------------------------------------------------

/// One supervised example: a partially built state and an action that
/// extends it toward a corpus molecule.
#[derive(Debug, Clone)]
pub struct ExpertPair {
    pub g_ext: MolGraph,
    pub idx: ExtendedIndex,
    pub action: ActionVec,
}

fn scaffold_index(scaffolds: &ScaffoldSet, atom_type: usize) -> Option<usize> {
    (0..scaffolds.len()).find(|&k| scaffolds.atom_type(k) == atom_type)
}

/// All actions that grow `sub` (mapped into `g` by `map`, where
/// `map[i]` is the index in `g` of subgraph node `i`) by one bond or one
/// atom of `g` outside it.
pub fn expert_actions(
    g: &MolGraph,
    sub: &MolGraph,
    map: &[usize],
    scaffolds: &ScaffoldSet,
) -> Vec<ActionVec> {
    let n = sub.n();
    let mut inv: Vec<Option<usize>> = vec![None; g.n()];
    for (i, &o) in map.iter().enumerate() {
        inv[o] = Some(i);
    }
    let mut out = Vec::new();
    // Bonds of g between two already-present nodes, missing from sub.
    for i in 0..n {
        for j in (i + 1)..n {
            if sub.bond(i, j).is_none() {
                if let Some(t) = g.bond(map[i], map[j]) {
                    out.push(ActionVec::link(i, j, t.index()));
                }
            }
        }
    }
    // Atoms of g outside sub, attached through any one of their bonds into
    // sub. An outside atom with several bonds into sub yields one candidate
    // per bond, weighting it accordingly under uniform choice.
    for v in 0..g.n() {
        if inv[v].is_some() {
            continue;
        }
        for (u, t) in g.neighbors(v) {
            if let Some(i) = inv[u] {
                let k = scaffold_index(scaffolds, g.atom(v))
                    .expect("every table atom type has a scaffold");
                out.push(ActionVec::link(i, n + k, t.index()));
            }
        }
    }
    out
}

/// Sample one expert pair from a corpus molecule: a random proper connected
/// subgraph as the state, and a uniformly chosen growth action consistent
/// with the molecule. `None` when the molecule cannot be extended (a single
/// atom has no proper subgraph to grow).
pub fn sample_expert_pair(
    g: &MolGraph,
    env: &Env,
    rng: &mut impl Rng,
) -> Result<Option<ExpertPair>, TrainError> {
    if g.n() < 2 {
        return Ok(None);
    }
    // Resample until the subgraph is proper; each draw succeeds with
    // probability at least 1/2.
    let (sub, map) = loop {
        let (sub, map) = connected_subgraph_sample(g, rng)
            .map_err(|e| TrainError::Contract(format!("corpus molecule: {e}")))?;
        if sub.n() < g.n() {
            break (sub, map);
        }
    };
    let actions = expert_actions(g, &sub, &map, env.scaffolds());
    debug_assert!(!actions.is_empty(), "proper subgraph of a connected graph must be growable");
    let action = actions[rng.gen_range(0..actions.len())].clone();
    let state = State {
        graph: sub,
        step: 0,
        done: false,
    };
    let (g_ext, idx) = env.extended_graph(&state);
    Ok(Some(ExpertPair { g_ext, idx, action }))
}

/// Draw a full minibatch of expert pairs, skipping unusable molecules.
/// Returns the pairs and the indices of molecules skipped during drawing.
fn draw_expert_minibatch(
    corpus: &[MolGraph],
    env: &Env,
    size: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<ExpertPair>, Vec<usize>), TrainError> {
    if !corpus.iter().any(|g| g.n() >= 2) {
        return Err(TrainError::Config(
            "no corpus molecule admits an expert pair (all are single atoms)".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(size);
    let mut skipped = Vec::new();
    while pairs.len() < size {
        let mi = rng.gen_range(0..corpus.len());
        match sample_expert_pair(&corpus[mi], env, rng)? {
            Some(p) => pairs.push(p),
            None => skipped.push(mi),
        }
    }
    Ok((pairs, skipped))
}

/// Mean negative log-likelihood of a set of expert pairs and one Adam step
/// minimizing it.
pub fn expert_step(
    pairs: &[ExpertPair],
    net: &GcpnConfig,
    policy: &mut ParamStore,
    adam: &mut AdamState,
    grad_clip: f64,
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::Contract("empty expert minibatch".into()));
    }
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, policy);
    let mut nll_sum = None;
    for p in pairs {
        let pe = policy_eval(
            &mut tape,
            &tp,
            policy,
            net,
            &p.g_ext,
            p.idx,
            &p.action,
            BnMode::Train,
            None,
        )?;
        nll_sum = Some(match nll_sum {
            None => pe.log_prob,
            Some(s) => tape.add(s, pe.log_prob)?,
        });
    }
    let loss = tape.scale(nll_sum.expect("nonempty"), -1.0 / pairs.len() as f64);
    let loss_v = tape.value(loss).item();
    if !loss_v.is_finite() {
        return Err(TrainError::NonFinite {
            context: format!("expert loss {loss_v}"),
        });
    }
    let grads = tape.backward(loss)?;
    let mut by_name = grads_by_name(&tp, &grads);
    clip_grad_norm(&mut by_name, grad_clip);
    adam.step(policy, &by_name)?;
    Ok(loss_v)
}

/// Outcome of an imitation run: one loss per minibatch, plus diagnostics
/// for molecules that had to be skipped.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub minibatch_losses: Vec<f64>,
    pub diagnostics: Vec<String>,
}

/// Supervised pretraining: for each epoch, `ceil(corpus / minibatch)`
/// minibatches of expert pairs, each followed by one Adam step on the mean
/// negative log-likelihood.
pub fn expert_pretrain(
    corpus: &[MolGraph],
    net: &GcpnConfig,
    policy: &mut ParamStore,
    adam: &mut AdamState,
    cfg: &PpoConfig,
    epochs: usize,
    rng: &mut impl Rng,
) -> Result<PretrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Config("empty corpus".into()));
    }
    cfg.validate()?;
    let env = Env::new(EnvConfig::new(
        crate::chemprops::PropertyFn::MolecularWeight,
        (0.0, 1.0),
    ))?;
    let per_epoch = corpus.len().div_ceil(cfg.minibatch);
    let mut losses = Vec::with_capacity(epochs * per_epoch);
    let mut diagnostics = Vec::new();
    let mut reported: Vec<bool> = vec![false; corpus.len()];
    for _ in 0..epochs {
        for _ in 0..per_epoch {
            let (pairs, skipped) = draw_expert_minibatch(corpus, &env, cfg.minibatch, rng)?;
            for mi in skipped {
                if !reported[mi] {
                    reported[mi] = true;
                    diagnostics.push(format!(
                        "molecule {mi} has no extendable subgraph pair; skipped"
                    ));
                }
            }
            losses.push(expert_step(&pairs, net, policy, adam, cfg.grad_clip)?);
        }
    }
    Ok(PretrainOutcome {
        minibatch_losses: losses,
        diagnostics,
    })
}

/// A canonical construction trajectory for a molecule: starting from its
/// node 0, attach the remaining atoms in breadth-first order, then add the
/// leftover bonds in ascending order, then stop. Returns (state, action)
/// pairs usable for likelihood evaluation.
pub fn construction_trajectory(
    g: &MolGraph,
    env: &Env,
) -> Result<Vec<(MolGraph, ExtendedIndex, ActionVec)>, TrainError> {
    if g.n() == 0 || !g.is_connected() {
        return Err(TrainError::Contract(
            "construction trajectory needs a nonempty connected molecule".into(),
        ));
    }
    // Breadth-first order and each node's discovery parent.
    let mut order = vec![0usize];
    let mut parent = vec![usize::MAX; g.n()];
    let mut seen = vec![false; g.n()];
    seen[0] = true;
    let mut q = std::collections::VecDeque::from([0usize]);
    while let Some(u) = q.pop_front() {
        for (v, _) in g.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                order.push(v);
                q.push_back(v);
            }
        }
    }
    let mut pos = vec![usize::MAX; g.n()];
    for (p, &o) in order.iter().enumerate() {
        pos[o] = p;
    }

    let mut pairs = Vec::new();
    let mut current = MolGraph::single_atom(g.atom(order[0]))
        .map_err(|e| TrainError::Contract(format!("start atom: {e}")))?;
    let snapshot = |cur: &MolGraph| {
        let state = State {
            graph: cur.clone(),
            step: 0,
            done: false,
        };
        env.extended_graph(&state)
    };
    // Atom attachments along the BFS tree.
    for (k, &v) in order.iter().enumerate().skip(1) {
        let u = parent[v];
        let t = g.bond(u, v).expect("tree edge");
        let sc = scaffold_index(env.scaffolds(), g.atom(v)).expect("table type");
        let action = ActionVec::link(pos[u], k + sc, t.index());
        let (g_ext, idx) = snapshot(&current);
        pairs.push((g_ext, idx, action.clone()));
        current = current
            .attach_atom(pos[u], g.atom(v), t)
            .map_err(|e| TrainError::Contract(format!("canonical attach: {e}")))?;
    }
    // Non-tree bonds, ascending in construction positions.
    let mut extra = Vec::new();
    for u in 0..g.n() {
        for (v, t) in g.neighbors(u) {
            if u < v && parent[v] != u && parent[u] != v {
                extra.push((pos[u].min(pos[v]), pos[u].max(pos[v]), t));
            }
        }
    }
    extra.sort_by_key(|&(a, b, _)| (a, b));
    for (a, b, t) in extra {
        let action = ActionVec::link(a, b, t.index());
        let (g_ext, idx) = snapshot(&current);
        pairs.push((g_ext, idx, action.clone()));
        current = current
            .add_bond(a, b, t)
            .map_err(|e| TrainError::Contract(format!("canonical bond: {e}")))?;
    }
    let (g_ext, idx) = snapshot(&current);
    pairs.push((g_ext, idx, ActionVec::stop()));
    Ok(pairs)
}

/// Total negative log-likelihood of a molecule's canonical construction
/// trajectory under the current policy (forward-only).
pub fn trajectory_nll(
    g: &MolGraph,
    net: &GcpnConfig,
    policy: &mut ParamStore,
    env: &Env,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (g_ext, idx, action) in construction_trajectory(g, env)? {
        let mut tape = Tape::new();
        let tp = TapeParams::load(&mut tape, policy);
        let pe = policy_eval(
            &mut tape,
            &tp,
            policy,
            net,
            &g_ext,
            idx,
            &action,
            BnMode::Eval,
            None,
        )?;
        total -= tape.value(pe.log_prob).item();
    }
    Ok(total)
}

/// The same trajectory's negative log-likelihood under a policy that picks
/// uniformly: each link step costs `ln 2 + ln n + ln(n + c - 1) + ln 3`
/// (continue flag, first node among n, second among the other rows, bond
/// type), and the final stop costs `ln 2`.
pub fn uniform_trajectory_nll(g: &MolGraph, env: &Env) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (_, idx, action) in construction_trajectory(g, env)? {
        if action.stop {
            total += 2.0f64.ln();
        } else {
            total += 2.0f64.ln()
                + (idx.n as f64).ln()
                + ((idx.total() - 1) as f64).ln()
                + 3.0f64.ln();
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// One discriminator update and its post-step quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStats {
    /// Mean binary cross-entropy of the step.
    pub loss: f64,
    /// Post-step balanced accuracy (real scored above 1/2, generated
    /// below; exact ties count half).
    pub accuracy: f64,
}

/// One Adam step on binary cross-entropy: corpus molecules labeled 1,
/// generated molecules labeled 0, computed stably from logits. The whole
/// minibatch runs as one forward pass over the disjoint union of the
/// graphs so normalization statistics span both classes.
pub fn train_discriminator(
    real: &[&MolGraph],
    generated: &[&MolGraph],
    net: &GcpnConfig,
    disc: &mut ParamStore,
    adam: &mut AdamState,
    grad_clip: f64,
) -> Result<DiscStats, TrainError> {
    if real.is_empty() || generated.is_empty() {
        return Err(TrainError::Contract(
            "discriminator batches must both be nonempty".into(),
        ));
    }
    let mut tape = Tape::new();
    let tp = TapeParams::load(&mut tape, disc);
    let batch: Vec<&MolGraph> = real.iter().chain(generated.iter()).copied().collect();
    let logits = discriminator_logits_batch(&mut tape, &tp, disc, net, &batch, BnMode::Train)?;
    let mut loss_sum = None;
    for (i, &z) in logits.iter().enumerate() {
        // label 1: softplus(-z); label 0: softplus(z).
        let term = if i < real.len() {
            let nz = tape.scale(z, -1.0);
            tape.softplus(nz)
        } else {
            tape.softplus(z)
        };
        loss_sum = Some(match loss_sum {
            None => term,
            Some(s) => tape.add(s, term)?,
        });
    }
    let count = (real.len() + generated.len()) as f64;
    let loss = tape.scale(loss_sum.expect("nonempty"), 1.0 / count);
    let loss_v = tape.value(loss).item();
    if !loss_v.is_finite() {
        return Err(TrainError::NonFinite {
            context: format!("discriminator loss {loss_v}"),
        });
    }
    let grads = tape.backward(loss)?;
    let mut by_name = grads_by_name(&tp, &grads);
    clip_grad_norm(&mut by_name, grad_clip);
    adam.step(disc, &by_name)?;

    // Post-step balanced accuracy.
    let mut acc_real = 0.0;
    for g in real {
        let s = discriminator_score(disc, net, g)?;
        acc_real += if s > 0.5 {
            1.0
        } else if s == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    let mut acc_gen = 0.0;
    for g in generated {
        let s = discriminator_score(disc, net, g)?;
        acc_gen += if s < 0.5 {
            1.0
        } else if s == 0.5 {
            0.5
        } else {
            0.0
        };
    }
    let accuracy = 0.5 * (acc_real / real.len() as f64 + acc_gen / generated.len() as f64);
    Ok(DiscStats {
        loss: loss_v,
        accuracy,
    })
}

fn sample_refs<'a>(
    pool: &'a [MolGraph],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<&'a MolGraph> {
    if pool.len() >= k {
        rand::seq::index::sample(rng, pool.len(), k)
            .iter()
            .map(|i| &pool[i])
            .collect()
    } else {
        (0..k).map(|_| &pool[rng.gen_range(0..pool.len())]).collect()
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Metrics of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_property: f64,
    pub validity: f64,
    /// Mean pairwise structural distance of the iteration's molecules;
    /// absent when fewer than two were produced.
    pub diversity: Option<f64>,
    /// Absent when adversarial training is off.
    pub disc_accuracy: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub expert_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    /// Fraction of molecules inside the target range; absent for plain
    /// (non-range) objectives.
    pub success: Option<f64>,
}

/// Per-iteration training records plus plain-text serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

pub const REPORT_HEADER: &str = "# iteration mean_reward mean_property validity diversity disc_accuracy policy_loss value_loss expert_loss disc_loss success";

fn opt_field(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "-".to_string(),
    }
}

impl TrainReport {
    /// Line-delimited text: a `#` header naming the field order, then one
    /// space-separated record per iteration, `-` for absent fields.
    pub fn to_text(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {}\n",
                r.iteration,
                r.mean_reward,
                r.mean_property,
                r.validity,
                opt_field(r.diversity),
                opt_field(r.disc_accuracy),
                r.policy_loss,
                r.value_loss,
                opt_field(r.expert_loss),
                opt_field(r.disc_loss),
                opt_field(r.success),
            ));
        }
        out
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        fs::write(path.as_ref(), self.to_text()).map_err(|e| {
            TrainError::Config(format!(
                "cannot write report {}: {e}",
                path.as_ref().display()
            ))
        })
    }

    /// Parse the `to_text` format back; `#` lines and blanks are skipped.
    pub fn parse(text: &str) -> Result<TrainReport, TrainError> {
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 11 {
                return Err(TrainError::Contract(format!(
                    "report line {}: expected 11 fields, got {}",
                    ln + 1,
                    fields.len()
                )));
            }
            let req = |s: &str| -> Result<f64, TrainError> {
                s.parse::<f64>().map_err(|_| {
                    TrainError::Contract(format!("report line {}: bad number '{s}'", ln + 1))
                })
            };
            let opt = |s: &str| -> Result<Option<f64>, TrainError> {
                if s == "-" {
                    Ok(None)
                } else {
                    req(s).map(Some)
                }
            };
            records.push(IterationRecord {
                iteration: req(fields[0])? as usize,
                mean_reward: req(fields[1])?,
                mean_property: req(fields[2])?,
                validity: req(fields[3])?,
                diversity: opt(fields[4])?,
                disc_accuracy: opt(fields[5])?,
                policy_loss: req(fields[6])?,
                value_loss: req(fields[7])?,
                expert_loss: opt(fields[8])?,
                disc_loss: opt(fields[9])?,
                success: opt(fields[10])?,
            });
        }
        Ok(TrainReport { records })
    }
}

// ---------------------------------------------------------------------------
// The joint loop
// ---------------------------------------------------------------------------

/// Everything the joint training loop needs.
pub struct TrainOptions<'a> {
    pub net: GcpnConfig,
    pub ppo: PpoConfig,
    pub env_cfg: EnvConfig,
    pub corpus: &'a [MolGraph],
    /// Train a discriminator and mix its reward into the environment.
    pub adversarial: bool,
    /// Run one expert-imitation minibatch per iteration.
    pub expert_imitation: bool,
    /// Episodes start from molecules sampled off this pool instead of a
    /// bare atom (constrained optimization).
    pub initial_pool: Option<&'a [MolGraph]>,
    /// Where checkpoints are written; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Extra checkpoint every this many iterations (0 disables periodic
    /// checkpoints; initial, final, and last-good are always written when
    /// `out_dir` is set).
    pub checkpoint_every: usize,
    /// Resume from an existing model instead of fresh parameters.
    pub warm_start: Option<ModelCheckpoint>,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: ModelCheckpoint,
    /// Checkpoint written after the last completed iteration, when an
    /// output directory was given.
    pub last_checkpoint: Option<PathBuf>,
}

fn save_model(
    model: &ModelCheckpoint,
    dir: &Path,
    name: &str,
) -> Result<PathBuf, TrainError> {
    let path = dir.join(name);
    model.save(&path)?;
    Ok(path)
}

/// The joint loop: per iteration, collect rollouts with adversarial reward
/// hooks reading the current discriminator, estimate advantages, run the
/// clipped-surrogate update, take one expert-imitation step and one
/// discriminator step, and append a report record. Divergence aborts with
/// the last good checkpoint's path.
pub fn train(opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    opts.ppo.validate()?;
    opts.net.validate()?;
    if opts.expert_imitation && opts.corpus.is_empty() {
        return Err(TrainError::Config(
            "expert imitation requires a nonempty corpus".into(),
        ));
    }
    if opts.adversarial && opts.corpus.is_empty() {
        return Err(TrainError::Config(
            "adversarial training requires a nonempty corpus".into(),
        ));
    }
    // The master switch gates both adversarial reward channels; within it
    // the environment config picks where the hook fires.
    let mut env_cfg = opts.env_cfg.clone();
    env_cfg.intermediate_adversarial &= opts.adversarial;
    env_cfg.final_adversarial &= opts.adversarial;
    let env = Env::new(env_cfg)?;

    let seed = opts.ppo.seed;
    let mut policy_rng = stream(seed, STREAM_POLICY);
    let mut expert_rng = stream(seed, STREAM_EXPERT);
    let mut disc_rng = stream(seed, STREAM_DISCRIMINATOR);

    let (mut policy, mut disc) = match &opts.warm_start {
        Some(ck) => {
            if ck.cfg != opts.net {
                return Err(TrainError::Config(format!(
                    "checkpoint architecture {:?} does not match the requested {:?}",
                    ck.cfg, opts.net
                )));
            }
            let d = match &ck.disc {
                Some(d) => d.clone(),
                None => init_discriminator_params(&opts.net, &mut disc_rng)?,
            };
            (ck.policy.clone(), d)
        }
        None => (
            init_policy_params(&opts.net, &mut policy_rng)?,
            init_discriminator_params(&opts.net, &mut disc_rng)?,
        ),
    };

    let mut policy_adam = AdamState::new(opts.ppo.policy_lr);
    let mut expert_adam = AdamState::new(opts.ppo.expert_lr);
    let mut disc_adam = AdamState::new(opts.ppo.disc_lr);

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| {
            TrainError::Config(format!("cannot create {}: {e}", dir.display()))
        })?;
    }
    let snapshot = |policy: &ParamStore, disc: &ParamStore| ModelCheckpoint {
        cfg: opts.net.clone(),
        policy: policy.clone(),
        disc: opts.adversarial.then(|| disc.clone()),
    };
    let mut last_good: Option<PathBuf> = match &opts.out_dir {
        Some(dir) => Some(save_model(&snapshot(&policy, &disc), dir, "checkpoint_initial.ckpt")?),
        None => None,
    };

    let mut report = TrainReport::default();
    for it in 1..=opts.ppo.iterations {
        let diverged = |e: TrainError, last_good: &Option<PathBuf>| match e {
            TrainError::NonFinite { context } => TrainError::Diverged {
                iteration: it,
                detail: context,
                last_good: last_good.clone(),
            },
            TrainError::Tensor(TensorError::NonFiniteGradient(p)) => TrainError::Diverged {
                iteration: it,
                detail: format!("non-finite gradient in '{p}'"),
                last_good: last_good.clone(),
            },
            other => other,
        };

        // Rollouts against a fixed discriminator snapshot.
        let disc_snapshot = RefCell::new(disc.clone());
        let hook = |g: &MolGraph| -> f64 {
            adversarial_reward(&mut disc_snapshot.borrow_mut(), &opts.net, g, DEFAULT_ADV_CLAMP)
                .expect("discriminator forward pass")
        };
        let hooks = if opts.adversarial {
            RewardHooks {
                adversarial: Some(&hook),
            }
        } else {
            RewardHooks::none()
        };
        let trajs = collect_rollouts(
            &env,
            &opts.net,
            &mut policy,
            opts.ppo.episodes_per_iter,
            opts.initial_pool,
            &hooks,
            &mut policy_rng,
        )?;
        let molecules: Vec<MolGraph> = trajs.iter().map(|t| t.final_graph.clone()).collect();

        let (advantages, returns) =
            compute_advantages(&trajs, opts.ppo.gamma, opts.ppo.gae_lambda)?;
        let stats = ppo_update(
            &trajs,
            &advantages,
            &returns,
            &opts.net,
            &mut policy,
            &mut policy_adam,
            &opts.ppo,
            &mut policy_rng,
        )
        .map_err(|e| diverged(e, &last_good))?;

        let expert_loss = if opts.expert_imitation {
            let (pairs, _) =
                draw_expert_minibatch(opts.corpus, &env, opts.ppo.minibatch, &mut expert_rng)?;
            Some(
                expert_step(&pairs, &opts.net, &mut policy, &mut expert_adam, opts.ppo.grad_clip)
                    .map_err(|e| diverged(e, &last_good))?,
            )
        } else {
            None
        };

        let disc_stats = if opts.adversarial {
            let half = (opts.ppo.minibatch / 2).max(1);
            let k = half.min(molecules.len());
            let real = sample_refs(opts.corpus, k, &mut disc_rng);
            let generated = sample_refs(&molecules, k, &mut disc_rng);
            Some(
                train_discriminator(
                    &real,
                    &generated,
                    &opts.net,
                    &mut disc,
                    &mut disc_adam,
                    opts.ppo.grad_clip,
                )
                .map_err(|e| diverged(e, &last_good))?,
            )
        } else {
            None
        };

        // Iteration metrics over the terminal molecules.
        let n_mols = molecules.len() as f64;
        let mean_reward = trajs.iter().map(|t| t.total_reward).sum::<f64>() / n_mols;
        let property = &env.config().property;
        let mean_property =
            molecules.iter().map(|g| property.score(g)).sum::<f64>() / n_mols;
        let validity = molecules
            .iter()
            .filter(|g| g.validate(Some(env.config().atom_cap)).is_ok() && g.is_connected())
            .count() as f64
            / n_mols;
        let diversity = if molecules.len() >= 2 {
            Some(chemprops::diversity(&molecules)?)
        } else {
            None
        };
        let success = {
            let hits: Vec<bool> = molecules.iter().filter_map(|g| property.success(g)).collect();
            if hits.is_empty() {
                None
            } else {
                Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
            }
        };

        let record = IterationRecord {
            iteration: it,
            mean_reward,
            mean_property,
            validity,
            diversity,
            disc_accuracy: disc_stats.map(|d| d.accuracy),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            expert_loss,
            disc_loss: disc_stats.map(|d| d.loss),
            success,
        };
        for (name, v) in [
            ("mean_reward", record.mean_reward),
            ("policy_loss", record.policy_loss),
            ("value_loss", record.value_loss),
        ] {
            if !v.is_finite() {
                return Err(TrainError::Diverged {
                    iteration: it,
                    detail: format!("{name} became {v}"),
                    last_good,
                });
            }
        }
        report.records.push(record);

        if let Some(dir) = &opts.out_dir {
            let model = snapshot(&policy, &disc);
            if opts.checkpoint_every > 0 && it % opts.checkpoint_every == 0 {
                save_model(&model, dir, &format!("checkpoint_iter{it}.ckpt"))?;
            }
            last_good = Some(save_model(&model, dir, "checkpoint_last_good.ckpt")?);
        }
    }

    let model = snapshot(&policy, &disc);
    let last_checkpoint = match &opts.out_dir {
        Some(dir) => Some(save_model(&model, dir, "checkpoint_final.ckpt")?),
        None => None,
    };
    Ok(TrainOutcome {
        report,
        model,
        last_checkpoint,
    })
}
