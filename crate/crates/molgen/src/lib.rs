//! Goal-directed molecular graph generation.
//!
//! `molgen` builds molecules atom-by-atom with a graph-building Markov
//! decision process whose policy is an edge-conditioned graph convolutional
//! network trained with proximal policy optimization. Every intermediate
//! graph respects valency rules, so every emitted molecule is valid by
//! construction. Rewards combine domain properties (molecular weight, a
//! lightweight logP estimate, ring-penalized variants, target ranges),
//! rule-based filters, and an adversarial score from a jointly trained
//! graph discriminator. An expert-imitation pass can pretrain the policy on
//! a corpus of known molecules.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense `f64` tensors with tape-based reverse-mode
//!   autodiff and an Adam optimizer. Everything downstream differentiates
//!   through this.
//! * [`molgraph`] — chemistry-aware molecular graphs: typed atoms, typed
//!   bonds, valence accounting, fingerprints, isomorphism.
//! * [`smiles`] — a kekulized SMILES subset: parser, deterministic writer,
//!   corpus loading.
//! * [`chemprops`] — scalar molecular properties, reward shaping, filters,
//!   diversity/similarity metrics.
//! * [`env`] — the graph-building MDP: states, actions, legality,
//!   stepwise rewards.
//! * [`nets`] — the policy network (embeddings, action heads, value head)
//!   and the discriminator.
//! * [`trainer`] — rollouts, advantage estimation, PPO updates, expert
//!   pretraining, discriminator training, and a hill-climbing baseline.
//! * [`cli`] — the command layer behind the `molgen` binary
//!   (`pretrain | train | generate | evaluate | hillclimb`).
//!
//! Run `cargo run --example <name>` for end-to-end walkthroughs; each major
//! capability has one runnable example under `examples/`.

pub mod chemprops;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod molgraph;
pub mod nets;
pub mod rng;
pub mod smiles;
pub mod tensor;
pub mod trainer;
