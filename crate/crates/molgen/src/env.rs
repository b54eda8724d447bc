//! The molecule-building decision process.
//!
//! A state is a partially built molecule. Each action either links two
//! existing atoms, links an existing atom to a fresh atom drawn from the
//! scaffold set (one single-atom graph per atom type), or stops. Feasible
//! link actions earn a small positive step reward, infeasible proposals are
//! rejected with a small negative one and leave the graph untouched, and
//! termination pays the property, filter, and adversarial channels.
//!
//! The environment is deterministic: identical (state, action, hook
//! outputs) produce identical outcomes. All randomness lives in the agent.

use thiserror::Error;

use crate::chemprops::{filter_check, PropertyFn};
use crate::molgraph::{BondType, MolGraph, Violation, NUM_ATOM_TYPES, NUM_BOND_TYPES};

/// Reward channel bounds: property scales into [-4,4], filter pays +/-2,
/// adversarial channels and summed step validity stay within [-1,1].
pub const PROPERTY_REWARD_LO: f64 = -4.0;
pub const PROPERTY_REWARD_HI: f64 = 4.0;
pub const FILTER_REWARD: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{field} index {got} out of bounds (limit {limit})")]
    OutOfBounds {
        field: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("bad initial molecule: {0}")]
    BadInitial(String),
    #[error("bad environment config: {0}")]
    BadConfig(String),
}

/// The ordered set of single-atom scaffold graphs, one per atom type.
#[derive(Debug, Clone)]
pub struct ScaffoldSet {
    atoms: Vec<MolGraph>,
}

impl ScaffoldSet {
    /// One single-atom graph per entry of the atom table, in table order.
    pub fn standard() -> ScaffoldSet {
        ScaffoldSet {
            atoms: (0..NUM_ATOM_TYPES)
                .map(|k| MolGraph::single_atom(k).expect("table atom"))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atom type index of scaffold `k`.
    pub fn atom_type(&self, k: usize) -> usize {
        self.atoms[k].atom(0)
    }

    pub fn graph(&self, k: usize) -> &MolGraph {
        &self.atoms[k]
    }
}

/// A point in an episode: the molecule so far, the step counter, and
/// whether the episode has terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub graph: MolGraph,
    pub step: usize,
    pub done: bool,
}

/// One composite action: a link (first, second, edge type) or a stop.
///
/// `first` indexes the current graph; `second` indexes the extended graph,
/// so values at or above `n` select a scaffold atom to materialize. When
/// `stop` is true the link components are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionVec {
    pub first: usize,
    pub second: usize,
    pub edge: usize,
    pub stop: bool,
}

impl ActionVec {
    pub fn link(first: usize, second: usize, edge: usize) -> ActionVec {
        ActionVec {
            first,
            second,
            edge,
            stop: false,
        }
    }

    pub fn stop() -> ActionVec {
        ActionVec {
            first: 0,
            second: 0,
            edge: 0,
            stop: true,
        }
    }
}

/// Why a proposed link is chemically infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Illegality {
    #[error("stop is not a link action")]
    StopFlag,
    #[error("second node equals first")]
    SelfPair,
    #[error("nodes are already bonded")]
    AlreadyBonded,
    #[error("a valence limit would be exceeded")]
    ValenceExceeded,
    #[error("the atom cap would be exceeded")]
    AtomCapExceeded,
}

/// Verdict on a proposed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionJudgment {
    Legal,
    Illegal(Illegality),
}

/// Per-step reward decomposition. Channel sums over a full episode stay in
/// the configured ranges: property [-4,4], filter [-2,2], final adversarial
/// [-1,1], intermediate adversarial [-1,1], step validity [-1,1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub step_validity: f64,
    pub step_adversarial: f64,
    pub final_property: f64,
    pub final_filter: f64,
    pub final_adversarial: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn finish(mut self) -> RewardBreakdown {
        self.total = self.step_validity
            + self.step_adversarial
            + self.final_property
            + self.final_filter
            + self.final_adversarial;
        self
    }
}

/// Result of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: State,
    pub reward: RewardBreakdown,
    pub infeasible: bool,
}

/// External reward callbacks. The adversarial hook must already return a
/// value scaled into [-1,1]; the environment applies it verbatim at
/// termination and at 1/step_limit weight per intermediate step so the
/// summed intermediate channel also stays within [-1,1].
#[derive(Default)]
pub struct RewardHooks<'a> {
    pub adversarial: Option<&'a dyn Fn(&MolGraph) -> f64>,
}

impl RewardHooks<'_> {
    pub fn none() -> RewardHooks<'static> {
        RewardHooks { adversarial: None }
    }
}

/// Environment parameters.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    /// Maximum number of atoms a molecule may reach.
    pub atom_cap: usize,
    /// Hard episode length bound; termination is guaranteed even under
    /// endless infeasible proposals.
    pub step_limit: usize,
    /// Magnitude of the per-step validity reward.
    pub step_reward: f64,
    /// Objective property for the final reward.
    pub property: PropertyFn,
    /// Linear scaling anchors: raw scores p_min..p_max map onto the
    /// property reward range (then clamp).
    pub property_anchors: (f64, f64),
    /// Pay +/-2 at termination for passing/failing the reactive-pattern
    /// blacklist.
    pub filter_rewards: bool,
    /// Apply the adversarial hook at every intermediate step.
    pub intermediate_adversarial: bool,
    /// Apply the adversarial hook at termination.
    pub final_adversarial: bool,
}

pub const DEFAULT_ATOM_CAP: usize = 38;

impl EnvConfig {
    /// Defaults: cap 38, step limit twice the cap, step reward sized so a
    /// whole episode of validity rewards sums inside [-1,1], filter channel
    /// on, adversarial channels off until a discriminator exists.
    pub fn new(property: PropertyFn, property_anchors: (f64, f64)) -> EnvConfig {
        EnvConfig {
            atom_cap: DEFAULT_ATOM_CAP,
            step_limit: 2 * DEFAULT_ATOM_CAP,
            step_reward: 1.0 / (2 * DEFAULT_ATOM_CAP) as f64,
            property,
            property_anchors,
            filter_rewards: true,
            intermediate_adversarial: false,
            final_adversarial: false,
        }
    }

    /// Change the atom cap, rescaling the step limit and step reward.
    pub fn with_atom_cap(mut self, cap: usize) -> EnvConfig {
        self.atom_cap = cap;
        self.step_limit = 2 * cap;
        self.step_reward = 1.0 / self.step_limit as f64;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.atom_cap == 0 {
            return Err(EnvError::BadConfig("atom cap must be positive".into()));
        }
        if self.step_limit == 0 {
            return Err(EnvError::BadConfig("step limit must be positive".into()));
        }
        if !(self.step_reward > 0.0) {
            return Err(EnvError::BadConfig(format!(
                "step reward must be positive, got {}",
                self.step_reward
            )));
        }
        let (lo, hi) = self.property_anchors;
        if !(lo < hi) {
            return Err(EnvError::BadConfig(format!(
                "property anchors need p_min < p_max, got {lo}..{hi}"
            )));
        }
        Ok(())
    }
}

/// Compute scaling anchors as the corpus min/max of the property's raw
/// reward; a degenerate (constant) corpus is widened by one unit each way.
pub fn anchors_from_corpus(property: &PropertyFn, corpus: &[MolGraph]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in corpus {
        let r = property.reward_raw(g);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if corpus.is_empty() {
        (0.0, 1.0)
    } else if lo < hi {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Affine map sending p_min -> lo and p_max -> hi, clamped to [lo, hi].
pub fn scale_reward(raw: f64, p_min: f64, p_max: f64, lo: f64, hi: f64) -> f64 {
    let t = (raw - p_min) / (p_max - p_min);
    (lo + t * (hi - lo)).clamp(lo, hi)
}

/// The environment: immutable configuration plus the scaffold set.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    scaffolds: ScaffoldSet,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Env, EnvError> {
        config.validate()?;
        Ok(Env {
            config,
            scaffolds: ScaffoldSet::standard(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scaffolds(&self) -> &ScaffoldSet {
        &self.scaffolds
    }

    /// Start an episode: a single carbon by default, or a provided seed
    /// molecule for constrained optimization.
    pub fn reset(&self, initial: Option<&MolGraph>) -> Result<State, EnvError> {
        let graph = match initial {
            None => MolGraph::single_atom(0).expect("carbon exists"),
            Some(g) => {
                g.validate(Some(self.config.atom_cap))
                    .map_err(|e| EnvError::BadInitial(e.to_string()))?;
                if !g.is_connected() {
                    return Err(EnvError::BadInitial("graph is disconnected".into()));
                }
                g.clone()
            }
        };
        Ok(State {
            graph,
            step: 0,
            done: false,
        })
    }

    /// Disjoint union of the state graph with the scaffold atoms: rows
    /// 0..n-1 are the real molecule, rows n..n+c-1 the scaffold atoms in
    /// table order, with no bonds between the parts.
    pub fn extended_graph(&self, s: &State) -> (MolGraph, ExtendedIndex) {
        let g = &s.graph;
        let n = g.n();
        let c = self.scaffolds.len();
        let total = n + c;
        let mut atoms = Vec::with_capacity(total);
        for u in 0..n {
            atoms.push(g.atom(u) as u8);
        }
        for k in 0..c {
            atoms.push(self.scaffolds.atom_type(k) as u8);
        }
        let mut bonds = vec![None; total * total];
        for u in 0..n {
            for (v, b) in g.neighbors(u) {
                bonds[u * total + v] = Some(b);
            }
        }
        (
            MolGraph::from_parts_unchecked(atoms, bonds),
            ExtendedIndex { n, c },
        )
    }

    /// Judge a proposed action. Index errors are caller bugs and reported
    /// as hard errors, distinct from chemical infeasibility.
    pub fn check_action(&self, s: &State, a: &ActionVec) -> Result<ActionJudgment, EnvError> {
        let n = s.graph.n();
        let c = self.scaffolds.len();
        if a.first >= n {
            return Err(EnvError::OutOfBounds {
                field: "first",
                got: a.first,
                limit: n,
            });
        }
        if a.second >= n + c {
            return Err(EnvError::OutOfBounds {
                field: "second",
                got: a.second,
                limit: n + c,
            });
        }
        if a.edge >= NUM_BOND_TYPES {
            return Err(EnvError::OutOfBounds {
                field: "edge",
                got: a.edge,
                limit: NUM_BOND_TYPES,
            });
        }
        if a.stop {
            return Ok(ActionJudgment::Illegal(Illegality::StopFlag));
        }
        let bond = BondType::from_index(a.edge).expect("edge checked");
        if a.second == a.first {
            return Ok(ActionJudgment::Illegal(Illegality::SelfPair));
        }
        if a.second < n {
            // Link two existing atoms.
            match s.graph.can_bond(a.first, a.second, bond) {
                Ok(()) => Ok(ActionJudgment::Legal),
                Err(Violation::SelfBond { .. }) => {
                    Ok(ActionJudgment::Illegal(Illegality::SelfPair))
                }
                Err(Violation::AlreadyBonded { .. }) => {
                    Ok(ActionJudgment::Illegal(Illegality::AlreadyBonded))
                }
                Err(Violation::ValenceExceeded { .. }) => {
                    Ok(ActionJudgment::Illegal(Illegality::ValenceExceeded))
                }
            }
        } else {
            // Materialize a scaffold atom and bond to it.
            if n + 1 > self.config.atom_cap {
                return Ok(ActionJudgment::Illegal(Illegality::AtomCapExceeded));
            }
            let first_spec = s.graph.atom_spec(a.first);
            let headroom = first_spec.max_valence - s.graph.explicit_valence(a.first);
            let fresh_max = crate::molgraph::ATOMS[self.scaffolds.atom_type(a.second - n)]
                .max_valence;
            if bond.order() <= headroom && bond.order() <= fresh_max {
                Ok(ActionJudgment::Legal)
            } else {
                Ok(ActionJudgment::Illegal(Illegality::ValenceExceeded))
            }
        }
    }

    /// Apply one action. Panics if the state is already terminal — that is
    /// a caller contract violation, not a recoverable condition.
    pub fn step(&self, s: &State, a: &ActionVec, hooks: &RewardHooks) -> Result<StepOutcome, EnvError> {
        assert!(!s.done, "step called on a terminal state");
        let cfg = &self.config;

        if a.stop {
            let mut reward = RewardBreakdown::default();
            self.add_final_rewards(&s.graph, hooks, &mut reward);
            return Ok(StepOutcome {
                next: State {
                    graph: s.graph.clone(),
                    step: s.step + 1,
                    done: true,
                },
                reward: reward.finish(),
                infeasible: false,
            });
        }

        let judgment = self.check_action(s, a)?;
        let (graph, infeasible) = match judgment {
            ActionJudgment::Legal => {
                let n = s.graph.n();
                let bond = BondType::from_index(a.edge).expect("edge checked");
                let g = if a.second < n {
                    s.graph.add_bond(a.first, a.second, bond)
                } else {
                    s.graph
                        .attach_atom(a.first, self.scaffolds.atom_type(a.second - n), bond)
                }
                .expect("judged legal");
                (g, false)
            }
            ActionJudgment::Illegal(_) => (s.graph.clone(), true),
        };

        let step = s.step + 1;
        let capped = graph.n() >= cfg.atom_cap;
        let exhausted = step >= cfg.step_limit;
        let done = capped || exhausted;

        let mut reward = RewardBreakdown {
            step_validity: if infeasible {
                -cfg.step_reward
            } else {
                cfg.step_reward
            },
            ..RewardBreakdown::default()
        };
        if !infeasible && cfg.intermediate_adversarial {
            if let Some(adv) = hooks.adversarial {
                reward.step_adversarial = adv(&graph) / cfg.step_limit as f64;
            }
        }
        if done {
            self.add_final_rewards(&graph, hooks, &mut reward);
        }
        Ok(StepOutcome {
            next: State { graph, step, done },
            reward: reward.finish(),
            infeasible,
        })
    }

    fn add_final_rewards(&self, g: &MolGraph, hooks: &RewardHooks, reward: &mut RewardBreakdown) {
        let cfg = &self.config;
        let (p_min, p_max) = cfg.property_anchors;
        reward.final_property = scale_reward(
            cfg.property.reward_raw(g),
            p_min,
            p_max,
            PROPERTY_REWARD_LO,
            PROPERTY_REWARD_HI,
        );
        if cfg.filter_rewards {
            reward.final_filter = if filter_check(g).passed {
                FILTER_REWARD
            } else {
                -FILTER_REWARD
            };
        }
        if cfg.final_adversarial {
            if let Some(adv) = hooks.adversarial {
                reward.final_adversarial = adv(g);
            }
        }
    }

    /// Every legal link action (ascending by first, second, edge) followed
    /// by the stop action. Exactly the set `check_action` accepts.
    pub fn enumerate_legal(&self, s: &State) -> Vec<ActionVec> {
        assert!(!s.done, "enumerate_legal on a terminal state");
        let n = s.graph.n();
        let c = self.scaffolds.len();
        let mut out = Vec::new();
        for first in 0..n {
            for second in 0..n + c {
                for edge in 0..NUM_BOND_TYPES {
                    let a = ActionVec::link(first, second, edge);
                    if self.check_action(s, &a).expect("indices in range")
                        == ActionJudgment::Legal
                    {
                        out.push(a);
                    }
                }
            }
        }
        out.push(ActionVec::stop());
        out
    }
}

/// Address arithmetic for the extended graph: rows below `n` are real
/// molecule atoms, rows `n..n+c` are scaffold entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtendedIndex {
    pub n: usize,
    pub c: usize,
}

impl ExtendedIndex {
    pub fn total(&self) -> usize {
        self.n + self.c
    }

    pub fn is_real(&self, idx: usize) -> bool {
        idx < self.n
    }

    /// Scaffold number for an extended index, if it is a scaffold row.
    pub fn scaffold_of(&self, idx: usize) -> Option<usize> {
        (idx >= self.n && idx < self.n + self.c).then(|| idx - self.n)
    }
}
