//! Stochastic hill climbing over the molecule-building action space: a
//! greedy random baseline that needs no learned parameters.

use rand::Rng;

use crate::chemprops::PropertyFn;
use crate::env::{Env, RewardHooks};
use crate::molgraph::MolGraph;

use super::TrainError;

/// How many of the best improving successors the walk samples among.
pub const TOP_K: usize = 5;

/// One restart's walk.
#[derive(Debug, Clone)]
pub struct HillClimbOutcome {
    /// The molecule the walk ended on (its best, by monotonicity).
    pub best: MolGraph,
    /// Objective value of `best`.
    pub best_score: f64,
    /// Objective value at every visited state, the start included.
    pub scores: Vec<f64>,
}

/// Greedy stochastic ascent from the default start state. Each move scores
/// every legal link action's successor, keeps those that strictly improve
/// on the current score, and steps uniformly into one of the best `TOP_K`;
/// the walk stops when no successor improves or the molecule hits the atom
/// cap. For range objectives the climbed score is distance-to-center, so
/// walks approach the target range.
pub fn hill_climb_once(
    env: &Env,
    property: &PropertyFn,
    rng: &mut impl Rng,
) -> Result<HillClimbOutcome, TrainError> {
    let hooks = RewardHooks::none();
    let mut state = env.reset(None)?;
    let mut score = property.reward_raw(&state.graph);
    let mut scores = vec![score];

    while !state.done {
        let mut improving: Vec<(f64, crate::env::State)> = Vec::new();
        for action in env.enumerate_legal(&state) {
            if action.stop {
                continue;
            }
            let outcome = env.step(&state, &action, &hooks)?;
            let s = property.reward_raw(&outcome.next.graph);
            if s > score {
                improving.push((s, outcome.next));
            }
        }
        if improving.is_empty() {
            break;
        }
        // Stable sort: equal scores keep enumeration order, so the walk is
        // reproducible for a fixed generator.
        improving.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
        improving.truncate(TOP_K);
        let pick = rng.gen_range(0..improving.len());
        let (s, next) = improving.swap_remove(pick);
        score = s;
        state = next;
        scores.push(score);
    }
    Ok(HillClimbOutcome {
        best: state.graph,
        best_score: score,
        scores,
    })
}

/// Independent restarts of the walk. The returned list is in restart
/// order; use [`best_of`] for the winner.
pub fn hill_climb(
    env: &Env,
    property: &PropertyFn,
    restarts: usize,
    rng: &mut impl Rng,
) -> Result<Vec<HillClimbOutcome>, TrainError> {
    (0..restarts)
        .map(|_| hill_climb_once(env, property, rng))
        .collect()
}

/// The best-scoring restart (first among ties).
pub fn best_of(outcomes: &[HillClimbOutcome]) -> Option<&HillClimbOutcome> {
    outcomes.iter().reduce(|best, c| {
        if c.best_score > best.best_score {
            c
        } else {
            best
        }
    })
}
