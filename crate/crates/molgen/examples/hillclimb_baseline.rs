//! The learning-free baseline: greedy hill climbing over the same action
//! space the policy uses. From a bare atom, repeatedly take whichever
//! legal link most improves the objective; stop when nothing does. Cheap,
//! strong on monotone objectives, and a sanity bar every learned policy
//! should clear.

use molgen::chemprops::PropertyFn;
use molgen::env::{Env, EnvConfig};
use molgen::nets::GcpnConfig;
use molgen::rng::{stream, STREAM_ENV, STREAM_POLICY};
use molgen::smiles;
use molgen::trainer::hillclimb::{best_of, hill_climb};
use molgen::{env::RewardHooks, nets::init_policy_params, trainer::collect_rollouts};

fn main() {
    // Maximize penalized logp-lite: hydrophobicity credit minus penalties
    // for oversized rings, so pure greed has something to navigate.
    let property = PropertyFn::PenalizedLogpLite;
    let env = Env::new(
        EnvConfig::new(property.clone(), (-4.0, 4.0)).with_atom_cap(12),
    )
    .unwrap();

    // -- several greedy walks from random tie-breaks -------------------------
    let mut rng = stream(8, STREAM_ENV);
    let outcomes = hill_climb(&env, &property, 6, &mut rng).unwrap();
    println!("restart  steps  trajectory of scores");
    for (i, o) in outcomes.iter().enumerate() {
        let shown: Vec<String> = o.scores.iter().map(|s| format!("{s:.2}")).collect();
        println!("{:7}  {:5}  {}", i, o.scores.len() - 1, shown.join(" "));
    }

    let best = best_of(&outcomes).unwrap();
    println!(
        "best            {} score {:.3}",
        smiles::write(&best.best).unwrap(),
        best.best_score
    );
    // Every walk is monotone: each accepted move strictly improved.
    let monotone = outcomes
        .iter()
        .all(|o| o.scores.windows(2).all(|w| w[1] > w[0]));
    println!("monotone        {monotone}");

    // -- compare an untrained policy ------------------------------------------
    //
    // Random rollouts from a fresh policy show what "no learning, no
    // greed" produces on the same objective.
    let net = GcpnConfig {
        layers: 1,
        embed_dim: 8,
        atom_cap: 12,
        ..GcpnConfig::default()
    };
    let mut policy = init_policy_params(&net, &mut stream(8, STREAM_POLICY)).unwrap();
    let rollouts = collect_rollouts(
        &env,
        &net,
        &mut policy,
        24,
        None,
        &RewardHooks::none(),
        &mut stream(8, STREAM_ENV),
    )
    .unwrap();
    let random_best = rollouts
        .iter()
        .map(|t| property.score(&t.final_graph))
        .fold(f64::NEG_INFINITY, f64::max);
    let random_mean = rollouts
        .iter()
        .map(|t| property.score(&t.final_graph))
        .sum::<f64>()
        / rollouts.len() as f64;
    println!(
        "random policy   mean {random_mean:.3}  best {random_best:.3}  over {} rollouts",
        rollouts.len()
    );
    println!(
        "hill climb      mean {:.3}  best {:.3}  over {} restarts",
        outcomes.iter().map(|o| o.best_score).sum::<f64>() / outcomes.len() as f64,
        best.best_score,
        outcomes.len()
    );
}
