//! Policy-gradient training toward a scalar objective: reward molecules
//! by molecular weight and watch the policy learn to build heavier graphs.
//! Small network and few iterations, so this finishes in seconds; real
//! runs scale the same code up.

use molgen::chemprops::PropertyFn;
use molgen::env::{EnvConfig, RewardHooks};
use molgen::nets::GcpnConfig;
use molgen::rng::{stream, STREAM_ENV};
use molgen::smiles;
use molgen::trainer::{collect_rollouts, train, PpoConfig, TrainOptions};
use molgen::{env::Env, molgraph::MolGraph};

fn main() {
    // Heavier molecules score higher: raw weight in [16, 120] maps onto
    // the property-reward range.
    let env_cfg = EnvConfig::new(PropertyFn::MolecularWeight, (16.0, 120.0)).with_atom_cap(10);
    let net = GcpnConfig {
        layers: 1,
        embed_dim: 8,
        atom_cap: 10,
        ..GcpnConfig::default()
    };
    let ppo = PpoConfig {
        episodes_per_iter: 8,
        iterations: 12,
        minibatch: 16,
        seed: 11,
        ..PpoConfig::default()
    };

    let opts = TrainOptions {
        net: net.clone(),
        ppo,
        env_cfg: env_cfg.clone(),
        corpus: &[],
        adversarial: false,
        expert_imitation: false,
        initial_pool: None,
        out_dir: None,
        checkpoint_every: 0,
        warm_start: None,
    };
    let outcome = train(&opts).unwrap();

    println!("iter  mean_reward  mean_weight  validity  policy_loss  value_loss");
    for r in &outcome.report.records {
        println!(
            "{:4}  {:11.4}  {:11.3}  {:8.3}  {:11.4}  {:10.4}",
            r.iteration, r.mean_reward, r.mean_property, r.validity, r.policy_loss, r.value_loss
        );
    }
    let first = &outcome.report.records[0];
    let last = outcome.report.records.last().unwrap();
    println!(
        "mean weight     {:.2} -> {:.2} over {} iterations",
        first.mean_property,
        last.mean_property,
        outcome.report.records.len()
    );

    // -- generate with the trained model -----------------------------------
    //
    // The returned checkpoint carries the trained parameters; roll out a
    // few fresh episodes with them.
    let env = Env::new(env_cfg).unwrap();
    let mut policy = outcome.model.policy.clone();
    let trajectories = collect_rollouts(
        &env,
        &net,
        &mut policy,
        6,
        None,
        &RewardHooks::none(),
        &mut stream(1234, STREAM_ENV),
    )
    .unwrap();
    println!("sampled molecules after training:");
    let weight = PropertyFn::MolecularWeight;
    for t in &trajectories {
        print_molecule(&t.final_graph, weight.score(&t.final_graph));
    }
}

fn print_molecule(g: &MolGraph, w: f64) {
    match smiles::write(g) {
        Ok(s) => println!("  {s:24} weight {w:7.3}"),
        Err(_) => println!("  <{} atoms, unwritable>  weight {w:7.3}", g.n()),
    }
}
