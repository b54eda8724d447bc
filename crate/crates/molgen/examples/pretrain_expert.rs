//! Imitation pretraining: turn corpus molecules into (state, action)
//! pairs along canonical construction trajectories, minimize the policy's
//! negative log-likelihood on them, and sample from the warmed-up policy.

use std::path::Path;

use molgen::env::{Env, EnvConfig, RewardHooks};
use molgen::nets::{init_policy_params, sample_action, GcpnConfig};
use molgen::rng::{stream, STREAM_EXPERT, STREAM_POLICY};
use molgen::smiles::{self, load_corpus};
use molgen::tensor::AdamState;
use molgen::trainer::{construction_trajectory, expert_pretrain, PpoConfig};
use molgen::{chemprops::PropertyFn, env::ActionVec};

fn main() {
    let corpus_path = Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/toy_corpus.smi"
    ));
    let corpus = load_corpus(corpus_path, 12).unwrap();
    println!(
        "corpus          {} molecules ({} diagnostics)",
        corpus.molecules.len(),
        corpus.diagnostics.len()
    );

    // -- what the expert demonstrates -------------------------------------
    //
    // A molecule becomes a deterministic build script: grow atoms in
    // breadth-first order, close leftover ring bonds, stop.
    let env = Env::new(
        EnvConfig::new(PropertyFn::MolecularWeight, (0.0, 1.0)).with_atom_cap(12),
    )
    .unwrap();
    let mol = smiles::parse("C1CC1O").unwrap(); // cyclopropanol
    let traj = construction_trajectory(&mol, &env).unwrap();
    println!("trajectory for C1CC1O:");
    for (extended, idx, action) in &traj {
        // The stored graph is the extended one (real atoms + detached
        // scaffolds); slice off the real part to print it.
        let real: Vec<usize> = (0..idx.n).collect();
        let so_far = extended.induced_subgraph(&real).unwrap();
        println!(
            "  at {:8} -> {}",
            smiles::write(&so_far).unwrap(),
            describe(action, idx.n)
        );
    }

    // -- pretrain a small policy -------------------------------------------
    let net = GcpnConfig {
        layers: 1,
        embed_dim: 8,
        atom_cap: 12,
        ..GcpnConfig::default()
    };
    let ppo = PpoConfig {
        minibatch: 16,
        expert_lr: 2.5e-4,
        seed: 7,
        ..PpoConfig::default()
    };
    let mut policy = init_policy_params(&net, &mut stream(7, STREAM_POLICY)).unwrap();
    let mut adam = AdamState::new(ppo.expert_lr);
    let subset = &corpus.molecules[..16];
    let outcome = expert_pretrain(
        subset,
        &net,
        &mut policy,
        &mut adam,
        &ppo,
        60, // epochs
        &mut stream(7, STREAM_EXPERT),
    )
    .unwrap();
    let losses = &outcome.minibatch_losses;
    println!("pretraining     {} minibatches", losses.len());
    for (i, loss) in losses.iter().enumerate() {
        if i % 10 == 0 || i + 1 == losses.len() {
            println!("  minibatch {i:3}  nll {loss:.4}");
        }
    }
    println!(
        "loss moved      {:.4} -> {:.4}",
        losses[0],
        losses[losses.len() - 1]
    );

    // -- sample from the warmed-up policy ------------------------------------
    //
    // The policy proposes; the environment enforces chemistry. Infeasible
    // proposals leave the molecule unchanged.
    let hooks = RewardHooks::none();
    let mut rng = stream(99, STREAM_POLICY);
    println!("samples:");
    for _ in 0..5 {
        let mut state = env.reset(None).unwrap();
        while !state.done {
            let (ext, idx) = env.extended_graph(&state);
            let (action, _logp) = sample_action(&mut policy, &net, &ext, idx, &mut rng).unwrap();
            state = env.step(&state, &action, &hooks).unwrap().next;
        }
        println!("  {}", smiles::write(&state.graph).unwrap());
    }
}

fn describe(a: &ActionVec, n: usize) -> String {
    if a.stop {
        "stop".into()
    } else if a.second >= n {
        format!("attach new atom (scaffold {}) to node {} with edge {}", a.second - n, a.first, a.edge)
    } else {
        format!("close bond {} - {} with edge {}", a.first, a.second, a.edge)
    }
}
