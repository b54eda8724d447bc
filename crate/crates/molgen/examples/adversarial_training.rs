//! The adversarial channel: a discriminator learns to tell corpus
//! molecules from generated ones, and its judgment feeds back into the
//! reward so the policy drifts toward corpus-like structures.

use std::path::Path;

use molgen::chemprops::PropertyFn;
use molgen::env::EnvConfig;
use molgen::nets::{
    adversarial_reward, discriminator_score, init_discriminator_params, GcpnConfig,
    DEFAULT_ADV_CLAMP,
};
use molgen::rng::{stream, STREAM_DISCRIMINATOR};
use molgen::smiles::{self, load_corpus};
use molgen::tensor::AdamState;
use molgen::trainer::{train, train_discriminator, PpoConfig, TrainOptions};

fn main() {
    let net = GcpnConfig {
        layers: 1,
        embed_dim: 8,
        atom_cap: 12,
        ..GcpnConfig::default()
    };

    // -- a fresh discriminator is exactly agnostic --------------------------
    //
    // Its output layer starts at zero, so every molecule scores 0.5 and
    // the adversarial reward is 0: no gradient pressure until it learns.
    let mut disc =
        init_discriminator_params(&net, &mut stream(1, STREAM_DISCRIMINATOR)).unwrap();
    let ring = smiles::parse("C1CCCCC1").unwrap();
    let chain = smiles::parse("CCCCCC").unwrap();
    println!(
        "fresh scores    ring {:.3}  chain {:.3}",
        discriminator_score(&mut disc, &net, &ring).unwrap(),
        discriminator_score(&mut disc, &net, &chain).unwrap()
    );
    println!(
        "fresh reward    {:+.3} (clamp magnitude {:.4})",
        adversarial_reward(&mut disc, &net, &ring, DEFAULT_ADV_CLAMP).unwrap(),
        DEFAULT_ADV_CLAMP
    );

    // -- teach it rings vs chains -------------------------------------------
    //
    // Label rings "real" and chains "generated"; binary cross-entropy
    // starts at ln 2 = 0.6931 by construction.
    let rings: Vec<_> = ["C1CCCCC1", "C1CCCC1", "C1CCCCCC1", "C1CCC1"]
        .iter()
        .map(|s| smiles::parse(s).unwrap())
        .collect();
    let chains: Vec<_> = ["CCCCCC", "CCCCC", "CCCCCCC", "CCCC"]
        .iter()
        .map(|s| smiles::parse(s).unwrap())
        .collect();
    let real: Vec<&_> = rings.iter().collect();
    let fake: Vec<&_> = chains.iter().collect();
    let mut adam = AdamState::new(0.01);
    for step in 0..30 {
        let stats = train_discriminator(&real, &fake, &net, &mut disc, &mut adam, 0.5).unwrap();
        if step % 10 == 0 || step == 29 {
            println!(
                "disc step {step:2}    bce {:.4}  balanced accuracy {:.2}",
                stats.loss, stats.accuracy
            );
        }
    }
    println!(
        "trained scores  ring {:.3}  chain {:.3}",
        discriminator_score(&mut disc, &net, &ring).unwrap(),
        discriminator_score(&mut disc, &net, &chain).unwrap()
    );
    println!(
        "trained reward  ring {:+.3}  chain {:+.3}",
        adversarial_reward(&mut disc, &net, &ring, DEFAULT_ADV_CLAMP).unwrap(),
        adversarial_reward(&mut disc, &net, &chain, DEFAULT_ADV_CLAMP).unwrap()
    );

    // -- the joint loop -------------------------------------------------------
    //
    // With `adversarial: true` the trainer keeps a discriminator of its
    // own: each iteration it takes one classification step on corpus
    // molecules vs the iteration's rollouts, and the reward hook pays the
    // policy for fooling it. The report gains disc_loss / disc_accuracy
    // columns.
    let corpus_path = Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/toy_corpus.smi"
    ));
    let corpus = load_corpus(corpus_path, 12).unwrap();
    let mut env_cfg =
        EnvConfig::new(PropertyFn::MolecularWeight, (16.0, 120.0)).with_atom_cap(12);
    env_cfg.final_adversarial = true;
    env_cfg.intermediate_adversarial = true;
    let outcome = train(&TrainOptions {
        net: net.clone(),
        ppo: PpoConfig {
            episodes_per_iter: 8,
            iterations: 8,
            minibatch: 16,
            seed: 42,
            ..PpoConfig::default()
        },
        env_cfg,
        corpus: &corpus.molecules,
        adversarial: true,
        expert_imitation: true,
        initial_pool: None,
        out_dir: None,
        checkpoint_every: 0,
        warm_start: None,
    })
    .unwrap();
    println!("joint loop      (property + adversarial + imitation)");
    println!("iter  mean_reward  disc_bce  disc_acc  expert_nll");
    for r in &outcome.report.records {
        println!(
            "{:4}  {:11.4}  {:8.4}  {:8.3}  {:10.4}",
            r.iteration,
            r.mean_reward,
            r.disc_loss.unwrap(),
            r.disc_accuracy.unwrap(),
            r.expert_loss.unwrap()
        );
    }
}
