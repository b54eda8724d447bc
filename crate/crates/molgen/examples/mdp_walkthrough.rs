//! The graph-building decision process, step by step: reset to a single
//! carbon, inspect the extended graph (real atoms plus one scaffold per
//! element), propose legal and illegal links, and watch the reward
//! decomposition over a full hand-scripted episode that assembles ethanol.

use molgen::chemprops::PropertyFn;
use molgen::env::{ActionJudgment, ActionVec, Env, EnvConfig, RewardHooks, State};
use molgen::molgraph::{atom_index, ATOMS};
use molgen::smiles;

/// Extended-graph index of the scaffold atom for `symbol`, given the
/// current state. Scaffold slots sit after the real atoms, so the offset
/// moves every time the molecule grows.
fn scaffold(state: &State, symbol: &str) -> usize {
    state.graph.n() + atom_index(symbol).unwrap()
}

fn main() {
    // Reward anchors map raw molecular weight in [16, 60] onto the
    // property-reward range; heavier is better until 60.
    let cfg = EnvConfig::new(PropertyFn::MolecularWeight, (16.0, 60.0)).with_atom_cap(10);
    println!(
        "config          cap {} atoms, step limit {}, step reward {:.4}",
        cfg.atom_cap, cfg.step_limit, cfg.step_reward
    );
    let env = Env::new(cfg).unwrap();
    let hooks = RewardHooks::none();

    // -- the extended graph ----------------------------------------------
    //
    // Actions address nodes of the current molecule PLUS one detached
    // scaffold atom per element. Linking to a scaffold materializes a
    // fresh atom of that element.
    let s0 = env.reset(None).unwrap();
    let (ext, index) = env.extended_graph(&s0);
    println!(
        "extended graph  {} real + {} scaffold = {} nodes",
        index.n,
        index.c,
        index.total()
    );
    for k in index.n..index.total() {
        let t = index.scaffold_of(k).unwrap();
        print!(
            "{}{}",
            if k == index.n { "scaffolds       " } else { " " },
            ATOMS[env.scaffolds().atom_type(t)].symbol
        );
    }
    println!(" (extended graph has {} bonds: scaffolds stay detached)", ext.bond_count());

    // -- judging actions ----------------------------------------------------
    //
    // check_action is a pure link-feasibility oracle: it never mutates the
    // state, and it only judges links (stopping is always available and is
    // handled directly by step).
    let judge = |label: &str, a: &ActionVec| {
        match env.check_action(&s0, a).unwrap() {
            ActionJudgment::Legal => println!("action          {label:32} legal"),
            ActionJudgment::Illegal(why) => println!("action          {label:32} illegal: {why}"),
        }
    };
    judge("link C0 - new C (single)", &ActionVec::link(0, scaffold(&s0, "C"), 0));
    judge("link C0 - new F (double)", &ActionVec::link(0, scaffold(&s0, "F"), 1)); // F is monovalent
    judge("link C0 - C0", &ActionVec::link(0, 0, 0));

    // enumerate_legal lists every link the oracle would accept.
    let legal = env.enumerate_legal(&s0);
    println!("legal moves     {} from the bare carbon", legal.len());

    // -- a scripted episode: build ethanol, then stop -------------------------
    //
    // Each legal step pays the small validity bonus, each infeasible
    // proposal the matching penalty (the state is left untouched); the
    // property and filter terms land on the stop step. Note the scaffold
    // offsets are recomputed from the current state every time.
    let mut state = s0;
    let mut total = 0.0;
    let mut run = |label: &str, state: &mut State, action: ActionVec| {
        let out = env.step(state, &action, &hooks).unwrap();
        let r = out.reward;
        println!(
            "step {:2} {label:22} infeasible={} validity {:+.4} property {:+.3} filter {:+.1} total {:+.4}",
            state.step, out.infeasible, r.step_validity, r.final_property, r.final_filter, r.total
        );
        total += r.total;
        *state = out.next;
    };
    let a = ActionVec::link(0, scaffold(&state, "C"), 0);
    run("grow C-C", &mut state, a);
    let a = ActionVec::link(1, scaffold(&state, "O"), 0);
    run("grow C-O on atom 1", &mut state, a);
    run("illegal: re-bond 0-1", &mut state, ActionVec::link(0, 1, 0));
    run("stop", &mut state, ActionVec::stop());
    println!(
        "episode         done={} molecule {} return {total:+.4}",
        state.done,
        smiles::write(&state.graph).unwrap()
    );

    // -- episodes can also start from an existing molecule --------------------
    let seed = smiles::parse("C1CCCCC1").unwrap();
    let s = env.reset(Some(&seed)).unwrap();
    println!(
        "warm reset      starts from {} with {} legal moves",
        smiles::write(&s.graph).unwrap(),
        env.enumerate_legal(&s).len()
    );
}
