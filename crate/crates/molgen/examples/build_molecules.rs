//! Molecular graphs from the ground up: grow a molecule atom by atom
//! under valence checking, read off chemical properties, round-trip
//! through SMILES text, and compare fingerprints.

use molgen::chemprops::{filter_check, molecular_weight, similarity, PropertyFn};
use molgen::molgraph::{atom_index, is_isomorphic, BondType, MolGraph, ATOMS};
use molgen::smiles;

fn main() {
    // -- grow ethanol by hand -------------------------------------------
    //
    // Every mutation returns a fresh graph or a violation; nothing can
    // produce an atom bonded past its valence limit.
    let c = atom_index("C").unwrap();
    let o = atom_index("O").unwrap();
    let g = MolGraph::single_atom(c).unwrap();
    let g = g.attach_atom(0, c, BondType::Single).unwrap(); // C-C
    let g = g.attach_atom(1, o, BondType::Single).unwrap(); // C-C-O
    println!("built           {}", smiles::write(&g).unwrap());
    println!("atoms           {}", g.n());
    println!("bonds           {}", g.bond_count());
    for u in 0..g.n() {
        println!(
            "  atom {u}: {}  explicit valence {}  implicit H {}",
            g.atom_spec(u).symbol,
            g.explicit_valence(u),
            g.implicit_hydrogens(u)
        );
    }

    // -- the valence rules say no ----------------------------------------
    //
    // Oxygen (max valence 2) already has one bond; a triple bond would
    // need three more slots.
    match g.attach_atom(2, o, BondType::Triple) {
        Ok(_) => println!("triple on O     allowed?!"),
        Err(v) => println!("triple on O     rejected: {v}"),
    }
    // Fluorine is monovalent: once attached it can accept nothing else.
    let f = atom_index("F").unwrap();
    let gf = g.attach_atom(0, f, BondType::Single).unwrap();
    match gf.can_bond(3, 2, BondType::Single) {
        Ok(()) => println!("F with 2 bonds  allowed?!"),
        Err(v) => println!("F with 2 bonds  rejected: {v}"),
    }

    // -- SMILES round-trip ------------------------------------------------
    //
    // The dialect is Kekulé-form: rings spell out their alternating
    // double bonds, so benzene is C1=CC=CC=C1. The last entry shows how
    // a malformed string is reported.
    let examples = ["CCO", "CC(=O)O", "C1CCCCC1", "N#CC1=CC=CC=C1", "C1CC"];
    for text in examples {
        match smiles::parse(text) {
            Ok(m) => {
                let out = smiles::write(&m).unwrap();
                let back = smiles::parse(&out).unwrap();
                println!(
                    "round-trip      {text:14} -> {out:16} isomorphic: {}",
                    is_isomorphic(&m, &back).unwrap()
                );
            }
            Err(e) => println!("round-trip      {text:14} -> parse error: {e}"),
        }
    }

    // -- properties --------------------------------------------------------
    let aspirin_like = smiles::parse("CC(=O)OC1CCCCC1C(=O)O").unwrap();
    println!(
        "weight          {:.3} (ethanol {:.3})",
        molecular_weight(&aspirin_like),
        molecular_weight(&g)
    );
    let logp = PropertyFn::LogpLite;
    println!("logp            {:.3}", logp.score(&aspirin_like));
    let plogp = PropertyFn::PenalizedLogpLite;
    println!("penalized logp  {:.3}", plogp.score(&aspirin_like));
    let verdict = filter_check(&aspirin_like);
    println!("filter pass     {}", verdict.passed);

    // -- fingerprint similarity ---------------------------------------------
    let ethanol = smiles::parse("CCO").unwrap();
    let propanol = smiles::parse("CCCO").unwrap();
    let benzene = smiles::parse("C1=CC=CC=C1").unwrap();
    println!(
        "similarity      ethanol/propanol {:.3}  ethanol/benzene {:.3}",
        similarity(&ethanol, &propanol),
        similarity(&ethanol, &benzene)
    );

    // -- the element table ----------------------------------------------------
    println!("atom table:");
    for spec in &ATOMS {
        println!(
            "  {:2}  valence {}  weight {:7.3}  logp {:+.4}",
            spec.symbol, spec.max_valence, spec.weight, spec.logp
        );
    }
}
