//! A kekulized SMILES subset: parser, deterministic writer, corpus loader.
//!
//! Grammar (byte-oriented, no whitespace):
//! * atoms — `C N O S P F Cl Br I`, tokenized greedily so `Cl`/`Br` win
//!   over `C`/`B`;
//! * bonds — `-` (single, also the default), `=` (double), `#` (triple);
//! * branches — `(` ... `)`;
//! * ring closures — digits `1`–`9`; a digit opens a closure at its first
//!   occurrence and closes it at the second, after which the digit is free
//!   for reuse. Either site may prefix the digit with a bond symbol; if both
//!   do, the orders must agree, and an unprefixed closure is single.
//!
//! Aromatic notation, charges, isotopes, stereochemistry, and bracket atoms
//! are outside the subset: molecules are written kekulized.
//!
//! Every parse error carries the byte offset where it was detected.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::molgraph::{atom_index, BondType, MolGraph};

/// What went wrong during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmilesErrorKind {
    UnknownSymbol,
    UnmatchedParen,
    UnmatchedRing,
    ValenceViolation,
    EmptyInput,
}

impl fmt::Display for SmilesErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SmilesErrorKind::UnknownSymbol => "unknown symbol",
            SmilesErrorKind::UnmatchedParen => "unmatched parenthesis",
            SmilesErrorKind::UnmatchedRing => "unmatched ring closure",
            SmilesErrorKind::ValenceViolation => "valence violation",
            SmilesErrorKind::EmptyInput => "empty input",
        };
        f.write_str(s)
    }
}

/// A parse failure at a byte position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte {pos}: {message}")]
pub struct SmilesError {
    pub kind: SmilesErrorKind,
    pub pos: usize,
    pub message: String,
}

impl SmilesError {
    fn new(kind: SmilesErrorKind, pos: usize, message: impl Into<String>) -> SmilesError {
        SmilesError {
            kind,
            pos,
            message: message.into(),
        }
    }
}

/// Parse a SMILES string into a molecular graph.
///
/// Every bond addition goes through the graph's valence checks, so a
/// successful parse always yields a chemically valid, connected molecule.
pub fn parse(input: &str) -> Result<MolGraph, SmilesError> {
    if input.is_empty() {
        return Err(SmilesError::new(
            SmilesErrorKind::EmptyInput,
            0,
            "no atoms in input",
        ));
    }
    let bytes = input.as_bytes();
    let mut graph: Option<MolGraph> = None;
    let mut prev: Option<usize> = None;
    // Pending explicit bond symbol and its position.
    let mut pending: Option<(BondType, usize)> = None;
    // Branch stack: (attachment node restored on ')', position of '(').
    let mut stack: Vec<(Option<usize>, usize)> = Vec::new();
    // Open ring closures: digit -> (node, explicit order, position).
    let mut rings: HashMap<u8, (usize, Option<BondType>, usize)> = HashMap::new();

    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'-' | b'=' | b'#' => {
                if let Some((_, p)) = pending {
                    return Err(SmilesError::new(
                        SmilesErrorKind::UnknownSymbol,
                        p,
                        "bond symbol not followed by an atom or ring closure",
                    ));
                }
                if prev.is_none() {
                    return Err(SmilesError::new(
                        SmilesErrorKind::UnknownSymbol,
                        i,
                        "bond symbol before any atom",
                    ));
                }
                let t = match b {
                    b'-' => BondType::Single,
                    b'=' => BondType::Double,
                    _ => BondType::Triple,
                };
                pending = Some((t, i));
                i += 1;
            }
            b'(' => {
                if let Some((_, p)) = pending {
                    return Err(SmilesError::new(
                        SmilesErrorKind::UnknownSymbol,
                        p,
                        "bond symbol not followed by an atom or ring closure",
                    ));
                }
                if prev.is_none() {
                    return Err(SmilesError::new(
                        SmilesErrorKind::UnmatchedParen,
                        i,
                        "branch opened before any atom",
                    ));
                }
                stack.push((prev, i));
                i += 1;
            }
            b')' => {
                if let Some((_, p)) = pending {
                    return Err(SmilesError::new(
                        SmilesErrorKind::UnknownSymbol,
                        p,
                        "bond symbol not followed by an atom or ring closure",
                    ));
                }
                match stack.pop() {
                    Some((restored, _)) => prev = restored,
                    None => {
                        return Err(SmilesError::new(
                            SmilesErrorKind::UnmatchedParen,
                            i,
                            "no open branch to close",
                        ));
                    }
                }
                i += 1;
            }
            b'1'..=b'9' => {
                let digit = b - b'0';
                let node = match prev {
                    Some(u) => u,
                    None => {
                        return Err(SmilesError::new(
                            SmilesErrorKind::UnmatchedRing,
                            i,
                            "ring closure before any atom",
                        ));
                    }
                };
                let explicit = pending.take().map(|(t, _)| t);
                match rings.remove(&digit) {
                    None => {
                        rings.insert(digit, (node, explicit, i));
                    }
                    Some((open_node, open_order, _)) => {
                        let order = match (open_order, explicit) {
                            (None, None) => BondType::Single,
                            (Some(t), None) | (None, Some(t)) => t,
                            (Some(a), Some(b)) if a == b => a,
                            (Some(_), Some(_)) => {
                                return Err(SmilesError::new(
                                    SmilesErrorKind::UnmatchedRing,
                                    i,
                                    format!("ring closure {digit} bond order mismatch"),
                                ));
                            }
                        };
                        let g = graph.as_ref().expect("ring requires an atom");
                        match g.add_bond(open_node, node, order) {
                            Ok(g2) => graph = Some(g2),
                            Err(v) => {
                                return Err(SmilesError::new(
                                    SmilesErrorKind::ValenceViolation,
                                    i,
                                    v.to_string(),
                                ));
                            }
                        }
                    }
                }
                i += 1;
            }
            _ => {
                // Greedy atom token: try two bytes, then one.
                let (atom, width) = match atom_token(bytes, i) {
                    Some(hit) => hit,
                    None => {
                        return Err(SmilesError::new(
                            SmilesErrorKind::UnknownSymbol,
                            i,
                            format!("unexpected character '{}'", bytes[i] as char),
                        ));
                    }
                };
                match (graph.take(), prev) {
                    (None, _) => {
                        if let Some((_, p)) = pending {
                            return Err(SmilesError::new(
                                SmilesErrorKind::UnknownSymbol,
                                p,
                                "bond symbol before any atom",
                            ));
                        }
                        graph = Some(MolGraph::single_atom(atom).expect("alphabet atom"));
                        prev = Some(0);
                    }
                    (Some(g), Some(u)) => {
                        let order = pending.take().map_or(BondType::Single, |(t, _)| t);
                        match g.attach_atom(u, atom, order) {
                            Ok(g2) => {
                                prev = Some(g2.n() - 1);
                                graph = Some(g2);
                            }
                            Err(v) => {
                                return Err(SmilesError::new(
                                    SmilesErrorKind::ValenceViolation,
                                    i,
                                    v.to_string(),
                                ));
                            }
                        }
                    }
                    (Some(_), None) => unreachable!("graph exists without attachment point"),
                }
                i += width;
            }
        }
    }

    if let Some((_, p)) = pending {
        return Err(SmilesError::new(
            SmilesErrorKind::UnknownSymbol,
            p,
            "bond symbol not followed by an atom or ring closure",
        ));
    }
    if let Some((_, p)) = stack.last() {
        return Err(SmilesError::new(
            SmilesErrorKind::UnmatchedParen,
            *p,
            "branch never closed",
        ));
    }
    if let Some((digit, (_, _, p))) = rings.iter().min_by_key(|(_, (_, _, p))| *p) {
        return Err(SmilesError::new(
            SmilesErrorKind::UnmatchedRing,
            *p,
            format!("ring closure {digit} never closed"),
        ));
    }
    match graph {
        Some(g) => Ok(g),
        None => Err(SmilesError::new(
            SmilesErrorKind::EmptyInput,
            0,
            "no atoms in input",
        )),
    }
}

fn atom_token(bytes: &[u8], i: usize) -> Option<(usize, usize)> {
    if i + 1 < bytes.len() {
        let two = std::str::from_utf8(&bytes[i..i + 2]).ok()?;
        if let Some(idx) = atom_index(two) {
            return Some((idx, 2));
        }
    }
    let one = std::str::from_utf8(&bytes[i..i + 1]).ok()?;
    atom_index(one).map(|idx| (idx, 1))
}

/// Errors from the SMILES writer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WriteError {
    #[error("cannot write a disconnected graph")]
    Disconnected,
    #[error("more than 9 ring closures open at once")]
    TooManyOpenRings,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// Write a molecular graph as a SMILES string.
///
/// Deterministic: traversal starts at the lowest-index node of highest
/// degree and visits neighbors in ascending node order; ring-closure digits
/// are allocated smallest-free-first as sites are emitted and freed on
/// closure. Single bonds are implicit; ring-closure bond orders are written
/// at both sites. At most 9 closures may be open simultaneously.
pub fn write(g: &MolGraph) -> Result<String, WriteError> {
    g.validate(None)
        .map_err(|e| WriteError::InvalidGraph(e.to_string()))?;
    if !g.is_connected() {
        return Err(WriteError::Disconnected);
    }
    let n = g.n();

    // Start at the lowest-index node of highest degree.
    let degree = |u: usize| g.neighbors(u).len();
    let start = (0..n)
        .max_by(|&a, &b| degree(a).cmp(&degree(b)).then(b.cmp(&a)))
        .expect("non-empty graph");

    // Pass 1: classify edges into spanning-tree and ring-closure edges.
    let mut visited = vec![false; n];
    let mut tree_children: Vec<Vec<usize>> = vec![Vec::new(); n];
    // Ring closures in discovery order, keyed canonically (min, max).
    let mut closures: Vec<(usize, usize)> = Vec::new();
    let mut closure_set: HashMap<(usize, usize), usize> = HashMap::new();
    // Iterative DFS preserving ascending-neighbor order.
    let mut preorder_rank = vec![usize::MAX; n];
    let mut rank = 0;
    let mut stack: Vec<(usize, Option<usize>)> = vec![(start, None)];
    while let Some((u, parent)) = stack.pop() {
        if visited[u] {
            continue;
        }
        visited[u] = true;
        preorder_rank[u] = rank;
        rank += 1;
        if let Some(p) = parent {
            tree_children[p].push(u);
        }
        // Classify back edges in ascending neighbor order, then push the
        // unvisited neighbors in reverse so the smallest is processed first.
        for (v, _) in g.neighbors(u) {
            if Some(v) == parent || !visited[v] {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if !closure_set.contains_key(&key) {
                closure_set.insert(key, closures.len());
                closures.push(key);
            }
        }
        for (v, _) in g.neighbors(u).into_iter().rev() {
            if Some(v) != parent && !visited[v] {
                stack.push((v, Some(u)));
            }
        }
    }
    // The iterative pop order can visit a node from a later-pushed branch;
    // recompute children order by preorder rank for determinism.
    for children in &mut tree_children {
        children.sort_by_key(|&c| preorder_rank[c]);
    }

    // Closures incident to each node, in discovery order.
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ci, &(a, b)) in closures.iter().enumerate() {
        incident[a].push(ci);
        incident[b].push(ci);
    }
    for inc in &mut incident {
        inc.sort_unstable();
    }

    // Pass 2: emit, allocating digits as closure sites appear.
    let mut out = String::new();
    let mut digit_of: HashMap<usize, u8> = HashMap::new();
    let mut free_digits: Vec<u8> = (1..=9).rev().collect(); // pop() yields 1 first
    let mut emit_stack: Vec<Frame> = vec![Frame::Enter(start, None)];

    enum Frame {
        Enter(usize, Option<BondType>),
        Leave,
        Open,
        Close,
    }

    while let Some(frame) = emit_stack.pop() {
        match frame {
            Frame::Open => out.push('('),
            Frame::Close => out.push(')'),
            Frame::Leave => {}
            Frame::Enter(u, via) => {
                if let Some(b) = via {
                    out.push_str(bond_symbol(b));
                }
                out.push_str(g.atom_spec(u).symbol);
                for &ci in &incident[u] {
                    let (a, b) = closures[ci];
                    let order = g.bond(a, b).expect("closure edge exists");
                    match digit_of.get(&ci) {
                        None => {
                            let d = free_digits.pop().ok_or(WriteError::TooManyOpenRings)?;
                            digit_of.insert(ci, d);
                            out.push_str(bond_symbol(order));
                            out.push(char::from(b'0' + d));
                        }
                        Some(&d) => {
                            out.push_str(bond_symbol(order));
                            out.push(char::from(b'0' + d));
                            // Free the digit for reuse, smallest-first.
                            let pos = free_digits.partition_point(|&x| x > d);
                            free_digits.insert(pos, d);
                        }
                    }
                }
                // Children: all but the last wrapped in parentheses.
                let children = &tree_children[u];
                for (k, &c) in children.iter().enumerate().rev() {
                    let bond = g.bond(u, c).expect("tree edge exists");
                    if k + 1 == children.len() {
                        emit_stack.push(Frame::Enter(c, Some(bond)));
                    } else {
                        emit_stack.push(Frame::Close);
                        emit_stack.push(Frame::Enter(c, Some(bond)));
                        emit_stack.push(Frame::Open);
                    }
                }
                emit_stack.push(Frame::Leave);
            }
        }
    }
    Ok(out)
}

fn bond_symbol(b: BondType) -> &'static str {
    match b {
        BondType::Single => "",
        BondType::Double => "=",
        BondType::Triple => "#",
    }
}

/// One rejected corpus line.
#[derive(Debug, Clone)]
pub struct CorpusDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub text: String,
    pub reason: String,
}

/// A loaded corpus: accepted molecules plus per-line rejection diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub molecules: Vec<MolGraph>,
    pub diagnostics: Vec<CorpusDiagnostic>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus {path} contains no usable molecules")]
    Empty { path: PathBuf },
}

/// Load a line-oriented SMILES corpus.
///
/// Blank lines and lines whose first non-space character is `#` are
/// skipped (an atom token can never start a line with `#`, so the marker is
/// unambiguous). Lines that fail to parse or exceed `atom_cap` atoms are
/// collected as diagnostics rather than aborting the load; a corpus with no
/// usable molecules at all is an error.
pub fn load_corpus(path: &Path, atom_cap: usize) -> Result<Corpus, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(load_corpus_str(&content, atom_cap, path)?)
}

fn load_corpus_str(
    content: &str,
    atom_cap: usize,
    path: &Path,
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse(line) {
            Ok(g) if g.n() <= atom_cap => corpus.molecules.push(g),
            Ok(g) => corpus.diagnostics.push(CorpusDiagnostic {
                line: idx + 1,
                text: line.to_string(),
                reason: format!("{} atoms exceed the cap of {atom_cap}", g.n()),
            }),
            Err(e) => corpus.diagnostics.push(CorpusDiagnostic {
                line: idx + 1,
                text: line.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    if corpus.molecules.is_empty() {
        return Err(CorpusError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{is_isomorphic, ATOMS};

    fn roundtrip(s: &str) {
        let g = parse(s).unwrap();
        let written = write(&g).unwrap();
        let g2 = parse(&written).unwrap();
        assert!(
            is_isomorphic(&g, &g2).unwrap(),
            "round trip broke {s} -> {written}"
        );
    }

    #[test]
    fn single_atoms_parse() {
        for spec in &ATOMS {
            let g = parse(spec.symbol).unwrap();
            assert_eq!(g.n(), 1);
            assert_eq!(g.atom_spec(0).symbol, spec.symbol);
        }
    }

    #[test]
    fn chains_bonds_and_branches() {
        let g = parse("CCO").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.bond_count(), 2);

        let g = parse("C=O").unwrap();
        assert_eq!(g.bond(0, 1), Some(BondType::Double));

        let g = parse("C#N").unwrap();
        assert_eq!(g.bond(0, 1), Some(BondType::Triple));

        // Explicit single bonds are accepted.
        let g = parse("C-C").unwrap();
        assert_eq!(g.bond(0, 1), Some(BondType::Single));

        // Isobutane: central carbon with three neighbors.
        let g = parse("CC(C)C").unwrap();
        assert_eq!(g.neighbors(1).len(), 3);

        // Branch with a double bond inside: acetic-acid-like backbone.
        let g = parse("CC(=O)O").unwrap();
        assert_eq!(g.bond(1, 2), Some(BondType::Double));
        assert_eq!(g.bond(1, 3), Some(BondType::Single));
    }

    #[test]
    fn two_letter_atoms_win_greedily() {
        let g = parse("ClBr").unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.atom_spec(0).symbol, "Cl");
        assert_eq!(g.atom_spec(1).symbol, "Br");
    }

    #[test]
    fn rings_close_and_digits_are_reusable() {
        let g = parse("C1CC1").unwrap();
        assert_eq!(g.bond_count(), 3);
        assert!(g.bond(0, 2).is_some());

        // Digit 1 reused after closing.
        let g = parse("C1CC1C1CC1").unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.bond_count(), 7);
    }

    #[test]
    fn ring_bond_order_agreement() {
        let g = parse("C=1CCCCC=1").unwrap();
        assert_eq!(g.bond(0, 5), Some(BondType::Double));

        // One side specifying the order is enough.
        let g = parse("C1CCCCC=1").unwrap();
        assert_eq!(g.bond(0, 5), Some(BondType::Double));

        let err = parse("C=1CCCCC#1").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::UnmatchedRing);
        assert!(err.message.contains("mismatch"));
    }

    #[test]
    fn error_positions_are_reported() {
        let err = parse("C(").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnmatchedParen, 1));

        let err = parse("C)").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnmatchedParen, 1));

        let err = parse("C1CC").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnmatchedRing, 1));

        let err = parse("CXC").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnknownSymbol, 1));

        let err = parse("").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::EmptyInput);

        let err = parse("C=").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnknownSymbol, 1));

        // A doubled bond symbol points at the first, dangling one.
        let err = parse("C==C").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnknownSymbol, 1));

        let err = parse("=C").unwrap_err();
        assert_eq!((err.kind, err.pos), (SmilesErrorKind::UnknownSymbol, 0));
    }

    #[test]
    fn valence_violations_point_at_the_offender() {
        // Triple bond between oxygens overflows at the second O.
        let err = parse("O#O").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::ValenceViolation);
        assert_eq!(err.pos, 2);

        // Chlorine cannot take a second bond.
        let err = parse("CClC").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::ValenceViolation);
        assert_eq!(err.pos, 3);

        // A digit pairing with itself on the same atom is a self bond.
        let err = parse("C11").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::ValenceViolation);
        assert!(err.message.contains("self bond"));

        // Pentavalent carbon via ring closure.
        let err = parse("C1(C)(C)(C)C1").unwrap_err();
        assert_eq!(err.kind, SmilesErrorKind::ValenceViolation);
    }

    #[test]
    fn writer_is_deterministic_and_starts_at_the_hub() {
        let g = parse("CC(C)(C)C").unwrap();
        let s1 = write(&g).unwrap();
        let s2 = write(&g).unwrap();
        assert_eq!(s1, s2);
        // The highest-degree node (the central carbon) leads.
        assert_eq!(s1, "C(C)(C)(C)C");
    }

    #[test]
    fn writer_round_trips_representative_molecules() {
        for s in [
            "C",
            "I",
            "CCO",
            "C=O",
            "C#N",
            "CC(C)C",
            "C1CC1",
            "C1CCCCC1",
            "C=1CCCCC=1",
            "CC(=O)O",
            "ClC(Br)I",
            "NC(=O)CP",
            "FC(F)F",
            "C1CC1C1CC1",
            "SC1CCCCC1S",
            "O=C1CCC1",
            "C#CC#CC",
        ] {
            roundtrip(s);
        }
    }

    #[test]
    fn writer_rejects_disconnected_graphs() {
        let g = MolGraph::from_parts_unchecked(vec![0, 0], vec![None; 4]);
        assert_eq!(write(&g).unwrap_err(), WriteError::Disconnected);
    }

    /// Chain `0..=21` with rungs `(i, i+11)`, plus two leaves on node 0 so
    /// the writer provably starts there and walks the chain in order. Every
    /// rung opens at its low end before any closes, so `rungs` controls the
    /// peak number of simultaneously open ring closures.
    fn ladder(rungs: usize) -> MolGraph {
        let mut g = MolGraph::single_atom(0).unwrap();
        for i in 1..22 {
            g = g.attach_atom(i - 1, 0, BondType::Single).unwrap();
        }
        for i in 0..rungs {
            g = g.add_bond(i, i + 11, BondType::Single).unwrap();
        }
        // Leaves to make node 0 the unique highest-degree start.
        g = g.attach_atom(0, 5, BondType::Single).unwrap();
        g.attach_atom(0, 5, BondType::Single).unwrap()
    }

    #[test]
    fn nine_simultaneous_rings_fit() {
        let g = ladder(9);
        let s = write(&g).unwrap();
        let g2 = parse(&s).unwrap();
        assert_eq!(g2.n(), g.n());
        assert_eq!(g2.bond_count(), g.bond_count());
        assert_eq!(
            crate::molgraph::fingerprint_default(&g),
            crate::molgraph::fingerprint_default(&g2)
        );
    }

    #[test]
    fn ten_simultaneous_rings_overflow() {
        let g = ladder(11);
        assert_eq!(write(&g).unwrap_err(), WriteError::TooManyOpenRings);
    }

    #[test]
    fn corpus_loads_with_diagnostics() {
        let content = "\
# toy corpus
CCO

C1CC1
C==C
CX
";
        let corpus = load_corpus_str(content, 38, Path::new("inline")).unwrap();
        assert_eq!(corpus.molecules.len(), 2);
        assert_eq!(corpus.diagnostics.len(), 2);
        assert_eq!(corpus.diagnostics[0].line, 5);
        assert!(corpus.diagnostics[0].reason.contains("unknown symbol"));
    }

    #[test]
    fn corpus_cap_rejections_are_diagnosed() {
        let long_chain = "C".repeat(40);
        let content = format!("CC\n{long_chain}\n");
        let corpus = load_corpus_str(&content, 38, Path::new("inline")).unwrap();
        assert_eq!(corpus.molecules.len(), 1);
        assert_eq!(corpus.diagnostics.len(), 1);
        assert!(corpus.diagnostics[0].reason.contains("cap"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = load_corpus_str("# nothing\n", 38, Path::new("inline")).unwrap_err();
        assert!(matches!(err, CorpusError::Empty { .. }));
    }
}
