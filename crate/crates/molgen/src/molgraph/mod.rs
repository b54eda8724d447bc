//! Chemistry-aware molecular graphs.
//!
//! A [`MolGraph`] is an undirected graph whose nodes carry atom types from a
//! fixed nine-element alphabet and whose edges carry one of three bond
//! orders. Construction enforces chemistry: a bond that would push either
//! endpoint past its maximum valence is rejected, so graphs built through
//! this API are valid by construction. Hydrogens are implicit — every atom
//! is assumed to carry `max_valence - explicit_valence` hydrogen atoms.

mod fingerprint;
mod iso;

pub use fingerprint::{
    fingerprint, fingerprint_default, tanimoto, Fingerprint, FingerprintError, DEFAULT_FP_BITS,
    DEFAULT_FP_RADIUS,
};
pub use iso::{is_isomorphic, IsoError, MAX_ISO_NODES};

use rand::Rng;
use thiserror::Error;

use crate::tensor::Tensor;

/// Static description of one atom type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomSpec {
    /// Element symbol as written in SMILES.
    pub symbol: &'static str,
    /// Maximum total bond order the atom supports.
    pub max_valence: u32,
    /// Standard atomic weight.
    pub weight: f64,
    /// Additive lipophilicity contribution used by the logP estimate.
    pub logp: f64,
}

/// The atom alphabet. Order is fixed: it defines atom indices, one-hot
/// feature layout, and the scaffold ordering used by the build environment.
pub const ATOMS: [AtomSpec; 9] = [
    AtomSpec { symbol: "C", max_valence: 4, weight: 12.011, logp: 0.15 },
    AtomSpec { symbol: "N", max_valence: 3, weight: 14.007, logp: -0.50 },
    AtomSpec { symbol: "O", max_valence: 2, weight: 15.999, logp: -0.40 },
    AtomSpec { symbol: "S", max_valence: 2, weight: 32.06, logp: 0.10 },
    AtomSpec { symbol: "P", max_valence: 3, weight: 30.974, logp: -0.30 },
    AtomSpec { symbol: "F", max_valence: 1, weight: 18.998, logp: 0.20 },
    AtomSpec { symbol: "Cl", max_valence: 1, weight: 35.45, logp: 0.45 },
    AtomSpec { symbol: "Br", max_valence: 1, weight: 79.904, logp: 0.60 },
    AtomSpec { symbol: "I", max_valence: 1, weight: 126.904, logp: 0.80 },
];

/// Weight of an implicit hydrogen.
pub const HYDROGEN_WEIGHT: f64 = 1.008;

/// Number of distinct atom types.
pub const NUM_ATOM_TYPES: usize = ATOMS.len();

/// Number of distinct bond orders.
pub const NUM_BOND_TYPES: usize = 3;

/// Node feature width: one-hot atom type plus normalized explicit valence.
pub const NODE_FEATURE_DIM: usize = NUM_ATOM_TYPES + 1;

/// Look up an atom type index by element symbol.
pub fn atom_index(symbol: &str) -> Option<usize> {
    ATOMS.iter().position(|a| a.symbol == symbol)
}

/// Bond orders supported by the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    Single,
    Double,
    Triple,
}

impl BondType {
    /// Valence consumed at each endpoint.
    pub fn order(self) -> u32 {
        match self {
            BondType::Single => 1,
            BondType::Double => 2,
            BondType::Triple => 3,
        }
    }

    /// Index into edge-type-conditioned structures (0, 1, 2).
    pub fn index(self) -> usize {
        self.order() as usize - 1
    }

    pub fn from_index(i: usize) -> Option<BondType> {
        match i {
            0 => Some(BondType::Single),
            1 => Some(BondType::Double),
            2 => Some(BondType::Triple),
            _ => None,
        }
    }

    pub const ALL: [BondType; NUM_BOND_TYPES] =
        [BondType::Single, BondType::Double, BondType::Triple];
}

/// A chemical rule violation; returned by mutating operations, leaving the
/// input graph untouched.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("self bond on node {node}")]
    SelfBond { node: usize },
    #[error("nodes {u} and {v} are already bonded")]
    AlreadyBonded { u: usize, v: usize },
    #[error(
        "valence exceeded on node {node} ({symbol}): {would_be} > max {max}"
    )]
    ValenceExceeded {
        node: usize,
        symbol: &'static str,
        would_be: u32,
        max: u32,
    },
}

/// Structural errors that are not chemical violations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MolGraphError {
    #[error("unknown atom index {0} (alphabet has {} types)", NUM_ATOM_TYPES)]
    UnknownAtom(usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph must have at least one atom")]
    Empty,
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// An undirected molecular graph with typed atoms and typed bonds.
///
/// Node indices are dense (`0..n()`). The bond matrix is kept symmetric
/// with an empty diagonal, and at most one bond connects any pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<u8>,
    /// Flattened n x n upper-triangle-mirrored adjacency; `None` = no bond.
    bonds: Vec<Option<BondType>>,
}

impl MolGraph {
    /// A graph holding a single unbonded atom.
    pub fn single_atom(atom: usize) -> Result<MolGraph, MolGraphError> {
        if atom >= NUM_ATOM_TYPES {
            return Err(MolGraphError::UnknownAtom(atom));
        }
        Ok(MolGraph {
            atoms: vec![atom as u8],
            bonds: vec![None],
        })
    }

    /// Number of atoms.
    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    /// Atom type index of a node.
    pub fn atom(&self, u: usize) -> usize {
        self.atoms[u] as usize
    }

    /// Static spec of a node's atom type.
    pub fn atom_spec(&self, u: usize) -> &'static AtomSpec {
        &ATOMS[self.atoms[u] as usize]
    }

    /// Bond between two nodes, if any.
    pub fn bond(&self, u: usize, v: usize) -> Option<BondType> {
        self.bonds[u * self.n() + v]
    }

    /// Neighbors of a node with bond types, in ascending node order.
    pub fn neighbors(&self, u: usize) -> Vec<(usize, BondType)> {
        let n = self.n();
        (0..n)
            .filter_map(|v| self.bonds[u * n + v].map(|b| (v, b)))
            .collect()
    }

    /// Number of bonds (each counted once).
    pub fn bond_count(&self) -> usize {
        let n = self.n();
        let mut c = 0;
        for u in 0..n {
            for v in (u + 1)..n {
                if self.bonds[u * n + v].is_some() {
                    c += 1;
                }
            }
        }
        c
    }

    /// All bonds as `(u, v, type)` with `u < v`, in lexicographic order.
    pub fn bonds(&self) -> Vec<(usize, usize, BondType)> {
        let n = self.n();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if let Some(b) = self.bonds[u * n + v] {
                    out.push((u, v, b));
                }
            }
        }
        out
    }

    /// Sum of bond orders at a node.
    pub fn explicit_valence(&self, u: usize) -> u32 {
        let n = self.n();
        (0..n)
            .filter_map(|v| self.bonds[u * n + v])
            .map(BondType::order)
            .sum()
    }

    /// Implicit hydrogens completing the atom's valence.
    pub fn implicit_hydrogens(&self, u: usize) -> u32 {
        self.atom_spec(u).max_valence - self.explicit_valence(u)
    }

    /// Whether a bond of the given type can be added without violating
    /// either endpoint's valence, pair uniqueness, or the no-self-bond rule.
    pub fn can_bond(&self, u: usize, v: usize, t: BondType) -> Result<(), Violation> {
        let n = self.n();
        assert!(u < n && v < n, "node index out of range: {u}, {v} vs n={n}");
        if u == v {
            return Err(Violation::SelfBond { node: u });
        }
        if self.bonds[u * n + v].is_some() {
            return Err(Violation::AlreadyBonded {
                u: u.min(v),
                v: u.max(v),
            });
        }
        for node in [u, v] {
            let spec = self.atom_spec(node);
            let would_be = self.explicit_valence(node) + t.order();
            if would_be > spec.max_valence {
                return Err(Violation::ValenceExceeded {
                    node,
                    symbol: spec.symbol,
                    would_be,
                    max: spec.max_valence,
                });
            }
        }
        Ok(())
    }

    /// A copy of this graph with one more bond. On violation the original is
    /// untouched and the violation describes what failed. Out-of-range
    /// indices are a caller bug and panic.
    pub fn add_bond(&self, u: usize, v: usize, t: BondType) -> Result<MolGraph, Violation> {
        self.can_bond(u, v, t)?;
        let mut g = self.clone();
        let n = g.n();
        g.bonds[u * n + v] = Some(t);
        g.bonds[v * n + u] = Some(t);
        Ok(g)
    }

    /// A copy of this graph with a fresh atom of type `atom` bonded to node
    /// `u` by a bond of type `t`. The new node index is `n()`.
    pub fn attach_atom(
        &self,
        u: usize,
        atom: usize,
        t: BondType,
    ) -> Result<MolGraph, Violation> {
        assert!(u < self.n(), "node index out of range: {u} vs n={}", self.n());
        assert!(atom < NUM_ATOM_TYPES, "unknown atom index {atom}");
        // Check the existing endpoint; the fresh atom only needs to support
        // the bond order itself.
        let spec = self.atom_spec(u);
        let would_be = self.explicit_valence(u) + t.order();
        if would_be > spec.max_valence {
            return Err(Violation::ValenceExceeded {
                node: u,
                symbol: spec.symbol,
                would_be,
                max: spec.max_valence,
            });
        }
        let fresh = &ATOMS[atom];
        if t.order() > fresh.max_valence {
            return Err(Violation::ValenceExceeded {
                node: self.n(),
                symbol: fresh.symbol,
                would_be: t.order(),
                max: fresh.max_valence,
            });
        }
        let old_n = self.n();
        let n = old_n + 1;
        let mut bonds = vec![None; n * n];
        for a in 0..old_n {
            for b in 0..old_n {
                bonds[a * n + b] = self.bonds[a * old_n + b];
            }
        }
        let mut atoms = self.atoms.clone();
        atoms.push(atom as u8);
        bonds[u * n + old_n] = Some(t);
        bonds[old_n * n + u] = Some(t);
        Ok(MolGraph { atoms, bonds })
    }

    /// The induced subgraph on the given nodes, renumbered to `0..len`.
    /// Indices must be distinct and in range.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<MolGraph, MolGraphError> {
        if nodes.is_empty() {
            return Err(MolGraphError::Empty);
        }
        let n_old = self.n();
        let mut seen = vec![false; n_old];
        for &u in nodes {
            if u >= n_old {
                return Err(MolGraphError::Invariant(format!(
                    "subgraph node {u} out of range (n={n_old})"
                )));
            }
            if seen[u] {
                return Err(MolGraphError::Invariant(format!(
                    "duplicate subgraph node {u}"
                )));
            }
            seen[u] = true;
        }
        let m = nodes.len();
        let atoms: Vec<u8> = nodes.iter().map(|&u| self.atoms[u]).collect();
        let mut bonds = vec![None; m * m];
        for (i, &u) in nodes.iter().enumerate() {
            for (j, &v) in nodes.iter().enumerate() {
                bonds[i * m + j] = self.bonds[u * n_old + v];
            }
        }
        Ok(MolGraph { atoms, bonds })
    }

    /// Whether every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for (v, _) in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Verify every structural invariant: dense indices, symmetric bond
    /// matrix, empty diagonal, known atom types, and valences within each
    /// atom's maximum. `cap`, when given, also bounds the atom count.
    pub fn validate(&self, cap: Option<usize>) -> Result<(), MolGraphError> {
        let n = self.n();
        if n == 0 {
            return Err(MolGraphError::Empty);
        }
        if let Some(cap) = cap {
            if n > cap {
                return Err(MolGraphError::Invariant(format!(
                    "atom count {n} exceeds cap {cap}"
                )));
            }
        }
        if self.bonds.len() != n * n {
            return Err(MolGraphError::Invariant(format!(
                "bond matrix length {} != n^2 = {}",
                self.bonds.len(),
                n * n
            )));
        }
        for u in 0..n {
            if self.atoms[u] as usize >= NUM_ATOM_TYPES {
                return Err(MolGraphError::UnknownAtom(self.atoms[u] as usize));
            }
            if self.bonds[u * n + u].is_some() {
                return Err(MolGraphError::Invariant(format!(
                    "self bond on node {u}"
                )));
            }
            for v in 0..n {
                if self.bonds[u * n + v] != self.bonds[v * n + u] {
                    return Err(MolGraphError::Invariant(format!(
                        "asymmetric bond between {u} and {v}"
                    )));
                }
            }
            let spec = self.atom_spec(u);
            let val = self.explicit_valence(u);
            if val > spec.max_valence {
                return Err(MolGraphError::Invariant(format!(
                    "valence {val} exceeds max {} on node {u} ({})",
                    spec.max_valence, spec.symbol
                )));
            }
        }
        Ok(())
    }

    /// Node feature matrix: per node, a one-hot atom type followed by the
    /// explicit valence normalized by the atom's maximum valence.
    pub fn node_features(&self) -> Tensor {
        let n = self.n();
        let mut data = vec![0.0; n * NODE_FEATURE_DIM];
        for u in 0..n {
            let row = u * NODE_FEATURE_DIM;
            data[row + self.atom(u)] = 1.0;
            let spec = self.atom_spec(u);
            data[row + NUM_ATOM_TYPES] =
                f64::from(self.explicit_valence(u)) / f64::from(spec.max_valence);
        }
        Tensor::new(vec![n, NODE_FEATURE_DIM], data).expect("feature shape")
    }

    /// Dense boolean adjacency slice for one bond type.
    pub fn edge_slice(&self, t: BondType) -> Vec<bool> {
        let n = self.n();
        let mut out = vec![false; n * n];
        for u in 0..n {
            for v in 0..n {
                if self.bonds[u * n + v] == Some(t) {
                    out[u * n + v] = true;
                }
            }
        }
        out
    }

    /// Test-support constructor that bypasses chemical checks; used to build
    /// deliberately broken graphs for validating `validate`.
    #[doc(hidden)]
    pub fn from_parts_unchecked(atoms: Vec<u8>, bonds: Vec<Option<BondType>>) -> MolGraph {
        MolGraph { atoms, bonds }
    }

    /// Stack several graphs into one graph with no bonds between the parts.
    /// Returns the union and each part's node range within it.
    pub fn disjoint_union(parts: &[&MolGraph]) -> (MolGraph, Vec<std::ops::Range<usize>>) {
        let total: usize = parts.iter().map(|g| g.n()).sum();
        let mut atoms = Vec::with_capacity(total);
        let mut bonds = vec![None; total * total];
        let mut ranges = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for g in parts {
            let n = g.n();
            atoms.extend_from_slice(&g.atoms);
            for u in 0..n {
                for v in 0..n {
                    bonds[(offset + u) * total + (offset + v)] = g.bonds[u * n + v];
                }
            }
            ranges.push(offset..offset + n);
            offset += n;
        }
        (MolGraph { atoms, bonds }, ranges)
    }
}

/// Sample a uniformly sized connected induced subgraph by randomized
/// frontier growth. Returns the subgraph and the map from subgraph node
/// index to original node index. Requires a connected input.
///
/// Every connected induced subgraph has positive probability: the size is
/// uniform on `1..=n`, the seed node is uniform, and each growth step picks
/// uniformly from the current frontier.
pub fn connected_subgraph_sample(
    g: &MolGraph,
    rng: &mut impl Rng,
) -> Result<(MolGraph, Vec<usize>), MolGraphError> {
    if !g.is_connected() {
        return Err(MolGraphError::Disconnected);
    }
    let n = g.n();
    let target = rng.gen_range(1..=n);
    let start = rng.gen_range(0..n);
    let mut chosen = vec![start];
    let mut in_chosen = vec![false; n];
    in_chosen[start] = true;
    let mut frontier: Vec<usize> = Vec::new();
    let mut in_frontier = vec![false; n];
    let extend_frontier = |u: usize, in_chosen: &[bool], frontier: &mut Vec<usize>,
                               in_frontier: &mut Vec<bool>| {
        for (v, _) in g.neighbors(u) {
            if !in_chosen[v] && !in_frontier[v] {
                in_frontier[v] = true;
                // Keep the frontier sorted so growth is order-independent.
                let pos = frontier.partition_point(|&x| x < v);
                frontier.insert(pos, v);
            }
        }
    };
    extend_frontier(start, &in_chosen, &mut frontier, &mut in_frontier);
    while chosen.len() < target {
        let pick = rng.gen_range(0..frontier.len());
        let u = frontier.remove(pick);
        in_frontier[u] = false;
        in_chosen[u] = true;
        chosen.push(u);
        extend_frontier(u, &in_chosen, &mut frontier, &mut in_frontier);
    }
    let sub = g.induced_subgraph(&chosen)?;
    Ok((sub, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    pub(crate) fn carbon() -> MolGraph {
        MolGraph::single_atom(atom_index("C").unwrap()).unwrap()
    }

    /// C-C-C chain.
    pub(crate) fn propane() -> MolGraph {
        let g = carbon();
        let g = g.attach_atom(0, 0, BondType::Single).unwrap();
        g.attach_atom(1, 0, BondType::Single).unwrap()
    }

    /// Three-carbon ring.
    pub(crate) fn cyclopropane() -> MolGraph {
        let g = propane();
        g.add_bond(0, 2, BondType::Single).unwrap()
    }

    #[test]
    fn atom_table_is_the_fixed_alphabet() {
        let symbols: Vec<&str> = ATOMS.iter().map(|a| a.symbol).collect();
        assert_eq!(symbols, ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I"]);
        let valences: Vec<u32> = ATOMS.iter().map(|a| a.max_valence).collect();
        assert_eq!(valences, [4, 3, 2, 2, 3, 1, 1, 1, 1]);
        assert_eq!(atom_index("Cl"), Some(6));
        assert_eq!(atom_index("Xe"), None);
    }

    #[test]
    fn single_atom_has_full_implicit_hydrogens() {
        let g = carbon();
        assert_eq!(g.n(), 1);
        assert_eq!(g.explicit_valence(0), 0);
        assert_eq!(g.implicit_hydrogens(0), 4);
        g.validate(Some(38)).unwrap();
    }

    #[test]
    fn unknown_atom_index_is_an_error() {
        let err = MolGraph::single_atom(99).unwrap_err();
        assert!(matches!(err, MolGraphError::UnknownAtom(99)));
    }

    #[test]
    fn add_bond_returns_new_graph_and_keeps_input() {
        let g = propane();
        let before = g.clone();
        let ring = g.add_bond(0, 2, BondType::Single).unwrap();
        assert_eq!(g, before);
        assert_eq!(ring.bond_count(), 3);
        assert_eq!(g.bond_count(), 2);
        ring.validate(None).unwrap();
    }

    #[test]
    fn add_bond_rejects_self_bonds() {
        let g = carbon();
        assert_eq!(
            g.add_bond(0, 0, BondType::Single).unwrap_err(),
            Violation::SelfBond { node: 0 }
        );
    }

    #[test]
    fn add_bond_rejects_duplicate_bonds() {
        let g = propane();
        let before = g.clone();
        assert_eq!(
            g.add_bond(0, 1, BondType::Double).unwrap_err(),
            Violation::AlreadyBonded { u: 0, v: 1 }
        );
        assert_eq!(g, before);
    }

    #[test]
    fn add_bond_rejects_valence_overflow() {
        // O supports total order 2: a triple bond overflows immediately.
        let o = MolGraph::single_atom(atom_index("O").unwrap()).unwrap();
        let o2 = o.attach_atom(0, atom_index("O").unwrap(), BondType::Single);
        assert!(o2.is_ok());
        let err = o
            .attach_atom(0, atom_index("O").unwrap(), BondType::Triple)
            .unwrap_err();
        assert_eq!(
            err,
            Violation::ValenceExceeded {
                node: 0,
                symbol: "O",
                would_be: 3,
                max: 2
            }
        );
    }

    #[test]
    fn fresh_atom_valence_is_checked_on_attach() {
        // F supports a single bond only.
        let c = carbon();
        let err = c
            .attach_atom(0, atom_index("F").unwrap(), BondType::Double)
            .unwrap_err();
        assert!(matches!(
            err,
            Violation::ValenceExceeded {
                symbol: "F",
                would_be: 2,
                max: 1,
                ..
            }
        ));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_index_panics() {
        let g = carbon();
        let _ = g.add_bond(0, 5, BondType::Single);
    }

    #[test]
    fn node_features_one_hot_plus_normalized_valence() {
        let g = propane();
        let f = g.node_features();
        assert_eq!(f.shape(), &[3, NODE_FEATURE_DIM]);
        // Node 1 is the middle carbon with two single bonds: valence 2/4.
        assert_eq!(f.at(1, 0), 1.0);
        for j in 1..NUM_ATOM_TYPES {
            assert_eq!(f.at(1, j), 0.0);
        }
        assert!((f.at(1, NUM_ATOM_TYPES) - 0.5).abs() < 1e-12);
        // Terminal carbon: valence 1/4.
        assert!((f.at(0, NUM_ATOM_TYPES) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn induced_subgraph_preserves_atoms_and_bonds() {
        let ring = cyclopropane();
        let sub = ring.induced_subgraph(&[2, 0]).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.bond(0, 1), Some(BondType::Single));
        assert!(sub.is_connected());
    }

    #[test]
    fn validate_catches_corruption() {
        // Asymmetric bond matrix.
        let g = MolGraph::from_parts_unchecked(
            vec![0, 0],
            vec![None, Some(BondType::Single), None, None],
        );
        assert!(g.validate(None).is_err());
        // Valence overflow behind the API's back: N with two doubles.
        let g = MolGraph::from_parts_unchecked(
            vec![1, 2, 2],
            vec![
                None,
                Some(BondType::Double),
                Some(BondType::Double),
                Some(BondType::Double),
                None,
                None,
                Some(BondType::Double),
                None,
                None,
            ],
        );
        assert!(g.validate(None).is_err());
        // Cap enforcement.
        assert!(propane().validate(Some(2)).is_err());
    }

    #[test]
    fn connectivity_check() {
        assert!(propane().is_connected());
        let disconnected = MolGraph::from_parts_unchecked(vec![0, 0], vec![None; 4]);
        assert!(!disconnected.is_connected());
    }

    #[test]
    fn subgraph_sampling_is_connected_and_map_consistent() {
        let g = cyclopropane()
            .attach_atom(0, atom_index("N").unwrap(), BondType::Single)
            .unwrap()
            .attach_atom(3, atom_index("O").unwrap(), BondType::Single)
            .unwrap();
        let mut r = rng::stream(11, "subgraph-test");
        let mut saw_full = false;
        let mut saw_single = false;
        for _ in 0..300 {
            let (sub, map) = connected_subgraph_sample(&g, &mut r).unwrap();
            assert!(sub.is_connected());
            sub.validate(None).unwrap();
            assert_eq!(sub.n(), map.len());
            for (i, &orig) in map.iter().enumerate() {
                assert_eq!(sub.atom(i), g.atom(orig));
                for (j, &orig_j) in map.iter().enumerate() {
                    if i != j {
                        assert_eq!(sub.bond(i, j), g.bond(orig, orig_j));
                    }
                }
            }
            saw_full |= sub.n() == g.n();
            saw_single |= sub.n() == 1;
        }
        assert!(saw_full, "full graph never sampled");
        assert!(saw_single, "singleton never sampled");
    }

    #[test]
    fn subgraph_sampling_requires_connected_input() {
        let disconnected = MolGraph::from_parts_unchecked(vec![0, 0], vec![None; 4]);
        let mut r = rng::stream(1, "subgraph-test");
        assert!(matches!(
            connected_subgraph_sample(&disconnected, &mut r),
            Err(MolGraphError::Disconnected)
        ));
    }

    #[test]
    fn disjoint_union_stacks_parts_without_cross_bonds() {
        let a = MolGraph::single_atom(0).unwrap(); // C
        let b = a.attach_atom(0, 2, BondType::Double).unwrap(); // C=O
        let c = MolGraph::single_atom(1).unwrap(); // N
        let (u, ranges) = MolGraph::disjoint_union(&[&a, &b, &c]);
        assert_eq!(u.n(), 4);
        assert_eq!(ranges, vec![0..1, 1..3, 3..4]);
        assert_eq!(u.atom(0), 0);
        assert_eq!(u.atom(1), 0);
        assert_eq!(u.atom(2), 2);
        assert_eq!(u.atom(3), 1);
        assert_eq!(u.bond(1, 2), Some(BondType::Double));
        // No bonds across part boundaries.
        for &(x, y) in &[(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)] {
            assert_eq!(u.bond(x, y), None, "({x},{y})");
        }
        u.validate(None).unwrap();
        assert!(!u.is_connected());
    }
}
