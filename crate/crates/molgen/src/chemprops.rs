//! Molecular property functions, chemical filters, and set metrics.
//!
//! These are the raw material for rewards (property scores, filter
//! verdicts) and for evaluation (diversity, similarity). Everything here is
//! a pure function over immutable graphs.

use thiserror::Error;

use crate::molgraph::{
    fingerprint_default, tanimoto, BondType, MolGraph, HYDROGEN_WEIGHT,
};

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("diversity needs at least 2 molecules, got {0}")]
    TooFewMolecules(usize),
    #[error("target range requires lo < hi, got {lo}..{hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("target range cannot wrap another target range")]
    NestedRange,
    #[error("unknown property '{0}' (expected molecular_weight, logp_lite, or penalized_logp_lite)")]
    UnknownProperty(String),
}

/// A scoring function over molecules, optionally wrapped in a target range.
///
/// `score` is the underlying property value; `reward_raw` is what an
/// optimizer should maximize — identical to `score` for plain properties,
/// and the negated L1 distance to the range center for `TargetRange`.
#[derive(Debug, Clone, PartialEq)]
pub enum PropertyFn {
    MolecularWeight,
    LogpLite,
    PenalizedLogpLite,
    TargetRange {
        inner: Box<PropertyFn>,
        lo: f64,
        hi: f64,
    },
}

impl PropertyFn {
    /// Parse a plain property name.
    pub fn parse(name: &str) -> Result<PropertyFn, ChemError> {
        match name {
            "molecular_weight" => Ok(PropertyFn::MolecularWeight),
            "logp_lite" => Ok(PropertyFn::LogpLite),
            "penalized_logp_lite" => Ok(PropertyFn::PenalizedLogpLite),
            other => Err(ChemError::UnknownProperty(other.to_string())),
        }
    }

    /// Wrap a base property in a closed target interval.
    pub fn target_range(inner: PropertyFn, lo: f64, hi: f64) -> Result<PropertyFn, ChemError> {
        if matches!(inner, PropertyFn::TargetRange { .. }) {
            return Err(ChemError::NestedRange);
        }
        if !(lo < hi) {
            return Err(ChemError::BadRange { lo, hi });
        }
        Ok(PropertyFn::TargetRange {
            inner: Box::new(inner),
            lo,
            hi,
        })
    }

    /// The property value S(g).
    pub fn score(&self, g: &MolGraph) -> f64 {
        match self {
            PropertyFn::MolecularWeight => molecular_weight(g),
            PropertyFn::LogpLite => logp_lite(g),
            PropertyFn::PenalizedLogpLite => penalized_logp_lite(g),
            PropertyFn::TargetRange { inner, .. } => inner.score(g),
        }
    }

    /// The quantity an optimizer maximizes. For a target range this is
    /// `−|S(g) − center|`, which peaks at zero exactly on the center.
    pub fn reward_raw(&self, g: &MolGraph) -> f64 {
        match self {
            PropertyFn::TargetRange { inner, lo, hi } => {
                -(inner.score(g) - (lo + hi) / 2.0).abs()
            }
            plain => plain.score(g),
        }
    }

    /// Whether the score lands inside the closed target interval.
    /// `None` for plain properties, which have no success notion.
    pub fn success(&self, g: &MolGraph) -> Option<bool> {
        match self {
            PropertyFn::TargetRange { inner, lo, hi } => {
                let s = inner.score(g);
                Some(*lo <= s && s <= *hi)
            }
            _ => None,
        }
    }

    /// Stable name for reports.
    pub fn name(&self) -> String {
        match self {
            PropertyFn::MolecularWeight => "molecular_weight".to_string(),
            PropertyFn::LogpLite => "logp_lite".to_string(),
            PropertyFn::PenalizedLogpLite => "penalized_logp_lite".to_string(),
            PropertyFn::TargetRange { inner, lo, hi } => {
                format!("{}[{lo},{hi}]", inner.name())
            }
        }
    }
}

/// Molecular weight: atomic weights plus implicit hydrogens at 1.008 each.
pub fn molecular_weight(g: &MolGraph) -> f64 {
    (0..g.n())
        .map(|u| g.atom_spec(u).weight + f64::from(g.implicit_hydrogens(u)) * HYDROGEN_WEIGHT)
        .sum()
}

/// Additive per-atom octanol-water partition estimate.
pub fn logp_lite(g: &MolGraph) -> f64 {
    (0..g.n()).map(|u| g.atom_spec(u).logp).sum()
}

/// Size of the largest ring, measured as the maximum over edges of the
/// smallest cycle through that edge; 0 for acyclic graphs.
///
/// The smallest cycle through edge (u,v) is 1 + the shortest path from u to
/// v with the edge removed, found by breadth-first search. Bridge edges lie
/// on no cycle and contribute nothing.
pub fn largest_ring_size(g: &MolGraph) -> usize {
    let n = g.n();
    let mut largest = 0;
    for u in 0..n {
        for (v, _) in g.neighbors(u) {
            if v < u {
                continue; // each edge once
            }
            if let Some(dist) = shortest_path_avoiding_edge(g, u, v) {
                largest = largest.max(dist + 1);
            }
        }
    }
    largest
}

fn shortest_path_avoiding_edge(g: &MolGraph, u: usize, v: usize) -> Option<usize> {
    let n = g.n();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[u] = 0;
    queue.push_back(u);
    while let Some(x) = queue.pop_front() {
        if x == v {
            return Some(dist[x]);
        }
        for (y, _) in g.neighbors(x) {
            if (x == u && y == v) || (x == v && y == u) {
                continue; // the removed edge
            }
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    None
}

/// LogP with a penalty for rings larger than six atoms.
pub fn penalized_logp_lite(g: &MolGraph) -> f64 {
    let ring = largest_ring_size(g);
    logp_lite(g) - (ring.saturating_sub(6)) as f64
}

/// Outcome of the reactive-pattern blacklist scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterVerdict {
    pub passed: bool,
    pub violated_patterns: Vec<&'static str>,
}

/// Scan a molecule against a small blacklist of reactive substructures:
///
/// * `peroxide` — an O–O single bond;
/// * `azide-like` — a nitrogen with two or more nitrogen neighbors
///   (an N–N–N chain);
/// * `halogen-double` — a double bond between two halogens. Monovalent
///   halogens make this chemically impossible; the pattern stays in the
///   list as a self-test that the scanner sees every bond.
/// * `sulfur-sulfur-double` — an S=S double bond.
pub fn filter_check(g: &MolGraph) -> FilterVerdict {
    let sym = |u: usize| g.atom_spec(u).symbol;
    let is_halogen = |u: usize| matches!(sym(u), "F" | "Cl" | "Br" | "I");

    let mut violated = Vec::new();
    let mut peroxide = false;
    let mut halogen_double = false;
    let mut sulfur_double = false;
    for u in 0..g.n() {
        for (v, bond) in g.neighbors(u) {
            if v < u {
                continue;
            }
            match bond {
                BondType::Single if sym(u) == "O" && sym(v) == "O" => peroxide = true,
                BondType::Double if is_halogen(u) && is_halogen(v) => halogen_double = true,
                BondType::Double if sym(u) == "S" && sym(v) == "S" => sulfur_double = true,
                _ => {}
            }
        }
    }
    let azide_like = (0..g.n()).any(|u| {
        sym(u) == "N"
            && g.neighbors(u)
                .iter()
                .filter(|&&(v, _)| sym(v) == "N")
                .count()
                >= 2
    });

    if peroxide {
        violated.push("peroxide");
    }
    if azide_like {
        violated.push("azide-like");
    }
    if halogen_double {
        violated.push("halogen-double");
    }
    if sulfur_double {
        violated.push("sulfur-sulfur-double");
    }
    FilterVerdict {
        passed: violated.is_empty(),
        violated_patterns: violated,
    }
}

/// Mean pairwise Tanimoto distance over a set of molecules.
pub fn diversity(mols: &[MolGraph]) -> Result<f64, ChemError> {
    if mols.len() < 2 {
        return Err(ChemError::TooFewMolecules(mols.len()));
    }
    let fps: Vec<_> = mols.iter().map(fingerprint_default).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..fps.len() {
        for j in (i + 1)..fps.len() {
            total += 1.0 - tanimoto(&fps[i], &fps[j]).expect("equal widths");
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Tanimoto similarity of two molecules' fingerprints.
pub fn similarity(g1: &MolGraph, g2: &MolGraph) -> f64 {
    tanimoto(&fingerprint_default(g1), &fingerprint_default(g2)).expect("equal widths")
}
