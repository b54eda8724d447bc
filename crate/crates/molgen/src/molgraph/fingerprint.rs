//! Circular (Morgan-style) fingerprints and Tanimoto similarity.
//!
//! Each atom starts from a hash of its type; for each radius step the hash
//! absorbs the sorted `(bond order, neighbor hash)` list, so after `r`
//! rounds it identifies the atom's radius-`r` neighborhood up to
//! isomorphism. Every identifier from every round sets one bit of a
//! fixed-length bitset. Hashing is a private stable mix, independent of the
//! standard library's hasher, so fingerprints are reproducible across
//! platforms and releases.

use thiserror::Error;

use super::MolGraph;

/// Default fingerprint width in bits.
pub const DEFAULT_FP_BITS: usize = 1024;

/// Default neighborhood radius.
pub const DEFAULT_FP_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
}

/// A fixed-length bitset fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    /// An empty fingerprint of the given width.
    pub fn empty(nbits: usize) -> Fingerprint {
        Fingerprint {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.nbits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        debug_assert!(bit < self.nbits);
        self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

/// Stable 64-bit mixing (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn combine(h: u64, x: u64) -> u64 {
    mix(h ^ mix(x))
}

/// Circular fingerprint of a molecular graph.
///
/// Node order does not matter: neighbor contributions are sorted before
/// hashing, so isomorphic graphs produce identical fingerprints.
pub fn fingerprint(g: &MolGraph, nbits: usize, radius: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(nbits);
    let n = g.n();
    // Round 0: atom types.
    let mut ids: Vec<u64> = (0..n)
        .map(|u| mix(0x6d6f_6c67_656e_0001 ^ g.atom(u) as u64))
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }
    for round in 1..=radius {
        let mut next = Vec::with_capacity(n);
        for u in 0..n {
            let mut env: Vec<(u32, u64)> = g
                .neighbors(u)
                .into_iter()
                .map(|(v, b)| (b.order(), ids[v]))
                .collect();
            env.sort_unstable();
            let mut h = combine(ids[u], round as u64);
            for (order, nid) in env {
                h = combine(h, u64::from(order));
                h = combine(h, nid);
            }
            next.push(h);
        }
        ids = next;
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

/// Fingerprint with default width and radius.
pub fn fingerprint_default(g: &MolGraph) -> Fingerprint {
    fingerprint(g, DEFAULT_FP_BITS, DEFAULT_FP_RADIUS)
}

/// Tanimoto similarity: |intersection| / |union| of set bits. Two empty
/// fingerprints count as identical (similarity 1).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch {
            left: a.nbits,
            right: b.nbits,
        });
    }
    let mut inter = 0u32;
    let mut union = 0u32;
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

#[cfg(test)]
mod tests {
    use super::super::{atom_index, BondType, MolGraph};
    use super::*;

    fn chain(symbols: &[&str]) -> MolGraph {
        let mut g = MolGraph::single_atom(atom_index(symbols[0]).unwrap()).unwrap();
        for (i, s) in symbols.iter().enumerate().skip(1) {
            g = g
                .attach_atom(i - 1, atom_index(s).unwrap(), BondType::Single)
                .unwrap();
        }
        g
    }

    #[test]
    fn fingerprints_are_deterministic() {
        let g = chain(&["C", "N", "O"]);
        let a = fingerprint_default(&g);
        let b = fingerprint_default(&g);
        assert_eq!(a, b);
        assert!(a.count_ones() > 0);
    }

    #[test]
    fn isomorphic_builds_share_fingerprints() {
        // N-C-O built in two different node orders.
        let a = chain(&["N", "C", "O"]);
        let mut b = MolGraph::single_atom(atom_index("O").unwrap()).unwrap();
        b = b
            .attach_atom(0, atom_index("C").unwrap(), BondType::Single)
            .unwrap();
        b = b
            .attach_atom(1, atom_index("N").unwrap(), BondType::Single)
            .unwrap();
        assert_eq!(fingerprint_default(&a), fingerprint_default(&b));
    }

    #[test]
    fn different_molecules_differ() {
        let a = chain(&["C", "C", "O"]);
        let b = chain(&["C", "C", "N"]);
        assert_ne!(fingerprint_default(&a), fingerprint_default(&b));
        let sim = tanimoto(&fingerprint_default(&a), &fingerprint_default(&b)).unwrap();
        assert!(sim < 1.0);
    }

    #[test]
    fn bond_order_changes_the_fingerprint() {
        let single = MolGraph::single_atom(0)
            .unwrap()
            .attach_atom(0, 0, BondType::Single)
            .unwrap();
        let double = MolGraph::single_atom(0)
            .unwrap()
            .attach_atom(0, 0, BondType::Double)
            .unwrap();
        assert_ne!(fingerprint_default(&single), fingerprint_default(&double));
    }

    #[test]
    fn tanimoto_identities() {
        let g = chain(&["C", "C", "C"]);
        let fp = fingerprint_default(&g);
        assert_eq!(tanimoto(&fp, &fp).unwrap(), 1.0);

        let empty_a = Fingerprint::empty(64);
        let empty_b = Fingerprint::empty(64);
        assert_eq!(tanimoto(&empty_a, &empty_b).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_rejects_mismatched_widths() {
        let a = Fingerprint::empty(64);
        let b = Fingerprint::empty(128);
        assert!(matches!(
            tanimoto(&a, &b),
            Err(FingerprintError::LengthMismatch {
                left: 64,
                right: 128
            })
        ));
    }

    #[test]
    fn tanimoto_range_and_symmetry() {
        let gs = [
            chain(&["C", "C"]),
            chain(&["C", "O"]),
            chain(&["N", "N", "C"]),
            chain(&["C", "C", "C", "C"]),
        ];
        for a in &gs {
            for b in &gs {
                let fa = fingerprint_default(a);
                let fb = fingerprint_default(b);
                let s1 = tanimoto(&fa, &fb).unwrap();
                let s2 = tanimoto(&fb, &fa).unwrap();
                assert!((0.0..=1.0).contains(&s1));
                assert_eq!(s1, s2);
            }
        }
    }
}
