//! Graph isomorphism for small molecular graphs.
//!
//! Intended for test support and evaluation (round-trip checks, duplicate
//! detection), not large-scale matching, so inputs are capped at
//! [`MAX_ISO_NODES`] nodes. The check runs iterative neighborhood
//! refinement first — a cheap necessary condition that settles most
//! non-isomorphic pairs — and falls back to exhaustive backtracking over
//! color-compatible assignments for the rest, which makes the result exact.

use thiserror::Error;

use super::MolGraph;

/// Maximum supported node count per input graph.
pub const MAX_ISO_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsoError {
    #[error("isomorphism supports at most {MAX_ISO_NODES} nodes, got {0}")]
    TooLarge(usize),
}

/// Exact isomorphism test respecting atom types and bond types.
pub fn is_isomorphic(a: &MolGraph, b: &MolGraph) -> Result<bool, IsoError> {
    for g in [a, b] {
        if g.n() > MAX_ISO_NODES {
            return Err(IsoError::TooLarge(g.n()));
        }
    }
    if a.n() != b.n() || a.bond_count() != b.bond_count() {
        return Ok(false);
    }

    let ca = refine_colors(a);
    let cb = refine_colors(b);
    let mut sa = ca.clone();
    let mut sb = cb.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return Ok(false);
    }

    // Exhaustive backtracking: map nodes of `a` onto nodes of `b`,
    // constrained to equal refinement colors and consistent adjacency.
    let n = a.n();
    let mut used = vec![false; n];
    let mut assign = vec![usize::MAX; n];

    // Assign most-constrained nodes first: rarer colors before common ones.
    let mut order: Vec<usize> = (0..n).collect();
    let freq =
        |c: u64| -> usize { ca.iter().filter(|&&x| x == c).count() };
    order.sort_by_key(|&u| (freq(ca[u]), u));

    fn backtrack(
        pos: usize,
        order: &[usize],
        a: &MolGraph,
        b: &MolGraph,
        ca: &[u64],
        cb: &[u64],
        assign: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if pos == order.len() {
            return true;
        }
        let u = order[pos];
        for v in 0..b.n() {
            if used[v] || ca[u] != cb[v] || a.atom(u) != b.atom(v) {
                continue;
            }
            // Adjacency with already-assigned nodes must match exactly.
            let consistent = order[..pos].iter().all(|&w| {
                let wv = assign[w];
                a.bond(u, w) == b.bond(v, wv)
            });
            if !consistent {
                continue;
            }
            assign[u] = v;
            used[v] = true;
            if backtrack(pos + 1, order, a, b, ca, cb, assign, used) {
                return true;
            }
            assign[u] = usize::MAX;
            used[v] = false;
        }
        false
    }

    Ok(backtrack(
        0, &order, a, b, &ca, &cb, &mut assign, &mut used,
    ))
}

/// Iterative neighborhood refinement: starting from atom types, each round
/// absorbs the sorted `(bond order, neighbor color)` multiset. Colors
/// stabilize after at most `n` rounds.
fn refine_colors(g: &MolGraph) -> Vec<u64> {
    let n = g.n();
    let mut colors: Vec<u64> = (0..n).map(|u| mix(g.atom(u) as u64 + 1)).collect();
    for _ in 0..n {
        let mut next = Vec::with_capacity(n);
        for u in 0..n {
            let mut env: Vec<(u32, u64)> = g
                .neighbors(u)
                .into_iter()
                .map(|(v, b)| (b.order(), colors[v]))
                .collect();
            env.sort_unstable();
            let mut h = mix(colors[u]);
            for (order, c) in env {
                h = mix(h ^ mix(u64::from(order)));
                h = mix(h ^ c);
            }
            next.push(h);
        }
        if next == colors {
            break;
        }
        colors = next;
    }
    colors
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
