//! Isomorphism keys for uniqueness and novelty counting.
//!
//! Graphs with at most [`EXACT_THRESHOLD`] nodes get an exact canonical form:
//! nodes are partitioned by refined colors and the lexicographically smallest
//! encoding over all color-respecting orderings is hashed. Larger graphs get
//! a Weisfeiler-Lehman hash, for which equal keys do not imply isomorphism.

use sha2::{Digest, Sha256};

use crate::graph::CategoricalGraph;

pub const EXACT_THRESHOLD: usize = 9;
const WL_ROUNDS: usize = 3;

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Per-round WL colors; round 0 is the node type.
fn wl_colors(g: &CategoricalGraph, rounds: usize) -> Vec<Vec<u64>> {
    let n = g.n();
    let mut history = Vec::with_capacity(rounds + 1);
    let mut colors: Vec<u64> = g.node_types().iter().map(|&t| mix(0x51, t as u64)).collect();
    history.push(colors.clone());
    for _ in 0..rounds {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut sig: Vec<(usize, u64)> =
                    g.neighbors(i).map(|j| (g.edge(i, j), colors[j])).collect();
                sig.sort_unstable();
                sig.iter()
                    .fold(mix(colors[i], sig.len() as u64), |h, &(e, c)| mix(mix(h, e as u64), c))
            })
            .collect();
        colors = next;
        history.push(colors.clone());
    }
    history
}

fn encode(g: &CategoricalGraph, order: &[usize]) -> Vec<usize> {
    let n = order.len();
    let mut out = Vec::with_capacity(n + n * (n - 1) / 2);
    out.extend(order.iter().map(|&v| g.node(v)));
    for a in 0..n {
        for b in a + 1..n {
            out.push(g.edge(order[a], order[b]));
        }
    }
    out
}

/// Visits every ordering that keeps each cell in place and permutes nodes
/// within cells.
fn for_each_cell_order(cells: &[Vec<usize>], mut visit: impl FnMut(&[usize])) {
    fn rec(
        cells: &[Vec<usize>],
        cell: usize,
        work: &mut Vec<Vec<usize>>,
        order: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if cell == cells.len() {
            visit(order);
            return;
        }
        // Heap's algorithm over this cell, recursing into the next cell for
        // every arrangement.
        let k = work[cell].len();
        let base = order.len();
        let mut c = vec![0usize; k];
        order.extend_from_slice(&work[cell]);
        rec(cells, cell + 1, work, order, visit);
        let mut i = 0;
        while i < k {
            if c[i] < i {
                if i % 2 == 0 {
                    work[cell].swap(0, i);
                } else {
                    work[cell].swap(c[i], i);
                }
                order.truncate(base);
                order.extend_from_slice(&work[cell]);
                rec(cells, cell + 1, work, order, visit);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        order.truncate(base);
    }
    let mut work = cells.to_vec();
    let mut order = Vec::new();
    rec(cells, 0, &mut work, &mut order, &mut visit);
}

fn exact_key(g: &CategoricalGraph) -> String {
    let n = g.n();
    let colors = wl_colors(g, n.max(1)).pop().unwrap_or_default();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_by_key(|&v| colors[v]);
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for &v in &nodes {
        match cells.last_mut() {
            Some(cell) if colors[cell[0]] == colors[v] => cell.push(v),
            _ => cells.push(vec![v]),
        }
    }
    let mut best: Option<Vec<usize>> = None;
    for_each_cell_order(&cells, |order| {
        let code = encode(g, order);
        if best.as_ref().is_none_or(|b| code < *b) {
            best = Some(code);
        }
    });
    let best = best.unwrap_or_default();
    let mut h = Sha256::new();
    h.update((n as u64).to_le_bytes());
    for v in best {
        h.update((v as u64).to_le_bytes());
    }
    format!("exact-{}", hex(&h.finalize()))
}

fn wl_key(g: &CategoricalGraph) -> String {
    let mut h = Sha256::new();
    h.update((g.n() as u64).to_le_bytes());
    for round in wl_colors(g, WL_ROUNDS) {
        let mut sorted = round;
        sorted.sort_unstable();
        for c in sorted {
            h.update(c.to_le_bytes());
        }
    }
    let mut edge_types: Vec<usize> = g.edge_list().into_iter().map(|(_, _, t)| t).collect();
    edge_types.sort_unstable();
    for t in edge_types {
        h.update((t as u64).to_le_bytes());
    }
    format!("wl-{}", hex(&h.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Isomorphism-invariant key; exact for `n <= EXACT_THRESHOLD`.
pub fn canonical_key(g: &CategoricalGraph) -> String {
    if g.n() <= EXACT_THRESHOLD {
        exact_key(g)
    } else {
        wl_key(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{permute_graph, Permutation};
    use crate::rng::stream;
    use rand::Rng;

    fn cycle(n: usize) -> CategoricalGraph {
        let edges: Vec<_> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n), 1)).collect();
        CategoricalGraph::from_edges(vec![0; n], &edges).unwrap()
    }

    fn random_graph(n: usize, seed: u64) -> CategoricalGraph {
        let mut rng = stream(seed, &[]);
        let nodes = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut g = CategoricalGraph::empty(nodes).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.4) {
                    g.set_edge(i, j, rng.random_range(1..3));
                }
            }
        }
        g
    }

    /// Brute-force isomorphism test over all n! relabelings.
    fn isomorphic(a: &CategoricalGraph, b: &CategoricalGraph) -> bool {
        if a.n() != b.n() {
            return false;
        }
        let n = a.n();
        let mut found = false;
        for_each_cell_order(&[(0..n).collect()], |order| {
            if !found {
                let sigma = Permutation::new(order.to_vec()).unwrap();
                found = permute_graph(a, &sigma).unwrap() == *b;
            }
        });
        found
    }

    #[test]
    fn path_and_triangle_differ() {
        let path = CategoricalGraph::from_edges(vec![0; 3], &[(0, 1, 1), (1, 2, 1)]).unwrap();
        assert_ne!(canonical_key(&path), canonical_key(&cycle(3)));
    }

    #[test]
    fn hexagon_and_two_triangles_differ() {
        let two_triangles = CategoricalGraph::from_edges(
            vec![0; 6],
            &[(0, 1, 1), (1, 2, 1), (0, 2, 1), (3, 4, 1), (4, 5, 1), (3, 5, 1)],
        )
        .unwrap();
        let c6 = cycle(6);
        assert_eq!(c6.degrees(), two_triangles.degrees());
        assert!(!isomorphic(&c6, &two_triangles));
        assert_ne!(canonical_key(&c6), canonical_key(&two_triangles));
    }

    #[test]
    fn exact_keys_agree_with_brute_force_isomorphism() {
        for seed in 0..60 {
            let a = random_graph(5, seed);
            let b = random_graph(5, seed + 1000);
            assert_eq!(
                canonical_key(&a) == canonical_key(&b),
                isomorphic(&a, &b),
                "seed {seed}"
            );
        }
        // Sparse 4-node graphs collide often, exercising the positive case.
        let mut positives = 0;
        for seed in 0..200 {
            let a = random_graph(4, seed);
            let b = random_graph(4, seed + 7);
            let iso = isomorphic(&a, &b);
            positives += usize::from(iso);
            assert_eq!(canonical_key(&a) == canonical_key(&b), iso);
        }
        assert!(positives > 0);
    }

    #[test]
    fn permutation_invariance_small_and_large() {
        let mut rng = stream(3, &[]);
        for (k, n) in [1usize, 2, 5, 9, 9, 12, 20].into_iter().enumerate() {
            let g = random_graph(n, 40 + k as u64);
            let sigma = Permutation::random(n, &mut rng);
            let h = permute_graph(&g, &sigma).unwrap();
            assert_eq!(canonical_key(&g), canonical_key(&h));
        }
        assert!(canonical_key(&cycle(9)).starts_with("exact-"));
        assert!(canonical_key(&cycle(10)).starts_with("wl-"));
    }
}
