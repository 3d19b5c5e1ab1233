#![allow(dead_code)]

use gdiff_core::graph::{pair_list, CategoricalGraph, Permutation};
use proptest::prelude::*;

/// Random graphs with `n` in `nodes`, `b` node types and `a1` edge types.
pub fn graphs(nodes: std::ops::RangeInclusive<usize>, b: usize, a1: usize) -> impl Strategy<Value = CategoricalGraph> {
    nodes.prop_flat_map(move |n| {
        let pairs = pair_list(n);
        (
            proptest::collection::vec(0..b, n),
            proptest::collection::vec(0..a1, pairs.len()),
        )
            .prop_map(move |(f, e)| {
                let edges: Vec<_> = pairs
                    .iter()
                    .zip(e)
                    .filter(|(_, ty)| *ty > 0)
                    .map(|(&(i, j), ty)| (i, j, ty))
                    .collect();
                CategoricalGraph::from_edges(f, &edges).unwrap()
            })
    })
}

/// Plain graphs: one node type, edge present or absent with probability `p`.
pub fn simple_graphs(nodes: std::ops::RangeInclusive<usize>, p: f64) -> impl Strategy<Value = CategoricalGraph> {
    nodes.prop_flat_map(move |n| {
        let pairs = pair_list(n);
        proptest::collection::vec(proptest::bool::weighted(p), pairs.len()).prop_map(move |on| {
            let edges: Vec<_> = pairs
                .iter()
                .zip(on)
                .filter(|(_, b)| *b)
                .map(|(&(i, j), _)| (i, j, 1))
                .collect();
            CategoricalGraph::from_edges(vec![0; n], &edges).unwrap()
        })
    })
}

/// A graph together with a permutation of its nodes.
pub fn with_perm<S: Strategy<Value = CategoricalGraph>>(s: S) -> impl Strategy<Value = (CategoricalGraph, Permutation)> {
    s.prop_flat_map(|g| {
        let n = g.n();
        (Just(g), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
    .prop_map(|(g, images)| (g, Permutation::new(images).unwrap()))
}
