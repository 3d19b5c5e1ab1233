//! Categorical graphs, node permutations and graph-size distributions.
//!
//! A graph has `n` nodes, one node type per node drawn from `0..b`, and one
//! edge type per unordered node pair drawn from `0..=a`. Edge type 0 means
//! "no edge". The edge matrix is stored densely and kept symmetric with a
//! zero diagonal.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge type reserved for an absent edge.
pub const NO_EDGE: usize = 0;

/// Sizes of the node and edge alphabets (`b` node types, `a + 1` edge types
/// including [`NO_EDGE`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    pub node_types: usize,
    pub edge_types: usize,
}

impl Alphabet {
    pub fn new(node_types: usize, edge_types: usize) -> Result<Self> {
        if node_types == 0 {
            return Err(Error::invalid("node alphabet must be nonempty"));
        }
        if edge_types < 2 {
            return Err(Error::invalid(
                "edge alphabet needs the no-edge state and at least one edge type",
            ));
        }
        Ok(Self {
            node_types,
            edge_types,
        })
    }

    /// Smallest alphabet that covers every type occurring in `graphs`.
    pub fn covering(graphs: &[CategoricalGraph]) -> Self {
        let node_types = graphs
            .iter()
            .flat_map(|g| g.node_types().iter().copied())
            .max()
            .map_or(1, |m| m + 1);
        let edge_types = graphs
            .iter()
            .flat_map(|g| g.pairs().map(move |(i, j)| g.edge(i, j)))
            .max()
            .map_or(2, |m| (m + 1).max(2));
        Self {
            node_types,
            edge_types,
        }
    }
}

/// Number of unordered pairs `i < j` among `n` nodes.
#[inline]
pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row-major index of the unordered pair `(i, j)`, `i < j`, among `n` nodes.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// All pairs `i < j` in [`pair_index`] order.
pub fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CategoricalGraph {
    node_types: Vec<usize>,
    edge_types: Vec<usize>,
}

impl CategoricalGraph {
    /// Graph with the given node types and no edges.
    pub fn empty(node_types: Vec<usize>) -> Result<Self> {
        let n = node_types.len();
        if n == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        Ok(Self {
            node_types,
            edge_types: vec![NO_EDGE; n * n],
        })
    }

    /// Builds a graph from node types and `(i, j, type)` triples. Each pair
    /// may appear at most once in either orientation.
    pub fn from_edges(node_types: Vec<usize>, edges: &[(usize, usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(node_types)?;
        let n = g.n();
        for &(i, j, ty) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if g.edge(i, j) != NO_EDGE {
                return Err(Error::invalid(format!("duplicate edge ({i}, {j})")));
            }
            g.set_edge(i, j, ty);
        }
        Ok(g)
    }

    /// Builds a graph from a full `n x n` edge matrix, checking symmetry and
    /// the zero diagonal.
    pub fn from_matrix(node_types: Vec<usize>, edge_types: Vec<usize>) -> Result<Self> {
        let n = node_types.len();
        if n == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        if edge_types.len() != n * n {
            return Err(Error::invalid(format!(
                "edge matrix has {} entries, expected {}",
                edge_types.len(),
                n * n
            )));
        }
        for i in 0..n {
            if edge_types[i * n + i] != NO_EDGE {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            for j in i + 1..n {
                if edge_types[i * n + j] != edge_types[j * n + i] {
                    return Err(Error::invalid(format!(
                        "edge matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            node_types,
            edge_types,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.node_types.len()
    }

    #[inline]
    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    #[inline]
    pub fn node(&self, i: usize) -> usize {
        self.node_types[i]
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> usize {
        self.edge_types[i * self.n() + j]
    }

    /// Row-major `n x n` edge matrix.
    pub fn edge_matrix(&self) -> &[usize] {
        &self.edge_types
    }

    pub fn set_node(&mut self, i: usize, ty: usize) {
        self.node_types[i] = ty;
    }

    /// Sets both `(i, j)` and `(j, i)`. Diagonal writes are ignored.
    pub fn set_edge(&mut self, i: usize, j: usize, ty: usize) {
        if i == j {
            return;
        }
        let n = self.n();
        self.edge_types[i * n + j] = ty;
        self.edge_types[j * n + i] = ty;
    }

    /// Unordered pairs `i < j` in [`pair_index`] order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    /// Edge types of the unordered pairs in [`pair_index`] order.
    pub fn pair_types(&self) -> Vec<usize> {
        self.pairs().map(|(i, j)| self.edge(i, j)).collect()
    }

    /// `(i, j, type)` for every present edge with `i < j`.
    pub fn edge_list(&self) -> Vec<(usize, usize, usize)> {
        self.pairs()
            .filter_map(|(i, j)| {
                let t = self.edge(i, j);
                (t != NO_EDGE).then_some((i, j, t))
            })
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.pairs().filter(|&(i, j)| self.edge(i, j) != NO_EDGE).count()
    }

    /// Binarized adjacency: `true` wherever any edge type is present.
    pub fn adjacency(&self) -> Vec<bool> {
        self.edge_types.iter().map(|&t| t != NO_EDGE).collect()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n();
        (0..n).filter(move |&j| self.edge_types[i * n + j] != NO_EDGE)
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.neighbors(i).count()).collect()
    }

    /// Checks every invariant including alphabet membership.
    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        let n = self.n();
        for (i, &f) in self.node_types.iter().enumerate() {
            if f >= alphabet.node_types {
                return Err(Error::invalid(format!(
                    "node {i} has type {f}, alphabet size is {}",
                    alphabet.node_types
                )));
            }
        }
        for i in 0..n {
            if self.edge(i, i) != NO_EDGE {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            for j in i + 1..n {
                let e = self.edge(i, j);
                if e != self.edge(j, i) {
                    return Err(Error::invalid(format!("asymmetric edge ({i}, {j})")));
                }
                if e >= alphabet.edge_types {
                    return Err(Error::invalid(format!(
                        "edge ({i}, {j}) has type {e}, alphabet size is {}",
                        alphabet.edge_types
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A bijection on `0..n`; `sigma.apply(i)` is the new index of node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &v in &images {
            if v >= n || seen[v] {
                return Err(Error::invalid(format!(
                    "{images:?} is not a permutation of 0..{n}"
                )));
            }
            seen[v] = true;
        }
        Ok(Self(images))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Uniformly random permutation (Fisher-Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            v.swap(i, j);
        }
        Self(v)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &s) in self.0.iter().enumerate() {
            inv[s] = i;
        }
        Self(inv)
    }

    /// Reorders per-node rows: `out[sigma(i)] = rows[i]`.
    pub fn permute_rows<T: Clone>(&self, rows: &[T]) -> Vec<T> {
        let mut out = rows.to_vec();
        for (i, r) in rows.iter().enumerate() {
            out[self.0[i]] = r.clone();
        }
        out
    }

    /// Reorders per-pair rows (indexed by [`pair_index`]) consistently with
    /// the node relabeling.
    pub fn permute_pair_rows<T: Clone>(&self, rows: &[T]) -> Vec<T> {
        let n = self.len();
        let mut out = rows.to_vec();
        for (p, (i, j)) in pair_list(n).into_iter().enumerate() {
            let (a, b) = (self.0[i], self.0[j]);
            let q = pair_index(n, a.min(b), a.max(b));
            out[q] = rows[p].clone();
        }
        out
    }
}

/// Relabels nodes so that node `i` of `g` becomes node `sigma(i)`.
pub fn permute_graph(g: &CategoricalGraph, sigma: &Permutation) -> Result<CategoricalGraph> {
    let n = g.n();
    if sigma.len() != n {
        return Err(Error::invalid(format!(
            "permutation of length {} applied to graph with {n} nodes",
            sigma.len()
        )));
    }
    let node_types = sigma.permute_rows(g.node_types());
    let mut edge_types = vec![NO_EDGE; n * n];
    for i in 0..n {
        for j in 0..n {
            edge_types[sigma.apply(i) * n + sigma.apply(j)] = g.edge(i, j);
        }
    }
    Ok(CategoricalGraph {
        node_types,
        edge_types,
    })
}

/// Empirical distribution of graph sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeDistribution {
    counts: BTreeMap<usize, u64>,
}

impl SizeDistribution {
    pub fn from_counts(counts: BTreeMap<usize, u64>) -> Result<Self> {
        let counts: BTreeMap<usize, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        if counts.is_empty() {
            return Err(Error::invalid("size distribution has no positive counts"));
        }
        if counts.contains_key(&0) {
            return Err(Error::invalid("graph size 0 is not allowed"));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn probability(&self, n: usize) -> f64 {
        self.counts.get(&n).copied().unwrap_or(0) as f64 / self.total() as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let sizes: Vec<usize> = self.counts.keys().copied().collect();
        let weights = WeightedIndex::new(self.counts.values().copied())
            .expect("counts are positive by construction");
        sizes[weights.sample(rng)]
    }
}

/// Counts graph sizes in `graphs`.
pub fn fit_size_distribution(graphs: &[CategoricalGraph]) -> Result<SizeDistribution> {
    if graphs.is_empty() {
        return Err(Error::invalid("cannot fit a size distribution to zero graphs"));
    }
    let mut counts = BTreeMap::new();
    for g in graphs {
        *counts.entry(g.n()).or_insert(0) += 1;
    }
    SizeDistribution::from_counts(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn path3() -> CategoricalGraph {
        CategoricalGraph::from_edges(vec![0, 0, 0], &[(0, 1, 1), (1, 2, 1)]).unwrap()
    }

    #[test]
    fn pair_index_is_dense_and_ordered() {
        for n in 1..8 {
            let pairs = pair_list(n);
            assert_eq!(pairs.len(), num_pairs(n));
            for (p, &(i, j)) in pairs.iter().enumerate() {
                assert_eq!(pair_index(n, i, j), p);
            }
        }
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = path3();
        assert_eq!(permute_graph(&g, &Permutation::identity(3)).unwrap(), g);
    }

    #[test]
    fn triangle_is_fixed_by_every_permutation() {
        let k3 = CategoricalGraph::from_edges(vec![0, 0, 0], &[(0, 1, 1), (0, 2, 1), (1, 2, 1)])
            .unwrap();
        for images in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let sigma = Permutation::new(images.to_vec()).unwrap();
            assert_eq!(
                permute_graph(&k3, &sigma).unwrap().edge_matrix(),
                k3.edge_matrix()
            );
        }
    }

    #[test]
    fn reversing_a_path() {
        let g = CategoricalGraph::from_edges(vec![0, 1, 2], &[(0, 1, 1), (1, 2, 2)]).unwrap();
        let sigma = Permutation::new(vec![2, 1, 0]).unwrap();
        let h = permute_graph(&g, &sigma).unwrap();
        // Edge (0,1) of type 1 moves to (2,1); edge (1,2) of type 2 moves to (1,0).
        assert_eq!(h.edge(2, 1), 1);
        assert_eq!(h.edge(1, 2), 1);
        assert_eq!(h.edge(1, 0), 2);
        assert_eq!(h.edge(0, 1), 2);
        assert_eq!(h.edge(0, 2), NO_EDGE);
        assert_eq!(h.node_types(), &[2, 1, 0]);
        // Brute-force relabeling through the edge list.
        let mut relabeled: Vec<(usize, usize, usize)> = g
            .edge_list()
            .into_iter()
            .map(|(i, j, t)| {
                let (a, b) = (sigma.apply(i), sigma.apply(j));
                (a.min(b), a.max(b), t)
            })
            .collect();
        relabeled.sort_unstable();
        assert_eq!(h.edge_list(), relabeled);
    }

    #[test]
    fn rejects_bad_permutations() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        let sigma = Permutation::identity(4);
        assert!(matches!(
            permute_graph(&path3(), &sigma),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_matrices_and_self_loops() {
        assert!(CategoricalGraph::from_matrix(vec![0, 0], vec![0, 1, 0, 0]).is_err());
        assert!(CategoricalGraph::from_matrix(vec![0, 0], vec![1, 0, 0, 0]).is_err());
        assert!(CategoricalGraph::from_edges(vec![0, 0], &[(0, 1, 1), (1, 0, 1)]).is_err());
    }

    #[test]
    fn size_distribution_singleton() {
        let g = CategoricalGraph::empty(vec![0; 5]).unwrap();
        let d = fit_size_distribution(&[g]).unwrap();
        assert_eq!(d.counts().iter().collect::<Vec<_>>(), vec![(&5, &1)]);
        assert!(fit_size_distribution(&[]).is_err());
    }

    #[test]
    fn size_distribution_sampling_frequency() {
        let gs: Vec<_> = [4, 4, 6]
            .iter()
            .map(|&n| CategoricalGraph::empty(vec![0; n]).unwrap())
            .collect();
        let d = fit_size_distribution(&gs).unwrap();
        assert_eq!(d.counts().get(&4), Some(&2));
        assert_eq!(d.counts().get(&6), Some(&1));
        assert_eq!(d.total(), 3);
        let mut rng = stream(11, &[]);
        let draws: Vec<usize> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&n| n == 4 || n == 6));
        let freq = draws.iter().filter(|&&n| n == 4).count() as f64 / 1e4;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "{freq}");
        let mut rng2 = stream(11, &[]);
        let again: Vec<usize> = (0..10_000).map(|_| d.sample(&mut rng2)).collect();
        assert_eq!(draws, again);
    }
}
