//! Structural features appended to the model input.

use crate::error::{Error, Result};
use crate::graph::CategoricalGraph;
use crate::linalg::{symmetric_eigenvalues, Mat};

/// Per-node feature width: 3-, 4-, 5-cycle memberships and the
/// largest-component indicator.
pub const NODE_AUX_DIM: usize = 4;
/// Global feature width: 3..=6-cycle totals, component count, five
/// Laplacian eigenvalues, normalized time.
pub const GLOBAL_AUX_DIM: usize = 11;
pub const NUM_EIGENVALUES: usize = 5;
/// Eigenvalues at or below this are treated as zero.
pub const ZERO_EIGENVALUE: f64 = 1e-8;
const JACOBI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AuxFeatures {
    /// `n x NODE_AUX_DIM`, row-major.
    pub node_aux: Vec<[f64; NODE_AUX_DIM]>,
    pub global_aux: [f64; GLOBAL_AUX_DIM],
}

impl AuxFeatures {
    pub fn cycle_totals(&self) -> [f64; 4] {
        [self.global_aux[0], self.global_aux[1], self.global_aux[2], self.global_aux[3]]
    }

    pub fn components(&self) -> f64 {
        self.global_aux[4]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.global_aux[5..5 + NUM_EIGENVALUES]
    }

    pub fn time(&self) -> f64 {
        self.global_aux[GLOBAL_AUX_DIM - 1]
    }
}

/// Simple-cycle counts for lengths 3 to 6.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleCounts {
    /// `per_node[i][k]`: cycles of length `k + 3` through node `i`.
    pub per_node: Vec<[u64; 4]>,
    /// `totals[k]`: cycles of length `k + 3`.
    pub totals: [u64; 4],
}

fn adjacency_lists(g: &CategoricalGraph) -> Vec<Vec<usize>> {
    (0..g.n()).map(|i| g.neighbors(i).collect()).collect()
}

/// Enumerates simple cycles of length 3..=6 by depth-first search from each
/// cycle's smallest vertex. Each cycle is met once per direction.
pub fn count_cycles(g: &CategoricalGraph) -> CycleCounts {
    let n = g.n();
    let adj = adjacency_lists(g);
    let mut per_node2 = vec![[0u64; 4]; n];
    let mut totals2 = [0u64; 4];
    let mut path = Vec::with_capacity(6);
    let mut on_path = vec![false; n];

    fn dfs(
        start: usize,
        adj: &[Vec<usize>],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        per_node2: &mut [[u64; 4]],
        totals2: &mut [u64; 4],
    ) {
        let cur = *path.last().expect("path starts at the root");
        for &next in &adj[cur] {
            if next == start && path.len() >= 3 {
                let k = path.len() - 3;
                totals2[k] += 1;
                for &v in path.iter() {
                    per_node2[v][k] += 1;
                }
            } else if next > start && !on_path[next] && path.len() < 6 {
                on_path[next] = true;
                path.push(next);
                dfs(start, adj, path, on_path, per_node2, totals2);
                path.pop();
                on_path[next] = false;
            }
        }
    }

    for start in 0..n {
        path.clear();
        path.push(start);
        on_path[start] = true;
        dfs(start, &adj, &mut path, &mut on_path, &mut per_node2, &mut totals2);
        on_path[start] = false;
    }
    CycleCounts {
        per_node: per_node2.iter().map(|c| c.map(|x| x / 2)).collect(),
        totals: totals2.map(|x| x / 2),
    }
}

/// Triangles through each node, `diag(A^3) / 2`.
pub fn triangles_per_node(g: &CategoricalGraph) -> Vec<u64> {
    let n = g.n();
    let a = Mat::from_fn(n, n, |i, j| if g.edge(i, j) > 0 { 1.0 } else { 0.0 });
    let a2 = a.matmul(&a).expect("square");
    (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|k| a2[(i, k)] * a[(k, i)]).sum();
            (d / 2.0).round() as u64
        })
        .collect()
}

/// Component label of every node, labels numbered by first appearance.
pub fn connected_components(g: &CategoricalGraph) -> Vec<usize> {
    let n = g.n();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for v in g.neighbors(u) {
                if label[v] == usize::MAX {
                    label[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    label
}

/// Laplacian eigenvalues of the binarized graph, ascending.
pub fn laplacian_eigenvalues(g: &CategoricalGraph) -> Result<Vec<f64>> {
    let n = g.n();
    let deg = g.degrees();
    let l = Mat::from_fn(n, n, |i, j| {
        if i == j {
            deg[i] as f64
        } else if g.edge(i, j) > 0 {
            -1.0
        } else {
            0.0
        }
    });
    symmetric_eigenvalues(&l, JACOBI_TOL)
}

/// Structural features of `g` at normalized time `t / horizon`.
pub fn compute_aux(g: &CategoricalGraph, t: f64, horizon: f64) -> Result<AuxFeatures> {
    if !(horizon > 0.0) || !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, {horizon}]")));
    }
    let n = g.n();
    let tri = triangles_per_node(g);
    let cycles = count_cycles(g);
    let comp = connected_components(g);
    let num_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; num_comp];
    for &c in &comp {
        sizes[c] += 1;
    }
    let largest = sizes.iter().copied().max().unwrap_or(0);

    let node_aux = (0..n)
        .map(|i| {
            [
                tri[i] as f64,
                cycles.per_node[i][1] as f64,
                cycles.per_node[i][2] as f64,
                if sizes[comp[i]] == largest { 1.0 } else { 0.0 },
            ]
        })
        .collect();

    let mut global_aux = [0.0; GLOBAL_AUX_DIM];
    for k in 0..4 {
        global_aux[k] = cycles.totals[k] as f64;
    }
    global_aux[4] = num_comp as f64;
    let eig = laplacian_eigenvalues(g)?;
    for (slot, &e) in global_aux[5..5 + NUM_EIGENVALUES]
        .iter_mut()
        .zip(eig.iter().filter(|&&e| e > ZERO_EIGENVALUE))
    {
        *slot = e;
    }
    global_aux[GLOBAL_AUX_DIM - 1] = t / horizon;
    Ok(AuxFeatures { node_aux, global_aux })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> CategoricalGraph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j, 1)))
            .collect();
        CategoricalGraph::from_edges(vec![0; n], &edges).unwrap()
    }

    #[test]
    fn empty_graph() {
        let g = CategoricalGraph::empty(vec![0; 4]).unwrap();
        let aux = compute_aux(&g, 0.5, 1.0).unwrap();
        assert_eq!(aux.cycle_totals(), [0.0; 4]);
        assert_eq!(aux.components(), 4.0);
        assert!(aux.eigenvalues().iter().all(|&e| e == 0.0));
        assert!(aux.node_aux.iter().all(|r| r[..3] == [0.0; 3] && r[3] == 1.0));
        assert_eq!(aux.time(), 0.5);
    }

    #[test]
    fn triangle_and_k4() {
        let k3 = compute_aux(&complete(3), 0.0, 1.0).unwrap();
        assert!(k3.node_aux.iter().all(|r| r[0] == 1.0));
        assert_eq!(k3.cycle_totals()[0], 1.0);
        let k4 = compute_aux(&complete(4), 1.0, 1.0).unwrap();
        assert!(k4.node_aux.iter().all(|r| r[1] == 3.0));
        assert_eq!(k4.cycle_totals()[1], 3.0);
        // K4 Laplacian spectrum: 0, 4, 4, 4
        assert!(k4.eigenvalues()[..3].iter().all(|e| (e - 4.0).abs() < 1e-9));
        assert_eq!(k4.eigenvalues()[3], 0.0);
    }

    #[test]
    fn k5_cycle_totals() {
        // K5: C(5,3)=10 triangles, 5*3=15 four-cycles, 12 five-cycles.
        let c = count_cycles(&complete(5));
        assert_eq!(c.totals, [10, 15, 12, 0]);
        assert_eq!(c.per_node[0], [6, 12, 12, 0]);
    }

    #[test]
    fn time_out_of_range() {
        let g = complete(3);
        assert!(compute_aux(&g, 1.5, 1.0).is_err());
    }

    #[test]
    fn edge_types_are_binarized() {
        let a = CategoricalGraph::from_edges(vec![0; 3], &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap();
        let b = CategoricalGraph::from_edges(vec![0; 3], &[(0, 1, 2), (1, 2, 3), (0, 2, 1)]).unwrap();
        assert_eq!(compute_aux(&a, 0.3, 1.0).unwrap(), compute_aux(&b, 0.3, 1.0).unwrap());
    }
}
