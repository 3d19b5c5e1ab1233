//! Synthetic community and stochastic-block-model datasets.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CategoricalGraph;
use crate::rng::{stream, StreamRng};

/// Two blocks of 6..=10 nodes.
pub const COMMUNITY_BLOCK: (usize, usize) = (6, 10);
pub const COMMUNITY_P_INTRA: f64 = 0.7;
/// Inter-block edges per graph: `ceil(0.05 n)`.
pub const COMMUNITY_INTER_FRACTION: f64 = 0.05;
/// 2..=3 blocks of 8..=12 nodes.
pub const SBM_BLOCKS: (usize, usize) = (2, 3);
pub const SBM_BLOCK: (usize, usize) = (8, 12);
pub const SBM_P_INTRA: f64 = 0.3;
pub const SBM_P_INTER: f64 = 0.05;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Community,
    Sbm,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Community => "community",
            DatasetKind::Sbm => "sbm",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "community" => Ok(DatasetKind::Community),
            "sbm" => Ok(DatasetKind::Sbm),
            other => Err(Error::invalid(format!("unknown dataset kind `{other}` (expected community or sbm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
}

/// A generated graph with the block of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    pub graph: CategoricalGraph,
    pub blocks: Vec<usize>,
}

fn block_labels(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect()
}

pub fn community_graph(rng: &mut StreamRng) -> BlockGraph {
    let sizes = [
        rng.random_range(COMMUNITY_BLOCK.0..=COMMUNITY_BLOCK.1),
        rng.random_range(COMMUNITY_BLOCK.0..=COMMUNITY_BLOCK.1),
    ];
    let blocks = block_labels(&sizes);
    let n = blocks.len();
    let mut edges = Vec::new();
    let mut cross = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if blocks[i] == blocks[j] {
                if rng.random::<f64>() < COMMUNITY_P_INTRA {
                    edges.push((i, j, 1));
                }
            } else {
                cross.push((i, j));
            }
        }
    }
    let k = (COMMUNITY_INTER_FRACTION * n as f64).ceil() as usize;
    let mut picked: Vec<usize> = index::sample(rng, cross.len(), k.min(cross.len())).into_vec();
    picked.sort_unstable();
    edges.extend(picked.into_iter().map(|p| (cross[p].0, cross[p].1, 1)));
    let graph = CategoricalGraph::from_edges(vec![0; n], &edges).expect("generated edges are valid");
    BlockGraph { graph, blocks }
}

pub fn sbm_graph(rng: &mut StreamRng) -> BlockGraph {
    let k = rng.random_range(SBM_BLOCKS.0..=SBM_BLOCKS.1);
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(SBM_BLOCK.0..=SBM_BLOCK.1)).collect();
    let blocks = block_labels(&sizes);
    let n = blocks.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if blocks[i] == blocks[j] { SBM_P_INTRA } else { SBM_P_INTER };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1));
            }
        }
    }
    let graph = CategoricalGraph::from_edges(vec![0; n], &edges).expect("generated edges are valid");
    BlockGraph { graph, blocks }
}

/// Graphs with block labels; graph `i` uses its own stream of `spec.seed`.
pub fn generate_with_blocks(spec: &DatasetSpec) -> Vec<BlockGraph> {
    (0..spec.count)
        .map(|i| {
            let mut rng = stream(spec.seed, &[i as u64]);
            match spec.kind {
                DatasetKind::Community => community_graph(&mut rng),
                DatasetKind::Sbm => sbm_graph(&mut rng),
            }
        })
        .collect()
}

pub fn generate_dataset(spec: &DatasetSpec) -> Vec<CategoricalGraph> {
    generate_with_blocks(spec).into_iter().map(|b| b.graph).collect()
}

/// Seeded shuffle, then the first `round(0.8 N)` graphs train and the rest test.
pub fn split_train_test(graphs: &[CategoricalGraph], seed: u64) -> (Vec<CategoricalGraph>, Vec<CategoricalGraph>) {
    let mut idx: Vec<usize> = (0..graphs.len()).collect();
    idx.shuffle(&mut stream(seed, &[u64::MAX]));
    let cut = (TRAIN_FRACTION * graphs.len() as f64).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| graphs[i].clone()).collect();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}
