//! The interface between a clean-graph predictor and the reverse process.

use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_index, Alphabet, CategoricalGraph};
use crate::linalg::Mat;

/// Predicted clean-graph distributions `p(G_0 | G_t)`, factorized over
/// nodes (`n x b`) and unordered pairs (`pairs x (a+1)`, [`pair_index`]
/// order). Both are row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub node: Mat,
    pub edge: Mat,
}

impl Posteriors {
    pub fn n(&self) -> usize {
        self.node.rows()
    }

    /// Distribution for the pair `{i, j}`, in either orientation.
    pub fn edge_row(&self, i: usize, j: usize) -> &[f64] {
        let n = self.n();
        self.edge.row(pair_index(n, i.min(j), i.max(j)))
    }

    pub fn check_shape(&self, n: usize, alphabet: &Alphabet) -> Result<()> {
        if self.node.rows() != n
            || self.node.cols() != alphabet.node_types
            || self.edge.rows() != num_pairs(n)
            || self.edge.cols() != alphabet.edge_types
        {
            return Err(Error::invalid(format!(
                "posteriors of shape {}x{} / {}x{} do not match a {n}-node graph over {alphabet:?}",
                self.node.rows(),
                self.node.cols(),
                self.edge.rows(),
                self.edge.cols()
            )));
        }
        Ok(())
    }
}

/// Anything that predicts clean-graph posteriors from a noisy graph.
pub trait Denoiser {
    fn alphabet(&self) -> Alphabet;

    fn predict(&self, g_t: &CategoricalGraph, t: f64) -> Result<Posteriors>;
}
