//! Exact joint-state treatment of very small graphs.
//!
//! With at most [`MAX_STATES`] joint states the whole graph-level CTMC can be
//! written down: its generator is the Kronecker sum of the per-node and
//! per-pair base matrices. This gives exact marginals, exact posteriors
//! `q(G_0 | G_t)` and the exact reverse generator
//! `R~_t(x, y) = q_t(y) / q_t(x) * R_t(y, x)`, used to check the factorized
//! machinery and the samplers.

use crate::ctmc::{series_matrix_exp, transition_matrix, NoiseSchedule, NoiseSpecs};
use crate::ctmc::base_rate_matrix;
use crate::denoise::{Denoiser, Posteriors};
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_list, Alphabet, CategoricalGraph};
use crate::linalg::Mat;

pub const MAX_STATES: usize = 64;

/// Exact quantities of the joint chain at one time.
#[derive(Debug, Clone)]
pub struct TinyOracle {
    /// `q_t(x)` over joint states.
    pub marginal: Vec<f64>,
    /// `posterior[(x_t, x_0)] = q(x_0 | x_t)`; rows of zero-mass states hold
    /// the data distribution.
    pub posterior: Mat,
    /// Reverse generator; rows of zero-mass states are zero, diagonal is the
    /// negated off-diagonal row sum.
    pub reverse_rates: Mat,
}

/// A data distribution over every graph with a fixed small node count.
#[derive(Debug, Clone)]
pub struct TinySystem {
    n: usize,
    specs: NoiseSpecs,
    sched: NoiseSchedule,
    data: Vec<f64>,
    dims: Vec<usize>,
}

impl TinySystem {
    pub fn new(
        n: usize,
        specs: NoiseSpecs,
        sched: NoiseSchedule,
        data: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("tiny system needs at least one node"));
        }
        specs.node.validate()?;
        specs.edge.validate()?;
        sched.validate()?;
        let mut dims = vec![specs.node.dim(); n];
        dims.extend(std::iter::repeat_n(specs.edge.dim(), num_pairs(n)));
        let states = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if states > MAX_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: MAX_STATES,
            });
        }
        if data.len() != states {
            return Err(Error::invalid(format!(
                "data distribution has {} entries, state space has {states}",
                data.len()
            )));
        }
        if data.iter().any(|&p| !(p >= 0.0)) || (data.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("data distribution is not a probability vector"));
        }
        Ok(Self {
            n,
            specs,
            sched,
            data,
            dims,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn specs(&self) -> &NoiseSpecs {
        &self.specs
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn num_states(&self) -> usize {
        self.dims.iter().product()
    }

    /// Alphabet size of each component: nodes first, then pairs.
    pub fn component_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Component values of a joint state (first component most significant).
    pub fn components(&self, mut x: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (k, &d) in self.dims.iter().enumerate().rev() {
            out[k] = x % d;
            x /= d;
        }
        out
    }

    pub fn index_of_components(&self, comps: &[usize]) -> usize {
        comps
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&v, &d)| acc * d + v)
    }

    pub fn state_graph(&self, x: usize) -> CategoricalGraph {
        let comps = self.components(x);
        let mut g = CategoricalGraph::empty(comps[..self.n].to_vec())
            .expect("n is positive");
        for (p, (i, j)) in pair_list(self.n).into_iter().enumerate() {
            g.set_edge(i, j, comps[self.n + p]);
        }
        g
    }

    pub fn state_index(&self, g: &CategoricalGraph) -> Result<usize> {
        if g.n() != self.n {
            return Err(Error::invalid(format!(
                "graph has {} nodes, tiny system has {}",
                g.n(),
                self.n
            )));
        }
        g.validate(&self.specs.alphabet())?;
        let mut comps = g.node_types().to_vec();
        comps.extend(g.pair_types());
        Ok(self.index_of_components(&comps))
    }

    fn component_base(&self, k: usize) -> Mat {
        if k < self.n {
            base_rate_matrix(&self.specs.node)
        } else {
            base_rate_matrix(&self.specs.edge)
        }
    }

    /// Kronecker sum of the per-component base matrices (without `beta`).
    pub fn joint_generator(&self) -> Mat {
        let s = self.num_states();
        let mut total = Mat::zeros(s, s);
        for k in 0..self.dims.len() {
            let before: usize = self.dims[..k].iter().product();
            let after: usize = self.dims[k + 1..].iter().product();
            let term = Mat::identity(before)
                .kron(&self.component_base(k))
                .kron(&Mat::identity(after));
            total = total.add(&term);
        }
        total
    }

    /// Joint transition matrix from the closed-form component matrices.
    pub fn joint_transition(&self, c: f64) -> Result<Mat> {
        let pn = transition_matrix(&self.specs.node, c)?;
        let pe = transition_matrix(&self.specs.edge, c)?;
        let mut out = Mat::identity(1);
        for k in 0..self.dims.len() {
            out = out.kron(if k < self.n { &pn } else { &pe });
        }
        Ok(out)
    }

    /// Joint marginal at `t` through the full generator and the series
    /// exponential.
    pub fn joint_marginal(&self, t: f64) -> Result<Vec<f64>> {
        let c = self.sched.cumulative_rate(0.0, t)?;
        let p = series_matrix_exp(&self.joint_generator(), c)?;
        Ok(p.left_mul(&self.data))
    }

    /// Per-component marginals of a joint distribution.
    pub fn project(&self, joint: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.dims.iter().map(|&d| vec![0.0; d]).collect();
        for (x, &p) in joint.iter().enumerate() {
            for (k, v) in self.components(x).into_iter().enumerate() {
                out[k][v] += p;
            }
        }
        out
    }

    /// Per-component marginals at `t` computed component by component:
    /// project the data, then push each marginal through its own transition
    /// matrix.
    pub fn factorized_marginals(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        let c = self.sched.cumulative_rate(0.0, t)?;
        let pn = transition_matrix(&self.specs.node, c)?;
        let pe = transition_matrix(&self.specs.edge, c)?;
        Ok(self
            .project(&self.data)
            .into_iter()
            .enumerate()
            .map(|(k, m)| if k < self.n { pn.left_mul(&m) } else { pe.left_mul(&m) })
            .collect())
    }

    /// Exact oracle at time `t` (series exponential of the joint generator).
    pub fn oracle(&self, t: f64) -> Result<TinyOracle> {
        let c = self.sched.cumulative_rate(0.0, t)?;
        let p = series_matrix_exp(&self.joint_generator(), c)?;
        self.oracle_from_transition(&p, t)
    }

    /// Same quantities, with the joint transition built from closed forms.
    pub fn oracle_fast(&self, t: f64) -> Result<TinyOracle> {
        let c = self.sched.cumulative_rate(0.0, t)?;
        let p = self.joint_transition(c)?;
        self.oracle_from_transition(&p, t)
    }

    fn oracle_from_transition(&self, p: &Mat, t: f64) -> Result<TinyOracle> {
        let s = self.num_states();
        let marginal = p.left_mul(&self.data);
        let posterior = Mat::from_fn(s, s, |xt, x0| {
            if marginal[xt] > 0.0 {
                self.data[x0] * p[(x0, xt)] / marginal[xt]
            } else {
                self.data[x0]
            }
        });
        let beta = self.sched.beta(t);
        let gen = self.joint_generator();
        let mut reverse_rates = Mat::zeros(s, s);
        for x in 0..s {
            if marginal[x] <= 0.0 {
                continue;
            }
            let mut out = 0.0;
            for y in 0..s {
                if y != x && gen[(y, x)] != 0.0 {
                    let r = marginal[y] / marginal[x] * beta * gen[(y, x)];
                    reverse_rates[(x, y)] = r;
                    out += r;
                }
            }
            reverse_rates[(x, x)] = -out;
        }
        Ok(TinyOracle {
            marginal,
            posterior,
            reverse_rates,
        })
    }

    /// Per-component posteriors `q(x_0^k | G_t)` in [`Posteriors`] layout.
    pub fn component_posteriors(&self, g_t: &CategoricalGraph, t: f64) -> Result<Posteriors> {
        let xt = self.state_index(g_t)?;
        let c = self.sched.cumulative_rate(0.0, t)?;
        let p = self.joint_transition(c)?;
        let mut post: Vec<f64> = (0..self.num_states())
            .map(|x0| self.data[x0] * p[(x0, xt)])
            .collect();
        let z: f64 = post.iter().sum();
        if z > 0.0 {
            post.iter_mut().for_each(|q| *q /= z);
        } else {
            post.copy_from_slice(&self.data);
        }
        let comps = self.project(&post);
        let alphabet = self.specs.alphabet();
        let mut node = Mat::zeros(self.n, alphabet.node_types);
        for i in 0..self.n {
            node.row_mut(i).copy_from_slice(&comps[i]);
        }
        let pairs = num_pairs(self.n);
        let mut edge = Mat::zeros(pairs, alphabet.edge_types);
        for q in 0..pairs {
            edge.row_mut(q).copy_from_slice(&comps[self.n + q]);
        }
        Ok(Posteriors { node, edge })
    }
}

/// The exact posterior acts as a perfect denoiser on its own system.
impl Denoiser for TinySystem {
    fn alphabet(&self) -> Alphabet {
        self.specs.alphabet()
    }

    fn predict(&self, g_t: &CategoricalGraph, t: f64) -> Result<Posteriors> {
        self.component_posteriors(g_t, t)
    }
}

/// Marginal, posterior and reverse generator of `system` at `t`.
pub fn tiny_joint_oracle(system: &TinySystem, t: f64) -> Result<TinyOracle> {
    system.oracle(t)
}
