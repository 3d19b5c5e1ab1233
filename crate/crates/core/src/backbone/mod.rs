//! The message-passing denoiser `p(G_0 | G_t, t)`.
//!
//! Nodes, unordered pairs and a global vector each carry an `h`-wide
//! embedding. Every layer updates nodes from their incident pairs, pairs from
//! their endpoint nodes, and the global vector from set summaries of both,
//! with FiLM conditioning on the global vector throughout.

pub mod features;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduction, Tape, Tensor, Var};
use crate::denoise::{Denoiser, Posteriors};
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_list, Alphabet, CategoricalGraph};
use crate::linalg::Mat;
use crate::rng::StreamRng;

pub use features::{compute_aux, AuxFeatures, GLOBAL_AUX_DIM, NODE_AUX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 64,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("model.hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpIdx {
    pub first: LinearIdx,
    pub second: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct FilmIdx {
    pub lin1: LinearIdx,
    pub lin2: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIdx {
    pub node_msg: MlpIdx,
    pub node_film_msg: FilmIdx,
    pub node_film_global: FilmIdx,
    pub edge_film_nodes: FilmIdx,
    pub edge_film_global: FilmIdx,
    pub pna_nodes: MlpIdx,
    pub pna_edges: MlpIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    node_in: MlpIdx,
    edge_in: MlpIdx,
    global_in: MlpIdx,
    layers: Vec<LayerIdx>,
    node_out: MlpIdx,
    edge_out: MlpIdx,
}

/// Registers named parameter shapes in a fixed order.
#[derive(Default)]
struct Registry {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        LinearIdx {
            w: self.add(format!("{name}.w"), vec![fan_in, fan_out]),
            b: self.add(format!("{name}.b"), vec![fan_out]),
        }
    }

    fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> MlpIdx {
        MlpIdx {
            first: self.linear(&format!("{name}.0"), fan_in, hidden),
            second: self.linear(&format!("{name}.1"), hidden, fan_out),
        }
    }

    fn film(&mut self, name: &str, h: usize) -> FilmIdx {
        FilmIdx {
            lin1: self.linear(&format!("{name}.lin1"), h, h),
            lin2: self.linear(&format!("{name}.lin2"), h, h),
        }
    }
}

fn layout(cfg: &ModelConfig, alphabet: &Alphabet) -> (Layout, Registry) {
    let h = cfg.hidden;
    let mut r = Registry::default();
    let node_in = r.mlp("input.node", alphabet.node_types + NODE_AUX_DIM, h, h);
    let edge_in = r.mlp("input.edge", alphabet.edge_types, h, h);
    let global_in = r.mlp("input.global", GLOBAL_AUX_DIM, h, h);
    let layers = (0..cfg.layers)
        .map(|l| LayerIdx {
            node_msg: r.mlp(&format!("layer{l}.node_msg"), h, h, h),
            node_film_msg: r.film(&format!("layer{l}.node_film_msg"), h),
            node_film_global: r.film(&format!("layer{l}.node_film_global"), h),
            edge_film_nodes: r.film(&format!("layer{l}.edge_film_nodes"), h),
            edge_film_global: r.film(&format!("layer{l}.edge_film_global"), h),
            pna_nodes: r.mlp(&format!("layer{l}.pna_nodes"), 4 * h, h, h),
            pna_edges: r.mlp(&format!("layer{l}.pna_edges"), 4 * h, h, h),
        })
        .collect();
    let node_out = r.mlp("output.node", h, h, alphabet.node_types);
    let edge_out = r.mlp("output.edge", h, h, alphabet.edge_types);
    (
        Layout {
            node_in,
            edge_in,
            global_in,
            layers,
            node_out,
            edge_out,
        },
        r,
    )
}

/// Parameter handles for one forward pass.
pub struct Ctx<'a> {
    pub params: &'a [Var],
    pub dropout: f64,
    pub rng: Option<&'a mut StreamRng>,
}

pub fn linear(tape: &mut Tape, p: &[Var], idx: LinearIdx, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p[idx.w])?;
    tape.add_row(y, p[idx.b])
}

/// `Lin2(relu(Lin1(x)))`.
pub fn mlp(tape: &mut Tape, p: &[Var], idx: MlpIdx, x: Var) -> Result<Var> {
    let h = linear(tape, p, idx.first, x)?;
    let h = tape.relu(h);
    linear(tape, p, idx.second, h)
}

/// `Lin1(x) + Lin2(x) * y + y`, row by row.
pub fn film(tape: &mut Tape, p: &[Var], idx: FilmIdx, x: Var, y: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::invalid(format!(
            "FiLM: input {:?} and conditioning {:?} differ",
            tape.shape(x),
            tape.shape(y)
        )));
    }
    let a = linear(tape, p, idx.lin1, x)?;
    let b = linear(tape, p, idx.lin2, x)?;
    let by = tape.mul(b, y)?;
    let s = tape.add(a, by)?;
    tape.add(s, y)
}

/// `min ++ max ++ mean ++ std` over the rows of a `[k, h]` set, as `[1, 4h]`.
pub fn pna_features(tape: &mut Tape, set: Var) -> Result<Var> {
    let s = tape.shape(set);
    if s.len() != 2 {
        return Err(Error::invalid(format!("PNA needs a [k, h] set, got {s:?}")));
    }
    let h = s[1];
    let parts = [Reduction::Min, Reduction::Max, Reduction::Mean, Reduction::Std]
        .into_iter()
        .map(|k| tape.reduce(set, k, 0))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat(&parts)?;
    tape.reshape(cat, vec![1, 4 * h])
}

/// `MLP(min ++ max ++ mean ++ std)`; `None` is the empty set, which is
/// summarized as a single zero vector of width `h`.
pub fn pna(tape: &mut Tape, p: &[Var], idx: MlpIdx, set: Option<Var>, h: usize) -> Result<Var> {
    let set = match set {
        Some(s) => s,
        None => tape.constant(vec![1, h], vec![0.0; h])?,
    };
    let f = pna_features(tape, set)?;
    mlp(tape, p, idx, f)
}

/// Node, pair and global embeddings of one graph.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    /// `[n, h]`
    pub nodes: Var,
    /// `[pairs, h]` in pair order; `None` when `n == 1`.
    pub edges: Option<Var>,
    /// `[1, h]`
    pub global: Var,
}

fn dropout(tape: &mut Tape, ctx: &mut Ctx, x: Var) -> Result<Var> {
    match ctx.rng.as_deref_mut() {
        Some(rng) => tape.dropout(x, ctx.dropout, rng),
        None => Ok(x),
    }
}

/// One message-passing layer: nodes, then pairs from the updated nodes,
/// then the global vector from both updated sets. Each of the three updated
/// embeddings is layer-normalized row by row; without it the nested
/// multiplicative updates overflow within a few layers.
pub fn mpnn_layer(tape: &mut Tape, ctx: &mut Ctx, idx: &LayerIdx, emb: Embeddings) -> Result<Embeddings> {
    let p = ctx.params;
    let n = tape.shape(emb.nodes)[0];
    let h = tape.shape(emb.nodes)[1];
    let pairs = pair_list(n);
    let (is, js): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();

    let incoming = match emb.edges {
        Some(e) => {
            let to_i = tape.scatter_add_rows(e, &is, n)?;
            let to_j = tape.scatter_add_rows(e, &js, n)?;
            let s = tape.add(to_i, to_j)?;
            tape.scale(s, 1.0 / (n - 1) as f64)
        }
        None => tape.constant(vec![n, h], vec![0.0; n * h])?,
    };
    let msg = mlp(tape, p, idx.node_msg, incoming)?;
    let y_nodes = tape.gather_rows(emb.global, &vec![0; n])?;
    let f = film(tape, p, idx.node_film_msg, emb.nodes, msg)?;
    let f = film(tape, p, idx.node_film_global, f, y_nodes)?;
    let f = tape.layer_norm(f);
    let f = dropout(tape, ctx, f)?;

    let e = match emb.edges {
        Some(e) => {
            let fi = tape.gather_rows(f, &is)?;
            let fj = tape.gather_rows(f, &js)?;
            let prod = tape.mul(fi, fj)?;
            let y_edges = tape.gather_rows(emb.global, &vec![0; pairs.len()])?;
            let e = film(tape, p, idx.edge_film_nodes, e, prod)?;
            let e = film(tape, p, idx.edge_film_global, e, y_edges)?;
            let e = tape.layer_norm(e);
            Some(dropout(tape, ctx, e)?)
        }
        None => None,
    };

    let pn = pna(tape, p, idx.pna_nodes, Some(f), h)?;
    let pe = pna(tape, p, idx.pna_edges, e, h)?;
    let y = tape.add(emb.global, pn)?;
    let y = tape.add(y, pe)?;
    let y = tape.layer_norm(y);
    Ok(Embeddings {
        nodes: f,
        edges: e,
        global: y,
    })
}

/// Raw logits before the softmax.
#[derive(Debug, Clone, Copy)]
pub struct Logits {
    /// `[n, b]`
    pub nodes: Var,
    /// `[pairs, a + 1]`; `None` when `n == 1`.
    pub edges: Option<Var>,
}

/// Named parameters and the fixed architecture that consumes them.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    config: ModelConfig,
    alphabet: Alphabet,
    horizon: f64,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Counts feed the network as `ln(1 + x)`; normalized time passes through.
fn scale_aux(x: f64) -> f64 {
    x.ln_1p()
}

impl DenoiserModel {
    /// Fresh model with weights uniform in `+-sqrt(6 / (fan_in + fan_out))`
    /// and zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, alphabet: Alphabet, horizon: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if !(horizon > 0.0) {
            return Err(Error::invalid(format!("horizon {horizon} must be positive")));
        }
        let (layout, reg) = layout(&config, &alphabet);
        let params = reg
            .shapes
            .iter()
            .map(|shape| {
                let mut t = Tensor::zeros(shape.clone());
                if shape.len() == 2 {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    t.data_mut().iter_mut().for_each(|w| *w = dist.sample(rng));
                }
                t
            })
            .collect();
        Ok(Self {
            config,
            alphabet,
            horizon,
            layout,
            names: reg.names,
            params,
        })
    }

    /// Rebuilds a model from stored arrays, checking names and shapes.
    pub fn from_parts(
        config: ModelConfig,
        alphabet: Alphabet,
        horizon: f64,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let (layout, reg) = layout(&config, &alphabet);
        if named.len() != reg.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                reg.names.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(reg.names.iter().zip(&reg.shapes)) {
            if &name != want || t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter {name} holds non-finite value {bad}")));
            }
            params.push(t);
        }
        Ok(Self {
            config,
            alphabet,
            horizon,
            layout,
            names: reg.names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn layer_indices(&self) -> &[LayerIdx] {
        &self.layout.layers
    }

    /// Records every parameter as a leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Embeds the graph before the first layer.
    pub fn embed(&self, tape: &mut Tape, p: &[Var], g: &CategoricalGraph, t: f64) -> Result<Embeddings> {
        self.check_input(g, t)?;
        let n = g.n();
        let aux = compute_aux(g, t, self.horizon)?;
        let b = self.alphabet.node_types;
        let width = b + NODE_AUX_DIM;
        let mut x = vec![0.0; n * width];
        for i in 0..n {
            x[i * width + g.node(i)] = 1.0;
            for (k, &v) in aux.node_aux[i].iter().enumerate() {
                x[i * width + b + k] = scale_aux(v);
            }
        }
        let x = tape.constant(vec![n, width], x)?;
        let nodes = mlp(tape, p, self.layout.node_in, x)?;

        let edges = if n > 1 {
            let a1 = self.alphabet.edge_types;
            let types = g.pair_types();
            let mut e = vec![0.0; types.len() * a1];
            for (r, &ty) in types.iter().enumerate() {
                e[r * a1 + ty] = 1.0;
            }
            let e = tape.constant(vec![types.len(), a1], e)?;
            Some(mlp(tape, p, self.layout.edge_in, e)?)
        } else {
            None
        };

        let mut gvec = aux.global_aux;
        for v in &mut gvec[..GLOBAL_AUX_DIM - 1] {
            *v = scale_aux(*v);
        }
        let gvec = tape.constant(vec![1, GLOBAL_AUX_DIM], gvec.to_vec())?;
        let global = mlp(tape, p, self.layout.global_in, gvec)?;
        Ok(Embeddings { nodes, edges, global })
    }

    /// Full forward pass to logits. Dropout is active only when the tape is
    /// in training mode and an RNG is supplied.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &[Var],
        g: &CategoricalGraph,
        t: f64,
        rng: Option<&mut StreamRng>,
    ) -> Result<Logits> {
        let mut emb = self.embed(tape, p, g, t)?;
        let mut ctx = Ctx {
            params: p,
            dropout: self.config.dropout,
            rng,
        };
        for idx in &self.layout.layers {
            emb = mpnn_layer(tape, &mut ctx, idx, emb)?;
        }
        let nodes = mlp(tape, p, self.layout.node_out, emb.nodes)?;
        let edges = match emb.edges {
            Some(e) => Some(mlp(tape, p, self.layout.edge_out, e)?),
            None => None,
        };
        Ok(Logits { nodes, edges })
    }

    fn check_input(&self, g: &CategoricalGraph, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        if g.n() == 0 {
            return Err(Error::invalid("cannot denoise an empty graph"));
        }
        g.validate(&self.alphabet)
    }

    /// Clean-graph probabilities: softmax of the logits, row by row.
    pub fn predict_clean(&self, g: &CategoricalGraph, t: f64) -> Result<Posteriors> {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let logits = self.forward(&mut tape, &p, g, t, None)?;
        let node = tape.softmax(logits.nodes);
        let node = Mat::from_fn(g.n(), self.alphabet.node_types, |i, k| {
            tape.value(node)[i * self.alphabet.node_types + k]
        });
        let a1 = self.alphabet.edge_types;
        let edge = match logits.edges {
            Some(e) => {
                let e = tape.softmax(e);
                let vals = tape.value(e);
                Mat::from_fn(num_pairs(g.n()), a1, |r, k| vals[r * a1 + k])
            }
            None => Mat::zeros(0, a1),
        };
        Ok(Posteriors { node, edge })
    }
}

impl Denoiser for DenoiserModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn predict(&self, g_t: &CategoricalGraph, t: f64) -> Result<Posteriors> {
        self.predict_clean(g_t, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{permute_graph, Permutation};
    use crate::rng::stream;

    fn random_graph(n: usize, alphabet: Alphabet, seed: u64) -> CategoricalGraph {
        let mut rng = stream(seed, &[]);
        let nodes = (0..n).map(|_| rng.random_range(0..alphabet.node_types)).collect();
        let mut edges = Vec::new();
        for (i, j) in pair_list(n) {
            let ty = rng.random_range(0..alphabet.edge_types);
            if ty > 0 {
                edges.push((i, j, ty));
            }
        }
        CategoricalGraph::from_edges(nodes, &edges).unwrap()
    }

    fn small_model(seed: u64) -> DenoiserModel {
        let cfg = ModelConfig {
            layers: 2,
            hidden: 8,
            dropout: 0.0,
        };
        DenoiserModel::new(cfg, Alphabet::new(3, 3).unwrap(), 1.0, &mut stream(seed, &[])).unwrap()
    }

    #[test]
    fn film_collapses() {
        let h = 3;
        let mut tape = Tape::new();
        let zero_w = tape.leaf(&Tensor::zeros(vec![h, h]));
        let zero_b = tape.leaf(&Tensor::zeros(vec![h]));
        let w = tape.leaf(&Tensor::new(vec![h, h], (0..9).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap());
        let b = tape.leaf(&Tensor::new(vec![h], vec![0.5, -0.2, 0.1]).unwrap());
        let p = [zero_w, zero_b, w, b];
        let x = tape.constant(vec![1, h], vec![1.0, 2.0, -3.0]).unwrap();
        let y = tape.constant(vec![1, h], vec![0.7, -0.1, 0.4]).unwrap();
        let zero = FilmIdx {
            lin1: LinearIdx { w: 0, b: 1 },
            lin2: LinearIdx { w: 0, b: 1 },
        };
        let out = film(&mut tape, &p, zero, x, y).unwrap();
        assert_eq!(tape.value(out), tape.value(y));

        let y0 = tape.constant(vec![1, h], vec![0.0; h]).unwrap();
        let only1 = FilmIdx {
            lin1: LinearIdx { w: 2, b: 3 },
            lin2: LinearIdx { w: 2, b: 3 },
        };
        let out = film(&mut tape, &p, only1, x, y0).unwrap();
        let lin = linear(&mut tape, &p, only1.lin1, x).unwrap();
        assert_eq!(tape.value(out), tape.value(lin));

        // straight-line reimplementation
        let out = film(&mut tape, &p, only1, x, y).unwrap();
        let (xv, yv, wv, bv) = ([1.0, 2.0, -3.0], [0.7, -0.1, 0.4], tape.value(w).to_vec(), [0.5, -0.2, 0.1]);
        for c in 0..h {
            let l: f64 = (0..h).map(|r| xv[r] * wv[r * h + c]).sum::<f64>() + bv[c];
            let expect = l + l * yv[c] + yv[c];
            assert!((tape.value(out)[c] - expect).abs() < 1e-12);
        }
        let bad = tape.constant(vec![2, h], vec![0.0; 2 * h]).unwrap();
        assert!(film(&mut tape, &p, zero, x, bad).is_err());
    }

    #[test]
    fn pna_of_identical_rows() {
        let mut tape = Tape::new();
        let v = [0.3, -1.2, 4.0];
        let set = tape.constant(vec![4, 3], v.repeat(4)).unwrap();
        let f = pna_features(&mut tape, set).unwrap();
        let mut expect = v.repeat(3);
        expect.extend([0.0; 3]);
        assert_eq!(tape.value(f), expect.as_slice());
        let single = tape.constant(vec![1, 3], v.to_vec()).unwrap();
        let f = pna_features(&mut tape, single).unwrap();
        assert_eq!(tape.value(f), expect.as_slice());
    }

    #[test]
    fn pna_is_order_insensitive() {
        let cfg = ModelConfig {
            layers: 1,
            hidden: 3,
            dropout: 0.0,
        };
        let m = DenoiserModel::new(cfg, Alphabet::new(1, 2).unwrap(), 1.0, &mut stream(5, &[])).unwrap();
        let rows: Vec<f64> = (0..15).map(|v| ((v * 7) % 11) as f64 * 0.37 - 1.5).collect();
        let perm = [3, 0, 4, 2, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&r| rows[r * 3..r * 3 + 3].to_vec()).collect();
        let mut out = Vec::new();
        for data in [rows, permuted] {
            let mut tape = Tape::new();
            let p = m.leaves(&mut tape);
            let set = tape.constant(vec![5, 3], data).unwrap();
            let y = pna(&mut tape, &p, m.layer_indices()[0].pna_nodes, Some(set), 3).unwrap();
            out.push(tape.value(y).to_vec());
        }
        for (a, b) in out[0].iter().zip(&out[1]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn outputs_are_distributions() {
        let model = small_model(1);
        let g = random_graph(6, Alphabet::new(3, 3).unwrap(), 2);
        let post = model.predict_clean(&g, 0.4).unwrap();
        post.check_shape(6, &Alphabet::new(3, 3).unwrap()).unwrap();
        for r in 0..post.node.rows() {
            assert!((post.node.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for r in 0..post.edge.rows() {
            assert!((post.edge.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(post.edge_row(1, 4), post.edge_row(4, 1));
        assert!(model.predict_clean(&g, 1.5).is_err());
    }

    #[test]
    fn single_node_graph_is_finite() {
        let model = small_model(1);
        let g = CategoricalGraph::empty(vec![2]).unwrap();
        let post = model.predict_clean(&g, 0.9).unwrap();
        assert!(post.node.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(post.edge.rows(), 0);
    }

    #[test]
    fn zero_film_node_update_returns_global() {
        // With every FiLM linear zeroed, FiLM(x, y) = y, so each updated node
        // embedding is the normalized global vector.
        let mut model = small_model(4);
        let layer = model.layer_indices()[0];
        for film in [layer.node_film_msg, layer.node_film_global] {
            for lin in [film.lin1, film.lin2] {
                for k in [lin.w, lin.b] {
                    model.params_mut()[k].data_mut().fill(0.0);
                }
            }
        }
        let g = random_graph(5, Alphabet::new(3, 3).unwrap(), 9);
        let mut tape = Tape::new();
        let p = model.leaves(&mut tape);
        let emb = model.embed(&mut tape, &p, &g, 0.5).unwrap();
        let mut ctx = Ctx {
            params: &p,
            dropout: 0.0,
            rng: None,
        };
        let out = mpnn_layer(&mut tape, &mut ctx, &layer, emb).unwrap();
        let y = tape.layer_norm(emb.global);
        let y = tape.value(y).to_vec();
        for row in tape.value(out.nodes).chunks(8) {
            assert_eq!(row, y.as_slice());
        }
    }

    #[test]
    fn prediction_is_equivariant() {
        let model = small_model(7);
        let alphabet = Alphabet::new(3, 3).unwrap();
        for seed in 0..5 {
            let g = random_graph(7, alphabet, 100 + seed);
            let sigma = Permutation::random(7, &mut stream(200 + seed, &[]));
            let pg = permute_graph(&g, &sigma).unwrap();
            let a = model.predict_clean(&g, 0.6).unwrap();
            let b = model.predict_clean(&pg, 0.6).unwrap();
            for i in 0..7 {
                let pi = sigma.apply(i);
                for k in 0..3 {
                    assert!((a.node[(i, k)] - b.node[(pi, k)]).abs() < 1e-9);
                }
                for j in 0..7 {
                    if i != j {
                        let (ea, eb) = (a.edge_row(i, j), b.edge_row(pi, sigma.apply(j)));
                        for k in 0..3 {
                            assert!((ea[k] - eb[k]).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }
}
