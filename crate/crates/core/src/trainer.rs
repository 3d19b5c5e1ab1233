//! Denoising cross-entropy training with Adam.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{ordered_sum, Tape, Tensor, Var, PROB_FLOOR};
use crate::backbone::{DenoiserModel, Logits};
use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TrainConfig};
use crate::ctmc::{corrupt_graph, estimate_marginals, NoiseSchedule, NoiseSpecs};
use crate::denoise::Posteriors;
use crate::error::{Error, Result};
use crate::graph::{fit_size_distribution, num_pairs, Alphabet, CategoricalGraph};
use crate::rng::{stream, StreamRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_probs(tape: &Tape, g0: &CategoricalGraph, nodes: Var, edges: Option<Var>) -> Result<()> {
    let n = g0.n();
    let ns = tape.shape(nodes);
    if ns.len() != 2 || ns[0] != n {
        return Err(Error::invalid(format!("node predictions {ns:?} for a {n}-node graph")));
    }
    match (edges, n) {
        (None, 1) => Ok(()),
        (Some(e), _) if tape.shape(e).len() == 2 && tape.shape(e)[0] == num_pairs(n) => Ok(()),
        (e, _) => Err(Error::invalid(format!(
            "edge predictions {:?} for a {n}-node graph",
            e.map(|e| tape.shape(e).to_vec())
        ))),
    }
}

/// Summed cross-entropy of the clean graph under probability tables:
/// nodes plus unordered pairs, natural log, probabilities floored at 1e-12.
/// Each part is summed in sorted order, so relabeling nodes leaves the value
/// bit-identical.
pub fn ce_loss(tape: &mut Tape, g0: &CategoricalGraph, nodes: Var, edges: Option<Var>) -> Result<Var> {
    check_probs(tape, g0, nodes, edges)?;
    let mut loss = tape.nll_probs(nodes, g0.node_types())?;
    if let Some(e) = edges {
        let le = tape.nll_probs(e, &g0.pair_types())?;
        loss = tape.add(loss, le)?;
    }
    Ok(loss)
}

/// [`ce_loss`] of `softmax(logits)`, fused.
pub fn ce_loss_logits(tape: &mut Tape, g0: &CategoricalGraph, logits: &Logits) -> Result<Var> {
    check_probs(tape, g0, logits.nodes, logits.edges)?;
    let mut loss = tape.softmax_cross_entropy(logits.nodes, g0.node_types())?;
    if let Some(e) = logits.edges {
        let le = tape.softmax_cross_entropy(e, &g0.pair_types())?;
        loss = tape.add(loss, le)?;
    }
    Ok(loss)
}

/// [`ce_loss`] as a plain number.
pub fn ce_loss_value(g0: &CategoricalGraph, post: &Posteriors) -> Result<f64> {
    let n = g0.n();
    if post.node.rows() != n || post.edge.rows() != num_pairs(n) {
        return Err(Error::invalid("posterior shape does not match the graph"));
    }
    let mut node_terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = post.node.row(i);
        let f = g0.node(i);
        if f >= row.len() {
            return Err(Error::invalid(format!("node type {f} outside the predicted alphabet")));
        }
        node_terms.push(-row[f].max(PROB_FLOOR).ln());
    }
    let mut edge_terms = Vec::with_capacity(num_pairs(n));
    for (r, e) in g0.pair_types().into_iter().enumerate() {
        let row = post.edge.row(r);
        if e >= row.len() {
            return Err(Error::invalid(format!("edge type {e} outside the predicted alphabet")));
        }
        edge_terms.push(-row[e].max(PROB_FLOOR).ln());
    }
    let loss = ordered_sum(node_terms) + ordered_sum(edge_terms);
    Ok(loss)
}

/// Scales `grads` so their joint Euclidean norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Adam moments with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `theta <- theta (1 - lr wd)`, then one Adam step. Fails without
    /// touching anything if a gradient is not finite.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], names: &[String], lr: f64, wd: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid("parameter, gradient and state counts differ"));
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                let name = names.get(k).map_or("?", String::as_str);
                return Err(Error::NonFiniteGradient(format!(
                    "gradient of parameter {name} is {} at index {pos}",
                    g[pos]
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w *= 1.0 - lr * wd;
                *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub mean_loss: f64,
}

pub struct Trainer {
    pub model: DenoiserModel,
    pub specs: NoiseSpecs,
    pub schedule: NoiseSchedule,
    pub cfg: TrainConfig,
    adam: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(model: DenoiserModel, specs: NoiseSpecs, schedule: NoiseSchedule, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        schedule.validate()?;
        let adam = Adam::new(model.params());
        Ok(Self {
            model,
            specs,
            schedule,
            cfg,
            adam,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Loss and parameter gradients of one graph at one sampled time.
    fn graph_grads(&self, g0: &CategoricalGraph, rng: &mut StreamRng, weight: f64, grads: &mut [Vec<f64>]) -> Result<f64> {
        let t = rng.random_range(0.0..self.schedule.horizon);
        let g_t = corrupt_graph(g0, t, &self.specs, &self.schedule, rng)?;
        let mut tape = Tape::training();
        let p = self.model.leaves(&mut tape);
        let logits = self.model.forward(&mut tape, &p, &g_t, t, Some(rng))?;
        let loss = ce_loss_logits(&mut tape, g0, &logits)?;
        let value = tape.value(loss)[0];
        let scaled = tape.scale(loss, weight);
        tape.backward(scaled)?;
        for (acc, &v) in grads.iter_mut().zip(&p) {
            for (a, g) in acc.iter_mut().zip(tape.grad(v)?) {
                *a += g;
            }
        }
        Ok(value)
    }

    /// Mean loss over the batch, one optimizer update.
    pub fn train_step(&mut self, batch: &[CategoricalGraph], rng: &mut StreamRng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let weight = 1.0 / batch.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let mut total = 0.0;
        for g0 in batch {
            total += self.graph_grads(g0, rng, weight, &mut grads)?;
        }
        clip_global_norm(&mut grads, self.cfg.grad_clip);
        let names = self.model.names().to_vec();
        self.adam.update(self.model.params_mut(), &grads, &names, self.cfg.lr, self.cfg.weight_decay)?;
        self.step += 1;
        Ok(total * weight)
    }

    /// Runs `cfg.epochs` passes over `data` in seeded shuffled order.
    pub fn fit(&mut self, data: &[CategoricalGraph], mut on_step: impl FnMut(StepLog)) -> Result<()> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..self.cfg.epochs {
            order.sort_unstable();
            order.shuffle(&mut stream(self.cfg.seed, &[0, epoch as u64]));
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<CategoricalGraph> = chunk.iter().map(|&i| data[i].clone()).collect();
                let mut rng = stream(self.cfg.seed, &[1, self.step]);
                let mean_loss = self.train_step(&batch, &mut rng)?;
                on_step(StepLog {
                    step: self.step,
                    epoch,
                    mean_loss,
                });
            }
        }
        Ok(())
    }
}

/// Trains a fresh model on `data` as configured and packages the result.
/// Marginals, alphabet and the node-count distribution come from `data`.
pub fn train_checkpoint(
    data: &[CategoricalGraph],
    cfg: &RunConfig,
    on_step: impl FnMut(StepLog),
) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let alphabet = Alphabet::covering(data);
    let marginals = estimate_marginals(data, alphabet)?;
    let sizes = fit_size_distribution(data)?;
    let specs = NoiseSpecs::from_kind(cfg.noise.reference, alphabet, &marginals.0, &marginals.1)?;
    let schedule = cfg.noise.schedule()?;
    let model = DenoiserModel::new(cfg.model, alphabet, schedule.horizon, &mut stream(cfg.train.seed, &[2]))?;
    let mut trainer = Trainer::new(model, specs, schedule, cfg.train)?;
    trainer.fit(data, on_step)?;
    Ok(Checkpoint::new(
        &trainer.model,
        cfg.train,
        cfg.noise,
        alphabet,
        marginals,
        trainer.step(),
        sizes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::backbone::ModelConfig;
    use crate::ctmc::ReferenceKind;
    use crate::graph::{permute_graph, Permutation};
    use crate::linalg::Mat;

    fn uniform_posteriors(n: usize, b: usize, a1: usize) -> Posteriors {
        Posteriors {
            node: Mat::from_fn(n, b, |_, _| 1.0 / b as f64),
            edge: Mat::from_fn(num_pairs(n), a1, |_, _| 1.0 / a1 as f64),
        }
    }

    #[test]
    fn uniform_prediction_loss() {
        let g = CategoricalGraph::from_edges(vec![0, 3, 1], &[(0, 2, 1)]).unwrap();
        let loss = ce_loss_value(&g, &uniform_posteriors(3, 4, 2)).unwrap();
        let expect = 3.0 * 4f64.ln() + 3.0 * 2f64.ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 6.2383).abs() < 1e-4);
    }

    #[test]
    fn one_hot_truth_has_zero_loss() {
        let g = CategoricalGraph::from_edges(vec![1, 0], &[(0, 1, 1)]).unwrap();
        let post = Posteriors {
            node: Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            edge: Mat::from_rows(&[vec![0.0, 1.0]]).unwrap(),
        };
        assert_eq!(ce_loss_value(&g, &post).unwrap(), 0.0);
        let mut tape = Tape::new();
        let nodes = tape.constant(vec![2, 2], post.node.as_slice().to_vec()).unwrap();
        let edges = tape.constant(vec![1, 2], post.edge.as_slice().to_vec()).unwrap();
        let loss = ce_loss(&mut tape, &g, nodes, Some(edges)).unwrap();
        assert_eq!(tape.value(loss), &[0.0]);
        let bad = tape.constant(vec![3, 2], vec![0.5; 6]).unwrap();
        assert!(ce_loss(&mut tape, &g, bad, Some(edges)).is_err());
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let g = CategoricalGraph::from_edges(vec![0, 1, 1, 0], &[(0, 1, 1), (2, 3, 1), (1, 3, 1)]).unwrap();
        let post = Posteriors {
            node: Mat::from_fn(4, 2, |i, k| if k == 0 { 0.1 + 0.2 * i as f64 } else { 0.9 - 0.2 * i as f64 }),
            edge: Mat::from_fn(6, 2, |r, k| if k == 0 { 0.15 * r as f64 + 0.05 } else { 0.95 - 0.15 * r as f64 }),
        };
        let sigma = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let pg = permute_graph(&g, &sigma).unwrap();
        let ppost = Posteriors {
            node: Mat::from_rows(&sigma.permute_rows(&post.node.to_rows())).unwrap(),
            edge: Mat::from_rows(&sigma.permute_pair_rows(&post.edge.to_rows())).unwrap(),
        };
        assert_eq!(ce_loss_value(&g, &post).unwrap(), ce_loss_value(&pg, &ppost).unwrap());
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[vec![1.0]], &["theta".into()], 0.1, 0.0).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_and_weight_decay() {
        let mut p = vec![Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()];
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[vec![0.0, 0.0]], &["w".into()], 0.1, 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
        adam.update(&mut p, &[vec![0.0, 0.0]], &["w".into()], 0.1, 0.5).unwrap();
        assert_eq!(p[0].data(), &[1.5 * 0.95, -2.0 * 0.95]);
    }

    #[test]
    fn adam_rejects_nan_naming_parameter() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut adam = Adam::new(&p);
        let err = adam
            .update(&mut p, &[vec![0.0], vec![f64::NAN]], &["a".into(), "layer0.b".into()], 0.1, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("layer0.b"), "{err}");
        assert_eq!(p[0].data(), &[1.0]);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![vec![30.0, 40.0], vec![0.0]];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g[0][0] - 6.0).abs() < 1e-12 && (g[0][1] - 8.0).abs() < 1e-12);
    }

    fn tiny_trainer(lr: f64) -> (Trainer, Vec<CategoricalGraph>) {
        let alphabet = Alphabet::new(2, 2).unwrap();
        let data = vec![
            CategoricalGraph::from_edges(vec![0, 1, 0, 1], &[(0, 1, 1), (1, 2, 1), (2, 3, 1)]).unwrap(),
            CategoricalGraph::from_edges(vec![1, 1, 0], &[(0, 2, 1)]).unwrap(),
        ];
        let specs = crate::ctmc::NoiseSpecs::from_kind(ReferenceKind::Uniform, alphabet, &[], &[]).unwrap();
        let cfg = ModelConfig {
            layers: 1,
            hidden: 8,
            dropout: 0.1,
        };
        let model = DenoiserModel::new(cfg, alphabet, 1.0, &mut stream(3, &[])).unwrap();
        let tc = TrainConfig {
            lr,
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::default()
        };
        (Trainer::new(model, specs, NoiseSchedule::STRONG, tc).unwrap(), data)
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (mut tr, data) = tiny_trainer(1e-3);
            let mut losses = Vec::new();
            tr.fit(&data, |log| losses.push(log.mean_loss)).unwrap();
            (losses, tr.model.params().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (mut tr, data) = tiny_trainer(0.0);
        let before = tr.model.params().to_vec();
        tr.train_step(&data, &mut stream(1, &[])).unwrap();
        assert_eq!(tr.model.params(), before.as_slice());
        assert!(tr.train_step(&[], &mut stream(1, &[])).is_err());
    }

    #[test]
    fn loss_gradient_through_model() {
        let alphabet = Alphabet::new(2, 2).unwrap();
        let cfg = ModelConfig {
            layers: 1,
            hidden: 4,
            dropout: 0.0,
        };
        let model = DenoiserModel::new(cfg, alphabet, 1.0, &mut stream(8, &[])).unwrap();
        let g0 = CategoricalGraph::from_edges(vec![0, 1, 1], &[(0, 1, 1), (1, 2, 1)]).unwrap();
        let g_t = CategoricalGraph::from_edges(vec![1, 1, 0], &[(0, 1, 1), (0, 2, 1)]).unwrap();
        let err = grad_check(
            |tape, p| {
                let logits = model.forward(tape, p, &g_t, 0.3, None)?;
                ce_loss_logits(tape, &g0, &logits)
            },
            model.params(),
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
