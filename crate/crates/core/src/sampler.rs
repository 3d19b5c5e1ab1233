//! Reverse-time generation by tau-leaping, plus an exact reverse simulator
//! for tiny joint systems.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::ctmc::tiny::{TinySystem, MAX_STATES};
use crate::ctmc::{base_rate_matrix, sample_row, transition_matrix, NoiseSchedule, NoiseSpecs};
use crate::denoise::{Denoiser, Posteriors};
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_list, CategoricalGraph, SizeDistribution};
use crate::linalg::Mat;
use crate::rng::{stream, StreamRng};

/// Floor on the denominator of the posterior-weighted likelihood ratio.
pub const RATIO_FLOOR: f64 = 1e-30;

/// Jump intensities out of the current state of every component; the entry
/// for the current state is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRates {
    /// `n x b`
    pub node: Mat,
    /// `pairs x (a+1)`
    pub edge: Mat,
}

/// `beta(t) R(s, x) sum_{x0} q(s | x0) / q(x | x0) p(x0)` for every `s != x`.
fn component_rates(out: &mut [f64], x: usize, post: &[f64], p: &Mat, r: &Mat, beta: f64) {
    for (s, slot) in out.iter_mut().enumerate() {
        if s == x || r[(s, x)] == 0.0 {
            *slot = 0.0;
            continue;
        }
        let ratio: f64 = post
            .iter()
            .enumerate()
            .map(|(x0, &w)| if w == 0.0 { 0.0 } else { p[(x0, s)] / p[(x0, x)].max(RATIO_FLOOR) * w })
            .sum();
        *slot = beta * r[(s, x)] * ratio;
    }
}

/// Parameterized reverse rates at time `t` from predicted clean posteriors.
pub fn reverse_rates(
    g_t: &CategoricalGraph,
    t: f64,
    post: &Posteriors,
    specs: &NoiseSpecs,
    sched: &NoiseSchedule,
) -> Result<ReverseRates> {
    sched.check_time(t)?;
    if t <= 0.0 {
        return Err(Error::invalid("reverse rates are undefined at t = 0"));
    }
    let alphabet = specs.alphabet();
    let n = g_t.n();
    post.check_shape(n, &alphabet)?;
    let c = sched.cumulative_rate(0.0, t)?;
    let beta = sched.beta(t);
    let (pn, pe) = (transition_matrix(&specs.node, c)?, transition_matrix(&specs.edge, c)?);
    let (rn, re) = (base_rate_matrix(&specs.node), base_rate_matrix(&specs.edge));
    let mut node = Mat::zeros(n, alphabet.node_types);
    for i in 0..n {
        component_rates(node.row_mut(i), g_t.node(i), post.node.row(i), &pn, &rn, beta);
    }
    let mut edge = Mat::zeros(num_pairs(n), alphabet.edge_types);
    for (q, (i, j)) in pair_list(n).into_iter().enumerate() {
        component_rates(edge.row_mut(q), g_t.edge(i, j), post.edge.row(q), &pe, &re, beta);
    }
    Ok(ReverseRates { node, edge })
}

/// Poisson jump counts for every candidate; the new state if exactly one
/// jump fired in total, else `None`.
fn leap_component<R: Rng + ?Sized>(rates: &[f64], tau: f64, rng: &mut R) -> Result<Option<usize>> {
    let mut total = 0u64;
    let mut target = None;
    for (s, &r) in rates.iter().enumerate() {
        let lambda = tau * r;
        if lambda <= 0.0 {
            continue;
        }
        if !lambda.is_finite() {
            return Err(Error::Domain(format!("jump intensity {lambda} is not finite")));
        }
        let j = Poisson::new(lambda)
            .map_err(|e| Error::Domain(format!("Poisson({lambda}): {e}")))?
            .sample(rng) as u64;
        if j > 0 {
            total += j;
            target = Some(s);
        }
    }
    Ok(if total == 1 { target } else { None })
}

/// Applies one leap of length `tau` given precomputed rates.
pub fn leap_with_rates<R: Rng + ?Sized>(
    g_t: &CategoricalGraph,
    rates: &ReverseRates,
    tau: f64,
    rng: &mut R,
) -> Result<CategoricalGraph> {
    let mut g = g_t.clone();
    for i in 0..g.n() {
        if let Some(s) = leap_component(rates.node.row(i), tau, rng)? {
            g.set_node(i, s);
        }
    }
    for (q, (i, j)) in pair_list(g.n()).into_iter().enumerate() {
        if let Some(s) = leap_component(rates.edge.row(q), tau, rng)? {
            g.set_edge(i, j, s);
        }
    }
    Ok(g)
}

/// One reverse tau-leap from `t` to `t - tau`, rates frozen at `t`.
#[allow(clippy::too_many_arguments)]
pub fn tau_leap_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    g_t: &CategoricalGraph,
    t: f64,
    tau: f64,
    model: &D,
    specs: &NoiseSpecs,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CategoricalGraph> {
    if !(tau >= 0.0) || tau > t {
        return Err(Error::invalid(format!("step {tau} must lie in [0, t = {t}]")));
    }
    if tau == 0.0 {
        return Ok(g_t.clone());
    }
    let post = model.predict(g_t, t)?;
    let rates = reverse_rates(g_t, t, &post, specs, sched)?;
    leap_with_rates(g_t, &rates, tau, rng)
}

/// Where the node count of each sample comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeCount {
    Fixed(usize),
    Sizes(SizeDistribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    pub nodes: NodeCount,
}

/// A graph drawn component-wise from the stationary distributions.
pub fn sample_reference<R: Rng + ?Sized>(n: usize, specs: &NoiseSpecs, rng: &mut R) -> Result<CategoricalGraph> {
    let (pf, pe) = (specs.node.stationary(), specs.edge.stationary());
    let nodes = (0..n).map(|_| sample_row(&pf, rng)).collect();
    let mut g = CategoricalGraph::empty(nodes)?;
    for (i, j) in pair_list(n) {
        g.set_edge(i, j, sample_row(&pe, rng));
    }
    Ok(g)
}

/// Runs one chain of `steps` leaps from `horizon` down to 0 starting at `g`.
pub fn reverse_chain<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    mut g: CategoricalGraph,
    steps: usize,
    model: &D,
    specs: &NoiseSpecs,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CategoricalGraph> {
    if steps == 0 {
        return Err(Error::invalid("at least one sampling step is required"));
    }
    let horizon = sched.horizon;
    for k in (1..=steps).rev() {
        let t = horizon * k as f64 / steps as f64;
        let next = horizon * (k - 1) as f64 / steps as f64;
        g = tau_leap_step(&g, t, t - next, model, specs, sched, rng)?;
    }
    Ok(g)
}

/// Draws `cfg.count` graphs; sample `i` uses its own stream of `cfg.seed`.
pub fn generate<D: Denoiser + ?Sized>(
    model: &D,
    specs: &NoiseSpecs,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<CategoricalGraph>> {
    if model.alphabet() != specs.alphabet() {
        return Err(Error::Config(format!(
            "model alphabet {:?} does not match the noise alphabet {:?}",
            model.alphabet(),
            specs.alphabet()
        )));
    }
    (0..cfg.count)
        .map(|i| {
            let mut rng: StreamRng = stream(cfg.seed, &[i as u64]);
            let n = match &cfg.nodes {
                NodeCount::Fixed(n) => *n,
                NodeCount::Sizes(d) => d.sample(&mut rng),
            };
            if n == 0 {
                return Err(Error::invalid("cannot sample a graph with no nodes"));
            }
            let g = sample_reference(n, specs, &mut rng)?;
            reverse_chain(g, cfg.steps, model, specs, sched, &mut rng)
        })
        .collect()
}

/// Result of [`exact_reverse_tiny`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExactReverse {
    /// Empirical distribution of end states.
    pub distribution: Vec<f64>,
    /// Proposals whose true exit rate exceeded the thinning bound; should be 0.
    pub bound_violations: u64,
}

const THINNING_INTERVALS: usize = 400;
const THINNING_PROBES: usize = 8;
const THINNING_MARGIN: f64 = 1.25;
const THINNING_END: f64 = 1e-6;

/// Simulates the exact joint reverse chain from `q_T` by thinning, on a
/// log-spaced time grid down to `1e-6`, and returns the end-state frequencies.
pub fn exact_reverse_tiny<R: Rng + ?Sized>(system: &TinySystem, num_samples: usize, rng: &mut R) -> Result<ExactReverse> {
    let s = system.num_states();
    if s > MAX_STATES {
        return Err(Error::StateSpaceTooLarge {
            states: s,
            limit: MAX_STATES,
        });
    }
    let horizon = system.schedule().horizon;
    let end = THINNING_END.min(horizon / 2.0);
    let grid: Vec<f64> = (0..=THINNING_INTERVALS)
        .map(|k| horizon * (end / horizon).powf(k as f64 / THINNING_INTERVALS as f64))
        .collect();
    // bounds[k][x]: exit-rate ceiling of state x on [grid[k+1], grid[k]]
    let mut bounds = vec![vec![0.0; s]; THINNING_INTERVALS];
    for k in 0..THINNING_INTERVALS {
        for probe in 0..=THINNING_PROBES {
            let t = grid[k] + (grid[k + 1] - grid[k]) * probe as f64 / THINNING_PROBES as f64;
            let o = system.oracle_fast(t)?;
            for x in 0..s {
                bounds[k][x] = f64::max(bounds[k][x], -o.reverse_rates[(x, x)] * THINNING_MARGIN);
            }
        }
    }
    let start = system.oracle_fast(horizon)?.marginal;
    let mut counts = vec![0u64; s];
    let mut violations = 0;
    for _ in 0..num_samples {
        let mut x = sample_row(&start, rng);
        let mut t = horizon;
        let mut k = 0;
        while k < THINNING_INTERVALS {
            let lo = grid[k + 1];
            let bound = bounds[k][x];
            if bound <= 0.0 {
                t = lo;
                k += 1;
                continue;
            }
            let wait = Exp::new(bound).expect("positive rate").sample(rng);
            if t - wait <= lo {
                t = lo;
                k += 1;
                continue;
            }
            t -= wait;
            let o = system.oracle_fast(t)?;
            let exit = -o.reverse_rates[(x, x)];
            if exit > bound {
                violations += 1;
            }
            if rng.random::<f64>() * bound < exit {
                let row: Vec<f64> = (0..s)
                    .map(|y| if y == x { 0.0 } else { o.reverse_rates[(x, y)] })
                    .collect();
                x = sample_row(&row, rng);
            }
        }
        counts[x] += 1;
    }
    Ok(ExactReverse {
        distribution: counts.iter().map(|&c| c as f64 / num_samples.max(1) as f64).collect(),
        bound_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::RateMatrixSpec;

    struct Fixed(Posteriors);

    impl Denoiser for Fixed {
        fn alphabet(&self) -> crate::graph::Alphabet {
            crate::graph::Alphabet::new(self.0.node.cols(), self.0.edge.cols()).unwrap()
        }
        fn predict(&self, _: &CategoricalGraph, _: f64) -> Result<Posteriors> {
            Ok(self.0.clone())
        }
    }

    fn uniform_specs(b: usize, a1: usize) -> NoiseSpecs {
        NoiseSpecs {
            node: RateMatrixSpec::uniform(b).unwrap(),
            edge: RateMatrixSpec::uniform(a1).unwrap(),
        }
    }

    #[test]
    fn ratio_collapses_for_symmetric_likelihoods() {
        // f0* = 0, current 1, target 2: q(2|0) = q(1|0) under the uniform spec
        let specs = uniform_specs(3, 2);
        let sched = NoiseSchedule::STRONG;
        let g = CategoricalGraph::empty(vec![1]).unwrap();
        let post = Posteriors {
            node: Mat::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap(),
            edge: Mat::zeros(0, 2),
        };
        let t = 0.37;
        let rates = reverse_rates(&g, t, &post, &specs, &sched).unwrap();
        assert!((rates.node[(0, 2)] - sched.beta(t)).abs() <= 1e-12 * sched.beta(t));
        assert_eq!(rates.node[(0, 1)], 0.0);
        assert!(reverse_rates(&g, 0.0, &post, &specs, &sched).is_err());
    }

    #[test]
    fn zero_base_rate_gives_zero() {
        let specs = NoiseSpecs {
            node: RateMatrixSpec::marginal(vec![0.0, 1.0]).unwrap(),
            edge: RateMatrixSpec::uniform(2).unwrap(),
        };
        // R(1, 0) = m_0 = 0: the reverse move 0 -> 1 has no forward counterpart
        let g = CategoricalGraph::empty(vec![0]).unwrap();
        let post = Posteriors {
            node: Mat::from_rows(&[vec![0.3, 0.7]]).unwrap(),
            edge: Mat::zeros(0, 2),
        };
        let rates = reverse_rates(&g, 0.5, &post, &specs, &NoiseSchedule::STRONG).unwrap();
        assert_eq!(rates.node.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn leaps_with_no_rate_or_no_time_do_nothing() {
        let g = CategoricalGraph::from_edges(vec![0, 1, 0], &[(0, 2, 1)]).unwrap();
        let rates = ReverseRates {
            node: Mat::zeros(3, 2),
            edge: Mat::zeros(3, 2),
        };
        let mut rng = stream(1, &[]);
        assert_eq!(leap_with_rates(&g, &rates, 0.5, &mut rng).unwrap(), g);
        let model = Fixed(Posteriors {
            node: Mat::from_fn(3, 2, |_, _| 0.5),
            edge: Mat::from_fn(3, 2, |_, _| 0.5),
        });
        let specs = uniform_specs(2, 2);
        assert_eq!(tau_leap_step(&g, 0.5, 0.0, &model, &specs, &NoiseSchedule::STRONG, &mut rng).unwrap(), g);
        assert!(tau_leap_step(&g, 0.5, 0.6, &model, &specs, &NoiseSchedule::STRONG, &mut rng).is_err());
    }

    #[test]
    fn single_target_change_frequency() {
        let g = CategoricalGraph::empty(vec![0]).unwrap();
        let (tau, r) = (0.1, 7.0);
        let rates = ReverseRates {
            node: Mat::from_rows(&[vec![0.0, r]]).unwrap(),
            edge: Mat::zeros(0, 2),
        };
        let mut rng = stream(2, &[]);
        let trials = 100_000;
        let changed = (0..trials)
            .filter(|_| leap_with_rates(&g, &rates, tau, &mut rng).unwrap().node(0) == 1)
            .count();
        let p = tau * r * (-tau * r).exp();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = changed as f64 / trials as f64;
        assert!((freq - p).abs() <= 3.0 * se, "{freq} vs {p}");
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let model = Fixed(Posteriors {
            node: Mat::from_fn(4, 2, |_, k| if k == 0 { 0.8 } else { 0.2 }),
            edge: Mat::from_fn(6, 3, |_, k| [0.5, 0.3, 0.2][k]),
        });
        let specs = uniform_specs(2, 3);
        let cfg = SamplerConfig {
            steps: 1,
            count: 5,
            seed: 9,
            nodes: NodeCount::Fixed(4),
        };
        let a = generate(&model, &specs, &NoiseSchedule::STRONG, &cfg).unwrap();
        let b = generate(&model, &specs, &NoiseSchedule::STRONG, &cfg).unwrap();
        assert_eq!(a, b);
        for g in &a {
            g.validate(&specs.alphabet()).unwrap();
        }
    }

    #[test]
    fn exact_reverse_recovers_point_mass() {
        let specs = uniform_specs(2, 2);
        let mut data = vec![0.0; 8];
        data[5] = 1.0;
        let system = TinySystem::new(2, specs, NoiseSchedule::STRONG, data.clone()).unwrap();
        let out = exact_reverse_tiny(&system, 10_000, &mut stream(4, &[])).unwrap();
        let tv: f64 = 0.5 * out.distribution.iter().zip(&data).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 0.02, "{tv}");
        assert_eq!(out.bound_violations, 0);
    }
}
