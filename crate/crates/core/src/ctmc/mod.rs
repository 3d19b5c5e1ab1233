//! Forward corruption process.
//!
//! Every node and every unordered node pair evolves as an independent
//! continuous-time Markov chain with generator `beta(t) * R`, where `R` is a
//! shared base rate matrix and `beta(t) = alpha * gamma^t * ln(gamma)`. Since
//! the generators commute in time, the transition matrix from time 0 to `t`
//! is `exp(c * R)` with `c = alpha * (gamma^t - 1)`, which has a closed form
//! for both supported base matrices.
//!
//! Transition matrices are oriented source-row, target-column:
//! `P[u][v] = q(x_t = v | x_0 = u)`.

pub mod tiny;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Alphabet, CategoricalGraph};
use crate::linalg::Mat;

/// Tolerance on the marginal vector summing to one.
const SIMPLEX_TOL: f64 = 1e-12;

/// Base rate matrix family and its stationary distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateMatrixSpec {
    /// `11^T - C I`; converges to the uniform distribution.
    Uniform { dim: usize },
    /// `1 m^T - I`; converges to `m`.
    Marginal { m: Vec<f64> },
}

impl RateMatrixSpec {
    pub fn uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("rate matrix dimension must be positive"));
        }
        Ok(Self::Uniform { dim })
    }

    pub fn marginal(m: Vec<f64>) -> Result<Self> {
        let spec = Self::Marginal { m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform { dim } if *dim == 0 => {
                Err(Error::invalid("rate matrix dimension must be positive"))
            }
            Self::Uniform { .. } => Ok(()),
            Self::Marginal { m } => {
                if m.is_empty() {
                    return Err(Error::invalid("marginal vector is empty"));
                }
                if m.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::invalid(format!("marginal {m:?} has negative entries")));
                }
                let s: f64 = m.iter().sum();
                if (s - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::invalid(format!("marginal sums to {s}, not 1")));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Uniform { dim } => *dim,
            Self::Marginal { m } => m.len(),
        }
    }

    /// Limit distribution of the forward chain.
    pub fn stationary(&self) -> Vec<f64> {
        match self {
            Self::Uniform { dim } => vec![1.0 / *dim as f64; *dim],
            Self::Marginal { m } => m.clone(),
        }
    }

    pub fn kind(&self) -> ReferenceKind {
        match self {
            Self::Uniform { .. } => ReferenceKind::Uniform,
            Self::Marginal { .. } => ReferenceKind::Marginal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Uniform,
    Marginal,
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Marginal => "marginal",
        })
    }
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "marginal" => Ok(Self::Marginal),
            other => Err(Error::Config(format!(
                "unknown reference kind `{other}` (expected uniform or marginal)"
            ))),
        }
    }
}

/// Node and edge rate specs used together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpecs {
    pub node: RateMatrixSpec,
    pub edge: RateMatrixSpec,
}

impl NoiseSpecs {
    pub fn alphabet(&self) -> Alphabet {
        Alphabet {
            node_types: self.node.dim(),
            edge_types: self.edge.dim(),
        }
    }

    /// Builds specs of the given kind. Marginals are only read for
    /// [`ReferenceKind::Marginal`].
    pub fn from_kind(
        kind: ReferenceKind,
        alphabet: Alphabet,
        node_marginal: &[f64],
        edge_marginal: &[f64],
    ) -> Result<Self> {
        match kind {
            ReferenceKind::Uniform => Ok(Self {
                node: RateMatrixSpec::uniform(alphabet.node_types)?,
                edge: RateMatrixSpec::uniform(alphabet.edge_types)?,
            }),
            ReferenceKind::Marginal => {
                if node_marginal.len() != alphabet.node_types
                    || edge_marginal.len() != alphabet.edge_types
                {
                    return Err(Error::invalid("marginal lengths do not match the alphabet"));
                }
                Ok(Self {
                    node: RateMatrixSpec::marginal(node_marginal.to_vec())?,
                    edge: RateMatrixSpec::marginal(edge_marginal.to_vec())?,
                })
            }
        }
    }
}

/// Empirical node-type and edge-type frequencies (edge frequencies are over
/// unordered pairs and include the no-edge state).
pub fn estimate_marginals(
    graphs: &[CategoricalGraph],
    alphabet: Alphabet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut nodes = vec![0u64; alphabet.node_types];
    let mut edges = vec![0u64; alphabet.edge_types];
    for g in graphs {
        g.validate(&alphabet)?;
        for &f in g.node_types() {
            nodes[f] += 1;
        }
        for (i, j) in g.pairs() {
            edges[g.edge(i, j)] += 1;
        }
    }
    let normalize = |counts: Vec<u64>, what: &str| -> Result<Vec<f64>> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid(format!("no {what} to estimate a marginal from")));
        }
        Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
    };
    Ok((normalize(nodes, "nodes")?, normalize(edges, "node pairs")?))
}

/// Exponential corruption schedule `beta(t) = alpha * gamma^t * ln(gamma)`
/// on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl NoiseSchedule {
    /// Nearly fully corrupted at `t = 1` (`c(1) = 4`).
    pub const STRONG: NoiseSchedule = NoiseSchedule {
        alpha: 1.0,
        gamma: 5.0,
        horizon: 1.0,
    };
    /// Milder preset (`c(1) = 0.8`).
    pub const MILD: NoiseSchedule = NoiseSchedule {
        alpha: 0.8,
        gamma: 2.0,
        horizon: 1.0,
    };

    pub fn new(alpha: f64, gamma: f64, horizon: f64) -> Result<Self> {
        let s = Self {
            alpha,
            gamma,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Instantaneous rate multiplier.
    pub fn beta(&self, t: f64) -> f64 {
        self.alpha * self.gamma.powf(t) * self.gamma.ln()
    }

    /// Integral of `beta` over `[s, t]`.
    pub fn cumulative_rate(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::invalid(format!("interval start {s} exceeds end {t}")));
        }
        if s < 0.0 || t > self.horizon {
            return Err(Error::invalid(format!(
                "interval [{s}, {t}] outside [0, {}]",
                self.horizon
            )));
        }
        Ok(self.alpha * (self.gamma.powf(t) - self.gamma.powf(s)))
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// The base rate matrix `R` of `spec`.
pub fn base_rate_matrix(spec: &RateMatrixSpec) -> Mat {
    match spec {
        RateMatrixSpec::Uniform { dim } => {
            let c = *dim as f64;
            Mat::from_fn(*dim, *dim, |i, j| if i == j { 1.0 - c } else { 1.0 })
        }
        RateMatrixSpec::Marginal { m } => {
            let d = m.len();
            Mat::from_fn(d, d, |i, j| if i == j { m[j] - 1.0 } else { m[j] })
        }
    }
}

/// Closed-form `exp(c R)`, entries clamped at zero.
pub fn transition_matrix(spec: &RateMatrixSpec, c: f64) -> Result<Mat> {
    if !(c >= 0.0) {
        return Err(Error::invalid(format!(
            "cumulative rate must be nonnegative, got {c}"
        )));
    }
    let mut p = match spec {
        RateMatrixSpec::Uniform { dim } => {
            let k = *dim as f64;
            let stay = (-c * k).exp();
            let spread = -(-c * k).exp_m1() / k;
            Mat::from_fn(*dim, *dim, |i, j| if i == j { stay + spread } else { spread })
        }
        RateMatrixSpec::Marginal { m } => {
            let stay = (-c).exp();
            let mix = -(-c).exp_m1();
            let d = m.len();
            Mat::from_fn(d, d, |i, j| {
                if i == j {
                    stay + mix * m[j]
                } else {
                    mix * m[j]
                }
            })
        }
    };
    for i in 0..p.rows() {
        for x in p.row_mut(i) {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    Ok(p)
}

/// Truncated Taylor series for `exp(c R)` with scaling and squaring.
///
/// `cR` is halved `s` times until its infinity norm is at most 1/2, the
/// series is summed until the last term's largest entry drops below 1e-16,
/// and the result is squared `s` times.
pub fn series_matrix_exp(r: &Mat, c: f64) -> Result<Mat> {
    if !r.is_square() {
        return Err(Error::invalid(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            r.rows(),
            r.cols()
        )));
    }
    if r.as_slice().iter().any(|x| !x.is_finite()) || !c.is_finite() {
        return Err(Error::invalid("matrix exponential of non-finite input"));
    }
    let a = r.scale(c);
    let norm = a.norm_inf();
    let mut squarings = 0u32;
    while norm / f64::from(2u32).powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    let a = a.scale(0.5f64.powi(squarings as i32));
    let n = r.rows();
    let mut sum = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..200 {
        term = term.matmul(&a)?.scale(1.0 / k as f64);
        sum = sum.add(&term);
        if term.max_abs() < 1e-16 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// Draws an index from a probability row by inversion.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * row.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Samples `G_t ~ q(. | G_0)` for `t` in `[0, T]`.
pub fn corrupt_graph<R: Rng + ?Sized>(
    g0: &CategoricalGraph,
    t: f64,
    specs: &NoiseSpecs,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CategoricalGraph> {
    sched.check_time(t)?;
    g0.validate(&specs.alphabet())?;
    let c = sched.cumulative_rate(0.0, t)?;
    if c == 0.0 {
        return Ok(g0.clone());
    }
    let pn = transition_matrix(&specs.node, c)?;
    let pe = transition_matrix(&specs.edge, c)?;
    let mut g = g0.clone();
    for i in 0..g.n() {
        let f = sample_row(pn.row(g0.node(i)), rng);
        g.set_node(i, f);
    }
    let n = g.n();
    for i in 0..n {
        for j in i + 1..n {
            let e = sample_row(pe.row(g0.edge(i, j)), rng);
            g.set_edge(i, j, e);
        }
    }
    Ok(g)
}
