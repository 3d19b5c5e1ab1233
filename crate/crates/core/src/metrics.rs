//! Sample-quality metrics: graph statistics, MMD, uniqueness and novelty.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CategoricalGraph;
use crate::iso::canonical_key;

pub const CLUSTERING_BINS: usize = 100;
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Baselines at or below this make the relative score undefined.
pub const MIN_BASELINE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Degree,
    Clustering,
    Orbit4,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Degree, Statistic::Clustering, Statistic::Orbit4];

    /// Key used in reports and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Statistic::Degree => "deg",
            Statistic::Clustering => "clus",
            Statistic::Orbit4 => "orbit",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "deg" | "degree" => Ok(Statistic::Degree),
            "clus" | "clustering" => Ok(Statistic::Clustering),
            "orbit" | "orbit4" => Ok(Statistic::Orbit4),
            other => Err(Error::invalid(format!(
                "unknown metric `{other}` (expected deg, clus or orbit)"
            ))),
        }
    }
}

fn normalize(counts: Vec<f64>) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        let mut h = vec![0.0; counts.len().max(1)];
        h[0] = 1.0;
        return h;
    }
    counts.into_iter().map(|c| c / total).collect()
}

/// Local clustering coefficient of every node (0 below degree 2).
pub fn clustering_coefficients(g: &CategoricalGraph) -> Vec<f64> {
    let n = g.n();
    (0..n)
        .map(|i| {
            let nb: Vec<usize> = g.neighbors(i).collect();
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0;
            for (a, &u) in nb.iter().enumerate() {
                for &v in &nb[a + 1..] {
                    if g.edge(u, v) > 0 {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

fn connected_on(g: &CategoricalGraph, set: [usize; 4]) -> bool {
    let mut seen = [true, false, false, false];
    let mut stack = vec![0];
    while let Some(a) = stack.pop() {
        for b in 0..4 {
            if !seen[b] && g.edge(set[a], set[b]) > 0 {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Number of connected induced 4-node subgraphs containing each node.
pub fn connected_quads(g: &CategoricalGraph) -> Vec<u64> {
    let n = g.n();
    let mut counts = vec![0u64; n];
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let set = [a, b, c, d];
                    if connected_on(g, set) {
                        for v in set {
                            counts[v] += 1;
                        }
                    }
                }
            }
        }
    }
    counts
}

/// Log-scale bin: 0 for 0, else `1 + floor(log2(c))`.
fn log_bin(c: u64) -> usize {
    if c == 0 {
        0
    } else {
        1 + (63 - c.leading_zeros() as usize)
    }
}

/// Normalized histogram of one statistic over the nodes of `g`.
pub fn graph_statistic(g: &CategoricalGraph, kind: Statistic) -> Vec<f64> {
    let n = g.n();
    match kind {
        Statistic::Degree => {
            let mut h = vec![0.0; n.max(1)];
            for d in g.degrees() {
                h[d] += 1.0;
            }
            normalize(h)
        }
        Statistic::Clustering => {
            let mut h = vec![0.0; CLUSTERING_BINS];
            for c in clustering_coefficients(g) {
                h[((c * CLUSTERING_BINS as f64) as usize).min(CLUSTERING_BINS - 1)] += 1.0;
            }
            normalize(h)
        }
        Statistic::Orbit4 => {
            if n < 4 {
                return vec![1.0];
            }
            let counts = connected_quads(g);
            let top = counts.iter().map(|&c| log_bin(c)).max().unwrap_or(0);
            let mut h = vec![0.0; top + 1];
            for c in counts {
                h[log_bin(c)] += 1.0;
            }
            normalize(h)
        }
    }
}

fn gaussian_tv(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let len = x.len().max(y.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let tv = 0.5 * (0..len).map(|i| (at(x, i) - at(y, i)).abs()).sum::<f64>();
    (-tv * tv / (2.0 * sigma * sigma)).exp()
}

fn mean_kernel(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> f64 {
    let mut s = 0.0;
    for a in x {
        for b in y {
            s += gaussian_tv(a, b, sigma);
        }
    }
    s / (x.len() * y.len()) as f64
}

/// Biased squared MMD with the kernel `exp(-TV(x, y)^2 / (2 sigma^2))`;
/// shorter histograms are zero-padded. The kernel is not positive definite,
/// so the raw V-statistic can dip slightly below zero; it is clamped at 0.
pub fn mmd2_biased(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("MMD needs two nonempty sets"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("kernel bandwidth {sigma} must be positive")));
    }
    let v = mean_kernel(x, x, sigma) + mean_kernel(y, y, sigma) - 2.0 * mean_kernel(x, y, sigma);
    Ok(v.max(0.0))
}

/// Raw and baseline MMD of one statistic and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub raw: f64,
    pub baseline: f64,
    /// `raw / baseline`, or `None` when the baseline is (numerically) zero.
    pub score: Option<f64>,
}

fn histograms(gs: &[CategoricalGraph], kind: Statistic) -> Vec<Vec<f64>> {
    gs.iter().map(|g| graph_statistic(g, kind)).collect()
}

/// `MMD^2(gen, test) / MMD^2(train, test)` for one statistic.
pub fn relative_score(
    gen: &[CategoricalGraph],
    train: &[CategoricalGraph],
    test: &[CategoricalGraph],
    kind: Statistic,
) -> Result<ScoreEntry> {
    for (name, set) in [("generated", gen), ("training", train), ("test", test)] {
        if set.is_empty() {
            return Err(Error::invalid(format!("empty {name} set")));
        }
    }
    let h_test = histograms(test, kind);
    let raw = mmd2_biased(&histograms(gen, kind), &h_test, DEFAULT_SIGMA)?;
    let baseline = mmd2_biased(&histograms(train, kind), &h_test, DEFAULT_SIGMA)?;
    let score = (baseline > MIN_BASELINE).then(|| raw / baseline);
    Ok(ScoreEntry { raw, baseline, score })
}

/// Fractions of distinct isomorphism classes in `gen`, and of `gen` absent
/// from `train`.
pub fn uniqueness_novelty(gen: &[CategoricalGraph], train: &[CategoricalGraph]) -> Result<(f64, f64)> {
    if gen.is_empty() {
        return Err(Error::invalid("empty generated set"));
    }
    let keys: Vec<String> = gen.iter().map(canonical_key).collect();
    let train_keys: BTreeSet<String> = train.iter().map(canonical_key).collect();
    let distinct: BTreeSet<&String> = keys.iter().collect();
    let novel = keys.iter().filter(|k| !train_keys.contains(*k)).count();
    let m = gen.len() as f64;
    Ok((distinct.len() as f64 / m, novel as f64 / m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deg: Option<ScoreEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clus: Option<ScoreEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orbit: Option<ScoreEntry>,
    pub uniqueness: f64,
    pub novelty: f64,
    pub num_generated: usize,
    pub num_train: usize,
    pub num_test: usize,
}

impl EvalReport {
    pub fn entry(&self, kind: Statistic) -> Option<&ScoreEntry> {
        match kind {
            Statistic::Degree => self.deg.as_ref(),
            Statistic::Clustering => self.clus.as_ref(),
            Statistic::Orbit4 => self.orbit.as_ref(),
        }
    }
}

pub fn evaluate(
    gen: &[CategoricalGraph],
    train: &[CategoricalGraph],
    test: &[CategoricalGraph],
    metrics: &[Statistic],
) -> Result<EvalReport> {
    let (uniqueness, novelty) = uniqueness_novelty(gen, train)?;
    let mut report = EvalReport {
        deg: None,
        clus: None,
        orbit: None,
        uniqueness,
        novelty,
        num_generated: gen.len(),
        num_train: train.len(),
        num_test: test.len(),
    };
    for &kind in metrics {
        let e = Some(relative_score(gen, train, test, kind)?);
        match kind {
            Statistic::Degree => report.deg = e,
            Statistic::Clustering => report.clus = e,
            Statistic::Orbit4 => report.orbit = e,
        }
    }
    Ok(report)
}
