use std::collections::BTreeMap;

use gdiff_core::backbone::{DenoiserModel, ModelConfig};
use gdiff_core::ctmc::{NoiseSchedule, NoiseSpecs, ReferenceKind};
use gdiff_core::graph::{permute_graph, Alphabet, Permutation};
use gdiff_core::iso::canonical_key;
use gdiff_core::rng::stream;
use gdiff_core::sampler::{reverse_chain, sample_reference};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N: usize = 5;
const SAMPLES: usize = 1000;
const STEPS: usize = 10;

/// Two-sample chi-squared homogeneity p-value; categories with fewer than
/// 10 pooled observations are merged.
fn homogeneity_p(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut rest = (0.0, 0.0);
    for k in keys {
        let (x, y) = (a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0));
        if x + y < 10.0 {
            rest = (rest.0 + x, rest.1 + y);
        } else {
            cells.push((x, y));
        }
    }
    if rest.0 + rest.1 > 0.0 {
        cells.push(rest);
    }
    let (na, nb) = (SAMPLES as f64, SAMPLES as f64);
    let total = na + nb;
    let mut stat = 0.0;
    for &(x, y) in &cells {
        let pooled = (x + y) / total;
        stat += (x - na * pooled).powi(2) / (na * pooled) + (y - nb * pooled).powi(2) / (nb * pooled);
    }
    let df = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

#[test]
fn permuted_initialization_leaves_sampling_distribution_unchanged() {
    let alphabet = Alphabet::new(1, 2).unwrap();
    let specs = NoiseSpecs::from_kind(ReferenceKind::Marginal, alphabet, &[1.0], &[0.6, 0.4]).unwrap();
    let sched = NoiseSchedule::new(1.0, 5.0, 1.0).unwrap();
    let cfg = ModelConfig {
        layers: 2,
        hidden: 16,
        dropout: 0.0,
    };
    let model = DenoiserModel::new(cfg, alphabet, 1.0, &mut stream(9, &[])).unwrap();
    let sigma = Permutation::new(vec![3, 0, 4, 1, 2]).unwrap();

    let mut plain = BTreeMap::new();
    let mut permuted = BTreeMap::new();
    for i in 0..SAMPLES as u64 {
        let mut rng = stream(21, &[i]);
        let g = sample_reference(N, &specs, &mut rng).unwrap();
        let out = reverse_chain(g, STEPS, &model, &specs, &sched, &mut rng).unwrap();
        out.validate(&alphabet).unwrap();
        *plain.entry(canonical_key(&out)).or_insert(0.0) += 1.0;

        let mut rng = stream(22, &[i]);
        let g = permute_graph(&sample_reference(N, &specs, &mut rng).unwrap(), &sigma).unwrap();
        let out = reverse_chain(g, STEPS, &model, &specs, &sched, &mut rng).unwrap();
        out.validate(&alphabet).unwrap();
        *permuted.entry(canonical_key(&out)).or_insert(0.0) += 1.0;
    }
    let p = homogeneity_p(&plain, &permuted);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn permuted_starts_give_valid_graphs() {
    let alphabet = Alphabet::new(2, 3).unwrap();
    let specs = NoiseSpecs::from_kind(ReferenceKind::Uniform, alphabet, &[], &[]).unwrap();
    let sched = NoiseSchedule::new(1.0, 5.0, 1.0).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        hidden: 8,
        dropout: 0.0,
    };
    let model = DenoiserModel::new(cfg, alphabet, 1.0, &mut stream(3, &[])).unwrap();
    for i in 0..20 {
        let mut rng = stream(4, &[i]);
        let g = sample_reference(6, &specs, &mut rng).unwrap();
        let sigma = Permutation::random(6, &mut rng);
        let pg = permute_graph(&g, &sigma).unwrap();
        for start in [g, pg] {
            let out = reverse_chain(start, 5, &model, &specs, &sched, &mut stream(5, &[i])).unwrap();
            assert_eq!(out.n(), 6);
            out.validate(&alphabet).unwrap();
        }
    }
}
