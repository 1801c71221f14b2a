//! Naive reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use gctf::{CouplingMatrix, DenseTensor, FactorDecl, FactorSet, Index, ModelSpec, ObservationDecl};
use rand::Rng;

/// Forms the full joint product over the union of all indices with nested
/// loops and sums it down to `keep`. Deliberately naive.
pub fn brute_force(factors: &[&DenseTensor], keep: &[&str]) -> Vec<f64> {
    let mut universe: Vec<Index> = Vec::new();
    for f in factors {
        for i in f.indices() {
            if !universe.iter().any(|u| u.label == i.label) {
                universe.push(i.clone());
            }
        }
    }
    let keep_dims: Vec<usize> = keep
        .iter()
        .map(|l| universe.iter().find(|u| u.label == *l).unwrap().cardinality)
        .collect();
    let out_len: usize = keep_dims.iter().product();
    let mut out = vec![0.0; out_len];
    let total: usize = universe.iter().map(|u| u.cardinality).product();
    for flat in 0..total {
        // decode the joint setting
        let mut setting = vec![0usize; universe.len()];
        let mut rem = flat;
        for ax in (0..universe.len()).rev() {
            setting[ax] = rem % universe[ax].cardinality;
            rem /= universe[ax].cardinality;
        }
        let value_of =
            |label: &str| setting[universe.iter().position(|u| u.label == label).unwrap()];
        let mut product = 1.0;
        for f in factors {
            let multi: Vec<usize> = f.indices().iter().map(|i| value_of(&i.label)).collect();
            product *= f.get(&multi).unwrap();
        }
        let mut off = 0;
        for (l, d) in keep.iter().zip(&keep_dims) {
            off = off * d + value_of(l);
        }
        out[off] += product;
    }
    out
}

/// Delta by brute force: the argument times every other coupled factor,
/// summed down to the labels of factor `alpha`.
pub fn brute_delta(
    spec: &ModelSpec,
    factors: &FactorSet,
    alpha: usize,
    nu: usize,
    arg: &DenseTensor,
) -> Vec<f64> {
    let mut operands = vec![arg];
    for a in 0..spec.factors.len() {
        if a != alpha && spec.coupling.is_coupled(nu, a) {
            operands.push(factors.by_id(a));
        }
    }
    let extension = DenseTensor::filled(spec.factors[alpha].indices.clone(), 1.0).unwrap();
    operands.push(&extension);
    brute_force(&operands, &spec.factors[alpha].labels())
}

/// AUC by counting every positive/negative pair; returns twice the number of
/// wins plus ties over twice the number of pairs.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_wins: u64 = 0;
    let mut pairs: u64 = 0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1;
            if sp > sn {
                twice_wins += 2;
            } else if sp == sn {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

fn random_subset<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    loop {
        let picked: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if !picked.is_empty() {
            return picked;
        }
    }
}

fn random_tensor<R: Rng>(rng: &mut R, layout: Vec<Index>) -> DenseTensor {
    let n: usize = layout.iter().map(|i| i.cardinality).product();
    let values = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    DenseTensor::new(layout, values).unwrap()
}

/// A random valid model over at most four indices of cardinality at most
/// five, with one to three observations, positive data and positive factors.
pub fn random_model<R: Rng>(rng: &mut R) -> (ModelSpec, FactorSet) {
    const NAMES: [&str; 4] = ["a", "b", "c", "d"];
    let n_idx = rng.random_range(1..=4);
    let universe: Vec<Index> = (0..n_idx)
        .map(|x| Index::new(NAMES[x], rng.random_range(1..=5)))
        .collect();
    let n_obs = rng.random_range(1..=3);
    let n_fac = rng.random_range(1..=4);
    let factor_sets: Vec<Vec<usize>> = (0..n_fac).map(|_| random_subset(rng, n_idx)).collect();

    // Each observation gets a non-empty factor set and each factor at least one observation.
    let mut coupling = vec![vec![0u8; n_fac]; n_obs];
    for row in coupling.iter_mut() {
        for a in random_subset(rng, n_fac) {
            row[a] = 1;
        }
    }
    for a in 0..n_fac {
        if coupling.iter().all(|row| row[a] == 0) {
            coupling[rng.random_range(0..n_obs)][a] = 1;
        }
    }

    let factors: Vec<FactorDecl> = factor_sets
        .iter()
        .enumerate()
        .map(|(a, set)| {
            FactorDecl::new(
                format!("Z{a}"),
                set.iter().map(|&x| universe[x].clone()).collect(),
            )
        })
        .collect();
    let observations = coupling
        .iter()
        .enumerate()
        .map(|(nu, row)| {
            let mut covered: Vec<usize> = (0..n_fac)
                .filter(|&a| row[a] == 1)
                .flat_map(|a| factor_sets[a].clone())
                .collect();
            covered.sort_unstable();
            covered.dedup();
            let visible: Vec<usize> = covered
                .into_iter()
                .filter(|_| rng.random_bool(0.6))
                .collect();
            let layout: Vec<Index> = visible.iter().map(|&x| universe[x].clone()).collect();
            let mut obs = ObservationDecl::empty(format!("X{nu}"), layout.clone()).unwrap();
            obs.data = random_tensor(rng, layout);
            obs
        })
        .collect();
    let spec = ModelSpec {
        index_universe: universe,
        factors,
        observations,
        coupling: CouplingMatrix::new(&coupling).unwrap(),
    };
    let tensors = spec
        .factors
        .iter()
        .map(|f| random_tensor(rng, f.indices.clone()))
        .collect();
    let set = FactorSet::new(&spec, tensors).unwrap();
    (spec, set)
}
