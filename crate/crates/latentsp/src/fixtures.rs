//! Random tiny instances for oracle comparisons.

use std::sync::Arc;

use latentsp_core::{Example, FactorGraph, MessageSet, ModelParams, PotentialSet};
use rand::seq::SliceRandom;
use rand::Rng;

/// Connected-ish random graph: `2..=max_vars` variables with `2..=max_states`
/// states, a random spanning chain plus a few extra pairwise or triple factors.
pub fn random_graph<R: Rng>(rng: &mut R, max_vars: usize, max_states: usize) -> FactorGraph {
    let n = rng.random_range(2..=max_vars.max(2));
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_states.max(2))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut scopes: Vec<Vec<usize>> = order.windows(2).map(|w| w.to_vec()).collect();
    for _ in 0..rng.random_range(0..=2) {
        let arity = if n >= 3 && rng.random_bool(0.3) { 3 } else { 2 };
        let mut vars: Vec<usize> = (0..n).collect();
        vars.shuffle(rng);
        vars.truncate(arity);
        scopes.push(vars);
    }
    FactorGraph::build(cards, scopes).expect("generated scopes are valid")
}

fn table<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Potentials with entries uniform in `[−scale, scale]`.
pub fn random_potentials<R: Rng>(rng: &mut R, graph: &FactorGraph, scale: f64) -> PotentialSet {
    let mut p = PotentialSet::zeros(graph);
    for v in p.nodes.as_mut_slice().iter_mut().chain(p.factors.as_mut_slice()) {
        *v = rng.random_range(-scale..scale);
    }
    p
}

pub fn random_messages<R: Rng>(rng: &mut R, graph: &FactorGraph, scale: f64) -> MessageSet {
    let mut t = graph.edge_tables();
    for v in t.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    MessageSet::from_tables(graph, t).expect("layout taken from the graph")
}

/// Example with `num_features` dense random feature tables, each variable
/// hidden with probability `hidden_prob`, and the normalized Hamming loss.
pub fn random_example<R: Rng>(
    rng: &mut R,
    graph: &Arc<FactorGraph>,
    num_features: usize,
    hidden_prob: f64,
) -> Example {
    let labels = (0..graph.num_vars())
        .map(|i| (!rng.random_bool(hidden_prob)).then(|| rng.random_range(0..graph.cardinality(i))))
        .collect();
    let mut ex = Example::new(Arc::clone(graph), num_features, labels).expect("labels match the graph");
    for r in 0..num_features {
        for i in 0..graph.num_vars() {
            let t = table(rng, graph.cardinality(i), 1.0);
            ex.set_node_feature(r, i, &t).expect("sized from the graph");
        }
        for a in 0..graph.num_factors() {
            let t = table(rng, graph.factor_size(a), 1.0);
            ex.set_factor_feature(r, a, &t).expect("sized from the graph");
        }
    }
    ex.normalized_hamming_loss().expect("positive scale");
    ex
}

/// Example whose hidden set is exactly `hidden`.
pub fn example_with_hidden<R: Rng>(
    rng: &mut R,
    graph: &Arc<FactorGraph>,
    num_features: usize,
    hidden: &[usize],
) -> Example {
    let mut ex = random_example(rng, graph, num_features, 0.0);
    let labels: Vec<Option<usize>> = ex
        .labels()
        .iter()
        .enumerate()
        .map(|(i, y)| if hidden.contains(&i) { None } else { *y })
        .collect();
    let mut out = Example::new(Arc::clone(graph), num_features, labels).expect("labels match the graph");
    for r in 0..num_features {
        for i in 0..graph.num_vars() {
            out.set_node_feature(r, i, ex.node_features(r).table(i)).unwrap();
        }
        for a in 0..graph.num_factors() {
            out.set_factor_feature(r, a, ex.factor_features(r).table(a)).unwrap();
        }
    }
    out.normalized_hamming_loss().expect("positive scale");
    ex = out;
    ex
}

pub fn random_weights<R: Rng>(rng: &mut R, num_features: usize, bound: f64) -> ModelParams {
    ModelParams::new(table(rng, num_features, bound)).expect("finite")
}
