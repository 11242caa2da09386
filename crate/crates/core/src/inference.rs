//! Convex message passing on the local polytope.
//!
//! With counting numbers `c_i, c_a > 0` and temperature `ε > 0` the smoothed
//! log-partition bound is the dual
//!
//! ```text
//! D(λ) = Σ_i ε c_i · lse_s[(θ_i(s) − Σ_{a∈N(i)} λ_{i→a}(s)) / (ε c_i)]
//!      + Σ_a ε c_a · lse_s[(θ_a(s) + Σ_{i∈N(a)} λ_{i→a}(s_i)) / (ε c_a)]
//! ```
//!
//! which is convex in the messages `λ`. Minimizing `D` over the block of
//! messages leaving one variable has a closed form, so a sweep of block
//! updates is a monotone block-coordinate descent. The soft-max tables at the
//! optimum are the beliefs, and the same machinery (run on the reduced hidden
//! graph) solves the latent completion problem.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{advance, FactorGraph, HiddenSubgraph};
use crate::math::{self, Accumulator};
use crate::model::{CountingNumbers, PotentialSet};
use crate::tables::Tables;

/// Messages `λ_{i→a}` indexed by edge id; zero-initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSet {
    edges: Tables,
}

impl MessageSet {
    pub fn zeros(graph: &FactorGraph) -> Self {
        MessageSet { edges: graph.edge_tables() }
    }

    /// Wraps edge tables; the layout must match `graph`'s edges.
    pub fn from_tables(graph: &FactorGraph, edges: Tables) -> Result<Self> {
        let expect = graph.edge_tables();
        if !edges.same_layout(&expect) {
            return Err(Error::Dimension {
                what: "message tables".into(),
                expected: expect.as_slice().len(),
                found: edges.as_slice().len(),
            });
        }
        Ok(MessageSet { edges })
    }

    #[inline]
    pub fn edge(&self, e: usize) -> &[f64] {
        self.edges.table(e)
    }

    #[inline]
    pub fn edge_mut(&mut self, e: usize) -> &mut [f64] {
        self.edges.table_mut(e)
    }

    pub fn tables(&self) -> &Tables {
        &self.edges
    }

    pub fn all_finite(&self) -> bool {
        self.edges.all_finite()
    }
}

/// Node and factor probability tables.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefSet {
    pub nodes: Tables,
    pub factors: Tables,
}

impl BeliefSet {
    pub fn uniform(graph: &FactorGraph) -> Self {
        BeliefSet {
            nodes: Tables::uniform(graph.cardinalities().iter().copied()),
            factors: Tables::uniform((0..graph.num_factors()).map(|a| graph.factor_size(a))),
        }
    }

    pub fn max_abs_diff(&self, other: &BeliefSet) -> f64 {
        self.nodes.max_abs_diff(&other.nodes).max(self.factors.max_abs_diff(&other.factors))
    }

    /// Largest deviation of any table's sum from one, or of any entry below
    /// zero.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in self.nodes.iter().chain(self.factors.iter()) {
            worst = worst.max(libm::fabs(t.iter().sum::<f64>() - 1.0));
            for &p in t {
                worst = worst.max(-p);
            }
        }
        worst
    }
}

fn node_values(graph: &FactorGraph, theta: &PotentialSet, msgs: &MessageSet, i: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(theta.nodes.table(i));
    for e in graph.var_edges(i) {
        for (v, m) in out.iter_mut().zip(msgs.edge(e.id)) {
            *v -= m;
        }
    }
}

fn factor_values(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &MessageSet,
    a: usize,
    states: &mut Vec<usize>,
    out: &mut Vec<f64>,
) {
    let cards = graph.scope_cardinalities(a);
    let base = graph.edge_id(a, 0);
    states.clear();
    states.resize(cards.len(), 0);
    out.clear();
    for &t in theta.factors.table(a) {
        let mut v = t;
        for (p, &s) in states.iter().enumerate() {
            v += msgs.edge(base + p)[s];
        }
        out.push(v);
        advance(states, cards);
    }
}

fn check_temperature(eps: f64, counting: CountingNumbers) {
    debug_assert!(eps > 0.0 && counting.node > 0.0 && counting.factor > 0.0);
}

/// The dual objective `D(λ)` for potentials `theta`.
pub fn dual_value(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &MessageSet,
    eps: f64,
    counting: CountingNumbers,
) -> Result<f64> {
    check_temperature(eps, counting);
    let mut acc = Accumulator::default();
    let mut vals = Vec::new();
    let mut states = Vec::new();
    let tn = eps * counting.node;
    for i in 0..graph.num_vars() {
        node_values(graph, theta, msgs, i, &mut vals);
        let v = math::scaled_log_sum_exp(&vals, tn);
        if !v.is_finite() {
            return Err(Error::NonFinite { what: format!("dual node term {i}: {vals:?}") });
        }
        acc.add(v);
    }
    let tf = eps * counting.factor;
    for a in 0..graph.num_factors() {
        factor_values(graph, theta, msgs, a, &mut states, &mut vals);
        let v = math::scaled_log_sum_exp(&vals, tf);
        if !v.is_finite() {
            return Err(Error::NonFinite { what: format!("dual factor term {a}: {vals:?}") });
        }
        acc.add(v);
    }
    Ok(acc.value())
}

/// Scratch buffers for block updates.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    vals: Vec<f64>,
    states: Vec<usize>,
    gmax: Vec<f64>,
    gsum: Vec<f64>,
    m: Vec<f64>,
    total: Vec<f64>,
}

/// `out[s] = t · lse over states of factor `a` with slot `skip` fixed to `s`
/// of (θ_a + Σ_{q≠skip} λ_q) / t`.
fn factor_to_var(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &MessageSet,
    a: usize,
    skip: usize,
    t: f64,
    ws: &mut Workspace,
    out: &mut [f64],
) {
    let cards = graph.scope_cardinalities(a);
    let k = cards[skip];
    let stride = graph.strides(a)[skip];
    let base = graph.edge_id(a, 0);
    let table = theta.factors.table(a);
    ws.states.clear();
    ws.states.resize(cards.len(), 0);
    ws.vals.clear();
    ws.gmax.clear();
    ws.gmax.resize(k, f64::NEG_INFINITY);
    for &th in table {
        let mut v = th;
        for (p, &s) in ws.states.iter().enumerate() {
            if p != skip {
                v += msgs.edge(base + p)[s];
            }
        }
        let g = ws.states[skip];
        if v > ws.gmax[g] {
            ws.gmax[g] = v;
        }
        ws.vals.push(v);
        advance(&mut ws.states, cards);
    }
    ws.gsum.clear();
    ws.gsum.resize(k, 0.0);
    for (idx, &v) in ws.vals.iter().enumerate() {
        let g = (idx / stride) % k;
        ws.gsum[g] += libm::exp((v - ws.gmax[g]) / t);
    }
    for (s, o) in out.iter_mut().enumerate() {
        *o = ws.gmax[s] + t * libm::log(ws.gsum[s]);
    }
}

/// Closed-form minimization of `D` over `{λ_{i→a}}_{a∈N(i)}`; returns the
/// largest absolute change of a message entry.
///
/// With `m_a(s) = ε c_a · lse_{s_a: s_a[i]=s}[(θ_a + Σ_{j≠i} λ_{j→a}) / (ε c_a)]`
/// and `c̄ = c_i + Σ_{b∈N(i)} c_b`, the minimizer is
/// `λ_{i→a}(s) = (c_a / c̄)(θ_i(s) + Σ_b m_b(s)) − m_a(s)`.
pub(crate) fn block_update(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &mut MessageSet,
    i: usize,
    eps: f64,
    counting: CountingNumbers,
    ws: &mut Workspace,
) -> f64 {
    let edges = graph.var_edges(i);
    if edges.is_empty() {
        return 0.0;
    }
    let k = graph.cardinality(i);
    let deg = edges.len();
    let tf = eps * counting.factor;
    let mut m = core::mem::take(&mut ws.m);
    m.clear();
    m.resize(deg * k, 0.0);
    for (j, e) in edges.iter().enumerate() {
        factor_to_var(graph, theta, msgs, e.factor, e.slot, tf, ws, &mut m[j * k..(j + 1) * k]);
    }
    ws.total.clear();
    ws.total.extend_from_slice(theta.nodes.table(i));
    for j in 0..deg {
        for (t, mv) in ws.total.iter_mut().zip(&m[j * k..(j + 1) * k]) {
            *t += mv;
        }
    }
    let share = counting.factor / (counting.node + deg as f64 * counting.factor);
    let mut change: f64 = 0.0;
    for (j, e) in edges.iter().enumerate() {
        let lam = msgs.edge_mut(e.id);
        for s in 0..k {
            let new = share * ws.total[s] - m[j * k + s];
            change = change.max(libm::fabs(new - lam[s]));
            lam[s] = new;
        }
    }
    ws.m = m;
    change
}

/// Sets the block of messages leaving variable `i` to its exact minimizer
/// of [`dual_value`]. Variables without factors are left alone.
pub fn update_messages_block(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &mut MessageSet,
    i: usize,
    eps: f64,
    counting: CountingNumbers,
) {
    check_temperature(eps, counting);
    let mut ws = Workspace::default();
    block_update(graph, theta, msgs, i, eps, counting, &mut ws);
}

/// One sweep of block updates over all variables in ascending order.
/// Returns the largest message change.
pub fn sweep_messages(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &mut MessageSet,
    eps: f64,
    counting: CountingNumbers,
) -> f64 {
    check_temperature(eps, counting);
    let mut ws = Workspace::default();
    let mut change: f64 = 0.0;
    for i in 0..graph.num_vars() {
        change = change.max(block_update(graph, theta, msgs, i, eps, counting, &mut ws));
    }
    change
}

/// Soft-max tables of the dual's node and factor terms.
pub fn local_beliefs(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &MessageSet,
    eps: f64,
    counting: CountingNumbers,
) -> BeliefSet {
    check_temperature(eps, counting);
    let mut b = BeliefSet { nodes: graph.node_tables(), factors: graph.factor_tables() };
    let mut vals = Vec::new();
    let mut states = Vec::new();
    for i in 0..graph.num_vars() {
        node_values(graph, theta, msgs, i, &mut vals);
        math::softmax_into(&vals, eps * counting.node, b.nodes.table_mut(i));
    }
    for a in 0..graph.num_factors() {
        factor_values(graph, theta, msgs, a, &mut states, &mut vals);
        math::softmax_into(&vals, eps * counting.factor, b.factors.table_mut(a));
    }
    b
}

/// `max_{i, a∈N(i), s} |Σ_{s_a \ s_i} b_a(s_a) − b_i(s)|`.
pub fn marginalization_residual(graph: &FactorGraph, beliefs: &BeliefSet) -> f64 {
    let mut worst: f64 = 0.0;
    let mut marg = Vec::new();
    for a in 0..graph.num_factors() {
        let cards = graph.scope_cardinalities(a);
        let table = beliefs.factors.table(a);
        for (slot, &v) in graph.scope(a).iter().enumerate() {
            let k = cards[slot];
            let stride = graph.strides(a)[slot];
            marg.clear();
            marg.resize(k, 0.0);
            for (idx, &p) in table.iter().enumerate() {
                marg[(idx / stride) % k] += p;
            }
            for (s, &mv) in marg.iter().enumerate() {
                worst = worst.max(libm::fabs(mv - beliefs.nodes.table(v)[s]));
            }
        }
    }
    worst
}

/// Primal value `−Σ⟨θ, d⟩ − ε Σ c H(d)` of a belief set.
pub fn primal_value(
    theta: &PotentialSet,
    beliefs: &BeliefSet,
    eps: f64,
    counting: CountingNumbers,
) -> f64 {
    let mut acc = Accumulator::default();
    acc.add(-beliefs.nodes.dot(&theta.nodes));
    acc.add(-beliefs.factors.dot(&theta.factors));
    for t in beliefs.nodes.iter() {
        acc.add(-eps * counting.node * math::entropy(t));
    }
    for t in beliefs.factors.iter() {
        acc.add(-eps * counting.factor * math::entropy(t));
    }
    acc.value()
}

/// Outcome of a convex belief-propagation solve.
#[derive(Clone, Debug)]
pub struct LatentSolution {
    pub beliefs: BeliefSet,
    /// Primal objective of `beliefs`.
    pub value: f64,
    /// Marginalization residual of `beliefs`.
    pub residual: f64,
    pub sweeps: usize,
    /// False when `max_sweeps` ran out before the residual fell below the
    /// tolerance.
    pub converged: bool,
}

/// Maximizes `Σ⟨θ, d⟩ + ε Σ c H(d)` over the local polytope by block
/// coordinate descent on the dual, starting from (and updating) `msgs`.
pub fn solve_convex_bp(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: &mut MessageSet,
    eps: f64,
    counting: CountingNumbers,
    tol: f64,
    max_sweeps: usize,
) -> LatentSolution {
    check_temperature(eps, counting);
    let mut ws = Workspace::default();
    let mut beliefs = local_beliefs(graph, theta, msgs, eps, counting);
    let mut residual = marginalization_residual(graph, &beliefs);
    let mut sweeps = 0;
    while residual >= tol && sweeps < max_sweeps {
        for i in 0..graph.num_vars() {
            block_update(graph, theta, msgs, i, eps, counting, &mut ws);
        }
        sweeps += 1;
        beliefs = local_beliefs(graph, theta, msgs, eps, counting);
        residual = marginalization_residual(graph, &beliefs);
    }
    let value = primal_value(theta, &beliefs, eps, counting);
    LatentSolution { beliefs, value, residual, sweeps, converged: residual < tol }
}

/// The latent completion problem for one example: minimize
/// `−Σ⟨θ̂, d⟩ − ε Σ ĉ H(d)` over local-polytope beliefs on the hidden
/// subgraph. `theta_hat` and `msgs` live on `sub.reduced()`; `msgs` carries
/// the warm start in and the final messages out.
pub fn solve_latent_subproblem(
    theta_hat: &PotentialSet,
    sub: &HiddenSubgraph,
    eps: f64,
    counting: CountingNumbers,
    tol: f64,
    max_sweeps: usize,
    msgs: &mut MessageSet,
) -> LatentSolution {
    solve_convex_bp(sub.reduced(), theta_hat, msgs, eps, counting, tol, max_sweeps)
}

/// Settings for test-time decoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub eps: f64,
    pub max_sweeps: usize,
    /// Stop once no message moves by more than this in a sweep.
    pub tolerance: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { eps: 0.01, max_sweeps: 200, tolerance: 1e-6 }
    }
}

/// Approximate MAP labeling: message sweeps at a low temperature on
/// loss-free potentials, then the per-variable argmax of the node beliefs
/// (lowest state on ties).
pub fn decode_map(
    graph: &FactorGraph,
    theta: &PotentialSet,
    msgs: Option<MessageSet>,
    config: DecodeConfig,
) -> Vec<usize> {
    let counting = CountingNumbers::ONE;
    let mut msgs = msgs.unwrap_or_else(|| MessageSet::zeros(graph));
    let mut ws = Workspace::default();
    for _ in 0..config.max_sweeps {
        let mut change: f64 = 0.0;
        for i in 0..graph.num_vars() {
            change = change.max(block_update(graph, theta, &mut msgs, i, config.eps, counting, &mut ws));
        }
        if change < config.tolerance {
            break;
        }
    }
    let mut vals = Vec::new();
    (0..graph.num_vars())
        .map(|i| {
            node_values(graph, theta, &msgs, i, &mut vals);
            math::argmax(&vals)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::sync::Arc;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E: f64 = core::f64::consts::E;

    fn single(theta: &[f64]) -> (FactorGraph, PotentialSet) {
        let g = FactorGraph::build(vec![theta.len()], vec![]).unwrap();
        let mut p = PotentialSet::zeros(&g);
        p.nodes.table_mut(0).copy_from_slice(theta);
        (g, p)
    }

    fn random_graph(rng: &mut ChaCha8Rng) -> FactorGraph {
        let n = rng.random_range(2..=5);
        let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
        let mut scopes = Vec::new();
        for _ in 0..rng.random_range(1..=5) {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            if rng.random_bool(0.2) && n > 2 {
                let mut c = rng.random_range(0..n);
                while c == a || c == b {
                    c = rng.random_range(0..n);
                }
                scopes.push(vec![a, b, c]);
            } else {
                scopes.push(vec![a, b]);
            }
        }
        FactorGraph::build(cards, scopes).unwrap()
    }

    fn random_potentials(rng: &mut ChaCha8Rng, g: &FactorGraph, scale: f64) -> PotentialSet {
        let mut p = PotentialSet::zeros(g);
        p.nodes.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        p.factors.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        p
    }

    fn random_messages(rng: &mut ChaCha8Rng, g: &FactorGraph) -> MessageSet {
        let mut m = MessageSet::zeros(g);
        m.edges.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        m
    }

    fn enumerate_lse(g: &FactorGraph, theta: &PotentialSet, eps: f64) -> f64 {
        let mut states = vec![0; g.num_vars()];
        let mut scores = Vec::new();
        let mut fs = Vec::new();
        loop {
            let mut s: f64 = (0..g.num_vars()).map(|i| theta.nodes.table(i)[states[i]]).sum();
            for a in 0..g.num_factors() {
                fs.clear();
                fs.extend(g.scope(a).iter().map(|&v| states[v]));
                s += theta.factors.table(a)[g.factor_index(a, &fs)];
            }
            scores.push(s);
            if !advance(&mut states, g.cardinalities()) {
                break;
            }
        }
        math::scaled_log_sum_exp(&scores, eps)
    }

    #[test]
    fn single_variable_duals() {
        let (g, p) = single(&[0.0, 0.0, 0.0]);
        let v = dual_value(&g, &p, &MessageSet::zeros(&g), 1.0, CountingNumbers::ONE).unwrap();
        assert!((v - libm::log(3.0)).abs() < 1e-15);
        let (g, p) = single(&[1.0, 0.0]);
        let v = dual_value(&g, &p, &MessageSet::zeros(&g), 1.0, CountingNumbers::ONE).unwrap();
        assert!((v - 1.31326168751822).abs() < 1e-13);
        let b = local_beliefs(&g, &p, &MessageSet::zeros(&g), 1.0, CountingNumbers::ONE);
        assert!((b.nodes.table(0)[0] - E / (1.0 + E)).abs() < 1e-15);
        assert!((b.nodes.table(0)[0] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn chain_dual_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = FactorGraph::build(vec![2, 3], vec![vec![0, 1]]).unwrap();
        for _ in 0..20 {
            let p = random_potentials(&mut rng, &g, 2.0);
            let eps = rng.random_range(0.1..2.0);
            let ours = dual_value(&g, &p, &MessageSet::zeros(&g), eps, CountingNumbers::ONE).unwrap();
            let lse = |v: &[f64]| eps * libm::log(v.iter().map(|x| libm::exp(x / eps)).sum::<f64>());
            let direct = lse(p.nodes.table(0)) + lse(p.nodes.table(1)) + lse(p.factors.table(0));
            assert!((ours - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_potentials_keep_uniform_beliefs() {
        let g = FactorGraph::build(vec![3, 3, 2], vec![vec![0, 1], vec![1, 2]]).unwrap();
        let p = PotentialSet::zeros(&g);
        let mut m = MessageSet::zeros(&g);
        update_messages_block(&g, &p, &mut m, 1, 1.0, CountingNumbers::ONE);
        for e in g.var_edges(1) {
            let t = m.edge(e.id);
            assert!(t.iter().all(|&v| (v - t[0]).abs() < 1e-14));
        }
        let b = local_beliefs(&g, &p, &m, 1.0, CountingNumbers::ONE);
        assert!(b.nodes.table(1).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn isolated_variable_is_noop() {
        let (g, p) = single(&[0.3, 0.1]);
        let mut m = MessageSet::zeros(&g);
        update_messages_block(&g, &p, &mut m, 0, 1.0, CountingNumbers::ONE);
        assert_eq!(m, MessageSet::zeros(&g));
    }

    #[test]
    fn block_update_is_stationary_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let g = random_graph(&mut rng);
            let p = random_potentials(&mut rng, &g, 2.0);
            let mut m = random_messages(&mut rng, &g);
            let eps = [1.0, 0.5, 0.1][rng.random_range(0..3)];
            let c = CountingNumbers { node: rng.random_range(0.3..2.0), factor: rng.random_range(0.3..2.0) };
            let i = rng.random_range(0..g.num_vars());
            let before = dual_value(&g, &p, &m, eps, c).unwrap();
            update_messages_block(&g, &p, &mut m, i, eps, c);
            let after = dual_value(&g, &p, &m, eps, c).unwrap();
            assert!(after <= before + 1e-10, "{before} -> {after}");
            // gradient wrt λ_{i→a}(s) is b_a|_i(s) − b_i(s)
            let b = local_beliefs(&g, &p, &m, eps, c);
            for e in g.var_edges(i) {
                let stride = g.strides(e.factor)[e.slot];
                let k = g.cardinality(i);
                let mut marg = vec![0.0; k];
                for (idx, &q) in b.factors.table(e.factor).iter().enumerate() {
                    marg[(idx / stride) % k] += q;
                }
                for s in 0..k {
                    assert!((marg[s] - b.nodes.table(i)[s]).abs() < 1e-8);
                }
            }
            // and by finite differences
            let h = 1e-6;
            for e in g.var_edges(i) {
                for s in 0..g.cardinality(i) {
                    let mut mp = m.clone();
                    mp.edge_mut(e.id)[s] += h;
                    let mut mm = m.clone();
                    mm.edge_mut(e.id)[s] -= h;
                    let fd = (dual_value(&g, &p, &mp, eps, c).unwrap() - dual_value(&g, &p, &mm, eps, c).unwrap()) / (2.0 * h);
                    assert!(fd.abs() < 1e-6, "fd {fd}");
                }
            }
        }
    }

    #[test]
    fn sweeps_descend_and_bound_the_log_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let g = random_graph(&mut rng);
            let p = random_potentials(&mut rng, &g, 2.0);
            let eps = [1.0, 0.3][rng.random_range(0..2)];
            let mut m = random_messages(&mut rng, &g);
            let exact = enumerate_lse(&g, &p, eps);
            let mut prev = dual_value(&g, &p, &m, eps, CountingNumbers::ONE).unwrap();
            assert!(prev >= exact - 1e-8);
            for _ in 0..30 {
                sweep_messages(&g, &p, &mut m, eps, CountingNumbers::ONE);
                let d = dual_value(&g, &p, &m, eps, CountingNumbers::ONE).unwrap();
                assert!(d <= prev + 1e-10);
                assert!(d >= exact - 1e-8, "bound violated: {d} < {exact}");
                prev = d;
            }
        }
    }

    #[test]
    fn constant_shift_leaves_beliefs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let g = random_graph(&mut rng);
            let p = random_potentials(&mut rng, &g, 2.0);
            let m = random_messages(&mut rng, &g);
            let eps = 0.7;
            let mut q = p.clone();
            let node = rng.random_range(0..g.num_vars());
            let shift = rng.random_range(-3.0..3.0);
            q.nodes.table_mut(node).iter_mut().for_each(|v| *v += shift);
            let b1 = local_beliefs(&g, &p, &m, eps, CountingNumbers::ONE);
            let b2 = local_beliefs(&g, &q, &m, eps, CountingNumbers::ONE);
            assert!(b1.max_abs_diff(&b2) < 1e-10);
            let d1 = dual_value(&g, &p, &m, eps, CountingNumbers::ONE).unwrap();
            let d2 = dual_value(&g, &q, &m, eps, CountingNumbers::ONE).unwrap();
            assert!((d2 - d1 - shift).abs() < 1e-10);
        }
    }

    #[test]
    fn low_temperature_sharpens() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let g = random_graph(&mut rng);
            let p = random_potentials(&mut rng, &g, 2.0);
            let m = random_messages(&mut rng, &g);
            let b = local_beliefs(&g, &p, &m, 0.01, CountingNumbers::ONE);
            let mut vals = Vec::new();
            for i in 0..g.num_vars() {
                node_values(&g, &p, &m, i, &mut vals);
                assert_eq!(math::argmax(b.nodes.table(i)), math::argmax(&vals));
            }
            let mut last = vec![f64::INFINITY; g.num_vars()];
            for eps in [2.0, 1.0, 0.5, 0.1, 0.01] {
                let b = local_beliefs(&g, &p, &m, eps, CountingNumbers::ONE);
                for i in 0..g.num_vars() {
                    let h = math::entropy(b.nodes.table(i));
                    assert!(h <= last[i] + 1e-12);
                    last[i] = h;
                }
            }
        }
    }

    #[test]
    fn latent_single_variable_is_softmax() {
        let g = Arc::new(FactorGraph::build(vec![2], vec![]).unwrap());
        let sub = HiddenSubgraph::new(&g, &[0]).unwrap();
        let mut th = PotentialSet::zeros(sub.reduced());
        th.nodes.table_mut(0).copy_from_slice(&[1.0, 0.0]);
        let mut m = MessageSet::zeros(sub.reduced());
        let sol = solve_latent_subproblem(&th, &sub, 1.0, CountingNumbers::ONE, 1e-9, 100, &mut m);
        assert!(sol.converged);
        assert!((sol.beliefs.nodes.table(0)[0] - 0.73106).abs() < 1e-5);
        assert!((sol.value + libm::log(1.0 + E)).abs() < 1e-14);

        let none = HiddenSubgraph::new(&g, &[]).unwrap();
        let th = PotentialSet::zeros(none.reduced());
        let mut m = MessageSet::zeros(none.reduced());
        let sol = solve_latent_subproblem(&th, &none, 1.0, CountingNumbers::ONE, 1e-9, 100, &mut m);
        assert!(sol.beliefs.nodes.is_empty() && sol.value == 0.0 && sol.converged);
    }

    #[test]
    fn latent_solve_improves_on_uniform_and_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..40 {
            let g = random_graph(&mut rng);
            let p = random_potentials(&mut rng, &g, 2.0);
            let eps = [1.0, 0.5][rng.random_range(0..2)];
            let mut m = MessageSet::zeros(&g);
            let sol = solve_convex_bp(&g, &p, &mut m, eps, CountingNumbers::ONE, 1e-9, 5000);
            assert!(sol.converged, "residual {}", sol.residual);
            assert!(sol.beliefs.simplex_violation() < 1e-12);
            let uniform = primal_value(&p, &BeliefSet::uniform(&g), eps, CountingNumbers::ONE);
            assert!(sol.value <= uniform + 1e-12);
            // strong duality at the optimum
            let d = dual_value(&g, &p, &m, eps, CountingNumbers::ONE).unwrap();
            assert!((sol.value + d).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_single_and_ties() {
        let (g, p) = single(&[0.5, 1.2, -0.3]);
        assert_eq!(decode_map(&g, &p, None, DecodeConfig::default()), vec![1]);
        let (g, p) = single(&[1.0, 1.0]);
        assert_eq!(decode_map(&g, &p, None, DecodeConfig::default()), vec![0]);
    }

    #[test]
    fn decode_small_grid_matches_enumeration() {
        let g = FactorGraph::grid(2, 2, 5).unwrap();
        let mut p = PotentialSet::zeros(&g);
        for i in 0..3 {
            p.nodes.table_mut(i)[3] = 1.0;
        }
        p.nodes.table_mut(3)[1] = 0.5;
        for a in 0..g.num_factors() {
            for s in 0..5 {
                for t in 0..5 {
                    p.factors.table_mut(a)[s * 5 + t] = -2.0 * (s as f64 - t as f64).abs();
                }
            }
        }
        let decoded = decode_map(&g, &p, None, DecodeConfig::default());
        let mut best = (f64::NEG_INFINITY, vec![]);
        let mut states = vec![0; 4];
        loop {
            let mut s: f64 = (0..4).map(|i| p.nodes.table(i)[states[i]]).sum();
            for a in 0..g.num_factors() {
                let sc = g.scope(a);
                s += p.factors.table(a)[states[sc[0]] * 5 + states[sc[1]]];
            }
            if s > best.0 {
                best = (s, states.clone());
            }
            if !advance(&mut states, g.cardinalities()) {
                break;
            }
        }
        assert_eq!(best.1, vec![3; 4]);
        assert_eq!(decoded, best.1);
    }
}
