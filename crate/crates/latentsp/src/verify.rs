//! Oracle comparisons on generated tiny instances. Each check returns the
//! worst deviation it saw; [`run_suite`] compares those against fixed
//! tolerances.

use std::sync::Arc;

use latentsp_core::inference::{self, local_beliefs, solve_latent_subproblem};
use latentsp_core::learning::ObjectiveParts;
use latentsp_core::model::{self, LatentView};
use latentsp_core::oracle::{self, EnumerationLimit};
use latentsp_core::{
    CountingNumbers, Example, FactorGraph, HyperParams, MessageSet, ModelParams, TrainOptions, TrainState, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fixtures;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Second enumerator: recursion over variables, scores read from the
/// reparameterized tables (or, with `clamp`, from the loss-free tables plus
/// the latent losses with observed variables fixed).
pub fn recursive_soft_max(ex: &Example, w: &ModelParams, eps: f64, clamp: bool) -> Result<f64> {
    let theta = if clamp { model::score_potentials(ex, w)? } else { model::reparameterize(ex, w)? };
    let g = ex.graph();
    let leaf = |s: &[usize]| {
        let mut v: f64 = (0..s.len()).map(|k| theta.nodes.table(k)[s[k]]).sum();
        for a in 0..g.num_factors() {
            let st: Vec<usize> = g.scope(a).iter().map(|&u| s[u]).collect();
            v += theta.factors.table(a)[g.factor_index(a, &st)];
        }
        if clamp {
            for (&i, t) in ex.latent_node_losses() {
                v += t[s[i]];
            }
            for (&a, t) in ex.latent_factor_losses() {
                let mut idx = 0;
                for &u in g.scope(a).iter().filter(|&&u| ex.is_hidden(u)) {
                    idx = idx * g.cardinality(u) + s[u];
                }
                v += t[idx];
            }
        }
        v
    };
    fn walk(ex: &Example, clamp: bool, s: &mut Vec<usize>, leaf: &dyn Fn(&[usize]) -> f64, out: &mut Vec<f64>) {
        let i = s.len();
        if i == ex.graph().num_vars() {
            out.push(leaf(s));
            return;
        }
        let range = match (clamp, ex.labels()[i]) {
            (true, Some(y)) => y..y + 1,
            _ => 0..ex.graph().cardinality(i),
        };
        for v in range {
            s.push(v);
            walk(ex, clamp, s, leaf, out);
            s.pop();
        }
    }
    let mut scores = Vec::new();
    walk(ex, clamp, &mut Vec::with_capacity(g.num_vars()), &leaf, &mut scores);
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + eps * scores.iter().map(|v| ((v - m) / eps).exp()).sum::<f64>().ln())
}

/// Largest disagreement between the oracle's enumerators and
/// [`recursive_soft_max`] over `n` random partially observed instances.
pub fn enumerators(n: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let g = Arc::new(fixtures::random_graph(&mut r, 5, 3));
        let ex = fixtures::random_example(&mut r, &g, 2, 0.4);
        let w = fixtures::random_weights(&mut r, 2, 2.0);
        let eps = [1.0, 0.5, 0.1][r.random_range(0..3)];
        let lim = EnumerationLimit::default();
        let a = oracle::exact_loss_augmented_term(&ex, &w, eps, lim)?;
        let b = oracle::exact_latent_term(&ex, &w, eps, lim)?;
        worst = worst.max((a - recursive_soft_max(&ex, &w, eps, false)?).abs());
        worst = worst.max((b - recursive_soft_max(&ex, &w, eps, true)?).abs());
    }
    Ok(worst)
}

/// Largest `ε·LSE(score/ε) − D(λ)` over random messages; positive values
/// would break the upper bound.
pub fn dual_bound(n: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let g = Arc::new(fixtures::random_graph(&mut r, 6, 3));
        let ex = fixtures::random_example(&mut r, &g, 1, 0.0);
        let w = fixtures::random_weights(&mut r, 1, 2.0);
        let eps = [1.0, 0.3][r.random_range(0..2)];
        let theta = model::reparameterize(&ex, &w)?;
        let msgs = fixtures::random_messages(&mut r, &g, 2.0);
        let d = inference::dual_value(&g, &theta, &msgs, eps, CountingNumbers::ONE)?;
        let exact = oracle::exact_loss_augmented_term(&ex, &w, eps, EnumerationLimit::default())?;
        worst = worst.max(exact - d);
    }
    Ok(worst)
}

/// Closed-form block update against numeric block minimization.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockReport {
    /// `max |D(closed form) − D(oracle)|`.
    pub value_gap: f64,
    /// Largest block-gradient entry after the closed-form update.
    pub block_gradient: f64,
    /// Largest increase of `D` caused by an update.
    pub ascent: f64,
}

/// Gradient of `D` with respect to the messages leaving `i`.
fn block_gradient(graph: &FactorGraph, theta: &latentsp_core::PotentialSet, msgs: &MessageSet, i: usize, eps: f64, c: CountingNumbers) -> f64 {
    let b = local_beliefs(graph, theta, msgs, eps, c);
    let mut worst: f64 = 0.0;
    for e in graph.var_edges(i) {
        let cards = graph.scope_cardinalities(e.factor);
        let stride = graph.strides(e.factor)[e.slot];
        let k = cards[e.slot];
        let mut marg = vec![0.0; k];
        for (idx, &p) in b.factors.table(e.factor).iter().enumerate() {
            marg[(idx / stride) % k] += p;
        }
        for (s, m) in marg.iter().enumerate() {
            worst = worst.max((m - b.nodes.table(i)[s]).abs());
        }
    }
    worst
}

pub fn block_updates(n: usize, seed: u64) -> Result<BlockReport> {
    let mut r = rng(seed);
    let mut rep = BlockReport::default();
    for _ in 0..n {
        let g = fixtures::random_graph(&mut r, 5, 3);
        let theta = fixtures::random_potentials(&mut r, &g, 2.0);
        let msgs = fixtures::random_messages(&mut r, &g, 1.0);
        let eps = [1.0, 0.7, 0.1][r.random_range(0..3)];
        let c = CountingNumbers { node: r.random_range(0.5..2.0), factor: r.random_range(0.5..2.0) };
        let i = r.random_range(0..g.num_vars());
        let before = inference::dual_value(&g, &theta, &msgs, eps, c)?;
        let mut closed = msgs.clone();
        inference::update_messages_block(&g, &theta, &mut closed, i, eps, c);
        let after = inference::dual_value(&g, &theta, &closed, eps, c)?;
        let numeric = oracle::oracle_block_min(&g, &theta, &msgs, i, eps, c);
        rep.value_gap = rep.value_gap.max((after - numeric.value).abs());
        rep.block_gradient = rep.block_gradient.max(block_gradient(&g, &theta, &closed, i, eps, c));
        rep.ascent = rep.ascent.max(after - before);
    }
    Ok(rep)
}

/// Message-passing latent solver against the oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct LatentReport {
    pub value_gap: f64,
    pub belief_gap: f64,
    pub residual: f64,
    pub unconverged: usize,
}

pub fn latent_solver(n: usize, seed: u64) -> Result<LatentReport> {
    let mut r = rng(seed);
    let mut rep = LatentReport::default();
    for _ in 0..n {
        let g = Arc::new(fixtures::random_graph(&mut r, 5, 3));
        let k = r.random_range(1..=g.num_vars().min(4));
        let mut vars: Vec<usize> = (0..g.num_vars()).collect();
        rand::seq::SliceRandom::shuffle(vars.as_mut_slice(), &mut r);
        vars.truncate(k);
        vars.sort_unstable();
        let ex = fixtures::example_with_hidden(&mut r, &g, 2, &vars);
        let w = fixtures::random_weights(&mut r, 2, 2.0);
        let eps = [1.0, 0.5, 0.1][r.random_range(0..3)];
        let c = CountingNumbers { node: r.random_range(0.5..2.0), factor: r.random_range(0.5..2.0) };
        let view = LatentView::new(&ex)?;
        let theta = view.potentials(&w)?;
        let sub = view.subgraph();
        let mut msgs = MessageSet::zeros(sub.reduced());
        let sol = solve_latent_subproblem(&theta, sub, eps, c, 1e-10, 200_000, &mut msgs);
        let reference = oracle::oracle_latent_solve(&theta, sub, eps, c);
        rep.value_gap = rep.value_gap.max((sol.value - reference.value).abs());
        rep.belief_gap = rep.belief_gap.max(sol.beliefs.max_abs_diff(&reference.beliefs));
        rep.residual = rep.residual.max(sol.residual);
        rep.unconverged += usize::from(!sol.converged);
    }
    Ok(rep)
}

/// Tiny dataset of `1..=3` examples on one random graph.
fn random_dataset(r: &mut ChaCha8Rng, hidden_prob: f64) -> Vec<Example> {
    let g = Arc::new(fixtures::random_graph(r, 5, 3));
    let m = r.random_range(1..=3);
    (0..m).map(|_| fixtures::random_example(r, &g, 2, hidden_prob)).collect()
}

/// Drives messages and latent beliefs of `state` to convergence at its
/// current weights.
pub fn settle(trainer: &Trainer<'_>, state: &mut TrainState, max_rounds: usize) -> Result<ObjectiveParts> {
    let mut last = trainer.objective(state)?;
    for _ in 0..max_rounds {
        trainer.latent_step(state)?;
        trainer.message_step(state)?;
        let now = trainer.objective(state)?;
        let done = (last.total - now.total).abs() <= 1e-13 * now.total.abs().max(1.0);
        last = now;
        if done {
            break;
        }
    }
    Ok(last)
}

/// Largest `exact − F_total` at settled messages and beliefs, over random
/// tiny datasets and weights; the bound holds when this is `≤ 0`.
pub fn objective_bound(n: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let data = random_dataset(&mut r, 0.4);
        let eps = [1.0, 0.1][r.random_range(0..2)];
        let hyper = HyperParams { epsilon: eps, latent_tolerance: 1e-12, inner_iters: 100_000, ..HyperParams::default() };
        let trainer = Trainer::new(&data, 2, hyper.clone(), TrainOptions::default())?;
        let mut state = trainer.initial_state();
        state.params = fixtures::random_weights(&mut r, 2, 2.0);
        let f = settle(&trainer, &mut state, 20_000)?;
        let exact = oracle::exact_objective(&data, &state.params, &hyper, EnumerationLimit::default())?;
        worst = worst.max(exact - f.total);
    }
    Ok(worst)
}

/// Largest relative deviation of the weight gradient from central
/// differences of `f1 + f2` with step `h`, relative to `max(|g|_∞, 1)`.
pub fn gradient(n: usize, seed: u64, h: f64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let data = random_dataset(&mut r, 0.4);
        let eps = [1.0, 0.5, 0.1][r.random_range(0..3)];
        let hyper = HyperParams { epsilon: eps, c_reg: r.random_range(0.1..2.0), ..HyperParams::default() };
        let trainer = Trainer::new(&data, 2, hyper, TrainOptions::default())?;
        let mut state = trainer.initial_state();
        state.params = fixtures::random_weights(&mut r, 2, 2.0);
        for _ in 0..r.random_range(0..4) {
            trainer.latent_step(&mut state)?;
            trainer.message_step(&mut state)?;
        }
        for (k, m) in state.messages.iter_mut().enumerate() {
            let noise = fixtures::random_messages(&mut r, data[k].graph(), 0.5);
            let mut t = m.tables().clone();
            t.add_scaled(1.0, noise.tables());
            *m = MessageSet::from_tables(data[k].graph(), t)?;
        }
        let g = trainer.weight_gradient(&state)?;
        let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for j in 0..g.len() {
            let mut plus = state.params.clone();
            plus.weights[j] += h;
            let mut minus = state.params.clone();
            minus.weights[j] -= h;
            let fd = (trainer.smooth_objective(&plus, &state)? - trainer.smooth_objective(&minus, &state)?) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs() / scale);
        }
    }
    Ok(worst)
}

/// Largest stage-to-stage increase of the objective during training runs on
/// random tiny datasets.
pub fn descent(n: usize, seed: u64, outer_iters: usize) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n {
        let data = random_dataset(&mut r, 0.5);
        let eps = [1.0, 0.5, 0.1, 0.01][r.random_range(0..4)];
        let hyper = HyperParams { epsilon: eps, outer_iters, ..HyperParams::default() };
        let state = Trainer::new(&data, 2, hyper, TrainOptions::default())?.run()?;
        worst = worst.max(max_stage_increase(&state));
    }
    Ok(worst)
}

/// Largest increase between consecutive stage records.
pub fn max_stage_increase(state: &TrainState) -> f64 {
    state.stages.windows(2).map(|w| w[1].total - w[0].total).fold(f64::NEG_INFINITY, f64::max)
}

/// Trains the same fully observed data with and without the latent stage;
/// true when histories and weights agree bit for bit.
pub fn reduction(seed: u64, outer_iters: usize) -> Result<bool> {
    let mut r = rng(seed);
    let data = random_dataset(&mut r, 0.0);
    let hyper = HyperParams { outer_iters, ..HyperParams::default() };
    let with = Trainer::new(&data, 2, hyper.clone(), TrainOptions::default())?.run()?;
    let without = Trainer::new(&data, 2, hyper, TrainOptions { latent: false, ..TrainOptions::default() })?.run()?;
    Ok(same_run(&with, &without))
}

pub fn same_run(a: &TrainState, b: &TrainState) -> bool {
    let bits = |p: &ObjectiveParts| [p.total.to_bits(), p.f1.to_bits(), p.f2.to_bits(), p.f3.to_bits()];
    a.history.len() == b.history.len()
        && a.history.iter().zip(&b.history).all(|(x, y)| x.iteration == y.iteration && bits(&x.parts) == bits(&y.parts))
        && a.params.weights.iter().map(|w| w.to_bits()).eq(b.params.weights.iter().map(|w| w.to_bits()))
}

/// One observed variable, one feature, `ε = 1`: trained weight against a
/// dense search of the exact objective. Returns `(trained, searched)`.
pub fn single_variable() -> Result<(f64, f64)> {
    let g = Arc::new(FactorGraph::build(vec![3], vec![])?);
    let mut ex = Example::new(Arc::clone(&g), 1, vec![Some(0)])?;
    ex.set_node_feature(0, 0, &[0.5, -1.0, 2.0])?;
    ex.hamming_loss_tables(1.0)?;
    let data = vec![ex];
    let hyper = HyperParams { epsilon: 1.0, outer_iters: 20_000, tolerance: 1e-15, ..HyperParams::default() };
    let state = Trainer::new(&data, 1, hyper.clone(), TrainOptions::default())?.run()?;
    let f = |w: f64| {
        oracle::exact_objective(&data, &ModelParams { weights: vec![w] }, &hyper, EnumerationLimit::default())
    };
    let mut best = (f64::INFINITY, 0.0);
    for k in -100_000..=100_000 {
        let w = k as f64 * 1e-4;
        let v = f(w)?;
        if v < best.0 {
            best = (v, w);
        }
    }
    let (mut lo, mut hi) = (best.1 - 1e-4, best.1 + 1e-4);
    for _ in 0..100 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a)? < f(b)? {
            hi = b;
        } else {
            lo = a;
        }
    }
    Ok((state.params.weights[0], 0.5 * (lo + hi)))
}

/// One line of the verification report.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, value: f64, limit: f64, what: &str) -> CheckOutcome {
    CheckOutcome { name, passed: value <= limit, detail: format!("{what} {value:.3e} (limit {limit:.0e})") }
}

/// The built-in suite; `quick` uses fewer instances per check.
pub fn run_suite(seed: u64, quick: bool) -> Result<Vec<CheckOutcome>> {
    let n = |full: usize| if quick { (full / 5).max(5) } else { full };
    let mut out = Vec::new();
    out.push(outcome("enumerators agree", enumerators(n(50), seed)?, 1e-12, "max difference"));
    out.push(outcome("dual bounds log-partition", dual_bound(n(100), seed)?, 1e-8, "max violation"));
    let b = block_updates(n(100), seed)?;
    out.push(outcome("block update matches numeric minimum", b.value_gap, 1e-6, "max dual gap"));
    out.push(outcome("block update is stationary", b.block_gradient, 1e-6, "max block gradient"));
    out.push(outcome("block update never ascends", b.ascent, 1e-10, "max increase"));
    let l = latent_solver(n(100), seed)?;
    out.push(outcome("latent solve value", l.value_gap, 1e-5, "max value gap"));
    out.push(outcome("latent solve beliefs", l.belief_gap, 1e-4, "max belief gap"));
    out.push(outcome("latent solve feasibility", l.residual, 1e-6, "max residual"));
    out.push(outcome("weight gradient", gradient(n(50), seed, 1e-5)?, 1e-5, "max relative error"));
    out.push(outcome("monotone descent", descent(n(20), seed, 30)?, 1e-8, "max increase"));
    let same = reduction(seed, 30)?;
    out.push(CheckOutcome {
        name: "fully observed reduction",
        passed: same,
        detail: if same { "bit-identical".into() } else { "histories differ".into() },
    });
    let (trained, searched) = single_variable()?;
    out.push(outcome("single variable optimum", (trained - searched).abs(), 1e-3, "|w - w*|"));
    out.push(outcome("objective upper bound", objective_bound(n(200), seed)?, 1e-8, "max violation"));
    Ok(out)
}
