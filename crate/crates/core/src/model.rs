//! Examples, weights, hyperparameters and the rewrite of `(w, features,
//! losses)` into potential tables.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, HiddenSubgraph};
use crate::inference::BeliefSet;
use crate::math;
use crate::tables::Tables;

/// Log-linear weights `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_features: usize) -> Self {
        ModelParams { weights: alloc::vec![0.0; num_features] }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(r) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite { what: format!("weight {r}") });
        }
        Ok(ModelParams { weights })
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }
}

/// Counting numbers for node and factor entropies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountingNumbers {
    pub node: f64,
    pub factor: f64,
}

impl CountingNumbers {
    pub const ONE: CountingNumbers = CountingNumbers { node: 1.0, factor: 1.0 };

    pub fn uniform(c: f64) -> Self {
        CountingNumbers { node: c, factor: c }
    }

    fn check(&self, name: &str) -> Result<()> {
        for (what, v) in [("node", self.node), ("factor", self.factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperParams(format!(
                    "{name} {what} counting number must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for CountingNumbers {
    fn default() -> Self {
        Self::ONE
    }
}

/// Training hyperparameters. The regularizer is always the squared
/// Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Temperature. 1 gives the hidden-CRF likelihood, small values approach
    /// the latent max-margin objective.
    pub epsilon: f64,
    /// Regularization constant `C` of `C/2 |w|^2`.
    pub c_reg: f64,
    /// Counting numbers of the loss-augmented (message) side.
    pub counting: CountingNumbers,
    /// Counting numbers of the latent completion side.
    pub latent_counting: CountingNumbers,
    pub outer_iters: usize,
    /// Sweep cap for each latent completion solve.
    pub inner_iters: usize,
    /// Message sweeps per outer iteration.
    pub message_sweeps: usize,
    /// Outer stopping threshold on the objective change.
    pub tolerance: f64,
    /// Marginalization residual at which a latent solve counts as converged.
    pub latent_tolerance: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            epsilon: 1.0,
            c_reg: 1.0,
            counting: CountingNumbers::ONE,
            latent_counting: CountingNumbers::ONE,
            outer_iters: 200,
            inner_iters: 1000,
            message_sweeps: 1,
            tolerance: 1e-6,
            latent_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon == 0.0 {
            return Err(Error::InvalidHyperParams(
                "epsilon must be > 0; the max-margin limit is not supported directly, \
                 use a small temperature such as epsilon <= 0.01 instead"
                    .to_string(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidHyperParams(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.c_reg >= 0.0 && self.c_reg.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("c_reg must be >= 0, got {}", self.c_reg)));
        }
        self.counting.check("message-side")?;
        self.latent_counting.check("latent-side")?;
        for (name, v) in [("tolerance", self.tolerance), ("latent_tolerance", self.latent_tolerance)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.message_sweeps == 0 {
            return Err(Error::InvalidHyperParams("message_sweeps must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Node and factor potential tables on some graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSet {
    pub nodes: Tables,
    pub factors: Tables,
}

impl PotentialSet {
    pub fn zeros(graph: &FactorGraph) -> Self {
        PotentialSet { nodes: graph.node_tables(), factors: graph.factor_tables() }
    }

    pub fn all_finite(&self) -> bool {
        self.nodes.all_finite() && self.factors.all_finite()
    }

    pub fn max_abs_diff(&self, other: &PotentialSet) -> f64 {
        self.nodes.max_abs_diff(&other.nodes).max(self.factors.max_abs_diff(&other.factors))
    }
}

/// One training or test instance.
///
/// Feature and loss tables are dense over the graph; tables that were never
/// set are zero. Latent-side losses `ℓ^c` are sparse and default to zero;
/// factor entries range over the factor's hidden slots only.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    graph: Arc<FactorGraph>,
    observation: Vec<f64>,
    labels: Vec<Option<usize>>,
    node_features: Vec<Tables>,
    factor_features: Vec<Tables>,
    loss_node: Tables,
    loss_factor: Tables,
    latent_loss_node: BTreeMap<usize, Vec<f64>>,
    latent_loss_factor: BTreeMap<usize, Vec<f64>>,
}

fn check_len(what: impl FnOnce() -> alloc::string::String, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { what: what(), expected, found });
    }
    Ok(())
}

impl Example {
    /// `labels[i]` is `Some(y_i)` for observed variables and `None` for
    /// hidden ones, so the two sets partition the variables by construction.
    pub fn new(graph: Arc<FactorGraph>, num_features: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        check_len(|| "label vector".to_string(), graph.num_vars(), labels.len())?;
        for (i, y) in labels.iter().enumerate() {
            if let Some(y) = *y {
                if y >= graph.cardinality(i) {
                    return Err(Error::OutOfRange {
                        what: format!("label of variable {i}"),
                        index: y,
                        bound: graph.cardinality(i),
                    });
                }
            }
        }
        Ok(Example {
            node_features: (0..num_features).map(|_| graph.node_tables()).collect(),
            factor_features: (0..num_features).map(|_| graph.factor_tables()).collect(),
            loss_node: graph.node_tables(),
            loss_factor: graph.factor_tables(),
            latent_loss_node: BTreeMap::new(),
            latent_loss_factor: BTreeMap::new(),
            observation: Vec::new(),
            labels,
            graph,
        })
    }

    /// Attaches the raw per-variable observation.
    pub fn with_observation(mut self, observation: Vec<f64>) -> Result<Self> {
        check_len(|| "observation".to_string(), self.graph.num_vars(), observation.len())?;
        self.observation = observation;
        Ok(self)
    }

    pub fn graph(&self) -> &Arc<FactorGraph> {
        &self.graph
    }

    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.labels[i].is_none()
    }

    pub fn hidden_vars(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_none()).collect()
    }

    pub fn num_observed(&self) -> usize {
        self.labels.iter().filter(|y| y.is_some()).count()
    }

    pub fn num_features(&self) -> usize {
        self.node_features.len()
    }

    pub fn hidden_subgraph(&self) -> Result<HiddenSubgraph> {
        HiddenSubgraph::new(&self.graph, &self.hidden_vars())
    }

    fn check_feature(&self, r: usize) -> Result<()> {
        if r >= self.num_features() {
            return Err(Error::OutOfRange { what: "feature".to_string(), index: r, bound: self.num_features() });
        }
        Ok(())
    }

    fn check_node(&self, i: usize, len: usize) -> Result<()> {
        let n = self.graph.num_vars();
        if i >= n {
            return Err(Error::OutOfRange { what: "variable".to_string(), index: i, bound: n });
        }
        check_len(|| format!("node table of variable {i}"), self.graph.cardinality(i), len)
    }

    fn check_factor(&self, a: usize, len: usize) -> Result<()> {
        let m = self.graph.num_factors();
        if a >= m {
            return Err(Error::OutOfRange { what: "factor".to_string(), index: a, bound: m });
        }
        check_len(|| format!("factor table of factor {a}"), self.graph.factor_size(a), len)
    }

    pub fn set_node_feature(&mut self, r: usize, i: usize, table: &[f64]) -> Result<()> {
        self.check_feature(r)?;
        self.check_node(i, table.len())?;
        self.node_features[r].table_mut(i).copy_from_slice(table);
        Ok(())
    }

    pub fn set_factor_feature(&mut self, r: usize, a: usize, table: &[f64]) -> Result<()> {
        self.check_feature(r)?;
        self.check_factor(a, table.len())?;
        self.factor_features[r].table_mut(a).copy_from_slice(table);
        Ok(())
    }

    /// All node tables `φ_{r,i}` of feature `r`.
    pub fn node_features(&self, r: usize) -> &Tables {
        &self.node_features[r]
    }

    pub fn factor_features(&self, r: usize) -> &Tables {
        &self.factor_features[r]
    }

    pub fn set_node_loss(&mut self, i: usize, table: &[f64]) -> Result<()> {
        self.check_node(i, table.len())?;
        self.loss_node.table_mut(i).copy_from_slice(table);
        Ok(())
    }

    pub fn set_factor_loss(&mut self, a: usize, table: &[f64]) -> Result<()> {
        self.check_factor(a, table.len())?;
        self.loss_factor.table_mut(a).copy_from_slice(table);
        Ok(())
    }

    pub fn loss_node(&self) -> &Tables {
        &self.loss_node
    }

    pub fn loss_factor(&self) -> &Tables {
        &self.loss_factor
    }

    /// Sets `ℓ^c_i` for a hidden variable.
    pub fn set_latent_node_loss(&mut self, i: usize, table: &[f64]) -> Result<()> {
        self.check_node(i, table.len())?;
        if !self.is_hidden(i) {
            return Err(Error::OutOfRange { what: format!("latent loss on observed variable {i}"), index: i, bound: 0 });
        }
        self.latent_loss_node.insert(i, table.to_vec());
        Ok(())
    }

    /// Sets `ℓ^c_a` over the hidden slots of factor `a` (row-major in scope
    /// order, observed slots skipped).
    pub fn set_latent_factor_loss(&mut self, a: usize, table: &[f64]) -> Result<()> {
        let m = self.graph.num_factors();
        if a >= m {
            return Err(Error::OutOfRange { what: "factor".to_string(), index: a, bound: m });
        }
        let size: usize = self.graph.scope(a).iter().filter(|&&v| self.is_hidden(v)).map(|&v| self.graph.cardinality(v)).product();
        if self.graph.scope(a).iter().all(|&v| !self.is_hidden(v)) {
            return Err(Error::OutOfRange { what: format!("latent loss on fully observed factor {a}"), index: a, bound: 0 });
        }
        check_len(|| format!("latent loss table of factor {a}"), size, table.len())?;
        self.latent_loss_factor.insert(a, table.to_vec());
        Ok(())
    }

    pub fn latent_node_losses(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.latent_loss_node
    }

    pub fn latent_factor_losses(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.latent_loss_factor
    }

    /// Hamming loss: `scale·[s_i ≠ y_i]` on observed variables, zero on
    /// hidden variables and on every factor.
    pub fn hamming_loss_tables(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("loss scale must be > 0, got {scale}")));
        }
        for i in 0..self.graph.num_vars() {
            let y = self.labels[i];
            for (s, v) in self.loss_node.table_mut(i).iter_mut().enumerate() {
                *v = match y {
                    Some(y) if y != s => scale,
                    _ => 0.0,
                };
            }
        }
        self.loss_factor.as_mut_slice().fill(0.0);
        Ok(())
    }

    /// Hamming loss normalized by the number of observed variables, so the
    /// total loss of any labeling lies in `[0, 1]`.
    pub fn normalized_hamming_loss(&mut self) -> Result<()> {
        let n = self.num_observed().max(1);
        self.hamming_loss_tables(1.0 / n as f64)
    }
}

fn check_params(ex: &Example, params: &ModelParams) -> Result<()> {
    check_len(|| "weight vector".to_string(), ex.num_features(), params.num_features())
}

/// `θ = ℓ + Σ_r w_r φ_r` on every node and factor.
pub fn reparameterize(ex: &Example, params: &ModelParams) -> Result<PotentialSet> {
    check_params(ex, params)?;
    let mut theta = PotentialSet { nodes: ex.loss_node.clone(), factors: ex.loss_factor.clone() };
    add_weighted_features(ex, params, &mut theta);
    Ok(theta)
}

/// `Σ_r w_r φ_r` without the loss; what test-time decoding maximizes.
pub fn score_potentials(ex: &Example, params: &ModelParams) -> Result<PotentialSet> {
    check_params(ex, params)?;
    let mut theta = PotentialSet::zeros(&ex.graph);
    add_weighted_features(ex, params, &mut theta);
    Ok(theta)
}

fn add_weighted_features(ex: &Example, params: &ModelParams, theta: &mut PotentialSet) {
    for (r, &w) in params.weights.iter().enumerate() {
        theta.nodes.add_scaled(w, &ex.node_features[r]);
        theta.factors.add_scaled(w, &ex.factor_features[r]);
    }
}

/// Feature vector `φ(x, s)` of a full labeling.
pub fn joint_features(ex: &Example, labeling: &[usize]) -> Result<Vec<f64>> {
    let g = &ex.graph;
    check_len(|| "labeling".to_string(), g.num_vars(), labeling.len())?;
    let mut states = Vec::new();
    let mut out = alloc::vec![0.0; ex.num_features()];
    for (r, acc) in out.iter_mut().enumerate() {
        for (i, &s) in labeling.iter().enumerate() {
            *acc += ex.node_features[r].table(i)[s];
        }
        for a in 0..g.num_factors() {
            states.clear();
            states.extend(g.scope(a).iter().map(|&v| labeling[v]));
            *acc += ex.factor_features[r].table(a)[g.factor_index(a, &states)];
        }
    }
    Ok(out)
}

/// The example seen from its hidden variables: features with observed slots
/// clamped to the labels, latent losses laid out on the reduced graph, and
/// the constant feature contribution of the observed part.
#[derive(Clone, Debug)]
pub struct LatentView {
    sub: HiddenSubgraph,
    node_features: Vec<Tables>,
    factor_features: Vec<Tables>,
    latent_loss: PotentialSet,
    observed_features: Vec<f64>,
}

impl LatentView {
    pub fn new(ex: &Example) -> Result<Self> {
        Self::from_subgraph(ex, ex.hidden_subgraph()?)
    }

    pub fn from_subgraph(ex: &Example, sub: HiddenSubgraph) -> Result<Self> {
        let g = &ex.graph;
        if !Arc::ptr_eq(sub.parent(), g) && sub.parent().as_ref() != g.as_ref() {
            return Err(Error::Graph { factor: None, reason: "hidden subgraph belongs to another graph".to_string() });
        }
        if sub.hidden_vars() != ex.hidden_vars().as_slice() {
            return Err(Error::Graph { factor: None, reason: "hidden subgraph does not match the example's hidden mask".to_string() });
        }
        let red = sub.reduced();
        let clamps: Vec<Vec<usize>> =
            (0..red.num_factors()).map(|k| sub.clamped_indices(k, &ex.labels)).collect::<Result<_>>()?;

        let mut node_features = Vec::with_capacity(ex.num_features());
        let mut factor_features = Vec::with_capacity(ex.num_features());
        let mut observed_features = Vec::with_capacity(ex.num_features());
        let mut states = Vec::new();
        for r in 0..ex.num_features() {
            let nf = &ex.node_features[r];
            let ff = &ex.factor_features[r];
            let mut acc = 0.0;
            for i in 0..g.num_vars() {
                if let Some(y) = ex.labels[i] {
                    acc += nf.table(i)[y];
                }
            }
            for a in 0..g.num_factors() {
                let scope = g.scope(a);
                if scope.iter().all(|&v| ex.labels[v].is_some()) {
                    states.clear();
                    states.extend(scope.iter().map(|&v| ex.labels[v].unwrap()));
                    acc += ff.table(a)[g.factor_index(a, &states)];
                }
            }
            observed_features.push(acc);
            node_features.push(Tables::from_tables(sub.hidden_vars().iter().map(|&i| nf.table(i))));
            factor_features.push(Tables::from_tables(sub.active_factors().iter().zip(&clamps).map(|(&a, idx)| {
                let t = ff.table(a);
                idx.iter().map(|&j| t[j]).collect::<Vec<f64>>()
            })));
        }

        let mut latent_loss = PotentialSet::zeros(red);
        for (&i, t) in &ex.latent_loss_node {
            let k = sub.local_index(i).ok_or_else(|| Error::OutOfRange {
                what: format!("latent loss on observed variable {i}"),
                index: i,
                bound: 0,
            })?;
            latent_loss.nodes.table_mut(k).copy_from_slice(t);
        }
        for (&a, t) in &ex.latent_loss_factor {
            let k = sub.active_factors().binary_search(&a).map_err(|_| Error::OutOfRange {
                what: format!("latent loss on fully observed factor {a}"),
                index: a,
                bound: 0,
            })?;
            let dst = latent_loss.factors.table_mut(k);
            check_len(|| format!("latent loss table of factor {a}"), dst.len(), t.len())?;
            dst.copy_from_slice(t);
        }

        Ok(LatentView { sub, node_features, factor_features, latent_loss, observed_features })
    }

    pub fn subgraph(&self) -> &HiddenSubgraph {
        &self.sub
    }

    pub fn num_features(&self) -> usize {
        self.observed_features.len()
    }

    /// `θ̂ = ℓ^c + Σ_r w_r φ̂_r` on the reduced graph.
    pub fn potentials(&self, params: &ModelParams) -> Result<PotentialSet> {
        check_len(|| "weight vector".to_string(), self.num_features(), params.num_features())?;
        let mut theta = self.latent_loss.clone();
        for (r, &w) in params.weights.iter().enumerate() {
            theta.nodes.add_scaled(w, &self.node_features[r]);
            theta.factors.add_scaled(w, &self.factor_features[r]);
        }
        Ok(theta)
    }

    /// Observed feature values plus belief-weighted hidden feature values.
    pub fn expectations(&self, d: &BeliefSet) -> Result<Vec<f64>> {
        check_beliefs(self.sub.reduced(), d)?;
        Ok((0..self.num_features())
            .map(|r| {
                let hidden = d.nodes.dot(&self.node_features[r]) + d.factors.dot(&self.factor_features[r]);
                self.observed_features[r] + hidden
            })
            .collect())
    }

    /// `⟨ℓ^c, d⟩`.
    pub fn latent_loss_dot(&self, d: &BeliefSet) -> f64 {
        d.nodes.dot(&self.latent_loss.nodes) + d.factors.dot(&self.latent_loss.factors)
    }

    pub fn uniform_beliefs(&self) -> BeliefSet {
        BeliefSet::uniform(self.sub.reduced())
    }
}

/// `θ̂` on the reduced hidden graph: latent losses plus weighted features
/// with observed slots clamped to the labels.
pub fn latent_potentials(ex: &Example, params: &ModelParams, sub: &HiddenSubgraph) -> Result<PotentialSet> {
    LatentView::from_subgraph(ex, sub.clone())?.potentials(params)
}

/// Per-feature expectation of `φ(x, (y, h))` under the latent beliefs `d`
/// (tables on `sub`'s reduced graph).
pub fn feature_expectations(ex: &Example, sub: &HiddenSubgraph, d: &BeliefSet) -> Result<Vec<f64>> {
    LatentView::from_subgraph(ex, sub.clone())?.expectations(d)
}

fn check_beliefs(graph: &FactorGraph, d: &BeliefSet) -> Result<()> {
    let expect = BeliefSet { nodes: graph.node_tables(), factors: graph.factor_tables() };
    if !d.nodes.same_layout(&expect.nodes) {
        return Err(Error::Dimension {
            what: "node beliefs".to_string(),
            expected: expect.nodes.as_slice().len(),
            found: d.nodes.as_slice().len(),
        });
    }
    if !d.factors.same_layout(&expect.factors) {
        return Err(Error::Dimension {
            what: "factor beliefs".to_string(),
            expected: expect.factors.as_slice().len(),
            found: d.factors.as_slice().len(),
        });
    }
    for (what, t) in [("node beliefs", &d.nodes), ("factor beliefs", &d.factors)] {
        if let Some(&v) = t.as_slice().iter().find(|&&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
            return Err(Error::InvalidBelief { what: what.to_string(), value: v });
        }
    }
    Ok(())
}

/// `⟨ℓ^c, d⟩ + ε Σ ĉ H(d)` for one example, the negated latent part of the
/// objective that does not involve `w`.
pub(crate) fn latent_entropy_term(view: &LatentView, d: &BeliefSet, eps: f64, counting: CountingNumbers) -> f64 {
    let mut acc = math::Accumulator::default();
    for t in d.nodes.iter() {
        acc.add(counting.node * math::entropy(t));
    }
    for t in d.factors.iter() {
        acc.add(counting.factor * math::entropy(t));
    }
    view.latent_loss_dot(d) + eps * acc.value()
}
