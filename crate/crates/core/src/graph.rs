//! Factor-graph topology and the hidden-variable subgraph.
//!
//! Factor scopes are ordered tuples. A factor table lists its states in
//! row-major order of the scope: the last slot varies fastest.

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tables::Tables;

/// One variable-factor edge seen from the variable side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeRef {
    pub factor: usize,
    /// Position of the variable inside the factor's scope.
    pub slot: usize,
    /// Global edge id, used to index message tables.
    pub id: usize,
}

/// Immutable bipartite factor graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    cardinalities: Vec<usize>,
    scopes: Vec<Vec<usize>>,
    scope_cards: Vec<Vec<usize>>,
    strides: Vec<Vec<usize>>,
    factor_sizes: Vec<usize>,
    var_neighbors: Vec<Vec<usize>>,
    var_edges: Vec<Vec<EdgeRef>>,
    factor_neighbors: Vec<Vec<usize>>,
    edge_offsets: Vec<usize>,
}

impl FactorGraph {
    /// Builds a graph from per-variable state counts and factor scopes.
    pub fn build(cardinalities: Vec<usize>, scopes: Vec<Vec<usize>>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::Graph { factor: None, reason: "no variables".to_string() });
        }
        Self::from_parts(cardinalities, scopes)
    }

    /// Like [`FactorGraph::build`] but allows a graph without variables.
    pub(crate) fn from_parts(cardinalities: Vec<usize>, scopes: Vec<Vec<usize>>) -> Result<Self> {
        let n = cardinalities.len();
        if let Some(i) = cardinalities.iter().position(|&k| k == 0) {
            return Err(Error::Graph {
                factor: None,
                reason: format!("variable {i} has no states"),
            });
        }
        for (a, scope) in scopes.iter().enumerate() {
            if scope.is_empty() {
                return Err(Error::Graph { factor: Some(a), reason: "empty scope".to_string() });
            }
            for (p, &v) in scope.iter().enumerate() {
                if v >= n {
                    return Err(Error::Graph {
                        factor: Some(a),
                        reason: format!("variable {v} out of range (graph has {n} variables)"),
                    });
                }
                if scope[..p].contains(&v) {
                    return Err(Error::Graph {
                        factor: Some(a),
                        reason: format!("duplicate variable in scope (variable {v})"),
                    });
                }
            }
        }

        let mut var_neighbors = alloc::vec![Vec::new(); n];
        let mut var_edges = alloc::vec![Vec::new(); n];
        let mut edge_offsets = Vec::with_capacity(scopes.len() + 1);
        let mut scope_cards = Vec::with_capacity(scopes.len());
        let mut strides = Vec::with_capacity(scopes.len());
        let mut factor_sizes = Vec::with_capacity(scopes.len());
        let mut factor_neighbors = Vec::with_capacity(scopes.len());
        let mut next_edge = 0;
        for (a, scope) in scopes.iter().enumerate() {
            edge_offsets.push(next_edge);
            for (slot, &v) in scope.iter().enumerate() {
                var_neighbors[v].push(a);
                var_edges[v].push(EdgeRef { factor: a, slot, id: next_edge + slot });
            }
            next_edge += scope.len();
            let cards: Vec<usize> = scope.iter().map(|&v| cardinalities[v]).collect();
            let mut st = alloc::vec![1; cards.len()];
            for p in (0..cards.len().saturating_sub(1)).rev() {
                st[p] = st[p + 1] * cards[p + 1];
            }
            factor_sizes.push(st[0] * cards[0]);
            strides.push(st);
            scope_cards.push(cards);
            let mut sorted = scope.clone();
            sorted.sort_unstable();
            factor_neighbors.push(sorted);
        }
        edge_offsets.push(next_edge);

        Ok(FactorGraph {
            cardinalities,
            scopes,
            scope_cards,
            strides,
            factor_sizes,
            var_neighbors,
            var_edges,
            factor_neighbors,
            edge_offsets,
        })
    }

    /// Four-neighbour grid over `height x width` pixels, all with `labels`
    /// states. Variables are numbered row-major; for every pixel the edge to
    /// its right neighbour comes before the edge to the pixel below.
    pub fn grid(height: usize, width: usize, labels: usize) -> Result<Self> {
        Self::build(alloc::vec![labels; height * width], grid_scopes(height, width))
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    #[inline]
    pub fn num_factors(&self) -> usize {
        self.scopes.len()
    }

    pub fn num_edges(&self) -> usize {
        *self.edge_offsets.last().unwrap_or(&0)
    }

    #[inline]
    pub fn cardinality(&self, i: usize) -> usize {
        self.cardinalities[i]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    #[inline]
    pub fn scope(&self, a: usize) -> &[usize] {
        &self.scopes[a]
    }

    pub fn scopes(&self) -> &[Vec<usize>] {
        &self.scopes
    }

    /// Cardinalities of the scope's variables, in slot order.
    #[inline]
    pub fn scope_cardinalities(&self, a: usize) -> &[usize] {
        &self.scope_cards[a]
    }

    #[inline]
    pub fn strides(&self, a: usize) -> &[usize] {
        &self.strides[a]
    }

    /// Number of joint states of factor `a`.
    #[inline]
    pub fn factor_size(&self, a: usize) -> usize {
        self.factor_sizes[a]
    }

    /// `N(i)`: factors containing variable `i`, ascending.
    pub fn var_neighbors(&self, i: usize) -> &[usize] {
        &self.var_neighbors[i]
    }

    /// Edges of variable `i`, in the order of [`FactorGraph::var_neighbors`].
    #[inline]
    pub fn var_edges(&self, i: usize) -> &[EdgeRef] {
        &self.var_edges[i]
    }

    /// `N(a)`: variables of factor `a`, ascending.
    pub fn factor_neighbors(&self, a: usize) -> &[usize] {
        &self.factor_neighbors[a]
    }

    #[inline]
    pub fn edge_id(&self, a: usize, slot: usize) -> usize {
        self.edge_offsets[a] + slot
    }

    /// Table index of a joint state of factor `a`.
    pub fn factor_index(&self, a: usize, states: &[usize]) -> usize {
        states.iter().zip(&self.strides[a]).map(|(s, st)| s * st).sum()
    }

    /// Writes the joint state at table index `idx` of factor `a` into `out`.
    pub fn factor_states(&self, a: usize, mut idx: usize, out: &mut [usize]) {
        for (p, st) in self.strides[a].iter().enumerate() {
            out[p] = idx / st;
            idx %= st;
        }
    }

    pub fn node_tables(&self) -> Tables {
        Tables::zeros(self.cardinalities.iter().copied())
    }

    pub fn factor_tables(&self) -> Tables {
        Tables::zeros(self.factor_sizes.iter().copied())
    }

    /// One table per edge, sized by the edge's variable.
    pub fn edge_tables(&self) -> Tables {
        Tables::zeros(self.scopes.iter().flat_map(|s| s.iter().map(|&v| self.cardinalities[v])))
    }

    /// Product of all cardinalities, saturating.
    pub fn joint_size(&self) -> u128 {
        self.cardinalities.iter().fold(1u128, |p, &k| p.saturating_mul(k as u128))
    }
}

/// Steps a row-major odometer; returns `false` after the last state.
#[inline]
pub(crate) fn advance(states: &mut [usize], cards: &[usize]) -> bool {
    for p in (0..states.len()).rev() {
        states[p] += 1;
        if states[p] < cards[p] {
            return true;
        }
        states[p] = 0;
    }
    false
}

/// Edge list of a four-neighbour `height x width` grid.
pub fn grid_scopes(height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut scopes = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let v = r * width + c;
            if c + 1 < width {
                scopes.push(alloc::vec![v, v + 1]);
            }
            if r + 1 < height {
                scopes.push(alloc::vec![v, v + width]);
            }
        }
    }
    scopes
}

/// How a factor's scope splits between observed and hidden variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotSplit {
    /// Slot positions holding observed variables.
    pub observed: Vec<usize>,
    /// Slot positions holding hidden variables.
    pub hidden: Vec<usize>,
}

/// The part of a graph touched by a set of hidden variables.
///
/// Besides the bookkeeping in the parent's numbering, this carries a
/// *reduced* [`FactorGraph`] whose variables are the hidden variables
/// (renumbered `0..`) and whose factors are the active factors restricted to
/// their hidden slots. Latent beliefs and latent messages live on the
/// reduced graph.
#[derive(Clone, Debug)]
pub struct HiddenSubgraph {
    parent: Arc<FactorGraph>,
    hidden: Vec<usize>,
    local: Vec<Option<usize>>,
    active: Vec<usize>,
    splits: Vec<SlotSplit>,
    reduced: FactorGraph,
}

impl HiddenSubgraph {
    pub fn new(parent: &Arc<FactorGraph>, hidden: &[usize]) -> Result<Self> {
        let n = parent.num_vars();
        let mut set: Vec<usize> = hidden.to_vec();
        set.sort_unstable();
        set.dedup();
        if let Some(&bad) = set.iter().find(|&&v| v >= n) {
            return Err(Error::OutOfRange { what: "hidden variable".to_string(), index: bad, bound: n });
        }
        let mut local = alloc::vec![None; n];
        for (k, &v) in set.iter().enumerate() {
            local[v] = Some(k);
        }
        let mut active = Vec::new();
        let mut splits = Vec::new();
        let mut reduced_scopes = Vec::new();
        for a in 0..parent.num_factors() {
            let scope = parent.scope(a);
            let (hid, obs): (Vec<usize>, Vec<usize>) =
                (0..scope.len()).partition(|&p| local[scope[p]].is_some());
            if hid.is_empty() {
                continue;
            }
            reduced_scopes.push(hid.iter().map(|&p| local[scope[p]].unwrap()).collect());
            active.push(a);
            splits.push(SlotSplit { observed: obs, hidden: hid });
        }
        let cards = set.iter().map(|&v| parent.cardinality(v)).collect();
        let reduced = FactorGraph::from_parts(cards, reduced_scopes)?;
        Ok(HiddenSubgraph { parent: Arc::clone(parent), hidden: set, local, active, splits, reduced })
    }

    pub fn parent(&self) -> &Arc<FactorGraph> {
        &self.parent
    }

    /// `ℍ`, ascending parent indices.
    pub fn hidden_vars(&self) -> &[usize] {
        &self.hidden
    }

    pub fn is_hidden(&self, i: usize) -> bool {
        self.local[i].is_some()
    }

    /// Reduced-graph index of parent variable `i`, if hidden.
    pub fn local_index(&self, i: usize) -> Option<usize> {
        self.local[i]
    }

    /// `E_ℍ`: parent factors with at least one hidden variable, ascending.
    /// Reduced factor `k` corresponds to `active_factors()[k]`.
    pub fn active_factors(&self) -> &[usize] {
        &self.active
    }

    pub fn split(&self, k: usize) -> &SlotSplit {
        &self.splits[k]
    }

    pub fn reduced(&self) -> &FactorGraph {
        &self.reduced
    }

    /// For reduced factor `k`, the parent table index of each reduced table
    /// entry when observed slots are clamped to `labels`.
    pub fn clamped_indices(&self, k: usize, labels: &[Option<usize>]) -> Result<Vec<usize>> {
        let a = self.active[k];
        let scope = self.parent.scope(a);
        let strides = self.parent.strides(a);
        let split = &self.splits[k];
        let mut base = 0;
        for &p in &split.observed {
            let v = scope[p];
            let y = labels.get(v).copied().flatten().ok_or_else(|| Error::OutOfRange {
                what: format!("clamp label of variable {v}"),
                index: v,
                bound: labels.len(),
            })?;
            let card = self.parent.cardinality(v);
            if y >= card {
                return Err(Error::OutOfRange { what: format!("clamp label of variable {v}"), index: y, bound: card });
            }
            base += y * strides[p];
        }
        let hid_cards: Vec<usize> = split.hidden.iter().map(|&p| self.parent.cardinality(scope[p])).collect();
        let mut states = alloc::vec![0; hid_cards.len()];
        let mut out = Vec::with_capacity(self.reduced.factor_size(k));
        loop {
            let off: usize = split.hidden.iter().zip(&states).map(|(&p, &s)| s * strides[p]).sum();
            out.push(base + off);
            if !advance(&mut states, &hid_cards) {
                break;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn chain3() -> Arc<FactorGraph> {
        Arc::new(FactorGraph::build(vec![2, 3, 2], vec![vec![0, 1], vec![1, 2]]).unwrap())
    }

    #[test]
    fn single_edge() {
        let g = FactorGraph::build(vec![2, 2], vec![vec![0, 1]]).unwrap();
        assert_eq!(g.var_neighbors(0), &[0]);
        assert_eq!(g.var_neighbors(1), &[0]);
        assert_eq!(g.factor_neighbors(0), &[0, 1]);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn icml_grid_counts() {
        let g = FactorGraph::grid(14, 40, 5).unwrap();
        assert_eq!(g.num_vars(), 560);
        assert_eq!(g.num_factors(), 14 * 39 + 13 * 40);
        assert_eq!(g.num_factors(), 1066);
    }

    #[test]
    fn invalid_scopes_rejected() {
        let e = FactorGraph::build(vec![2], vec![vec![0, 0]]).unwrap_err();
        assert!(e.to_string().contains("duplicate variable in scope"), "{e}");
        assert!(e.to_string().starts_with("factor 0"));
        let e = FactorGraph::build(vec![2, 2], vec![vec![0, 1], vec![2]]).unwrap_err();
        assert!(e.to_string().starts_with("factor 1") && e.to_string().contains("out of range"));
        let e = FactorGraph::build(vec![2], vec![vec![]]).unwrap_err();
        assert!(e.to_string().contains("empty scope"));
        assert!(FactorGraph::build(vec![], vec![]).is_err());
        assert!(FactorGraph::build(vec![0], vec![]).is_err());
    }

    #[test]
    fn row_major_layout() {
        let g = FactorGraph::build(vec![2, 3, 4], vec![vec![2, 0, 1]]).unwrap();
        assert_eq!(g.strides(0), &[6, 3, 1]);
        assert_eq!(g.factor_size(0), 24);
        assert_eq!(g.factor_index(0, &[3, 1, 2]), 3 * 6 + 3 + 2);
        let mut s = [0; 3];
        g.factor_states(0, 23, &mut s);
        assert_eq!(s, [3, 1, 2]);
        assert_eq!(g.factor_neighbors(0), &[0, 1, 2]);
        assert_eq!(g.var_edges(0)[0].slot, 1);
    }

    #[test]
    fn hidden_middle_of_chain() {
        let g = chain3();
        let sub = HiddenSubgraph::new(&g, &[1]).unwrap();
        assert_eq!(sub.active_factors(), &[0, 1]);
        assert_eq!(sub.split(0), &SlotSplit { observed: vec![0], hidden: vec![1] });
        assert_eq!(sub.split(1), &SlotSplit { observed: vec![1], hidden: vec![0] });
        assert_eq!(sub.reduced().num_vars(), 1);
        assert_eq!(sub.reduced().scope(0), &[0]);
        // y0 = 1: entries (1, h) of a 2x3 table
        let labels = [Some(1), None, Some(0)];
        assert_eq!(sub.clamped_indices(0, &labels).unwrap(), vec![3, 4, 5]);
        // y2 = 0: entries (h, 0) of a 3x2 table
        assert_eq!(sub.clamped_indices(1, &labels).unwrap(), vec![0, 2, 4]);
        let bad = [Some(5), None, Some(0)];
        assert!(sub.clamped_indices(0, &bad).is_err());
    }

    #[test]
    fn hidden_empty_and_full() {
        let g = chain3();
        let none = HiddenSubgraph::new(&g, &[]).unwrap();
        assert!(none.active_factors().is_empty());
        assert_eq!(none.reduced().num_vars(), 0);
        let all = HiddenSubgraph::new(&g, &[0, 1, 2]).unwrap();
        assert_eq!(all.active_factors(), &[0, 1]);
        assert!((0..2).all(|k| all.split(k).observed.is_empty()));
        assert_eq!(all.reduced(), g.as_ref());
        assert!(HiddenSubgraph::new(&g, &[3]).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>)> {
        (1usize..8).prop_flat_map(|n| {
            let cards = proptest::collection::vec(1usize..4, n);
            let scopes = proptest::collection::vec(
                proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(3)).prop_shuffle(),
                0..10,
            );
            (cards, scopes)
        })
    }

    proptest! {
        #[test]
        fn neighbor_indices_agree((cards, scopes) in arb_graph()) {
            let g = FactorGraph::build(cards, scopes).unwrap();
            for i in 0..g.num_vars() {
                prop_assert!(g.var_neighbors(i).windows(2).all(|w| w[0] < w[1]));
                for &a in g.var_neighbors(i) {
                    prop_assert!(g.factor_neighbors(a).contains(&i));
                }
            }
            for a in 0..g.num_factors() {
                prop_assert!(g.factor_neighbors(a).windows(2).all(|w| w[0] < w[1]));
                for &i in g.factor_neighbors(a) {
                    prop_assert!(g.var_neighbors(i).contains(&a));
                }
            }
        }

        #[test]
        fn active_factors_monotone((cards, scopes) in arb_graph(), mask in any::<u8>(), extra in any::<u8>()) {
            let g = Arc::new(FactorGraph::build(cards, scopes).unwrap());
            let n = g.num_vars();
            let small: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let large: Vec<usize> = (0..n).filter(|&i| (mask | extra) >> i & 1 == 1).collect();
            let s = HiddenSubgraph::new(&g, &small).unwrap();
            let l = HiddenSubgraph::new(&g, &large).unwrap();
            for a in s.active_factors() {
                prop_assert!(l.active_factors().contains(a));
            }
            for (k, &a) in l.active_factors().iter().enumerate() {
                prop_assert!(g.scope(a).iter().any(|&v| l.is_hidden(v)));
                let sp = l.split(k);
                let mut all: Vec<usize> = sp.observed.iter().chain(&sp.hidden).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..g.scope(a).len()).collect::<Vec<_>>());
            }
        }
    }
}
