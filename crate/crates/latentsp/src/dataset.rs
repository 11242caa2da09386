//! In-memory dataset: one shared graph plus per-example records from which
//! model examples are built.

use std::collections::BTreeMap;
use std::sync::Arc;

use latentsp_core::{Example, FactorGraph};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where feature tables come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Features {
    /// Unary `−|x_i − (s+1)|` and pairwise `−|s_i − s_j|` on a 4-connected
    /// grid, recomputed from the observations.
    Grid { height: usize, width: usize },
    /// Tables listed with every record.
    Explicit { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTable {
    pub node: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorTable {
    pub factor: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureNodeTable {
    pub feature: usize,
    pub node: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFactorTable {
    pub feature: usize,
    pub factor: usize,
    pub values: Vec<f64>,
}

/// Explicit tables of one record. Missing entries are zero; when both loss
/// lists are empty the normalized Hamming loss is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordTables {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub node_features: Vec<FeatureNodeTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub factor_features: Vec<FeatureFactorTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub node_loss: Vec<NodeTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub factor_loss: Vec<FactorTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub latent_node_loss: Vec<NodeTable>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub latent_factor_loss: Vec<FactorTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub split: Split,
    pub observation: Vec<f64>,
    /// Observed labels, zero-based.
    pub labels: BTreeMap<usize, usize>,
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<RecordTables>,
}

impl Record {
    /// Full labeling, if nothing is hidden.
    pub fn full_labels(&self, num_vars: usize) -> Option<Vec<usize>> {
        (0..num_vars).map(|i| self.labels.get(&i).copied()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Arc<FactorGraph>,
    pub features: Features,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        match self.features {
            Features::Grid { .. } => 2,
            Features::Explicit { count } => count,
        }
    }

    /// Checks records against the graph: observed labels and hidden
    /// variables partition the variables, every index is in range.
    pub fn validate(&self) -> Result<()> {
        let g = &self.graph;
        let n = g.num_vars();
        if let Features::Grid { height, width } = self.features {
            let expected = latentsp_core::graph::grid_scopes(height, width);
            if height * width != n || g.scopes() != expected.as_slice() {
                return Err(Error::Invalid(format!("graph is not the 4-connected {height}x{width} grid")));
            }
        }
        for (k, rec) in self.records.iter().enumerate() {
            let bad = |msg: String| Error::Invalid(format!("example {k}: {msg}"));
            let optional = matches!(self.features, Features::Explicit { .. }) && rec.observation.is_empty();
            if rec.observation.len() != n && !optional {
                return Err(bad(format!("observation has {} entries, graph has {n} variables", rec.observation.len())));
            }
            let mut seen = vec![false; n];
            for (&i, &y) in &rec.labels {
                if i >= n {
                    return Err(bad(format!("label for variable {i} out of range")));
                }
                if y >= g.cardinality(i) {
                    return Err(bad(format!("label {y} of variable {i} exceeds cardinality {}", g.cardinality(i))));
                }
                seen[i] = true;
            }
            for &i in &rec.hidden {
                if i >= n {
                    return Err(bad(format!("hidden variable {i} out of range")));
                }
                if seen[i] {
                    return Err(bad(format!("variable {i} is both labeled and hidden")));
                }
                seen[i] = true;
            }
            if let Some(v) = seen.iter().position(|s| !s) {
                return Err(bad(format!("variable {v} is neither labeled nor hidden")));
            }
            if rec.tables.is_some() && matches!(self.features, Features::Grid { .. }) {
                return Err(bad("explicit tables given for a grid dataset".into()));
            }
        }
        Ok(())
    }

    /// Model example of record `k`.
    pub fn example(&self, k: usize) -> Result<Example> {
        let rec = &self.records[k];
        let g = &self.graph;
        let labels: Vec<Option<usize>> = (0..g.num_vars()).map(|i| rec.labels.get(&i).copied()).collect();
        let mut ex = Example::new(Arc::clone(g), self.num_features(), labels)?;
        if !rec.observation.is_empty() {
            ex = ex.with_observation(rec.observation.clone())?;
        }
        match self.features {
            Features::Grid { .. } => {
                set_grid_features(&mut ex, &rec.observation)?;
                ex.normalized_hamming_loss()?;
            }
            Features::Explicit { .. } => {
                let t = rec.tables.clone().unwrap_or_default();
                for e in &t.node_features {
                    check_feature(e.feature, self.num_features(), k)?;
                    ex.set_node_feature(e.feature, e.node, &e.values)?;
                }
                for e in &t.factor_features {
                    check_feature(e.feature, self.num_features(), k)?;
                    ex.set_factor_feature(e.feature, e.factor, &e.values)?;
                }
                if t.node_loss.is_empty() && t.factor_loss.is_empty() {
                    ex.normalized_hamming_loss()?;
                }
                for e in &t.node_loss {
                    ex.set_node_loss(e.node, &e.values)?;
                }
                for e in &t.factor_loss {
                    ex.set_factor_loss(e.factor, &e.values)?;
                }
                for e in &t.latent_node_loss {
                    ex.set_latent_node_loss(e.node, &e.values)?;
                }
                for e in &t.latent_factor_loss {
                    ex.set_latent_factor_loss(e.factor, &e.values)?;
                }
            }
        }
        Ok(ex)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&k| self.records[k].split == split).collect()
    }

    pub fn examples(&self, split: Split) -> Result<Vec<Example>> {
        self.indices(split).into_iter().map(|k| self.example(k)).collect()
    }
}

fn check_feature(r: usize, count: usize, k: usize) -> Result<()> {
    if r >= count {
        return Err(Error::Invalid(format!("example {k}: feature {r} out of range (dataset has {count})")));
    }
    Ok(())
}

/// Grid features: `φ₁(s_i) = −|x_i − (s_i+1)|` on nodes and
/// `φ₂(s_i, s_j) = −|s_i − s_j|` on every factor.
pub fn set_grid_features(ex: &mut Example, observation: &[f64]) -> Result<()> {
    let g = Arc::clone(ex.graph());
    if observation.len() != g.num_vars() {
        return Err(Error::Invalid(format!(
            "observation has {} entries, graph has {} variables",
            observation.len(),
            g.num_vars()
        )));
    }
    let mut table = Vec::new();
    for (i, &x) in observation.iter().enumerate() {
        table.clear();
        table.extend((0..g.cardinality(i)).map(|s| -(x - (s as f64 + 1.0)).abs()));
        ex.set_node_feature(0, i, &table)?;
    }
    let mut states = Vec::new();
    for a in 0..g.num_factors() {
        table.clear();
        states.resize(g.scope(a).len(), 0);
        for idx in 0..g.factor_size(a) {
            g.factor_states(a, idx, &mut states);
            table.push(-(states[0] as f64 - states[1] as f64).abs());
        }
        ex.set_factor_feature(1, a, &table)?;
    }
    Ok(())
}
