// SPDX-License-Identifier: Apache-2.0
//! JSON document format for discrete SCMs.
//!
//! ```json
//! {
//!   "variables": [{"name": "S", "cardinality": 2}, {"name": "X", "cardinality": 2}],
//!   "edges": [["S", "X"]],
//!   "cpds": {
//!     "S": {"parents": [], "table": [0.5, 0.5]},
//!     "X": {"parents": ["S"], "table": [0.8, 0.2, 0.2, 0.8]}
//!   },
//!   "query": {"cause": "X", "target": "Y", "mediator": "M", "adjust": ["S"]}
//! }
//! ```
//!
//! `table` is row-major: one row per parent configuration (first listed
//! parent most significant), one column per state. `query` is optional.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DiscreteScm, Result, ScmError, VariableSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdEntry {
    #[serde(default)]
    pub parents: Vec<String>,
    pub table: Vec<f64>,
}

/// Default query run by `scm-verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmQuery {
    pub cause: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mediator: Option<String>,
    #[serde(default)]
    pub adjust: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDocument {
    pub variables: Vec<VariableEntry>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    pub cpds: BTreeMap<String, CpdEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<ScmQuery>,
}

impl ScmDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ScmError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SCM document serializes")
    }

    /// Validates the document and builds the model. The edge list must agree
    /// with the parent lists declared on the CPDs.
    pub fn to_scm(&self) -> Result<DiscreteScm> {
        let declared: BTreeSet<(&str, &str)> = self.edges.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
        let mut from_cpds = BTreeSet::new();
        let mut specs = Vec::with_capacity(self.variables.len());
        for v in &self.variables {
            let cpd = self
                .cpds
                .get(&v.name)
                .ok_or_else(|| ScmError::Format(format!("no CPD for `{}`", v.name)))?;
            for p in &cpd.parents {
                from_cpds.insert((p.as_str(), v.name.as_str()));
            }
            if v.cardinality == 0 || cpd.table.len() % v.cardinality != 0 {
                return Err(ScmError::CpdShapeMismatch {
                    name: v.name.clone(),
                    expected_rows: 0,
                    expected_cols: v.cardinality,
                    actual_rows: cpd.table.len() / v.cardinality.max(1),
                    actual_cols: cpd.table.len() % v.cardinality.max(1),
                });
            }
            specs.push(VariableSpec {
                name: v.name.clone(),
                cardinality: v.cardinality,
                parents: cpd.parents.clone(),
                cpd: cpd.table.chunks(v.cardinality).map(<[f64]>::to_vec).collect(),
            });
        }
        if let Some(extra) = self.cpds.keys().find(|k| !self.variables.iter().any(|v| &v.name == *k)) {
            return Err(ScmError::UnknownVariable(extra.clone()));
        }
        if declared != from_cpds {
            let diff: Vec<_> = declared.symmetric_difference(&from_cpds).collect();
            return Err(ScmError::Format(format!(
                "edge list disagrees with CPD parents on {diff:?}"
            )));
        }
        DiscreteScm::new(specs)
    }

    pub fn from_scm(scm: &DiscreteScm, query: Option<ScmQuery>) -> Self {
        let specs = scm.to_specs();
        let variables = specs
            .iter()
            .map(|s| VariableEntry {
                name: s.name.clone(),
                cardinality: s.cardinality,
            })
            .collect();
        let edges = specs
            .iter()
            .flat_map(|s| s.parents.iter().map(move |p| (p.clone(), s.name.clone())))
            .collect();
        let cpds = specs
            .into_iter()
            .map(|s| {
                (
                    s.name,
                    CpdEntry {
                        parents: s.parents,
                        table: s.cpd.concat(),
                    },
                )
            })
            .collect();
        Self {
            variables,
            edges,
            cpds,
            query,
        }
    }
}
