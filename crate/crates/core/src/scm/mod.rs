// SPDX-License-Identifier: Apache-2.0
//! Exact discrete structural causal models.
//!
//! A [`DiscreteScm`] is a DAG over finite-valued variables with one
//! conditional probability table per variable. Every query is answered by
//! enumerating the full joint, so results are exact up to floating-point
//! rounding. That makes this module the ground truth for the back-door and
//! front-door formulas that the neural head only approximates.
//!
//! CPD layout: the table of a variable with parents `p_0..p_k` is stored
//! row-major, one row per parent configuration (mixed radix, `p_0` most
//! significant), one column per state of the variable.

mod format;
mod graph;

pub use format::{ScmDocument, ScmQuery};
pub use graph::FrontdoorReport;

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Tolerance for a CPD row (or any returned distribution) to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default bound on the joint state space an enumerating query will visit.
pub const DEFAULT_STATE_LIMIT: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{name}` has cardinality {cardinality}; at least 2 states are required")]
    InvalidCardinality { name: String, cardinality: usize },
    #[error("parent graph contains a cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("CPD of `{name}` has shape {actual_rows}x{actual_cols}, expected {expected_rows}x{expected_cols}")]
    CpdShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("CPD row {row} of `{name}` sums to {sum}")]
    CpdRowNotNormalized { name: String, row: usize, sum: f64 },
    #[error("CPD of `{name}` contains a negative or non-finite entry at row {row}")]
    InvalidProbability { name: String, row: usize },
    #[error("assignment does not cover variable `{0}`")]
    MissingAssignment(String),
    #[error("state {value} out of range for `{name}` (cardinality {cardinality})")]
    ValueOutOfRange {
        name: String,
        value: usize,
        cardinality: usize,
    },
    #[error("conditioning event has zero probability")]
    ZeroProbabilityEvidence,
    #[error("adjustment set overlaps cause or target: {0}")]
    InvalidAdjustmentSet(String),
    #[error("variable sets overlap on `{0}`")]
    OverlappingSets(String),
    #[error("joint state space of {states} exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("invalid SCM document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ScmError>;

/// Declaration of one variable handed to [`DiscreteScm::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub cardinality: usize,
    pub parents: Vec<String>,
    /// One row per parent configuration, each of length `cardinality`.
    pub cpd: Vec<Vec<f64>>,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, cardinality: usize, parents: &[&str], cpd: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            cardinality,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            cpd,
        }
    }
}

/// A distribution over the states of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub variable: String,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn prob(&self, state: usize) -> f64 {
        self.probs[state]
    }

    pub fn is_normalized(&self) -> bool {
        self.probs.iter().all(|&p| p >= 0.0) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Largest absolute per-state difference against another distribution.
    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Validated discrete SCM. Variables are addressed by name in the public API
/// and by declaration index internally.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    names: Vec<String>,
    cards: Vec<usize>,
    parents: Vec<Vec<usize>>,
    /// Flattened `rows x card` table per variable.
    cpds: Vec<Vec<f64>>,
    topo: Vec<usize>,
    state_limit: usize,
}

impl DiscreteScm {
    /// Validates the declarations and computes a topological order.
    pub fn new(vars: Vec<VariableSpec>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, v) in vars.iter().enumerate() {
            if index.insert(v.name.clone(), i).is_some() {
                return Err(ScmError::DuplicateVariable(v.name.clone()));
            }
            if v.cardinality < 2 {
                return Err(ScmError::InvalidCardinality {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                });
            }
        }
        let cards: Vec<usize> = vars.iter().map(|v| v.cardinality).collect();
        let mut parents = Vec::with_capacity(vars.len());
        for v in &vars {
            let mut ps = Vec::with_capacity(v.parents.len());
            for p in &v.parents {
                let pi = *index.get(p).ok_or_else(|| ScmError::UnknownVariable(p.clone()))?;
                if ps.contains(&pi) {
                    return Err(ScmError::DuplicateVariable(p.clone()));
                }
                ps.push(pi);
            }
            parents.push(ps);
        }
        let names: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
        let topo = topological_order(&parents)
            .map_err(|cycle| ScmError::CycleDetected(cycle.into_iter().map(|i| names[i].clone()).collect()))?;

        let mut cpds = Vec::with_capacity(vars.len());
        for (i, v) in vars.iter().enumerate() {
            let rows: usize = parents[i].iter().map(|&p| cards[p]).product();
            let actual_cols = v.cpd.iter().map(Vec::len).find(|&l| l != v.cardinality);
            if v.cpd.len() != rows || actual_cols.is_some() {
                return Err(ScmError::CpdShapeMismatch {
                    name: v.name.clone(),
                    expected_rows: rows,
                    expected_cols: v.cardinality,
                    actual_rows: v.cpd.len(),
                    actual_cols: actual_cols.unwrap_or(v.cardinality),
                });
            }
            for (r, row) in v.cpd.iter().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(ScmError::InvalidProbability {
                        name: v.name.clone(),
                        row: r,
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(ScmError::CpdRowNotNormalized {
                        name: v.name.clone(),
                        row: r,
                        sum,
                    });
                }
            }
            cpds.push(v.cpd.concat());
        }

        Ok(Self {
            names,
            cards,
            parents,
            cpds,
            topo,
            state_limit: DEFAULT_STATE_LIMIT,
        })
    }

    pub fn with_state_limit(mut self, limit: usize) -> Self {
        self.state_limit = limit;
        self
    }

    pub fn variables(&self) -> &[String] {
        &self.names
    }

    pub fn cardinality(&self, name: &str) -> Result<usize> {
        Ok(self.cards[self.index_of(name)?])
    }

    pub fn parents_of(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index_of(name)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].as_str()).collect())
    }

    /// Variable names in topological order.
    pub fn topological_order(&self) -> Vec<&str> {
        self.topo.iter().map(|&i| self.names[i].as_str()).collect()
    }

    /// CPD of `name` as rows (one per parent configuration).
    pub fn cpd(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let i = self.index_of(name)?;
        Ok(self.cpds[i].chunks(self.cards[i]).map(<[f64]>::to_vec).collect())
    }

    /// Re-exports the model as declarations accepted by [`DiscreteScm::new`].
    pub fn to_specs(&self) -> Vec<VariableSpec> {
        (0..self.names.len())
            .map(|i| VariableSpec {
                name: self.names[i].clone(),
                cardinality: self.cards[i],
                parents: self.parents[i].iter().map(|&p| self.names[p].clone()).collect(),
                cpd: self.cpds[i].chunks(self.cards[i]).map(<[f64]>::to_vec).collect(),
            })
            .collect()
    }

    pub(crate) fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ScmError::UnknownVariable(name.to_string()))
    }

    fn check_state(&self, var: usize, value: usize) -> Result<()> {
        if value >= self.cards[var] {
            return Err(ScmError::ValueOutOfRange {
                name: self.names[var].clone(),
                value,
                cardinality: self.cards[var],
            });
        }
        Ok(())
    }

    fn resolve_evidence(&self, evidence: &[(&str, usize)]) -> Result<Vec<(usize, usize)>> {
        evidence
            .iter()
            .map(|&(name, value)| {
                let i = self.index_of(name)?;
                self.check_state(i, value)?;
                Ok((i, value))
            })
            .collect()
    }

    fn cpd_entry(&self, var: usize, states: &[usize]) -> f64 {
        let row = self.parents[var]
            .iter()
            .fold(0, |acc, &p| acc * self.cards[p] + states[p]);
        self.cpds[var][row * self.cards[var] + states[var]]
    }

    fn joint_of_states(&self, states: &[usize]) -> f64 {
        self.topo.iter().map(|&v| self.cpd_entry(v, states)).product()
    }

    fn state_space(&self) -> Result<usize> {
        let mut total: usize = 1;
        for &c in &self.cards {
            total = total.saturating_mul(c);
        }
        if total > self.state_limit {
            return Err(ScmError::StateSpaceTooLarge {
                states: total,
                limit: self.state_limit,
            });
        }
        Ok(total)
    }

    /// Visits every full assignment with its joint probability.
    fn for_each_state(&self, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
        let total = self.state_space()?;
        let mut states = vec![0usize; self.names.len()];
        for _ in 0..total {
            let p = self.joint_of_states(&states);
            visit(&states, p);
            for (s, &c) in states.iter_mut().zip(&self.cards).rev() {
                *s += 1;
                if *s < c {
                    break;
                }
                *s = 0;
            }
        }
        Ok(())
    }

    /// Joint probability of a full assignment, as the product of CPD entries.
    pub fn joint_probability(&self, assignment: &[(&str, usize)]) -> Result<f64> {
        let resolved = self.resolve_evidence(assignment)?;
        let mut states = vec![usize::MAX; self.names.len()];
        for (i, v) in resolved {
            states[i] = v;
        }
        if let Some(missing) = states.iter().position(|&s| s == usize::MAX) {
            return Err(ScmError::MissingAssignment(self.names[missing].clone()));
        }
        Ok(self.joint_of_states(&states))
    }

    /// Marginal joint table over `vars` (row-major in the given order).
    fn marginal_table(&self, vars: &[usize]) -> Result<Vec<f64>> {
        let size: usize = vars.iter().map(|&v| self.cards[v]).product();
        let mut table = vec![0.0; size];
        self.for_each_state(|states, p| {
            let idx = vars.iter().fold(0, |acc, &v| acc * self.cards[v] + states[v]);
            table[idx] += p;
        })?;
        Ok(table)
    }

    /// `P(target | evidence)` by full-joint enumeration.
    pub fn conditional(&self, target: &str, evidence: &[(&str, usize)]) -> Result<Distribution> {
        let t = self.index_of(target)?;
        let ev = self.resolve_evidence(evidence)?;
        let mut probs = vec![0.0; self.cards[t]];
        self.for_each_state(|states, p| {
            if ev.iter().all(|&(i, v)| states[i] == v) {
                probs[states[t]] += p;
            }
        })?;
        let z: f64 = probs.iter().sum();
        if z <= 0.0 {
            return Err(ScmError::ZeroProbabilityEvidence);
        }
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(Distribution {
            variable: target.to_string(),
            probs,
        })
    }

    /// Graph mutilation for `do(variable = value)`. The receiver is untouched.
    pub fn intervene(&self, variable: &str, value: usize) -> Result<DiscreteScm> {
        let i = self.index_of(variable)?;
        self.check_state(i, value)?;
        let mut out = self.clone();
        out.parents[i].clear();
        let mut row = vec![0.0; self.cards[i]];
        row[value] = 1.0;
        out.cpds[i] = row;
        // Removing edges keeps any existing topological order valid.
        Ok(out)
    }

    /// `P(target | do(do_var = do_value))` on the mutilated graph.
    pub fn interventional_oracle(&self, target: &str, do_var: &str, do_value: usize) -> Result<Distribution> {
        self.intervene(do_var, do_value)?.conditional(target, &[])
    }

    /// Back-door adjustment: `sum_s P(target | cause, s) P(s)`.
    pub fn backdoor_adjust(
        &self,
        target: &str,
        cause: &str,
        cause_value: usize,
        adjust_set: &[&str],
    ) -> Result<Distribution> {
        let t = self.index_of(target)?;
        let x = self.index_of(cause)?;
        self.check_state(x, cause_value)?;
        if t == x {
            return Err(ScmError::OverlappingSets(target.to_string()));
        }
        let mut adjust = Vec::with_capacity(adjust_set.len());
        for name in adjust_set {
            let s = self.index_of(name)?;
            if s == t || s == x {
                return Err(ScmError::InvalidAdjustmentSet(name.to_string()));
            }
            if !adjust.contains(&s) {
                adjust.push(s);
            }
        }

        // Table layout: (adjust..., cause, target).
        let mut vars = adjust.clone();
        vars.push(x);
        vars.push(t);
        let table = self.marginal_table(&vars)?;
        let (cx, ct) = (self.cards[x], self.cards[t]);
        let n_configs: usize = adjust.iter().map(|&s| self.cards[s]).product();

        let mut probs = vec![0.0; ct];
        for s in 0..n_configs {
            let block = &table[s * cx * ct..(s + 1) * cx * ct];
            let p_s: f64 = block.iter().sum();
            if p_s == 0.0 {
                continue;
            }
            let row = &block[cause_value * ct..(cause_value + 1) * ct];
            let p_xs: f64 = row.iter().sum();
            if p_xs <= 0.0 {
                return Err(ScmError::ZeroProbabilityEvidence);
            }
            for (acc, &p) in probs.iter_mut().zip(row) {
                *acc += p / p_xs * p_s;
            }
        }
        Ok(Distribution {
            variable: target.to_string(),
            probs,
        })
    }

    /// Front-door adjustment through a single mediator:
    /// `sum_m P(m | x) sum_x' P(target | x', m) P(x')`, using only the
    /// observational joint.
    pub fn frontdoor_adjust(
        &self,
        target: &str,
        cause: &str,
        cause_value: usize,
        mediator: &str,
    ) -> Result<Distribution> {
        let t = self.index_of(target)?;
        let x = self.index_of(cause)?;
        let m = self.index_of(mediator)?;
        self.check_state(x, cause_value)?;
        for (a, b, name) in [(t, x, target), (t, m, target), (x, m, cause)] {
            if a == b {
                return Err(ScmError::OverlappingSets(name.to_string()));
            }
        }

        // Table layout: (cause, mediator, target).
        let table = self.marginal_table(&[x, m, t])?;
        let (cx, cm, ct) = (self.cards[x], self.cards[m], self.cards[t]);
        let at = |xi: usize, mi: usize, ti: usize| table[(xi * cm + mi) * ct + ti];
        let p_xm = |xi: usize, mi: usize| (0..ct).map(|ti| at(xi, mi, ti)).sum::<f64>();
        let p_x: Vec<f64> = (0..cx).map(|xi| (0..cm).map(|mi| p_xm(xi, mi)).sum()).collect();

        if p_x[cause_value] <= 0.0 {
            return Err(ScmError::ZeroProbabilityEvidence);
        }
        let mut probs = vec![0.0; ct];
        for mi in 0..cm {
            let p_m_given_x = p_xm(cause_value, mi) / p_x[cause_value];
            if p_m_given_x == 0.0 {
                continue;
            }
            // Inner sum over the x' that co-occur with m; outside that support
            // P(y | x', m) is undefined, so the P(x') weights are renormalized.
            let support: f64 = (0..cx).filter(|&xp| p_xm(xp, mi) > 0.0).map(|xp| p_x[xp]).sum();
            for xp in 0..cx {
                let denom = p_xm(xp, mi);
                if denom <= 0.0 {
                    continue;
                }
                let w = p_x[xp] / support;
                for (ti, acc) in probs.iter_mut().enumerate() {
                    *acc += p_m_given_x * at(xp, mi, ti) / denom * w;
                }
            }
        }
        Ok(Distribution {
            variable: target.to_string(),
            probs,
        })
    }

    pub(crate) fn resolve_set(&self, names: &[&str]) -> Result<BTreeSet<usize>> {
        names.iter().map(|n| self.index_of(n)).collect()
    }

    pub(crate) fn parent_lists(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub(crate) fn name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

/// Kahn's algorithm. On failure returns the variables left on a cycle.
fn topological_order(parents: &[Vec<usize>]) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &c in children[v].iter().rev() {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).filter(|&i| indegree[i] > 0).collect())
    }
}

/// The confounded front-door SCM `S -> X, S -> Y, X -> M, M -> Y` over binary
/// variables, parameterised by the probability of state 1 in each CPD row.
///
/// * `p_s`: `P(S=1)`
/// * `p_x`: `P(X=1 | S=s)` for `s = 0, 1`
/// * `p_m`: `P(M=1 | X=x)` for `x = 0, 1`
/// * `p_y`: `P(Y=1 | M=m, S=s)` ordered `(m,s) = (0,0),(0,1),(1,0),(1,1)`
pub fn frontdoor_example(p_s: f64, p_x: [f64; 2], p_m: [f64; 2], p_y: [f64; 4]) -> Result<DiscreteScm> {
    let bern = |p: f64| vec![1.0 - p, p];
    DiscreteScm::new(vec![
        VariableSpec::new("S", 2, &[], vec![bern(p_s)]),
        VariableSpec::new("X", 2, &["S"], p_x.iter().map(|&p| bern(p)).collect()),
        VariableSpec::new("M", 2, &["X"], p_m.iter().map(|&p| bern(p)).collect()),
        VariableSpec::new("Y", 2, &["M", "S"], p_y.iter().map(|&p| bern(p)).collect()),
    ])
}
