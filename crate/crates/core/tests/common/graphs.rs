// SPDX-License-Identifier: Apache-2.0
//! Brute-force graph oracles and random SCM generators.

use std::collections::BTreeSet;

use adpc_core::scm::{DiscreteScm, VariableSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Graph {
    pub names: Vec<String>,
    /// (parent, child) index pairs.
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(names: &[&str], edges: &[(&str, &str)]) -> Self {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let at = |n: &str| names.iter().position(|m| m == n).expect("known node");
        let edges = edges.iter().map(|(a, b)| (at(a), at(b))).collect();
        Self { names, edges }
    }

    pub fn index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).expect("known node")
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a, b))
    }

    fn descendants_or_self(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([v]);
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for &(p, c) in &self.edges {
                if p == u && seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    /// Every simple path from `a` to `b` in the skeleton.
    pub fn simple_paths(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut path = vec![a];
        self.extend(b, &mut path, &mut out);
        out
    }

    fn extend(&self, goal: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let last = *path.last().expect("non-empty");
        if last == goal {
            out.push(path.clone());
            return;
        }
        for v in 0..self.names.len() {
            if (self.has_edge(last, v) || self.has_edge(v, last)) && !path.contains(&v) {
                path.push(v);
                self.extend(goal, path, out);
                path.pop();
            }
        }
    }

    /// Textbook activity rule for one path given the conditioning set.
    pub fn path_active(&self, path: &[usize], given: &BTreeSet<usize>) -> bool {
        path.windows(3).all(|w| {
            let (a, v, b) = (w[0], w[1], w[2]);
            let collider = self.has_edge(a, v) && self.has_edge(b, v);
            if collider {
                self.descendants_or_self(v).iter().any(|d| given.contains(d))
            } else {
                !given.contains(&v)
            }
        })
    }

    pub fn d_separated(&self, a: &[usize], b: &[usize], given: &[usize]) -> bool {
        let z: BTreeSet<usize> = given.iter().copied().collect();
        a.iter().all(|&x| {
            b.iter()
                .all(|&y| self.simple_paths(x, y).iter().all(|p| !self.path_active(p, &z)))
        })
    }

    fn directed(&self, path: &[usize]) -> bool {
        path.windows(2).all(|w| self.has_edge(w[0], w[1]))
    }

    /// The three front-door conditions by explicit path enumeration.
    pub fn frontdoor_conditions(&self, x: usize, y: usize, m: &[usize]) -> [bool; 3] {
        let none = BTreeSet::new();
        let cond1 = self
            .simple_paths(x, y)
            .iter()
            .filter(|p| self.directed(p))
            .all(|p| p.iter().any(|v| m.contains(v)));
        let cond2 = m.iter().all(|&mi| {
            self.simple_paths(x, mi)
                .iter()
                .filter(|p| self.has_edge(p[1], x))
                .all(|p| !self.path_active(p, &none))
        });
        let given_x = BTreeSet::from([x]);
        let cond3 = m.iter().all(|&mi| {
            self.simple_paths(mi, y)
                .iter()
                .filter(|p| self.has_edge(p[1], mi))
                .all(|p| !self.path_active(p, &given_x))
        });
        [cond1, cond2, cond3]
    }

    /// Binary variables with uniform CPDs; nodes listed in index order.
    pub fn to_scm(&self) -> DiscreteScm {
        let specs = (0..self.names.len())
            .map(|v| {
                let parents: Vec<&str> = self
                    .edges
                    .iter()
                    .filter(|e| e.1 == v)
                    .map(|e| self.names[e.0].as_str())
                    .collect();
                VariableSpec::new(&self.names[v], 2, &parents, vec![vec![0.5, 0.5]; 1 << parents.len()])
            })
            .collect();
        DiscreteScm::new(specs).expect("acyclic by construction")
    }
}

/// Random DAG: edge `i -> j` (for `i < j`) with probability `p`.
pub fn random_dag(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph { names, edges }
}

fn random_row(rng: &mut ChaCha8Rng, card: usize, lo: f64, hi: f64) -> Vec<f64> {
    if card == 2 {
        let p = rng.random_range(lo..=hi);
        return vec![1.0 - p, p];
    }
    let raw: Vec<f64> = (0..card).map(|_| rng.random_range(lo..=hi)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// `S -> X, S -> Y, X -> M, M -> Y` with random CPDs. Binary rows draw
/// `P(state 1)` uniformly from `[0.05, 0.95]`; wider variables normalize
/// independent draws from the same range.
pub fn random_frontdoor_scm(seed: u64, cards: [usize; 4]) -> DiscreteScm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [cs, cx, cm, cy] = cards;
    let mut rows = |n: usize, card: usize| {
        (0..n)
            .map(|_| random_row(&mut rng, card, 0.05, 0.95))
            .collect::<Vec<_>>()
    };
    let s = rows(1, cs);
    let x = rows(cs, cx);
    let m = rows(cx, cm);
    let y = rows(cm * cs, cy);
    DiscreteScm::new(vec![
        VariableSpec::new("S", cs, &[], s),
        VariableSpec::new("X", cx, &["S"], x),
        VariableSpec::new("M", cm, &["X"], m),
        VariableSpec::new("Y", cy, &["M", "S"], y),
    ])
    .expect("valid SCM")
}

/// `P(Y | do(X = x))` by summing the full joint over all assignments with X
/// clamped, i.e. the mutilated graph enumerated by brute force.
pub fn mutilated_enumeration(scm: &DiscreteScm, x: usize) -> Vec<f64> {
    let ps = scm.cpd("S").unwrap();
    let pm = scm.cpd("M").unwrap();
    let py = scm.cpd("Y").unwrap();
    let (cs, cx, cm, cy) = (ps[0].len(), scm.cardinality("X").unwrap(), pm[0].len(), py[0].len());
    let mut out = vec![0.0; cy];
    for s in 0..cs {
        for xv in 0..cx {
            let indicator = if xv == x { 1.0 } else { 0.0 };
            for m in 0..cm {
                for (y, o) in out.iter_mut().enumerate() {
                    *o += ps[0][s] * indicator * pm[xv][m] * py[m * cs + s][y];
                }
            }
        }
    }
    out
}
