// SPDX-License-Identifier: Apache-2.0
//! Graphical queries: d-separation and the front-door criterion.

use std::collections::{BTreeSet, VecDeque};

use super::{DiscreteScm, Result, ScmError};

/// Outcome of the three front-door conditions, checked independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontdoorReport {
    /// The mediator set intercepts every directed cause -> target path.
    pub intercepts_directed_paths: bool,
    /// No unblocked back-door path between the cause and the mediator set.
    pub no_backdoor_cause_to_mediator: bool,
    /// Every back-door path from the mediator set to the target is blocked by the cause.
    pub mediator_backdoor_blocked_by_cause: bool,
}

impl FrontdoorReport {
    pub fn passes(&self) -> bool {
        self.intercepts_directed_paths && self.no_backdoor_cause_to_mediator && self.mediator_backdoor_blocked_by_cause
    }

    pub fn as_array(&self) -> [bool; 3] {
        [
            self.intercepts_directed_paths,
            self.no_backdoor_cause_to_mediator,
            self.mediator_backdoor_blocked_by_cause,
        ]
    }
}

/// Plain adjacency view used by the graph algorithms.
struct Dag {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    fn from_parents(parents: &[Vec<usize>]) -> Self {
        let mut children = vec![Vec::new(); parents.len()];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        Self {
            parents: parents.to_vec(),
            children,
        }
    }

    /// Copy with every edge leaving a node of `sources` deleted.
    fn without_outgoing(&self, sources: &BTreeSet<usize>) -> Self {
        let parents = self
            .parents
            .iter()
            .map(|ps| ps.iter().copied().filter(|p| !sources.contains(p)).collect())
            .collect::<Vec<Vec<usize>>>();
        Self::from_parents(&parents)
    }

    /// `given` together with all of its ancestors.
    fn ancestral_closure(&self, given: &BTreeSet<usize>) -> Vec<bool> {
        let mut mark = vec![false; self.parents.len()];
        let mut stack: Vec<usize> = given.iter().copied().collect();
        while let Some(v) = stack.pop() {
            if !mark[v] {
                mark[v] = true;
                stack.extend(&self.parents[v]);
            }
        }
        mark
    }

    /// Nodes reachable from `sources` along active trails given `given`
    /// (the reachability procedure of Koller & Friedman, Alg. 3.1).
    fn active_reachable(&self, sources: &BTreeSet<usize>, given: &BTreeSet<usize>) -> Vec<bool> {
        let n = self.parents.len();
        let anc = self.ancestral_closure(given);
        // Direction flag: `true` means the trail arrived from a child ("up").
        let mut visited = vec![[false; 2]; n];
        let mut reachable = vec![false; n];
        let mut queue: VecDeque<(usize, bool)> = sources.iter().map(|&s| (s, true)).collect();
        while let Some((v, up)) = queue.pop_front() {
            if visited[v][up as usize] {
                continue;
            }
            visited[v][up as usize] = true;
            let observed = given.contains(&v);
            if !observed {
                reachable[v] = true;
            }
            if up && !observed {
                queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                queue.extend(self.children[v].iter().map(|&c| (c, false)));
            } else if !up {
                if !observed {
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
                if anc[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        reachable
    }

    fn d_separated(&self, a: &BTreeSet<usize>, b: &BTreeSet<usize>, given: &BTreeSet<usize>) -> bool {
        let reach = self.active_reachable(a, given);
        !b.iter().any(|&v| reach[v])
    }

    /// Whether `to` is reachable from `from` by directed edges avoiding `removed`.
    fn directed_path_avoiding(&self, from: usize, to: usize, removed: &BTreeSet<usize>) -> bool {
        let mut seen = vec![false; self.parents.len()];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if seen[v] {
                continue;
            }
            seen[v] = true;
            stack.extend(self.children[v].iter().copied().filter(|c| !removed.contains(c)));
        }
        false
    }
}

fn ensure_disjoint(scm: &DiscreteScm, sets: &[&BTreeSet<usize>]) -> Result<()> {
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            if let Some(&v) = a.intersection(b).next() {
                return Err(ScmError::OverlappingSets(scm.name(v).to_string()));
            }
        }
    }
    Ok(())
}

impl DiscreteScm {
    fn dag(&self) -> Dag {
        Dag::from_parents(self.parent_lists())
    }

    /// Standard d-separation of `set_a` and `set_b` given `given`.
    pub fn d_separated(&self, set_a: &[&str], set_b: &[&str], given: &[&str]) -> Result<bool> {
        let a = self.resolve_set(set_a)?;
        let b = self.resolve_set(set_b)?;
        let z = self.resolve_set(given)?;
        ensure_disjoint(self, &[&a, &b, &z])?;
        Ok(self.dag().d_separated(&a, &b, &z))
    }

    /// Evaluates the three front-door conditions for `cause -> mediator_set -> target`.
    pub fn check_frontdoor_criterion(
        &self,
        cause: &str,
        target: &str,
        mediator_set: &[&str],
    ) -> Result<FrontdoorReport> {
        let x = self.index_of(cause)?;
        let y = self.index_of(target)?;
        let m = self.resolve_set(mediator_set)?;
        let xs = BTreeSet::from([x]);
        let ys = BTreeSet::from([y]);
        ensure_disjoint(self, &[&xs, &ys, &m])?;
        let dag = self.dag();

        let intercepts_directed_paths = !dag.directed_path_avoiding(x, y, &m);
        // Back-door paths out of X are exactly the trails that survive once
        // X's outgoing edges are deleted.
        let no_backdoor_cause_to_mediator = dag.without_outgoing(&xs).d_separated(&xs, &m, &BTreeSet::new());
        let mediator_backdoor_blocked_by_cause = dag.without_outgoing(&m).d_separated(&m, &ys, &xs);

        Ok(FrontdoorReport {
            intercepts_directed_paths,
            no_backdoor_cause_to_mediator,
            mediator_backdoor_blocked_by_cause,
        })
    }
}
