//! Qualitative graph analyses: reachability, maximal end-component
//! decomposition, zero-probability states under a policy support, and
//! sure-avoidance sets.

use std::collections::HashSet;

use crate::model::{Mdp, Policy, StAct};
use crate::num::Scalar;

/// States reachable from `sources` via transitions of positive probability
/// under any action.
pub fn reachable_from(m: &Mdp, sources: &[usize]) -> HashSet<usize> {
    let mut seen: Vec<bool> = vec![false; m.n_states()];
    let mut stack: Vec<usize> = Vec::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(s) = stack.pop() {
        for ch in m.choices(s) {
            for &(t, _) in &ch.succ {
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(s, _)| s)
        .collect()
}

/// States from which `target` is unreachable in the Markov chain induced by
/// the support of `policy` (actions with strictly positive probability).
pub fn zero_states<S: Scalar>(m: &Mdp, policy: &Policy<S>, target: &[usize]) -> HashSet<usize> {
    let mask = zero_mask(m, policy, target);
    mask.iter()
        .enumerate()
        .filter(|(_, &z)| z)
        .map(|(s, _)| s)
        .collect()
}

/// Same as [`zero_states`] but as a dense mask; used by the solvers.
pub(crate) fn zero_mask<S: Scalar>(m: &Mdp, policy: &Policy<S>, target: &[usize]) -> Vec<bool> {
    let n = m.n_states();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for c in policy.support(s) {
            for &(t, _) in &m.choices(s)[c].succ {
                rev[t].push(s);
            }
        }
    }
    let mut can_reach = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    for &t in target {
        if !can_reach[t] {
            can_reach[t] = true;
            stack.push(t);
        }
    }
    while let Some(t) = stack.pop() {
        for &s in &rev[t] {
            if !can_reach[s] {
                can_reach[s] = true;
                stack.push(s);
            }
        }
    }
    can_reach.iter().map(|&r| !r).collect()
}

/// Mask of states that can reach `target` in the underlying graph under at
/// least one action sequence.
pub(crate) fn can_reach_mask(m: &Mdp, target: &[usize]) -> Vec<bool> {
    let n = m.n_states();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for ch in m.choices(s) {
            for &(t, _) in &ch.succ {
                rev[t].push(s);
            }
        }
    }
    let mut can = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    for &t in target {
        if !can[t] {
            can[t] = true;
            stack.push(t);
        }
    }
    while let Some(t) = stack.pop() {
        for &s in &rev[t] {
            if !can[s] {
                can[s] = true;
                stack.push(s);
            }
        }
    }
    can
}

/// Greatest set `W` of states disjoint from `avoid` such that every
/// non-terminal state in `W` has an action whose full support stays in `W`.
/// From exactly these states a policy can keep the play away from `avoid`
/// forever (so they are the states with minimal reachability 0).
pub fn sure_avoid(m: &Mdp, avoid: &[bool]) -> Vec<bool> {
    let n = m.n_states();
    let mut w: Vec<bool> = (0..n).map(|s| !avoid[s]).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !w[s] || m.is_terminal(s) {
                continue;
            }
            let has_safe_action = m
                .choices(s)
                .iter()
                .any(|ch| ch.succ.iter().all(|&(t, _)| w[t]));
            if !has_safe_action {
                w[s] = false;
                changed = true;
            }
        }
        if !changed {
            return w;
        }
    }
}

/// A maximal end component: a set of states together with the state-action
/// pairs that realize it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mec {
    pub states: Vec<usize>,
    pub pairs: Vec<StAct>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MecDecomposition {
    /// Ordered by smallest contained state index.
    pub mecs: Vec<Mec>,
    /// For each state, the index of the MEC containing it, if any.
    pub membership: Vec<Option<usize>>,
}

impl MecDecomposition {
    pub fn is_empty(&self) -> bool {
        self.mecs.is_empty()
    }
}

/// Strongly connected components of a directed graph given as adjacency
/// lists, restricted to `active` vertices. Kosaraju with explicit stacks.
fn sccs(adj: &[Vec<usize>], active: &[bool]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] || !active[start] {
            continue;
        }
        // Iterative post-order DFS.
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        visited[start] = true;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < adj[v].len() {
                let t = adj[v][*i];
                *i += 1;
                if active[t] && !visited[t] {
                    visited[t] = true;
                    stack.push((t, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }

    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (v, ts) in adj.iter().enumerate() {
        if !active[v] {
            continue;
        }
        for &t in ts {
            if active[t] {
                rev[t].push(v);
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut result: Vec<Vec<usize>> = Vec::new();
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = result.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &t in &rev[v] {
                if comp[t] == usize::MAX {
                    comp[t] = id;
                    members.push(t);
                    stack.push(t);
                }
            }
        }
        result.push(members);
    }
    result
}

/// Standard iterative SCC-pruning MEC decomposition: repeatedly remove
/// state-action pairs that leave their current SCC until stable; the
/// surviving SCCs holding at least one pair are the MECs.
pub fn mec_decomposition(m: &Mdp) -> MecDecomposition {
    let n = m.n_states();
    let mut allowed: Vec<Vec<bool>> = m
        .choices_len_vec()
        .iter()
        .map(|&k| vec![true; k])
        .collect();
    let mut active: Vec<bool> = (0..n).map(|s| !m.is_terminal(s)).collect();

    loop {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in 0..n {
            if !active[s] {
                continue;
            }
            for (c, ch) in m.choices(s).iter().enumerate() {
                if allowed[s][c] {
                    for &(t, _) in &ch.succ {
                        adj[s].push(t);
                    }
                }
            }
        }
        let comps = sccs(&adj, &active);
        let mut comp_of = vec![usize::MAX; n];
        for (id, members) in comps.iter().enumerate() {
            for &v in members {
                comp_of[v] = id;
            }
        }

        let mut changed = false;
        for s in 0..n {
            if !active[s] {
                continue;
            }
            for (c, ch) in m.choices(s).iter().enumerate() {
                if !allowed[s][c] {
                    continue;
                }
                let leaves = ch
                    .succ
                    .iter()
                    .any(|&(t, _)| !active[t] || comp_of[t] != comp_of[s]);
                if leaves {
                    allowed[s][c] = false;
                    changed = true;
                }
            }
            if active[s] && allowed[s].iter().all(|&a| !a) {
                active[s] = false;
                changed = true;
            }
        }
        if !changed {
            let mut mecs: Vec<Mec> = Vec::new();
            for members in comps {
                let mut states: Vec<usize> = members;
                states.sort_unstable();
                let pairs: Vec<StAct> = states
                    .iter()
                    .flat_map(|&s| {
                        allowed[s]
                            .iter()
                            .enumerate()
                            .filter(|(_, &a)| a)
                            .map(move |(c, _)| StAct { state: s, choice: c })
                    })
                    .collect();
                if !pairs.is_empty() {
                    mecs.push(Mec { states, pairs });
                }
            }
            mecs.sort_by_key(|mec| mec.states[0]);
            let mut membership = vec![None; n];
            for (i, mec) in mecs.iter().enumerate() {
                for &s in &mec.states {
                    membership[s] = Some(i);
                }
            }
            return MecDecomposition { mecs, membership };
        }
    }
}

impl Mdp {
    fn choices_len_vec(&self) -> Vec<usize> {
        (0..self.n_states()).map(|s| self.choices(s).len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, uniform_policy, Policy};
    use num::{BigRational, One, Zero};

    const NETWORK: &str = include_str!("../tests/data/network.json");
    const SUZY_BILLY: &str = include_str!("../tests/data/suzy_billy.json");

    fn names(m: &Mdp, set: &HashSet<usize>) -> Vec<String> {
        let mut v: Vec<String> = set.iter().map(|&s| m.state_name(s).to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn forward_reachability_on_the_network() {
        let m = parse_model(NETWORK).unwrap();
        let all = reachable_from(&m, &[m.init()]);
        assert_eq!(all.len(), 7);

        let b = m.state_id("B").unwrap();
        let from_b = reachable_from(&m, &[b]);
        assert_eq!(names(&m, &from_b), vec!["B", "lost1", "lost3", "recv"]);

        assert!(reachable_from(&m, &[]).is_empty());
    }

    #[test]
    fn network_and_rock_throwing_models_have_no_mecs() {
        for doc in [NETWORK, SUZY_BILLY] {
            let m = parse_model(doc).unwrap();
            assert!(mec_decomposition(&m).is_empty());
        }
    }

    #[test]
    fn closed_cycle_is_a_mec() {
        let doc = r#"{
            "states": ["s","t"],
            "init": "s",
            "transitions": [
                {"from":"s","action":"go","to":{"t":"1"}},
                {"from":"t","action":"back","to":{"s":"1"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        let d = mec_decomposition(&m);
        assert_eq!(d.mecs.len(), 1);
        assert_eq!(d.mecs[0].states, vec![0, 1]);
        assert_eq!(d.mecs[0].pairs.len(), 2);
        assert_eq!(d.membership, vec![Some(0), Some(0)]);
    }

    #[test]
    fn leaking_cycle_is_not_a_mec() {
        // A cycle that always keeps some probability of escaping to a
        // terminal is not closed.
        let doc = r#"{
            "states": ["s","t","out"],
            "init": "s",
            "transitions": [
                {"from":"s","action":"go","to":{"t":"1/2","out":"1/2"}},
                {"from":"t","action":"back","to":{"s":"1"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        assert!(mec_decomposition(&m).is_empty());
    }

    #[test]
    fn self_loop_mec_with_exit_action() {
        let doc = r#"{
            "states": ["s","out"],
            "init": "s",
            "transitions": [
                {"from":"s","action":"stay","to":{"s":"1"}},
                {"from":"s","action":"leave","to":{"out":"1"}}
            ]
        }"#;
        let m = parse_model(doc).unwrap();
        let d = mec_decomposition(&m);
        assert_eq!(d.mecs.len(), 1);
        assert_eq!(d.mecs[0].states, vec![0]);
        assert_eq!(d.mecs[0].pairs.len(), 1);
    }

    #[test]
    fn zero_states_under_policy_support() {
        let m = parse_model(NETWORK).unwrap();
        let u = uniform_policy(&m);
        let recv = m.state_id("recv").unwrap();
        let z = zero_states(&m, &u, &[recv]);
        assert_eq!(names(&m, &z), vec!["lost1", "lost2", "lost3"]);

        let all: Vec<usize> = (0..m.n_states()).collect();
        assert!(zero_states(&m, &u, &all).is_empty());

        // Exclude delta at B: lost3 becomes unreachable from everywhere.
        let b = m.state_id("B").unwrap();
        let mut rows: Vec<Vec<BigRational>> = u.rows().to_vec();
        rows[b] = vec![BigRational::one(), BigRational::zero()];
        let p = Policy::from_rows(&m, rows).unwrap();
        // Every state except lost3 itself (a target trivially reaches itself).
        let lost3 = m.state_id("lost3").unwrap();
        let z = zero_states(&m, &p, &[lost3]);
        assert_eq!(z.len(), 6);
        assert!(!z.contains(&lost3));
    }

    #[test]
    fn sure_avoidance_on_the_network() {
        let m = parse_model(NETWORK).unwrap();
        let mut avoid = vec![false; m.n_states()];
        for name in ["lost1", "lost2", "lost3"] {
            avoid[m.state_id(name).unwrap()] = true;
        }
        let w = sure_avoid(&m, &avoid);
        // Every action from A and B risks a lost state, so only the
        // terminals recv (and nothing upstream) can surely avoid.
        assert!(w[m.state_id("recv").unwrap()]);
        assert!(!w[m.state_id("A").unwrap()]);
        assert!(!w[m.state_id("B").unwrap()]);
        assert!(!w[m.state_id("send").unwrap()]);
    }
}
